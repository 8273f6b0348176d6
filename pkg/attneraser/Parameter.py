# -*- coding: utf-8 -*-
"""
Parameter: A class for defining the settings of a removal run.

Numeric parameters carry an allowed range [parameter_min, parameter_max];
string parameters carry a list of allowed choices. Values can be set from
python objects (type checked) or from text, as read from a key=value config
file or a command line flag.

@author: attneraser developers
"""
from attneraser.errors import ConfigError


class Parameter:
    """
    Run parameter:
    - parameter_name: short descriptor (also the config file key)
    - value: value to be set initially or when reset requested
    - parameter_min, parameter_max: allowed range for int or float parameter
      (None for an open end)
    - description: long form description for documentation
    - parameter_type: 'int', 'float', 'bool', 'str'
    - choices: allowed values of a 'str' parameter (None: any)
    """

    PARAMETER_TYPES = {'int': int, 'float': float, 'bool': bool, 'str': str}
    TRUE_WORDS = ['true', 'yes', '1', 'on']
    FALSE_WORDS = ['false', 'no', '0', 'off']

    def __init__(self, parameter_name, value, parameter_min=None, parameter_max=None,
                 description='', parameter_type='float', choices=None):

        if parameter_name.find('=') > -1 or parameter_name.find(',') > -1:
            raise ConfigError('Error in constructing ' + parameter_name +
                              ': name cannot contain "=" or ",".')
        self.name = str(parameter_name)

        if parameter_type not in self.PARAMETER_TYPES:
            buff = '/'.join(self.PARAMETER_TYPES)
            raise ConfigError('Parameter (' + self.name + ') type "' +
                              str(parameter_type) +
                              '" invalid: not in: ' + buff)
        self.parameter_type = parameter_type

        self.description = description
        self.parameter_min = parameter_min
        self.parameter_max = parameter_max
        self.choices = None if choices is None else list(choices)
        self.__value = None
        self.set_value(value)
        self.initial_value = self.__value

    def __str__(self):
        return self.name

    def reset(self):
        self.set_value(self.initial_value)

    def get_value(self):
        """
        Return current value of parameter

        """
        return self.__value

    def set_value(self, new_value):
        """
        Change the value of the parameter

        Parameters
        ----------
        new_value : TYPE must match parameter_type (an int is accepted for a float)

        Returns
        -------
        None.

        """
        if self.parameter_type == 'float' and isinstance(new_value, int) and not isinstance(new_value, bool):
            new_value = float(new_value)
        value_type = type(new_value).__name__
        # avoid issues with float64 vs float
        if value_type[:len(self.parameter_type)] != self.parameter_type:
            raise TypeError('Parameter (' + self.name +
                            ') value type (' + value_type +
                            ') does not match parameter_type (' +
                            self.parameter_type + ')')
        new_value = self.PARAMETER_TYPES[self.parameter_type](new_value)

        if self.parameter_type in ['int', 'float']:
            if self.parameter_min is not None and new_value < self.parameter_min:
                raise ConfigError('Parameter (' + self.name + ') value ' + str(new_value) +
                                  ' is below the minimum ' + str(self.parameter_min))
            if self.parameter_max is not None and new_value > self.parameter_max:
                raise ConfigError('Parameter (' + self.name + ') value ' + str(new_value) +
                                  ' is above the maximum ' + str(self.parameter_max))
        if self.choices is not None and new_value not in self.choices:
            raise ConfigError('Parameter (' + self.name + ') value "' + str(new_value) +
                              '" invalid: not in: ' + '/'.join(str(c) for c in self.choices))
        self.__value = new_value

    def set_text(self, text):
        """Set the value from its text form"""
        text = str(text).strip()
        try:
            if self.parameter_type == 'int':
                value = int(text)
            elif self.parameter_type == 'float':
                value = float(text)
            elif self.parameter_type == 'bool':
                if text.lower() in self.TRUE_WORDS:
                    value = True
                elif text.lower() in self.FALSE_WORDS:
                    value = False
                else:
                    raise ValueError(text)
            else:
                value = text.lower() if self.choices is not None else text
        except ValueError:
            raise ConfigError('Parameter (' + self.name + ') cannot read "' + text +
                              '" as ' + self.parameter_type)
        self.set_value(value)

    def get_text(self):
        if self.parameter_type == 'float':
            return repr(self.__value)
        return str(self.__value).lower() if self.parameter_type == 'bool' else str(self.__value)
