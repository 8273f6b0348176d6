# -*- coding: utf-8 -*-
"""
RemovalConfig: the settings of one object removal run.

    - pipeline: 'sip' (stochastic) or 'dip' (deterministic, DDIM inversion)
    - steps: T_I, number of inference steps
    - ss_cutoff: T_SS, similarity suppression is used for step indices
      T_SS <= k <= T_I (closed at both ends)
    - scale: s, removal guidance scale (s = 0 disables guidance)
    - suppression: lambda, similarity suppression factor in [0, 1]
    - seed: seed of the sampling noise (SIP)
    - codec: 'identity' or 'autoencoder'
    - guidance: 'sarg' (guided extrapolation) or 'aas-only' (the perturbed
      prediction replaces the plain one)

Defaults per pipeline:

    SIP: steps 40, ss_cutoff 30, scale 9, suppression 0.3
    DIP: steps 50, ss_cutoff 40, scale 9, suppression 0.3

with seed 123.

A config can be read from a flat key=value text file. Lines starting with '#'
are comments. Keys may use '-' or '_'; 'lambda' and 's' are accepted for
suppression and scale.

@author: attneraser developers
"""
from pathlib import Path

from attneraser.Parameter import Parameter
from attneraser.errors import ConfigError

PIPELINES = ['sip', 'dip']
CODECS = ['identity', 'autoencoder']
GUIDANCES = ['sarg', 'aas-only']

DEFAULTS = {'sip': {'steps': 40, 'ss_cutoff': 30, 'scale': 9., 'suppression': 0.3},
            'dip': {'steps': 50, 'ss_cutoff': 40, 'scale': 9., 'suppression': 0.3}}
DEFAULT_SEED = 123

ALIASES = {'lambda': 'suppression', 's': 'scale', 't_i': 'steps', 't_ss': 'ss_cutoff'}


def _key(text):
    key = text.strip().lower().replace('-', '_')
    return ALIASES.get(key, key)


class RemovalConfig:
    """
    Removal settings held as Parameter objects in self.parameters, with
    attribute access (config.scale, config.steps, ...).
    """

    def __init__(self, pipeline='sip', **values):
        pipeline = str(pipeline).lower()
        if pipeline not in PIPELINES:
            raise ConfigError('RemovalConfig pipeline "' + pipeline + '" invalid: not in: ' +
                              '/'.join(PIPELINES))
        defaults = DEFAULTS[pipeline]
        self.parameters = {}
        for par in [Parameter('pipeline', pipeline, description='removal pipeline',
                              parameter_type='str', choices=PIPELINES),
                    Parameter('steps', defaults['steps'], 1, None,
                              'number of inference steps T_I', 'int'),
                    Parameter('ss_cutoff', defaults['ss_cutoff'], 1, None,
                              'similarity suppression cutoff step T_SS', 'int'),
                    Parameter('scale', defaults['scale'], 0., None,
                              'removal guidance scale s', 'float'),
                    Parameter('suppression', defaults['suppression'], 0., 1.,
                              'similarity suppression factor lambda', 'float'),
                    Parameter('seed', DEFAULT_SEED, 0, 2 ** 63 - 1,
                              'seed of the sampling noise', 'int'),
                    Parameter('codec', 'identity', description='image codec',
                              parameter_type='str', choices=CODECS),
                    Parameter('guidance', 'sarg', description='guidance rule',
                              parameter_type='str', choices=GUIDANCES)]:
            self.parameters[par.name] = par
        for key, value in values.items():
            self.set(key, value)
        self.validate()

    def __getattr__(self, name):
        parameters = self.__dict__.get('parameters')
        if parameters is not None and name in parameters:
            return parameters[name].get_value()
        raise AttributeError(name)

    def __eq__(self, other):
        return isinstance(other, RemovalConfig) and self.as_dict() == other.as_dict()

    def __str__(self):
        return self.label()

    def set(self, key, value):
        """Set one value, python typed or text"""
        key = _key(key)
        if key not in self.parameters:
            raise ConfigError('RemovalConfig: unknown key "' + key + '"')
        if key == 'pipeline' and str(value).lower() != self.pipeline:
            raise ConfigError('RemovalConfig: the pipeline is fixed at construction, use ' +
                              'RemovalConfig.defaults("' + str(value) + '")')
        if isinstance(value, str):
            self.parameters[key].set_text(value)
        else:
            self.parameters[key].set_value(value)

    def validate(self):
        if not 1 <= self.ss_cutoff <= self.steps:
            raise ConfigError('RemovalConfig: need 1 <= ss_cutoff <= steps, got ss_cutoff=' +
                              str(self.ss_cutoff) + ', steps=' + str(self.steps))
        if self.scale < 0.:
            raise ConfigError('RemovalConfig: scale must be non-negative')
        if not 0. <= self.suppression <= 1.:
            raise ConfigError('RemovalConfig: suppression must be in [0, 1]')

    def update(self, values):
        """
        Update from a dict of (text or typed) values and check the result.
        A 'pipeline' entry is only accepted if it matches.
        """
        for key, value in values.items():
            self.set(key, value)
        self.validate()
        return self

    def copy(self, **values):
        config = RemovalConfig(self.pipeline)
        for key, par in self.parameters.items():
            if key != 'pipeline':
                config.parameters[key].set_value(par.get_value())
        return config.update(values)

    def in_ss_window(self, step):
        """True if inference step index step uses similarity suppression"""
        return self.ss_cutoff <= step <= self.steps

    def as_dict(self):
        return {key: par.get_text() for key, par in self.parameters.items()}

    def label(self):
        return (self.pipeline + '(s=' + '{:g}'.format(self.scale) + ', lambda=' +
                '{:g}'.format(self.suppression) + ', T_I=' + str(self.steps) + ', T_SS=' +
                str(self.ss_cutoff) + ', seed=' + str(self.seed) +
                ('' if self.guidance == 'sarg' else ', ' + self.guidance) + ')')

    @classmethod
    def defaults(cls, pipeline):
        return cls(pipeline)

    @staticmethod
    def read_values(filepath):
        """Read a flat key=value file into a dict of text values"""
        path = Path(filepath).resolve()
        if not path.exists():
            raise FileNotFoundError('Error in RemovalConfig: config file ' + str(path) + ' not found')
        values = {}
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, 1):
                line = line.strip()
                if line == '' or line.startswith('#'):
                    continue
                if '=' not in line:
                    raise ConfigError('Error in config file ' + path.name + ' line ' + str(number) +
                                      ': expected key=value')
                key, value = line.split('=', 1)
                values[_key(key)] = value.strip()
        return values

    @classmethod
    def from_file(cls, filepath, pipeline=None):
        values = cls.read_values(filepath)
        pipeline = values.pop('pipeline', pipeline if pipeline is not None else 'sip')
        return cls(pipeline).update(values)

    def save_file(self, filename):
        path = Path(filename).resolve()
        with open(path, 'w', encoding='utf-8') as f:
            for key, value in self.as_dict().items():
                f.write(key + '=' + value + '\n')
        return path
