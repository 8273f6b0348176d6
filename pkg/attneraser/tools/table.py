# -*- coding: utf-8 -*-
"""
Show the details of a removal study by a set of tables for:
    - removal parameters (RemovalConfig)
    - attention layers of a denoiser
    - evaluation reports: one row per removal config

@author: attneraser developers
"""
from texttable import Texttable

from attneraser.Denoiser import Denoiser
from attneraser.RemovalConfig import RemovalConfig


def table_setup(width):
    table = Texttable()
    table.set_deco(Texttable.HEADER | Texttable.HLINES)
    table.set_max_width(width)
    return table


def get_par_row(par):
    buff = []
    buff.append(str(par))
    buff.append(par.description)
    buff.append('' if par.parameter_min is None else par.parameter_min)
    buff.append('' if par.parameter_max is None else par.parameter_max)
    buff.append(par.initial_value)
    buff.append(par.get_value())
    return buff


def parameter_table(config, width=120):
    if not isinstance(config, RemovalConfig):
        raise TypeError('Error in parameter_table: config argument must be a RemovalConfig object')
    table = table_setup(width)

    header = ['Parameter', 'Description', 'min', 'max', 'Default', 'Value']
    table.set_cols_dtype(['t', 't', 't', 't', 't', 't'])
    table.set_header_align(['l', 'l', 'l', 'l', 'l', 'l'])

    rows = [header]
    for key in config.parameters:
        rows.append([str(item) for item in get_par_row(config.parameters[key])])

    table.add_rows(rows)
    return table.draw()


def layer_table(model, width=120):
    if not isinstance(model, Denoiser):
        raise TypeError('Error in layer_table: model argument must be a Denoiser object')
    table = table_setup(width)

    header = ['Attention layer', 'Placement', 'Tokens', 'Width', 'Heads', 'Follows mode']
    table.set_cols_dtype(['t', 't', 'i', 'i', 'i', 't'])
    table.set_header_align(['l', 'l', 'r', 'r', 'r', 'l'])

    rows = [header]
    for layer in model.attention_layers():
        resolution = int(layer.layer_id.split('.')[-1])
        rows.append([layer.layer_id, layer.placement, resolution * resolution, layer.channels,
                     layer.n_heads, 'yes' if layer.placement in model.config.aas_placements else 'no'])

    table.add_rows(rows)
    return table.draw()


def report_table(report, width=160):
    table = table_setup(width)

    header = ['Config', 'Scenes', 'Masked MSE\n(background)', 'sd', 'Removal\nstrength', 'sd',
              'Background\ndrift (max)']
    table.set_cols_dtype(['t', 'i', 'e', 'e', 'e', 'e', 'e'])
    table.set_cols_align(['l', 'r', 'r', 'r', 'r', 'r', 'r'])
    table.set_header_align(['l', 'r', 'r', 'r', 'r', 'r', 'r'])
    table.set_precision(4)

    rows = [header]
    for row in report.rows:
        rows.append([row.label, row.n_scenes, row.mse_mean, row.mse_sd, row.strength_mean,
                     row.strength_sd, row.drift_max])

    table.add_rows(rows)
    return table.draw()
