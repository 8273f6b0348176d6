# -*- coding: utf-8 -*-
"""
Run manifests: plain text key=value files written next to every output.

@author: attneraser developers
"""
import platform
import time
from pathlib import Path

import numpy as np
import torch

import attneraser

MANIFEST_NAME = 'run_manifest.txt'


def versions():
    return {'version.attneraser': attneraser.__version__,
            'version.python': platform.python_version(),
            'version.numpy': np.__version__,
            'version.torch': torch.__version__}


def write_manifest(directory, values, name=MANIFEST_NAME):
    """Write values (plus package versions and a timestamp) as sorted key=value lines"""
    path = Path(directory).resolve() / name
    entries = dict(values)
    entries.update(versions())
    entries.setdefault('written', time.strftime('%Y-%m-%dT%H:%M:%S'))
    with open(path, 'w', encoding='utf-8') as f:
        for key in sorted(entries):
            text = str(entries[key])
            if '\n' in text:
                raise ValueError('Error in write_manifest: value of ' + key + ' spans lines')
            f.write(key + '=' + text + '\n')
    return path


def read_manifest(filepath):
    values = {}
    with open(Path(filepath).resolve(), 'r', encoding='utf-8') as f:
        for line in f:
            line = line.rstrip('\n')
            if line == '' or line.startswith('#'):
                continue
            key, _, value = line.partition('=')
            values[key] = value
    return values
