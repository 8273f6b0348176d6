# -*- coding: utf-8 -*-
"""
TensorArchive: a named collection of tensors plus a text metadata block,
stored in a small documented binary format. Checkpoints, removal traces and
analysis dumps are all tensor archives.

Layout (all integers little-endian):

    magic          4 bytes   b'ATTE'
    version        uint16    FORMAT_VERSION
    tensor count   uint32
    metadata size  uint32    followed by that many bytes of UTF-8 'key=value' lines
    per tensor header:
        name size  uint16    followed by the UTF-8 name
        dtype code uint8     0: float32, 1: float64, 2: int64, 3: uint8, 4: bool
        rank       uint8
        extents    rank x uint32
    payloads       row-major, little-endian, in header order

@author: attneraser developers
"""
import struct
from pathlib import Path

import numpy as np
import torch

from attneraser.errors import ArchiveError, ArchiveVersionError

MAGIC = b'ATTE'
FORMAT_VERSION = 1

DTYPE_CODES = {torch.float32: (0, '<f4'), torch.float64: (1, '<f8'),
               torch.int64: (2, '<i8'), torch.uint8: (3, 'u1'), torch.bool: (4, '?')}
CODE_DTYPES = {code: (dtype, np_type) for dtype, (code, np_type) in DTYPE_CODES.items()}


class TensorArchive:
    """
    Named tensors and metadata:
        - tensors: dict name -> Tensor (float32, float64, int64, uint8 or bool)
        - metadata: dict str -> str
    """

    DEFAULT_SUFFIX = '.atte'

    def __init__(self, tensors=None, metadata=None):
        self.tensors = {}
        self.metadata = {}
        if tensors is not None:
            for name in tensors:
                self.add(name, tensors[name])
        if metadata is not None:
            for key in metadata:
                self.set_meta(key, metadata[key])

    def __len__(self):
        return len(self.tensors)

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def add(self, name, tensor):
        name = str(name)
        if len(name.encode('utf-8')) > 65535:
            raise ValueError('Error in TensorArchive.add: name too long')
        if not isinstance(tensor, torch.Tensor):
            raise TypeError('Error in TensorArchive.add (' + name + '): value must be a Tensor')
        if tensor.dtype not in DTYPE_CODES:
            raise TypeError('Error in TensorArchive.add (' + name + '): unsupported dtype ' +
                            str(tensor.dtype))
        if tensor.dim() > 255:
            raise ValueError('Error in TensorArchive.add (' + name + '): rank too large')
        self.tensors[name] = tensor.detach().cpu().contiguous()

    def set_meta(self, key, value):
        key = str(key)
        value = str(value)
        if '=' in key or '\n' in key or '\n' in value:
            raise ValueError('Error in TensorArchive.set_meta (' + key +
                             '): keys cannot hold "=" or newlines, values cannot hold newlines')
        self.metadata[key] = value

    def to_bytes(self):
        meta = ''.join(key + '=' + self.metadata[key] + '\n' for key in self.metadata).encode('utf-8')
        header = [MAGIC, struct.pack('<HII', FORMAT_VERSION, len(self.tensors), len(meta)), meta]
        payloads = []
        for name, tensor in self.tensors.items():
            code, np_type = DTYPE_CODES[tensor.dtype]
            encoded = name.encode('utf-8')
            header.append(struct.pack('<H', len(encoded)))
            header.append(encoded)
            header.append(struct.pack('<BB', code, tensor.dim()))
            header.append(struct.pack('<' + 'I' * tensor.dim(), *tensor.shape))
            payloads.append(tensor.numpy().astype(np_type, copy=False).tobytes(order='C'))
        return b''.join(header + payloads)

    @classmethod
    def from_bytes(cls, buffer):
        reader = _Reader(buffer)
        if reader.take(4) != MAGIC:
            raise ArchiveError('Error in TensorArchive: not a tensor archive (bad magic)')
        version, count, meta_size = reader.unpack('<HII')
        if version != FORMAT_VERSION:
            raise ArchiveVersionError('Error in TensorArchive: unknown format version ' + str(version) +
                                      ' (this release reads version ' + str(FORMAT_VERSION) + ')')
        metadata = {}
        try:
            text = reader.take(meta_size).decode('utf-8')
        except UnicodeDecodeError:
            raise ArchiveError('Error in TensorArchive: metadata block is not UTF-8')
        # only '\n' ends an entry; values may hold any other character
        lines = text.split('\n')
        if lines[-1] != '':
            raise ArchiveError('Error in TensorArchive: metadata block does not end with a newline')
        for line in lines[:-1]:
            if '=' not in line:
                raise ArchiveError('Error in TensorArchive: malformed metadata line: ' + line)
            key, value = line.split('=', 1)
            metadata[key] = value

        headers = []
        for _ in range(count):
            (size,) = reader.unpack('<H')
            name = reader.take(size).decode('utf-8')
            code, rank = reader.unpack('<BB')
            if code not in CODE_DTYPES:
                raise ArchiveError('Error in TensorArchive: unknown dtype code ' + str(code) +
                                   ' for tensor ' + name)
            extents = reader.unpack('<' + 'I' * rank) if rank > 0 else ()
            headers.append((name, code, tuple(extents)))

        archive = cls(metadata=metadata)
        for name, code, extents in headers:
            dtype, np_type = CODE_DTYPES[code]
            n_items = int(np.prod(extents)) if len(extents) > 0 else 1
            n_bytes = n_items * np.dtype(np_type).itemsize
            values = np.frombuffer(reader.take(n_bytes), dtype=np_type).reshape(extents)
            archive.tensors[name] = torch.from_numpy(values.copy())
        if not reader.at_end():
            raise ArchiveError('Error in TensorArchive: trailing bytes after the last payload')
        return archive

    def save_file(self, filename):
        """
        Save the archive. If no extension is provided, '.atte' is added.
        Returns the path written.
        """
        filepath = Path(filename).resolve()
        if len(filepath.suffix) < 2:
            filepath = filepath.with_suffix(self.DEFAULT_SUFFIX)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, 'wb') as f:
            f.write(self.to_bytes())
        return filepath

    @classmethod
    def open_file(cls, filepath):
        """Restore an archive written by save_file"""
        filepath = Path(filepath).resolve()
        if not filepath.exists() and len(filepath.suffix) < 2:
            filepath = filepath.with_suffix(cls.DEFAULT_SUFFIX)
        if not filepath.exists():
            raise FileNotFoundError('Filepath does not exist: {}'.format(filepath))
        with open(filepath, 'rb') as f:
            return cls.from_bytes(f.read())


class _Reader:
    """Sequential reader that reports truncation as a corrupt archive"""

    def __init__(self, buffer):
        self.buffer = memoryview(buffer)
        self.position = 0

    def take(self, size):
        end = self.position + size
        if end > len(self.buffer):
            raise ArchiveError('Error in TensorArchive: file is truncated')
        chunk = bytes(self.buffer[self.position:end])
        self.position = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def at_end(self):
        return self.position == len(self.buffer)
