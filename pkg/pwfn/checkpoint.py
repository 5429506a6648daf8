"""
Binary checkpoint.

Layout (little-endian):
    b'PWFN' | uint16 version | uint64 header length | UTF-8 JSON header | tensor bytes

The header lists every tensor block (name, field, dtype, shape, offset,
nbytes) in the order the bytes follow. Per network tensor there are four
blocks: mu (float32), sigma (float32), fixed (uint8 0/1) and cluster_index
(uint32, 0xFFFFFFFF while the weight is free).
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from pwfn.bayes_weights import FREE, WeightStore
from pwfn.codebook import Codebook
from pwfn.errors import CheckpointError, ConfigError
from pwfn.numerics import NetworkSpec

logger = logging.getLogger(__name__)

MAGIC = b'PWFN'
VERSION = 1
FREE_SENTINEL = 0xFFFFFFFF
_PREAMBLE = struct.Struct('<4sHQ')
_FIELDS = (
    ('mu', '<f4'),
    ('sigma', '<f4'),
    ('fixed', '|u1'),
    ('cluster_index', '<u4'),
)
STAGES = ('pretrained', 'compressing', 'compressed')


@dataclass
class Checkpoint:
    store: WeightStore
    stage: str = 'pretrained'
    round_t: int = 0
    config: dict = field(default_factory=dict)
    codebook: Optional[Codebook] = None
    rng_state: Optional[dict] = None
    assignments: List[dict] = field(default_factory=list)
    history: dict = field(default_factory=dict)

    @property
    def spec(self):
        return self.store.spec


def _field_array(store, name):
    if name == 'mu':
        return store.mu.astype('<f4')
    if name == 'sigma':
        return store.sigma.astype('<f4')
    if name == 'fixed':
        return store.fixed.astype('|u1')
    index = store.cluster_index.copy()
    index[index == FREE] = FREE_SENTINEL
    if np.any(index < 0) or np.any(index > FREE_SENTINEL):
        raise CheckpointError('cluster_index does not fit in 32 bits')
    return index.astype('<u4')


def to_bytes(checkpoint):
    store = checkpoint.store
    blocks, entries, offset = [], [], 0
    for name, dtype in _FIELDS:
        flat = _field_array(store, name)
        for tensor_name, part in zip((n for n, _ in store.spec.param_shapes()), store.tensors(flat)):
            data = np.ascontiguousarray(part, dtype=dtype).tobytes()
            entries.append({
                'name': tensor_name,
                'field': name,
                'dtype': dtype,
                'shape': list(part.shape),
                'offset': offset,
                'nbytes': len(data),
            })
            blocks.append(data)
            offset += len(data)
    header = {
        'network': store.spec.to_dict(),
        'stage': checkpoint.stage,
        'round_t': checkpoint.round_t,
        'config': checkpoint.config,
        'codebook': checkpoint.codebook.to_dict() if checkpoint.codebook else None,
        'rng_state': checkpoint.rng_state,
        'assignments': checkpoint.assignments,
        'history': checkpoint.history,
        'tensors': entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return _PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + b''.join(blocks)


_ENTRY_KEYS = ('name', 'field', 'dtype', 'shape', 'offset', 'nbytes')


def _tensor_table(entries, spec):
    """Check the header's tensor list against the network, block by block"""
    expected = [(name, shape, field_name, dtype)
                for field_name, dtype in _FIELDS
                for name, shape in spec.param_shapes()]
    if not isinstance(entries, list) or len(entries) != len(expected):
        raise CheckpointError(f'Checkpoint lists {len(entries) if isinstance(entries, list) else "no"} '
                              f'tensor blocks, expected {len(expected)}')
    for entry, (name, shape, field_name, dtype) in zip(entries, expected):
        if not isinstance(entry, dict) or any(key not in entry for key in _ENTRY_KEYS):
            raise CheckpointError(f'Tensor block for {name}.{field_name} is missing keys {list(_ENTRY_KEYS)}')
        if (entry['name'], entry['field']) != (name, field_name):
            raise CheckpointError(f'Tensor block {entry["name"]}.{entry["field"]} found where '
                                  f'{name}.{field_name} was expected')
        if entry['dtype'] != dtype:
            raise CheckpointError(f'Tensor {name}.{field_name} has dtype {entry["dtype"]!r}, expected {dtype!r}')
        if not isinstance(entry['shape'], list) or entry['shape'] != list(shape):
            raise CheckpointError(f'Tensor {name}.{field_name} has shape {entry["shape"]}, expected {list(shape)}')
        offset, nbytes = entry['offset'], entry['nbytes']
        if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
            raise CheckpointError(f'Tensor {name}.{field_name} has invalid offset {offset!r}')
        if nbytes != int(np.prod(shape)) * np.dtype(dtype).itemsize:
            raise CheckpointError(f'Tensor {name}.{field_name} has {nbytes!r} bytes, '
                                  f'expected {int(np.prod(shape)) * np.dtype(dtype).itemsize}')
    return entries


def from_bytes(data):
    if len(data) < _PREAMBLE.size:
        raise CheckpointError('Checkpoint is truncated')
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f'Not a PWFN checkpoint (magic {magic!r})')
    if version != VERSION:
        raise CheckpointError(f'Unsupported checkpoint version {version}')
    body_start = _PREAMBLE.size + header_len
    if len(data) < body_start:
        raise CheckpointError('Checkpoint header is truncated')
    try:
        header = json.loads(data[_PREAMBLE.size:body_start].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'Checkpoint header is unreadable: {e}') from e

    if not isinstance(header, dict):
        raise CheckpointError('Checkpoint header is not a JSON object')
    missing = [key for key in ('network', 'stage', 'round_t', 'tensors') if key not in header]
    if missing:
        raise CheckpointError(f'Checkpoint header is missing {missing}')
    if header['stage'] not in STAGES:
        raise CheckpointError(f'Unknown checkpoint stage {header["stage"]!r}')
    try:
        spec = NetworkSpec.from_dict(header['network'])
    except (ConfigError, KeyError, TypeError) as e:
        raise CheckpointError(f'Checkpoint network is invalid: {e}') from e
    flat = {name: [] for name, _ in _FIELDS}
    for entry in _tensor_table(header['tensors'], spec):
        start = body_start + entry['offset']
        end = start + entry['nbytes']
        if end > len(data):
            raise CheckpointError(f'Tensor {entry["name"]}.{entry["field"]} runs past the end of the file')
        flat[entry['field']].append(np.frombuffer(data[start:end], dtype=entry['dtype']))
    arrays = {name: np.concatenate(parts) if parts else np.zeros(0) for name, parts in flat.items()}
    cluster_index = arrays['cluster_index'].astype(np.int64)
    cluster_index[cluster_index == FREE_SENTINEL] = FREE
    store = WeightStore(
        spec,
        arrays['mu'].astype(np.float64),
        arrays['sigma'].astype(np.float64),
        arrays['fixed'].astype(bool),
        cluster_index,
    )
    try:
        codebook = Codebook.from_dict(header['codebook']) if header.get('codebook') else None
    except (ConfigError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'Checkpoint codebook is invalid: {e}') from e
    return Checkpoint(
        store=store,
        stage=header['stage'],
        round_t=int(header['round_t']),
        config=header.get('config') or {},
        codebook=codebook,
        rng_state=header.get('rng_state'),
        assignments=header.get('assignments') or [],
        history=header.get('history') or {},
    )


def save_checkpoint(checkpoint, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(to_bytes(checkpoint))
    logger.info(f'Checkpoint saved to {path} ({checkpoint.stage}, round {checkpoint.round_t})')
    return path


def load_checkpoint(path):
    if not os.path.exists(path):
        raise CheckpointError(f'Checkpoint not found: {path}')
    with open(path, 'rb') as f:
        data = f.read()
    checkpoint = from_bytes(data)
    logger.info(f'Checkpoint loaded from {path} ({checkpoint.stage}, round {checkpoint.round_t})')
    return checkpoint
