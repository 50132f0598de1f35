# checkpoint_manager.py
"""Checkpoint files, run directories and content hashes.

Checkpoint layout (JSON, stable across versions)::

    {"format": "cet-checkpoint", "version": 1,
     "tensors": {"enc.value_emb": {"shape": [d, m], "dtype": "float64", "data": [...]}, ...},
     "metadata": {...}}

``data`` is the row-major flattening of the tensor. Floats are written with
Python's shortest round-trip repr, so loading restores the exact values.
"""
import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from errors import RunFileError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'cet-checkpoint'
CHECKPOINT_VERSION = 1

RUN_FILES = {
    'manifest': 'manifest.json',
    'checkpoint': 'checkpoint.json',
    'trace': 'trace.csv',
    'report': 'report.json',
    'splits': 'splits.json',
    'predictions': 'predictions.csv',
    'log': 'run.log',
}


def content_hash(path) -> str:
    """Git-style blob hash of a file: sha1 over ``blob <size>\\0`` plus the bytes."""
    with open(path, 'rb') as f:
        data = f.read()
    header = f"blob {len(data)}\0".encode('utf-8')
    return hashlib.sha1(header + data).hexdigest()


def _write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def _read_json(path, what):
    if not os.path.exists(path):
        raise RunFileError(f"{what} not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise RunFileError(f"{what} at {path} is not valid JSON: {e}")


def save_checkpoint(path, tensors: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None):
    """Write named arrays and metadata to ``path``.

    Args:
        path (str): checkpoint file
        tensors (dict): name -> array
        metadata (dict, optional): JSON-serializable run information
    """
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'tensors': {
            name: {'shape': list(arr.shape), 'dtype': str(arr.dtype), 'data': arr.reshape(-1).tolist()}
            for name, arr in sorted(tensors.items())
        },
        'metadata': metadata or {},
    }
    _write_json(path, payload)
    logger.info(f"Saved checkpoint with {len(tensors)} tensors to {path}")


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint written by ``save_checkpoint``.

    Returns:
        tuple: (name -> array, metadata)
    """
    payload = _read_json(path, 'checkpoint')
    if payload.get('format') != CHECKPOINT_FORMAT:
        raise RunFileError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get('version') != CHECKPOINT_VERSION:
        raise RunFileError(f"{path} has checkpoint version {payload.get('version')}, "
                           f"expected {CHECKPOINT_VERSION}")
    tensors = {}
    for name, entry in payload['tensors'].items():
        arr = np.asarray(entry['data'], dtype=entry.get('dtype', 'float64'))
        shape = tuple(entry['shape'])
        if arr.size != int(np.prod(shape)):
            raise RunFileError(f"{path}: tensor '{name}' holds {arr.size} values for shape {shape}")
        tensors[name] = arr.reshape(shape)
    logger.info(f"Loaded checkpoint with {len(tensors)} tensors from {path}")
    return tensors, payload.get('metadata', {})


class RunStore:
    """One run directory with stable file names."""

    def __init__(self, run_dir, create=True):
        """Open (and optionally create) a run directory.

        Args:
            run_dir (str): directory path
            create (bool): create the directory when missing
        """
        self.run_dir = os.path.abspath(run_dir)
        if not os.path.isdir(self.run_dir):
            if not create:
                raise RunFileError(f"run directory not found: {self.run_dir}")
            os.makedirs(self.run_dir)
            logger.info(f"Created run directory: {self.run_dir}")

    def path(self, name):
        """Absolute path of a run file, by key (``'trace'``) or by file name."""
        return os.path.join(self.run_dir, RUN_FILES.get(name, name))

    def exists(self, name):
        return os.path.exists(self.path(name))

    def write_json(self, name, payload):
        _write_json(self.path(name), payload)
        logger.info(f"Wrote {self.path(name)}")

    def read_json(self, name):
        return _read_json(self.path(name), RUN_FILES.get(name, name))

    def write_manifest(self, command, params, config, seeds: Iterable[int] = (),
                       inputs: Iterable[str] = (), outputs: Iterable[str] = (), name='manifest'):
        """Record what produced this directory, enough to re-run it.

        Args:
            command (str): CLI command name
            params (dict): the command's resolved parameters
            config (dict): full resolved configuration
            seeds (list): seeds run
            inputs (list): input files, hashed
            outputs (list): output files written
            name (str): file key or name, ``manifest.json`` by default
        """
        manifest = {
            'command': command,
            'params': params,
            'config': config,
            'seeds': list(seeds),
            'inputs': {os.path.abspath(p): content_hash(p) for p in inputs},
            'outputs': sorted(os.path.relpath(os.path.abspath(p), self.run_dir) for p in outputs),
        }
        self.write_json(name, manifest)
        return manifest

    def read_manifest(self, name='manifest'):
        return self.read_json(name)

    def seed_dirs(self) -> List['RunStore']:
        """Per-seed subdirectories ``seed_<n>``, in seed order."""
        found = []
        for name in os.listdir(self.run_dir):
            if name.startswith('seed_') and name[5:].isdigit() and os.path.isdir(os.path.join(self.run_dir, name)):
                found.append((int(name[5:]), name))
        return [RunStore(os.path.join(self.run_dir, name), create=False) for _, name in sorted(found)]

    def child(self, seed) -> 'RunStore':
        return RunStore(os.path.join(self.run_dir, f"seed_{seed}"))
