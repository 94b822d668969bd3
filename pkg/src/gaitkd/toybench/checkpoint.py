"""Versioned checkpoint container: a zip of ``meta.json`` plus one ``.npy`` per parameter.

Entries carry a fixed timestamp so saving the same model twice gives
byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict

import numpy as np

from ..errors import CheckpointError, ShapeError
from .model import ModelConfig, ToyModel

FORMAT = "gaitkd-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def write_arrays(path, meta: dict, arrays: dict):
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=2).encode())
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _write_entry(zf, f"{name}.npy", buf.getvalue())


def read_arrays(path):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    except FileNotFoundError as exc:
        raise CheckpointError(f"no such file: {path}") from exc
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"corrupt container {path}: {exc}") from exc
    return meta, arrays


def save_checkpoint(model: ToyModel, path, extra=None):
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "model": asdict(model.cfg),
        "in_dim": model.in_dim,
        "num_classes": model.num_classes,
        "params": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in sorted(model.params.items())},
        "extra": extra or {},
    }
    write_arrays(path, meta, model.params)


def load_checkpoint(path, expect: ModelConfig | None = None, in_dim=None, num_classes=None) -> ToyModel:
    """Load a model; ``expect``/``in_dim``/``num_classes`` make shape mismatches explicit errors."""
    meta, arrays = read_arrays(path)
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path} has format version {meta.get('version')}, expected {VERSION}")
    try:
        cfg = ModelConfig(**meta["model"])
    except TypeError as exc:
        raise CheckpointError(f"bad model section in {path}: {exc}") from exc
    if expect is not None and cfg != expect:
        raise CheckpointError(f"{path} holds model {cfg}, expected {expect}")
    if in_dim is not None and meta["in_dim"] != in_dim:
        raise CheckpointError(f"{path} expects input dim {meta['in_dim']}, data has {in_dim}")
    if num_classes is not None and meta["num_classes"] != num_classes:
        raise CheckpointError(f"{path} has {meta['num_classes']} classes, expected {num_classes}")
    try:
        return ToyModel(cfg, meta["in_dim"], meta["num_classes"], params=arrays)
    except ShapeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def checkpoint_extra(path):
    meta, _ = read_arrays(path)
    return meta.get("extra", {})
