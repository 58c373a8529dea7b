"""Binary checkpoint format.

Layout (all integers little-endian):

    magic "SMTC" | version u32 |
    config_len u32 | config JSON utf-8 |
    train_step u64 |
    param_count u32 | param records |
    opt_flag u8 | [optimizer section]

A param record is: name_len u32, name utf-8, precision u8 (4 or 8),
ndim u32, extents u32 each, raw little-endian payload. The optimizer
section stores step_count u64, five f64 hyperparameters, and first/second
moment records in the same param-record format.

Writes go to a temp file followed by an atomic rename, so readers never see
a partial checkpoint.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig, config_from_dict
from .errors import ContractError
from .model import SegModel, build_model
from .optim import AdamW

MAGIC = b"SMTC"
VERSION = 1


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    nb = name.encode()
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    prec = arr.dtype.itemsize
    if prec not in (4, 8):
        raise ContractError(f"unsupported precision for {name}: {arr.dtype}")
    fh.write(struct.pack("<B", prec))
    fh.write(struct.pack("<I", arr.ndim))
    for e in arr.shape:
        fh.write(struct.pack("<I", e))
    fh.write(np.ascontiguousarray(arr, dtype=f"<f{prec}").tobytes())


def _read_array(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", fh.read(4))
    name = fh.read(name_len).decode()
    (prec,) = struct.unpack("<B", fh.read(1))
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * prec)
    arr = np.frombuffer(raw, dtype=f"<f{prec}").reshape(shape).copy()
    return name, arr


def save_checkpoint(path, model: SegModel, optimizer: AdamW | None = None,
                    train_step: int = 0) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    params = list(model.named_parameters())
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        cfg_json = model.cfg.to_json().encode()
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<Q", train_step))
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            _write_array(fh, name, p.data)
        if optimizer is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            s = optimizer.state
            fh.write(struct.pack("<Q", s.step_count))
            fh.write(struct.pack("<5d", s.lr, s.beta1, s.beta2, s.eps, s.weight_decay))
            fh.write(struct.pack("<I", len(s.first_moment)))
            for name in s.first_moment:
                _write_array(fh, name, s.first_moment[name])
                _write_array(fh, name, s.second_moment[name])
    os.replace(tmp, path)


def load_checkpoint(path, expected_dtype=np.float32):
    """Rebuild the model (and optimizer when stored) from a checkpoint.

    Returns (model, optimizer_or_None, train_step).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ContractError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        cfg = config_from_dict(json.loads(fh.read(cfg_len).decode()))
        (train_step,) = struct.unpack("<Q", fh.read(8))
        (n_params,) = struct.unpack("<I", fh.read(4))
        stored = dict(_read_array(fh) for _ in range(n_params))
        model = build_model(cfg, seed=0, dtype=expected_dtype)
        own = dict(model.named_parameters())
        if set(own) != set(stored):
            missing = set(own) ^ set(stored)
            raise ContractError(f"checkpoint parameter names mismatch: {sorted(missing)[:5]}")
        for name, p in own.items():
            arr = stored[name]
            if arr.shape != p.data.shape:
                raise ContractError(
                    f"checkpoint shape {arr.shape} vs model {p.data.shape} for {name}")
            p.data = np.ascontiguousarray(arr.astype(p.data.dtype, copy=False))
        (opt_flag,) = struct.unpack("<B", fh.read(1))
        optimizer = None
        if opt_flag:
            (step_count,) = struct.unpack("<Q", fh.read(8))
            lr, b1, b2, eps, wd = struct.unpack("<5d", fh.read(40))
            optimizer = AdamW(model.named_parameters(), lr=lr, beta1=b1, beta2=b2,
                              eps=eps, weight_decay=wd)
            optimizer.state.step_count = step_count
            (n_mom,) = struct.unpack("<I", fh.read(4))
            for _ in range(n_mom):
                name, m = _read_array(fh)
                name2, v = _read_array(fh)
                if name != name2:
                    raise ContractError("corrupt optimizer section")
                optimizer.state.first_moment[name] = m
                optimizer.state.second_moment[name] = v
    return model, optimizer, train_step
