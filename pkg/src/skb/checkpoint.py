"""Flat binary checkpoints: JSON header plus little-endian float32 payloads.

Entries are sorted by name and the header JSON is canonicalized, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SKBC"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    step: int = 0
    opt_moments: dict[str, np.ndarray] = field(default_factory=dict)
    opt_steps: dict[str, int] = field(default_factory=dict)


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict, step: int = 0,
                    opt_moments: dict[str, np.ndarray] | None = None,
                    opt_steps: dict[str, int] | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    opt_moments = opt_moments or {}
    entries = []
    payload = bytearray()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    opt_entries = []
    for name in sorted(opt_moments):
        arr = np.ascontiguousarray(opt_moments[name], dtype="<f4")
        opt_entries.append({"name": name, "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    header = {
        "version": VERSION,
        "step": int(step),
        "config": config,
        "params": entries,
        "opt": opt_entries,
        "opt_steps": {k: int(v) for k, v in (opt_steps or {}).items()},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        f.write(payload)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r} in {path}")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(header_len))
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(count * 4), dtype="<f4").reshape(shape)
            params[entry["name"]] = arr.copy()
        opt = {}
        for entry in header.get("opt", []):
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(count * 4), dtype="<f4").reshape(shape)
            opt[entry["name"]] = arr.copy()
    return Checkpoint(
        params=params,
        config=header.get("config", {}),
        step=int(header.get("step", 0)),
        opt_moments=opt,
        opt_steps={k: int(v) for k, v in header.get("opt_steps", {}).items()},
    )
