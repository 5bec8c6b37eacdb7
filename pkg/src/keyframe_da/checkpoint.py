"""Parameter checkpoints.

Layout: one line of JSON header terminated by ``\\n``, followed by the
parameter vectors as raw little-endian float64, back to back, in the order
given by ``header["vectors"]``::

    {"model_name": "toy_linear_softmax", "param_count": 68, "alpha1": 0.996,
     "alpha2": 0.9, "vectors": ["final"]}
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointError

_DTYPE = np.dtype("<f8")


def save_checkpoint(path, vectors: dict, model_name: str, alpha1: float, alpha2: float,
                    extra: Optional[dict] = None) -> None:
    arrays = {name: np.asarray(v, dtype=np.float64).ravel() for name, v in vectors.items()}
    sizes = {a.size for a in arrays.values()}
    if len(sizes) != 1:
        raise CheckpointError("all checkpoint vectors must have the same length")
    header = {
        "model_name": model_name,
        "param_count": sizes.pop(),
        "alpha1": alpha1,
        "alpha2": alpha2,
        "vectors": list(arrays),
    }
    if extra:
        header.update(extra)
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for a in arrays.values():
            fh.write(a.astype(_DTYPE).tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(header, {name: vector})``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: checkpoint header is not valid JSON") from None
    for key in ("model_name", "param_count", "vectors"):
        if key not in header:
            raise CheckpointError(f"{path}: checkpoint header lacks '{key}'")
    count = int(header["param_count"])
    names = list(header["vectors"])
    body = raw[nl + 1:]
    if len(body) != count * len(names) * _DTYPE.itemsize:
        raise CheckpointError(
            f"{path}: expected {len(names)} vectors of {count} float64 values, "
            f"found {len(body)} bytes"
        )
    data = np.frombuffer(body, dtype=_DTYPE).astype(np.float64)
    vectors = {name: data[i * count:(i + 1) * count].copy() for i, name in enumerate(names)}
    return header, vectors


def source_vector(header: dict, vectors: dict) -> np.ndarray:
    """The vector to start adaptation from: ``final`` if present, else the first one."""
    if "final" in vectors:
        return vectors["final"]
    if not vectors:
        raise CheckpointError("checkpoint holds no parameter vectors")
    return next(iter(vectors.values()))
