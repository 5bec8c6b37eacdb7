"""Frame data model and JSON Lines stream I/O.

A stream file holds one JSON object per line::

    {"features": [0.1, 2.0, ...], "detections": [{"category": 1, "confidence": 0.97}]}

``detections`` is optional. It is present only when an external teacher
produced the pseudo-labels; otherwise the engine runs its own teacher.
Frame ids are assigned from line order, starting at 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DimensionError, NonFiniteError, StreamFormatError


@dataclass(frozen=True)
class Detection:
    category: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Frame:
    """One stream element.

    ``features`` is the raw model input; ``embedding`` is filled in later by
    the frozen encoder (use :meth:`with_embedding`, frames are immutable).
    """

    id: int
    features: np.ndarray
    embedding: Optional[np.ndarray] = None
    detections: Optional[tuple[Detection, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "features", _readonly(self.features))
        if self.embedding is not None:
            object.__setattr__(self, "embedding", _readonly(self.embedding))
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])

    def with_embedding(self, embedding) -> "Frame":
        return Frame(self.id, self.features, embedding, self.detections)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.features, other.features)
            and _opt_array_equal(self.embedding, other.embedding)
            and self.detections == other.detections
        )

    __hash__ = None


def _opt_array_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def validate_frame(frame: Frame, expected_dim: int) -> None:
    """Raise if ``frame.features`` has the wrong length or a non-finite entry."""
    if frame.features.ndim != 1 or frame.features.shape[0] != expected_dim:
        raise DimensionError(
            f"frame {frame.id}: expected {expected_dim} features, got {frame.features.shape[0]}"
        )
    if not np.all(np.isfinite(frame.features)):
        bad = "NaN" if np.any(np.isnan(frame.features)) else "Inf"
        raise NonFiniteError(f"frame {frame.id}: features contain {bad}")


def _parse_detections(raw, lineno: int) -> tuple[Detection, ...]:
    if not isinstance(raw, list):
        raise StreamFormatError("'detections' must be an array", line=lineno)
    out = []
    for item in raw:
        if not isinstance(item, dict) or "category" not in item or "confidence" not in item:
            raise StreamFormatError(
                "each detection needs 'category' and 'confidence'", line=lineno
            )
        cat, conf = item["category"], item["confidence"]
        if isinstance(cat, bool) or not isinstance(cat, int):
            raise StreamFormatError("detection category must be an integer", line=lineno)
        if isinstance(conf, bool) or not isinstance(conf, (int, float)):
            raise StreamFormatError("detection confidence must be a number", line=lineno)
        try:
            out.append(Detection(cat, float(conf)))
        except ValueError as exc:
            raise StreamFormatError(str(exc), line=lineno) from None
    return tuple(out)


def parse_line(line: str, lineno: int, frame_id: int) -> Frame:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"invalid JSON ({exc.msg})", line=lineno) from None
    if not isinstance(record, dict) or "features" not in record:
        raise StreamFormatError("record must be an object with a 'features' key", line=lineno)
    feats = record["features"]
    if not isinstance(feats, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats
    ):
        raise StreamFormatError("'features' must be an array of numbers", line=lineno)
    detections = None
    if "detections" in record and record["detections"] is not None:
        detections = _parse_detections(record["detections"], lineno)
    return Frame(frame_id, feats, detections=detections)


def read_stream(path) -> Iterator[Frame]:
    """Lazily yield frames from a JSON Lines stream file.

    Blank lines are ignored. Raises :class:`StreamFormatError` naming the
    line for malformed records and :class:`DimensionError` when a record's
    feature count differs from the first record's.
    """
    path = Path(path)
    expected_dim = None
    frame_id = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frame = parse_line(line, lineno, frame_id)
            except StreamFormatError as exc:
                raise StreamFormatError(exc.reason, line=lineno, path=path) from None
            if expected_dim is None:
                expected_dim = frame.dim
            if frame.dim != expected_dim:
                raise DimensionError(
                    f"{path}:{lineno}: expected {expected_dim} features, got {frame.dim}"
                )
            yield frame
            frame_id += 1


def frame_record(frame: Frame) -> dict:
    record = {"features": [float(v) for v in frame.features]}
    if frame.detections is not None:
        record["detections"] = [
            {"category": d.category, "confidence": d.confidence} for d in frame.detections
        ]
    return record


def write_stream(path, frames: Iterable[Frame]) -> int:
    """Write frames as JSON Lines; returns the number written.

    Floats go through ``repr`` so a read-back is bit-exact.
    """
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_record(frame)))
            fh.write("\n")
            n += 1
    return n


def frames_from_arrays(features: Sequence, detections: Optional[Sequence] = None) -> list[Frame]:
    """Build frames with ids 0..n-1 from a 2-D array (convenience for tests and the simulator)."""
    out = []
    for i, row in enumerate(features):
        dets = None if detections is None else detections[i]
        out.append(Frame(i, row, detections=dets))
    return out
