"""Engine configuration.

A config file is a flat JSON object; any key may be omitted and falls back
to the default below. ``augment`` is a nested object with the fields of
:class:`~keyframe_da.toy_detector.AugmentConfig`.

=====================  =========  ==========================================
key                    default    meaning
=====================  =========  ==========================================
gamma                  0.975      cosine threshold, shared by both banks
warmup_min_total       10000      pseudo-label total that must be exceeded
warmup_min_ratio       0.003      min/max category count ratio to end warm-up
rare_category_mode     "live"     "live" or "frozen" (fixed when warm-up ends)
alpha1                 0.996      per-keyframe teacher EMA momentum
alpha2                 0.9        final teacher/student blend
confidence_threshold   0.9        pseudo-labels must be strictly above this
learning_rate          0.001      student step size after warm-up
warmup_learning_rate   0.0001     student step size during warm-up
kl_direction           "student_teacher" or "teacher_student"
mode                   "auf_arc"  "no_acquire", "auf" or "auf_arc"
feature_dim            16
embedding_dim          null       null means same as feature_dim
num_categories         4
encoder_seed           7          seed of the frozen random projection
stream, checkpoint_in, checkpoint_out, decision_log, report   paths (null)
=====================  =========  ==========================================
"""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .acquisition import AcquisitionConfig, RareCategoryMode
from .errors import ConfigError
from .mean_teacher import KLDirection
from .toy_detector import AugmentConfig, ToyDetector


class Mode(str, enum.Enum):
    NO_ACQUIRE = "no_acquire"
    AUF = "auf"
    AUF_ARC = "auf_arc"


@dataclass(frozen=True)
class EngineConfig:
    gamma: float = 0.975
    warmup_min_total: int = 10000
    warmup_min_ratio: float = 0.003
    rare_category_mode: RareCategoryMode = RareCategoryMode.LIVE
    alpha1: float = 0.996
    alpha2: float = 0.9
    confidence_threshold: float = 0.9
    learning_rate: float = 0.001
    warmup_learning_rate: float = 0.0001
    kl_direction: KLDirection = KLDirection.STUDENT_TEACHER
    mode: Mode = Mode.AUF_ARC
    feature_dim: int = 16
    embedding_dim: Optional[int] = None
    num_categories: int = 4
    encoder_seed: int = 7
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    stream: Optional[str] = None
    checkpoint_in: Optional[str] = None
    checkpoint_out: Optional[str] = None
    decision_log: Optional[str] = None
    report: Optional[str] = None

    def __post_init__(self):
        for name, enum_cls in (("mode", Mode), ("kl_direction", KLDirection),
                               ("rare_category_mode", RareCategoryMode)):
            try:
                object.__setattr__(self, name, enum_cls(getattr(self, name)))
            except ValueError:
                choices = ", ".join(m.value for m in enum_cls)
                raise ConfigError(f"{name}: expected one of {choices}, got {getattr(self, name)!r}") from None
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", _build(AugmentConfig, self.augment, "augment."))
        for name in ("alpha1", "alpha2", "confidence_threshold"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}: must lie in [0, 1], got {v!r}")
        for name in ("learning_rate", "warmup_learning_rate"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"{name}: must be >= 0, got {v!r}")
        for name in ("feature_dim", "num_categories"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {v!r}")
        if self.embedding_dim is not None and (not isinstance(self.embedding_dim, int) or self.embedding_dim < 1):
            raise ConfigError(f"embedding_dim: must be a positive integer or null, got {self.embedding_dim!r}")
        # surfaces gamma / warm-up errors with their field names
        self.acquisition()

    def acquisition(self) -> AcquisitionConfig:
        return AcquisitionConfig(
            gamma=self.gamma,
            warmup_min_total=self.warmup_min_total,
            warmup_min_ratio=self.warmup_min_ratio,
            arc_enabled=self.mode is Mode.AUF_ARC,
            rare_category_mode=self.rare_category_mode,
        )

    def build_model(self) -> ToyDetector:
        return ToyDetector(
            self.feature_dim,
            self.num_categories,
            embedding_dim=self.embedding_dim,
            encoder_seed=self.encoder_seed,
            augment_config=self.augment,
        )

    def replace(self, **changes) -> "EngineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif dataclasses.is_dataclass(v):
                v = dataclasses.asdict(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        return _build(cls, data)

    @classmethod
    def load(cls, path) -> "EngineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or cls.__name__}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(prefix + u for u in unknown)}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{prefix}{exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{prefix.rstrip('.') or cls.__name__}: {exc}") from None
