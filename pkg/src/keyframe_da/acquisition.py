"""Two-stage keyframe acquisition.

Every frame goes through the first-stage bank (dissimilar-frame
acquisition). A frame that stage rejects gets a second chance in an
independent bank when warm-up is over and its pseudo-labels contain the
currently rarest category.
"""
from __future__ import annotations

import enum
import math
import numbers
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .cluster import ClusterBank
from .errors import CategoryRangeError, ConfigError
from .stream import Detection


class Source(str, enum.Enum):
    AUF = "AUF"
    ARC = "ARC"


class RareCategoryMode(str, enum.Enum):
    LIVE = "live"
    FROZEN = "frozen"


@dataclass(frozen=True)
class AcquisitionConfig:
    gamma: float = 0.975
    warmup_min_total: int = 10000
    warmup_min_ratio: float = 0.003
    arc_enabled: bool = True
    rare_category_mode: RareCategoryMode = RareCategoryMode.LIVE

    def __post_init__(self):
        # any finite gamma is usable: <= -1 merges everything, > 1 spawns on every frame
        if not _is_real(self.gamma) or not math.isfinite(self.gamma):
            raise ConfigError(f"gamma: must be a finite number, got {self.gamma!r}")
        if not _is_int(self.warmup_min_total) or self.warmup_min_total < 1:
            raise ConfigError(f"warmup_min_total: must be an integer >= 1, got {self.warmup_min_total!r}")
        if not _is_real(self.warmup_min_ratio) or not 0.0 <= self.warmup_min_ratio <= 1.0:
            raise ConfigError(f"warmup_min_ratio: must lie in [0, 1], got {self.warmup_min_ratio}")
        object.__setattr__(self, "rare_category_mode", RareCategoryMode(self.rare_category_mode))


def _is_real(v) -> bool:
    return isinstance(v, numbers.Real) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, numbers.Integral) and not isinstance(v, bool)


class CategoryHistogram:
    """Running count of accepted pseudo-labels per category."""

    def __init__(self, num_categories: int):
        if num_categories < 1:
            raise ConfigError(f"num_categories: must be >= 1, got {num_categories}")
        self.counts = np.zeros(num_categories, dtype=np.int64)

    @classmethod
    def from_counts(cls, counts) -> "CategoryHistogram":
        hist = cls(len(counts))
        hist.counts[:] = counts
        return hist

    @property
    def num_categories(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __repr__(self):
        return f"CategoryHistogram({self.counts.tolist()})"


def update_histogram(hist: CategoryHistogram, labels: Iterable[Detection]) -> None:
    labels = list(labels)
    for det in labels:
        if not 0 <= det.category < hist.num_categories:
            raise CategoryRangeError(
                f"category {det.category} outside [0, {hist.num_categories})"
            )
    for det in labels:
        hist.counts[det.category] += 1


def rare_category(hist: CategoryHistogram) -> int:
    # np.argmin returns the first minimum, i.e. the lowest category id on ties
    return int(np.argmin(hist.counts))


def warmup_complete(hist: CategoryHistogram, cfg: AcquisitionConfig) -> bool:
    if hist.num_categories < 2:
        return False
    total = hist.total
    if total <= cfg.warmup_min_total:
        return False
    top = int(hist.counts.max())
    return hist.counts.min() / top >= cfg.warmup_min_ratio


@dataclass(frozen=True)
class AcquisitionDecision:
    keyframe: bool
    source: Optional[Source] = None
    auf_score: Optional[float] = None
    arc_score: Optional[float] = None
    rare_category: Optional[int] = None

    @property
    def verdict(self) -> str:
        return "keyframe" if self.keyframe else "skip"

    def to_record(self, frame_id: int) -> dict:
        return {
            "frame_id": frame_id,
            "verdict": self.verdict,
            "source": None if self.source is None else self.source.value,
            "auf_score": self.auf_score,
            "arc_score": self.arc_score,
            "rare_category": self.rare_category,
        }


@dataclass
class AcquisitionState:
    dimension: int
    num_categories: int
    config: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    track_members: bool = False

    def __post_init__(self):
        self.auf_bank = ClusterBank(self.dimension, track_members=self.track_members)
        self.arc_bank = ClusterBank(self.dimension, track_members=self.track_members)
        self.histogram = CategoryHistogram(self.num_categories)
        self.warmup_done = False
        self.frozen_rare: Optional[int] = None

    def current_rare_category(self) -> Optional[int]:
        if not self.warmup_done:
            return None
        if self.config.rare_category_mode is RareCategoryMode.FROZEN:
            return self.frozen_rare
        return rare_category(self.histogram)

    def process_frame(self, e, labels: Iterable[Detection]) -> AcquisitionDecision:
        """Decide whether the frame with embedding ``e`` is a keyframe.

        ``labels`` must already be confidence-filtered. The histogram is
        updated for every frame, keyframe or not.
        """
        labels = list(labels)
        cfg = self.config
        update_histogram(self.histogram, labels)
        if not self.warmup_done and warmup_complete(self.histogram, cfg):
            self.warmup_done = True
            self.frozen_rare = rare_category(self.histogram)

        auf = self.auf_bank.observe(e, cfg.gamma)
        if auf.spawned:
            return AcquisitionDecision(True, Source.AUF, auf_score=auf.score)

        rare = self.current_rare_category() if cfg.arc_enabled else None
        if rare is not None and any(d.category == rare for d in labels):
            arc = self.arc_bank.observe(e, cfg.gamma)
            return AcquisitionDecision(
                arc.spawned,
                Source.ARC if arc.spawned else None,
                auf_score=auf.score,
                arc_score=arc.score,
                rare_category=rare,
            )
        return AcquisitionDecision(False, auf_score=auf.score, rare_category=rare)

    def snapshot(self) -> dict:
        return {
            "auf_bank": self.auf_bank.to_dict(),
            "arc_bank": self.arc_bank.to_dict(),
            "histogram": self.histogram.counts.tolist(),
            "warmup_done": self.warmup_done,
            "rare_category": self.current_rare_category(),
        }


def process_frame(state: AcquisitionState, e, labels: Iterable[Detection]) -> AcquisitionDecision:
    return state.process_frame(e, labels)
