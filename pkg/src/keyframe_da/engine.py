"""Online adaptation loop driven one frame at a time."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .acquisition import AcquisitionDecision, AcquisitionState, Source
from .config import EngineConfig, Mode
from .mean_teacher import (
    AdaptReport,
    TeacherStudentPair,
    adapt_on_keyframe,
    filter_pseudo_labels,
    finalize,
    teacher_pseudo_labels,
)
from .stream import Frame, validate_frame


@dataclass(frozen=True)
class StepResult:
    frame_id: int
    keyframe: bool
    decision: Optional[AcquisitionDecision]
    adapt: Optional[AdaptReport]

    @property
    def source(self) -> Optional[Source]:
        return None if self.decision is None else self.decision.source


class Engine:
    """Processes a stream strictly one frame at a time.

    With ``adapt=False`` only the acquisition decisions are made (the
    teacher is still used for pseudo-labels on frames without supplied
    detections). In ``no_acquire`` mode every frame is adapted on and the
    acquisition state is never touched.
    """

    def __init__(self, config: EngineConfig, source_params, model=None, adapt: bool = True,
                 track_members: bool = False):
        self.config = config
        self.model = model if model is not None else config.build_model()
        self.pair = TeacherStudentPair.from_source(
            source_params,
            self.model,
            alpha1=config.alpha1,
            alpha2=config.alpha2,
            confidence_threshold=config.confidence_threshold,
        )
        self.adapt = adapt
        self.acq_config = config.acquisition()
        self.state = AcquisitionState(
            self.model.embedding_dim, self.model.num_categories, self.acq_config, track_members=track_members
        )
        self.rng = np.random.default_rng(config.augment.rng_seed)
        self.frames_seen = 0
        self.keyframes = 0
        self.keyframes_by_source = {Source.AUF: 0, Source.ARC: 0}
        self.labels_used = 0

    @property
    def mode(self) -> Mode:
        return self.config.mode

    def current_lr(self) -> float:
        if self.acq_config.arc_enabled and not self.state.warmup_done:
            return self.config.warmup_learning_rate
        return self.config.learning_rate

    def pseudo_labels(self, frame: Frame):
        if frame.detections is not None:
            return filter_pseudo_labels(frame.detections, self.pair.confidence_threshold)
        return teacher_pseudo_labels(self.pair, self.model, frame.features, self.rng)

    def step(self, frame: Frame) -> StepResult:
        validate_frame(frame, self.model.feature_dim)
        labels = self.pseudo_labels(frame)
        self.frames_seen += 1

        if self.mode is Mode.NO_ACQUIRE:
            decision = None
            keyframe = True
        else:
            embedding = self.model.encode(frame.features)
            decision = self.state.process_frame(embedding, labels)
            keyframe = decision.keyframe
            if keyframe:
                self.keyframes_by_source[decision.source] += 1

        report = None
        if keyframe:
            self.keyframes += 1
            if self.adapt:
                report = adapt_on_keyframe(
                    self.pair, self.model, frame, self.current_lr(), self.rng,
                    labels=labels, kl_direction=self.config.kl_direction,
                )
                self.labels_used += report.labels_used
        return StepResult(frame.id, keyframe, decision, report)

    def run(self, frames):
        for frame in frames:
            yield self.step(frame)

    def finalize(self) -> np.ndarray:
        return finalize(self.pair)

    def summary(self) -> dict:
        return {
            "mode": self.mode.value,
            "frames": self.frames_seen,
            "keyframes_total": self.keyframes,
            "keyframes_auf": self.keyframes_by_source[Source.AUF],
            "keyframes_arc": self.keyframes_by_source[Source.ARC],
            "clusters_auf": len(self.state.auf_bank),
            "clusters_arc": len(self.state.arc_bank),
            "warmup_done": self.state.warmup_done,
            "rare_category": self.state.current_rare_category(),
            "histogram": self.state.histogram.counts.tolist(),
        }
