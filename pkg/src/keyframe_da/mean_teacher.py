"""Teacher/student parameter management for online self-training.

The student is trained on the teacher's confident pseudo-labels plus a KL
term that keeps its class distribution close to the teacher's. The teacher
follows the student by an exponential moving average, and a second blend
produces the deployed model at the end of the stream.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import ConfigError, NumericDivergenceError, ParameterShapeError
from .stream import Detection, Frame

PROB_FLOOR = 1e-12


class KLDirection(str, enum.Enum):
    STUDENT_TEACHER = "student_teacher"  # KL(student || teacher)
    TEACHER_STUDENT = "teacher_student"  # KL(teacher || student)


class AdaptableModel(Protocol):
    """What the adaptation loop needs from a model.

    Parameters are passed around as flat float64 vectors; the model itself
    only holds the frozen encoder.
    """

    name: str
    num_categories: int
    param_count: int

    def encoder_params(self) -> np.ndarray: ...

    def encode(self, features) -> np.ndarray: ...

    def predict(self, params, features) -> tuple[np.ndarray, float]: ...

    def detections(self, params, features) -> list[Detection]: ...

    def classification_logits(self, params, features) -> np.ndarray: ...

    def logits_vjp(self, params, features, dlogits) -> np.ndarray: ...

    def task_loss_and_gradient(self, params, features, labels) -> tuple[float, np.ndarray]: ...

    def augment(self, features, mode: str, rng: np.random.Generator) -> np.ndarray: ...


def _flat(x, name) -> np.ndarray:
    arr = np.array(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ParameterShapeError(f"{name} contains non-finite entries")
    return arr


@dataclass
class TeacherStudentPair:
    teacher: np.ndarray
    student: np.ndarray
    frozen_encoder: np.ndarray
    alpha1: float = 0.996
    alpha2: float = 0.9
    confidence_threshold: float = 0.9

    def __post_init__(self):
        self.teacher = _flat(self.teacher, "teacher")
        self.student = _flat(self.student, "student")
        if self.teacher.shape != self.student.shape:
            raise ParameterShapeError(
                f"teacher has {self.teacher.size} parameters, student has {self.student.size}"
            )
        enc = np.array(self.frozen_encoder, dtype=np.float64)
        enc.setflags(write=False)
        self.frozen_encoder = enc
        for name in ("alpha1", "alpha2", "confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}: must lie in [0, 1], got {v}")

    @classmethod
    def from_source(cls, source_params, model: AdaptableModel, **kwargs) -> "TeacherStudentPair":
        """Both networks start from the pre-trained source parameters."""
        source = _flat(source_params, "source")
        if source.size != model.param_count:
            raise ParameterShapeError(
                f"model {model.name} expects {model.param_count} parameters, got {source.size}"
            )
        return cls(source.copy(), source.copy(), model.encoder_params().copy(), **kwargs)


def filter_pseudo_labels(predictions: Iterable[Detection], threshold: float) -> list[Detection]:
    """Keep detections whose confidence is strictly greater than ``threshold``."""
    return [d for d in predictions if d.confidence > threshold]


def _floor(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_FLOOR, 1.0)
    return p / p.sum(axis=-1, keepdims=True)


def kl_alignment_loss(student_dist, teacher_dist, direction=KLDirection.STUDENT_TEACHER) -> float:
    """KL divergence between class distributions, averaged over detection slots.

    Inputs are 1-D (one slot) or 2-D (slots x categories). Both sides are
    floored at 1e-12 and renormalised first, so the result is always finite.
    """
    s = _floor(np.atleast_2d(student_dist))
    t = _floor(np.atleast_2d(teacher_dist))
    if s.shape != t.shape:
        raise ParameterShapeError(f"distribution shapes differ: {s.shape} vs {t.shape}")
    if KLDirection(direction) is KLDirection.TEACHER_STUDENT:
        s, t = t, s
    per_slot = np.sum(s * (np.log(s) - np.log(t)), axis=-1)
    return float(max(0.0, per_slot.mean()))


def kl_logit_gradient(student_dist, teacher_dist, direction=KLDirection.STUDENT_TEACHER) -> np.ndarray:
    """Gradient of :func:`kl_alignment_loss` w.r.t. the student's logits.

    Assumes ``student_dist = softmax(logits)``; the teacher is a constant.
    """
    s = _floor(np.atleast_2d(student_dist))
    t = _floor(np.atleast_2d(teacher_dist))
    n = s.shape[0]
    if KLDirection(direction) is KLDirection.TEACHER_STUDENT:
        g = s - t
    else:
        log_ratio = np.log(s) - np.log(t)
        kl = np.sum(s * log_ratio, axis=-1, keepdims=True)
        g = s * (log_ratio - kl)
    return g / n


def _check_shapes(pair: TeacherStudentPair) -> None:
    if pair.teacher.shape != pair.student.shape:
        raise ParameterShapeError(
            f"teacher has {pair.teacher.size} parameters, student has {pair.student.size}"
        )


def ema_step(pair: TeacherStudentPair) -> None:
    _check_shapes(pair)
    # teacher + (1-a)(student - teacher) is exact when the two already agree
    pair.teacher = pair.teacher + (1.0 - pair.alpha1) * (pair.student - pair.teacher)


def finalize(pair: TeacherStudentPair) -> np.ndarray:
    """Blend teacher and student into the deployed parameters; the pair is left as is."""
    _check_shapes(pair)
    return pair.teacher + (1.0 - pair.alpha2) * (pair.student - pair.teacher)


@dataclass(frozen=True)
class AdaptReport:
    task_loss: float
    kl_loss: float
    labels_used: int

    @property
    def total_loss(self) -> float:
        return self.task_loss + self.kl_loss


def teacher_pseudo_labels(pair: TeacherStudentPair, model: AdaptableModel, features,
                          rng: np.random.Generator) -> list[Detection]:
    """Weak view through the teacher, then the confidence filter."""
    weak = model.augment(features, "weak", rng)
    return filter_pseudo_labels(model.detections(pair.teacher, weak), pair.confidence_threshold)


def adapt_on_keyframe(
    pair: TeacherStudentPair,
    model: AdaptableModel,
    frame: Frame,
    lr: float,
    rng: np.random.Generator,
    labels: Optional[Sequence[Detection]] = None,
    kl_direction=KLDirection.STUDENT_TEACHER,
) -> AdaptReport:
    """One student gradient step on a keyframe followed by the teacher EMA.

    Pass ``labels`` when the pseudo-labels were already computed (they are
    filtered again here, which is idempotent). Without confident labels
    nothing is updated.
    """
    if labels is None:
        labels = teacher_pseudo_labels(pair, model, frame.features, rng)
    else:
        labels = filter_pseudo_labels(labels, pair.confidence_threshold)
    if not labels:
        return AdaptReport(0.0, 0.0, 0)

    strong = model.augment(frame.features, "strong", rng)
    task_loss, task_grad = model.task_loss_and_gradient(pair.student, strong, labels)

    s_logits = model.classification_logits(pair.student, strong)
    t_logits = model.classification_logits(pair.teacher, strong)
    s_dist = _softmax(s_logits)
    t_dist = _softmax(t_logits)
    kl = kl_alignment_loss(s_dist, t_dist, kl_direction)
    kl_grad = model.logits_vjp(pair.student, strong, kl_logit_gradient(s_dist, t_dist, kl_direction))

    grad = task_grad + kl_grad
    if not (np.isfinite(task_loss) and np.isfinite(kl) and np.all(np.isfinite(grad))):
        raise NumericDivergenceError(
            f"frame {frame.id}: non-finite loss or gradient (task={task_loss}, kl={kl})"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        new_student = pair.student - lr * grad
    if not np.all(np.isfinite(new_student)):
        raise NumericDivergenceError(f"frame {frame.id}: student parameters diverged")
    pair.student = new_student
    ema_step(pair)
    return AdaptReport(float(task_loss), kl, len(labels))


def _softmax(z) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)
