"""Reference adaptable model: frozen linear encoder + linear-softmax head.

Each frame carries a single detection slot (the frame's dominant object),
which keeps the pseudo-label pipeline intact without any box machinery.
Trainable parameters are flattened as ``[W.ravel(), b]`` with ``W`` of shape
``(num_categories, embedding_dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NonFiniteError, NumericDivergenceError
from .stream import Detection


@dataclass(frozen=True)
class AugmentConfig:
    weak_sigma: float = 0.01
    strong_sigma: float = 0.1
    strong_mask_prob: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.weak_sigma < 0 or self.strong_sigma < 0:
            raise ConfigError("augment sigmas must be >= 0")
        if not 0.0 <= self.strong_mask_prob < 1.0:
            raise ConfigError(f"strong_mask_prob: must lie in [0, 1), got {self.strong_mask_prob}")


def augment(features, config: AugmentConfig, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Weak view: small Gaussian jitter. Strong view: larger jitter plus random coordinate masking."""
    x = np.asarray(features, dtype=np.float64)
    if mode == "weak":
        if config.weak_sigma == 0.0:
            return x.copy()
        return x + rng.normal(0.0, config.weak_sigma, size=x.shape)
    if mode == "strong":
        out = x + rng.normal(0.0, config.strong_sigma, size=x.shape) if config.strong_sigma > 0 else x.copy()
        if config.strong_mask_prob > 0:
            out[rng.random(x.shape) < config.strong_mask_prob] = 0.0
        return out
    raise ValueError(f"augmentation mode must be 'weak' or 'strong', got {mode!r}")


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


class ToyDetector:
    name = "toy_linear_softmax"

    def __init__(
        self,
        feature_dim: int,
        num_categories: int,
        embedding_dim: Optional[int] = None,
        encoder_seed: int = 7,
        augment_config: Optional[AugmentConfig] = None,
    ):
        if feature_dim < 1 or num_categories < 1:
            raise ConfigError("feature_dim and num_categories must be >= 1")
        self.feature_dim = int(feature_dim)
        self.num_categories = int(num_categories)
        self.embedding_dim = int(embedding_dim or feature_dim)
        self.encoder_seed = encoder_seed
        self.augment_config = augment_config or AugmentConfig()
        if self.embedding_dim == self.feature_dim:
            proj = np.eye(self.feature_dim)
            self._identity = True
        else:
            rng = np.random.default_rng(encoder_seed)
            proj = rng.normal(0.0, 1.0 / np.sqrt(self.embedding_dim), size=(self.embedding_dim, self.feature_dim))
            self._identity = False
        proj.setflags(write=False)
        self._proj = proj

    @property
    def param_count(self) -> int:
        return self.num_categories * (self.embedding_dim + 1)

    def encoder_params(self) -> np.ndarray:
        return self._proj

    def init_params(self) -> np.ndarray:
        return np.zeros(self.param_count)

    def unpack(self, params) -> tuple[np.ndarray, np.ndarray]:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.param_count,):
            raise DimensionError(f"{self.name} expects {self.param_count} parameters, got shape {params.shape}")
        k, d = self.num_categories, self.embedding_dim
        return params[: k * d].reshape(k, d), params[k * d:]

    def pack(self, weights, bias) -> np.ndarray:
        return np.concatenate([np.asarray(weights, dtype=np.float64).ravel(), np.asarray(bias, dtype=np.float64)])

    def encode(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.feature_dim:
            raise DimensionError(f"expected {self.feature_dim} features, got {x.shape[-1]}")
        if self._identity:
            return x.copy()
        return x @ self._proj.T

    def classification_logits(self, params, features) -> np.ndarray:
        w, b = self.unpack(params)
        h = self.encode(features)
        if not np.all(np.isfinite(h)):
            raise NonFiniteError("model input contains NaN or Inf")
        return h @ w.T + b

    def predict(self, params, features) -> tuple[np.ndarray, float]:
        """Class distribution for one frame and its top confidence."""
        p = softmax(self.classification_logits(params, features))
        if not np.all(np.isfinite(p)):
            raise NumericDivergenceError("class distribution is not finite (logits overflowed)")
        return p, float(p.max())

    def predict_batch(self, params, features) -> np.ndarray:
        return softmax(self.classification_logits(params, np.atleast_2d(features)))

    def detections(self, params, features) -> list[Detection]:
        p, conf = self.predict(params, features)
        return [Detection(int(np.argmax(p)), min(1.0, conf))]

    def logits_vjp(self, params, features, dlogits) -> np.ndarray:
        """Pull a gradient w.r.t. the logits back onto the flat parameters."""
        h = self.encode(features)
        g = np.asarray(dlogits, dtype=np.float64).reshape(-1, self.num_categories).sum(axis=0)
        return self.pack(np.outer(g, h), g)

    def task_loss_and_gradient(self, params, features, labels: Sequence[Detection]) -> tuple[float, np.ndarray]:
        """Mean cross-entropy of the prediction against each label."""
        if not labels:
            raise ValueError("task loss needs at least one label")
        cats = np.array([d.category for d in labels])
        if np.any(cats < 0) or np.any(cats >= self.num_categories):
            raise ValueError(f"label category outside [0, {self.num_categories})")
        z = self.classification_logits(params, features)
        z = z - z.max()
        log_p = z - np.log(np.exp(z).sum())
        loss = float(-log_p[cats].mean())
        target = np.bincount(cats, minlength=self.num_categories) / len(cats)
        dz = np.exp(log_p) - target
        return loss, self.logits_vjp(params, features, dz)

    def augment(self, features, mode: str, rng: np.random.Generator) -> np.ndarray:
        return augment(features, self.augment_config, mode, rng)

    def accuracy(self, params, features, labels) -> float:
        labels = np.asarray(labels)
        if labels.size == 0:
            return float("nan")
        pred = np.argmax(self.predict_batch(params, features), axis=1)
        return float(np.mean(pred == labels))

    def fit(self, features, labels, steps: int, lr: float = 0.5, l2: float = 1e-4) -> np.ndarray:
        """Full-batch gradient descent on labelled data, starting from zero."""
        h = self.encode(np.atleast_2d(features))
        y = np.asarray(labels)
        onehot = np.eye(self.num_categories)[y]
        w = np.zeros((self.num_categories, self.embedding_dim))
        b = np.zeros(self.num_categories)
        n = len(y)
        for _ in range(steps):
            p = softmax(h @ w.T + b)
            dz = (p - onehot) / n
            w -= lr * (dz.T @ h + l2 * w)
            b -= lr * dz.sum(axis=0)
        return self.pack(w, b)
