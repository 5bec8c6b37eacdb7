"""Synthetic domain-shift streams and the acquisition ablation runner.

Streams are Gaussian class blobs whose means move between the source and
target domains. Temporal redundancy is a Markov chain: with probability
``redundancy_rho`` the next frame is a jittered copy of the current one.
Ground-truth categories are kept next to the frames, never inside them.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import EngineConfig, Mode, _build
from .engine import Engine
from .errors import ConfigError, PretrainFailure
from .stream import Detection, Frame
from .toy_detector import ToyDetector

MIN_SEEDS = 5


@dataclass(frozen=True)
class StreamSpec:
    num_categories: int
    feature_dim: int
    class_frequencies: tuple
    source_means: tuple
    target_means: tuple
    class_sigma: float = 0.3
    redundancy_rho: float = 0.9
    jitter_sigma: float = 0.02
    length: int = 5000
    rng_seed: int = 0
    # probability that a repeated frame arrives with an overconfident wrong
    # detection (category shifted by one) supplied by an external teacher
    drift_prob: float = 0.0
    drift_confidence: float = 0.97

    def __post_init__(self):
        k, d = self.num_categories, self.feature_dim
        if not isinstance(k, int) or k < 1:
            raise ConfigError(f"num_categories: must be a positive integer, got {k!r}")
        if not isinstance(d, int) or d < 1:
            raise ConfigError(f"feature_dim: must be a positive integer, got {d!r}")
        freqs = np.asarray(self.class_frequencies, dtype=np.float64)
        if freqs.shape != (k,) or np.any(freqs < 0) or abs(freqs.sum() - 1.0) > 1e-9:
            raise ConfigError(f"class_frequencies: need {k} non-negative values summing to 1")
        for name in ("source_means", "target_means"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != (k, d):
                raise ConfigError(f"{name}: expected shape ({k}, {d}), got {m.shape}")
            object.__setattr__(self, name, tuple(map(tuple, m.tolist())))
        object.__setattr__(self, "class_frequencies", tuple(freqs.tolist()))
        if self.class_sigma < 0 or self.jitter_sigma < 0:
            raise ConfigError("class_sigma and jitter_sigma must be >= 0")
        if not 0.0 <= self.redundancy_rho < 1.0:
            raise ConfigError(f"redundancy_rho: must lie in [0, 1), got {self.redundancy_rho}")
        if not isinstance(self.length, int) or self.length < 0:
            raise ConfigError(f"length: must be a non-negative integer, got {self.length!r}")
        if not 0.0 <= self.drift_prob <= 1.0:
            raise ConfigError(f"drift_prob: must lie in [0, 1], got {self.drift_prob}")
        if not 0.0 <= self.drift_confidence <= 1.0:
            raise ConfigError(f"drift_confidence: must lie in [0, 1], got {self.drift_confidence}")

    @property
    def source(self) -> np.ndarray:
        return np.asarray(self.source_means)

    @property
    def target(self) -> np.ndarray:
        return np.asarray(self.target_means)

    @property
    def rarest(self) -> int:
        return int(np.argmin(self.class_frequencies))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("class_frequencies", "source_means", "target_means"):
            d[key] = json.loads(json.dumps(d[key]))
        return d


@dataclass
class SimStream:
    frames: list
    categories: np.ndarray
    repeats: np.ndarray

    def __len__(self):
        return len(self.frames)


def generate_stream(spec: StreamSpec, seed: Optional[int] = None) -> SimStream:
    rng = np.random.default_rng(spec.rng_seed if seed is None else seed)
    k = spec.num_categories
    means = spec.target
    freqs = np.asarray(spec.class_frequencies)
    frames, cats, repeats = [], [], []
    prev_x, prev_c = None, None
    for t in range(spec.length):
        repeat = prev_x is not None and rng.random() < spec.redundancy_rho
        if repeat:
            c = prev_c
            x = prev_x + rng.normal(0.0, spec.jitter_sigma, spec.feature_dim) if spec.jitter_sigma else prev_x.copy()
        else:
            c = int(rng.choice(k, p=freqs))
            x = means[c] + rng.normal(0.0, spec.class_sigma, spec.feature_dim)
        dets = None
        if repeat and spec.drift_prob > 0 and rng.random() < spec.drift_prob:
            dets = (Detection((c + 1) % k, spec.drift_confidence),)
        frames.append(Frame(t, x, detections=dets))
        cats.append(c)
        repeats.append(repeat)
        prev_x, prev_c = x, c
    return SimStream(frames, np.asarray(cats, dtype=np.int64), np.asarray(repeats, dtype=bool))


def sample_domain(spec: StreamSpec, domain: str, per_class: int, rng: np.random.Generator):
    """Class-balanced labelled i.i.d. draws from ``"source"`` or ``"target"``."""
    means = spec.source if domain == "source" else spec.target
    y = np.repeat(np.arange(spec.num_categories), per_class)
    x = means[y] + rng.normal(0.0, spec.class_sigma, (len(y), spec.feature_dim))
    return x, y


def pretrain_source(spec: StreamSpec, steps: int, model: Optional[ToyDetector] = None,
                    seed: int = 0, per_class: int = 200, min_accuracy: float = 0.95,
                    lr: float = 0.5) -> np.ndarray:
    """Train the classifier on labelled source draws.

    Raises :class:`PretrainFailure` if held-out source accuracy stays below
    ``min_accuracy``.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    model = model or ToyDetector(spec.feature_dim, spec.num_categories)
    rng = np.random.default_rng([seed, 1])
    x, y = sample_domain(spec, "source", per_class, rng)
    params = model.fit(x, y, steps, lr=lr)
    xv, yv = sample_domain(spec, "source", per_class, rng)
    acc = model.accuracy(params, xv, yv)
    if acc < min_accuracy:
        raise PretrainFailure(f"source accuracy {acc:.3f} < {min_accuracy} after {steps} steps")
    return params


def per_category_accuracy(model, params, x, y, k) -> list:
    pred = np.argmax(model.predict_batch(params, x), axis=1)
    return [float(np.mean(pred[y == c] == c)) if np.any(y == c) else float("nan") for c in range(k)]


@dataclass
class RunReport:
    mode: str
    frames: int
    keyframes_total: int
    keyframes_per_category: list
    keyframes_arc: int
    target_accuracy_before: float
    target_accuracy_after: float
    per_category_accuracy_after: list
    per_frame_micros_mean: float
    clusters_auf: int
    clusters_arc: int
    labels_used: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_mode(mode, stream: SimStream, source_params, config: EngineConfig, eval_set,
             model: Optional[ToyDetector] = None) -> RunReport:
    """Run the full online loop over ``stream`` and evaluate before/after.

    ``eval_set`` is a labelled ``(x, y)`` target sample; the after-score uses
    the final teacher/student blend.
    """
    mode = Mode(mode)
    config = config.replace(mode=mode)
    model = model or config.build_model()
    k = model.num_categories
    x_eval, y_eval = eval_set
    acc_before = model.accuracy(source_params, x_eval, y_eval)

    engine = Engine(config, source_params, model=model)
    per_cat = np.zeros(k, dtype=np.int64)
    elapsed = 0.0
    clock = time.perf_counter
    for frame, cat in zip(stream.frames, stream.categories):
        t0 = clock()
        res = engine.step(frame)
        elapsed += clock() - t0
        if res.keyframe:
            per_cat[cat] += 1

    final = engine.finalize()
    n = len(stream)
    return RunReport(
        mode=mode.value,
        frames=n,
        keyframes_total=engine.keyframes,
        keyframes_per_category=per_cat.tolist(),
        keyframes_arc=engine.summary()["keyframes_arc"],
        target_accuracy_before=acc_before,
        target_accuracy_after=model.accuracy(final, x_eval, y_eval),
        per_category_accuracy_after=per_category_accuracy(model, final, x_eval, y_eval, k),
        per_frame_micros_mean=1e6 * elapsed / n if n else 0.0,
        clusters_auf=len(engine.state.auf_bank),
        clusters_arc=len(engine.state.arc_bank),
        labels_used=engine.labels_used,
    )


@dataclass(frozen=True)
class SimulationSpec:
    """A stream spec plus the engine settings and evaluation protocol used with it."""

    stream: StreamSpec
    engine: EngineConfig = field(default_factory=EngineConfig)
    pretrain_steps: int = 300
    pretrain_per_class: int = 200
    eval_per_class: int = 250
    description: str = ""

    def __post_init__(self):
        if isinstance(self.stream, dict):
            object.__setattr__(self, "stream", _build(StreamSpec, self.stream, "stream."))
        if isinstance(self.engine, dict):
            engine = {"feature_dim": self.stream.feature_dim, "num_categories": self.stream.num_categories}
            engine.update(self.engine)
            object.__setattr__(self, "engine", _build(EngineConfig, engine, "engine."))
        if self.engine.feature_dim != self.stream.feature_dim:
            raise ConfigError("engine.feature_dim: must equal stream.feature_dim")
        if self.engine.num_categories != self.stream.num_categories:
            raise ConfigError("engine.num_categories: must equal stream.num_categories")
        if self.pretrain_steps < 1:
            raise ConfigError(f"pretrain_steps: must be >= 1, got {self.pretrain_steps}")

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "stream": self.stream.to_dict(),
            "engine": self.engine.to_dict(),
            "pretrain_steps": self.pretrain_steps,
            "pretrain_per_class": self.pretrain_per_class,
            "eval_per_class": self.eval_per_class,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationSpec":
        return _build(cls, data)

    @classmethod
    def load(cls, path) -> "SimulationSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read spec ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass
class SeedRun:
    seed: int
    source_accuracy: float
    reports: dict


def run_seed(spec: SimulationSpec, seed: int, modes: Sequence = tuple(Mode)) -> SeedRun:
    """Pre-train, draw one stream and one eval set, then run every mode on them."""
    config = spec.engine.replace(augment=dataclasses.replace(spec.engine.augment, rng_seed=seed))
    model = config.build_model()
    source = pretrain_source(spec.stream, spec.pretrain_steps, model=model, seed=seed,
                             per_class=spec.pretrain_per_class)
    stream = generate_stream(spec.stream, seed=seed)
    eval_set = sample_domain(spec.stream, "target", spec.eval_per_class, np.random.default_rng([seed, 2]))
    reports = {Mode(m).value: run_mode(m, stream, source, config, eval_set, model=model) for m in modes}
    first = next(iter(reports.values()))
    return SeedRun(seed, first.target_accuracy_before, reports)


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


ROW_LABELS = {"no_acquire": "No acquire", "auf": "AUF", "auf_arc": "AUF+ARC"}


@dataclass
class AblationTable:
    seeds: list
    num_categories: int
    rare_category: int
    source_accuracy: tuple
    rows: dict
    runs: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "num_categories": self.num_categories,
            "rare_category": self.rare_category,
            "source_accuracy": {"mean": self.source_accuracy[0], "std": self.source_accuracy[1]},
            "rows": self.rows,
            "runs": [
                {"seed": r.seed, "source_accuracy": r.source_accuracy,
                 "reports": {m: rep.to_dict() for m, rep in r.reports.items()}}
                for r in self.runs
            ],
        }

    def render(self) -> str:
        """Aligned text table; wall-clock timings are left to the JSON form so the text is reproducible."""
        def cell(ms, scale=100.0):
            return f"{ms[0] * scale:.1f}±{ms[1] * scale:.1f}"

        cat_heads = [f"cat{c}" + ("*" if c == self.rare_category else "") for c in range(self.num_categories)]
        heads = ["Method", *cat_heads, "Acc", "Rare KF", "Keyframes"]
        lines = [["Source-Only", *[""] * self.num_categories, cell(self.source_accuracy), "", ""]]
        for mode, row in self.rows.items():
            lines.append([
                ROW_LABELS.get(mode, mode),
                *[cell(ms) for ms in row["per_category_accuracy"]],
                cell(row["accuracy"]),
                cell(row["rare_keyframes"], 1.0),
                cell(row["keyframes"], 1.0),
            ])
        widths = [max(len(str(r[i])) for r in [heads, *lines]) for i in range(len(heads))]
        fmt = lambda r: "  ".join(str(v).ljust(w) if i == 0 else str(v).rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
        rule = "-" * len(fmt(heads))
        body = [fmt(heads), rule, fmt(lines[0]), rule, *map(fmt, lines[1:])]
        footer = f"accuracy in % (mean±std over {len(self.seeds)} seeds); * marks the rarest category"
        return "\n".join([*body, rule, footer]) + "\n"


def ablation_compare(spec: SimulationSpec, seeds: Sequence[int], modes: Sequence = tuple(Mode)) -> AblationTable:
    seeds = list(seeds)
    if len(seeds) < MIN_SEEDS:
        raise ConfigError(f"seeds: minimum {MIN_SEEDS} seeds, got {len(seeds)}")
    runs = [run_seed(spec, s, modes) for s in seeds]
    rare = spec.stream.rarest
    k = spec.stream.num_categories
    rows = {}
    for m in modes:
        m = Mode(m).value
        reps = [r.reports[m] for r in runs]
        rows[m] = {
            "accuracy": _mean_std([r.target_accuracy_after for r in reps]),
            "per_category_accuracy": [_mean_std([r.per_category_accuracy_after[c] for r in reps]) for c in range(k)],
            "rare_keyframes": _mean_std([r.keyframes_per_category[rare] for r in reps]),
            "keyframes": _mean_std([r.keyframes_total for r in reps]),
            "per_frame_micros": _mean_std([r.per_frame_micros_mean for r in reps]),
        }
    return AblationTable(seeds, k, rare, _mean_std([r.source_accuracy for r in runs]), rows, runs)


def _shifted_blobs(num_categories, feature_dim, radius, common_shift, class_shift, toward_next, seed):
    """Source means on random directions; target means pulled part-way toward the next class."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(num_categories, feature_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    source = radius * dirs
    common = rng.normal(size=feature_dim)
    common *= common_shift / np.linalg.norm(common)
    jitter = rng.normal(size=(num_categories, feature_dim))
    jitter *= class_shift / np.linalg.norm(jitter, axis=1, keepdims=True)
    pull = np.asarray(toward_next, dtype=np.float64)[:, None] * (np.roll(source, -1, axis=0) - source)
    return source, source + common + jitter + pull


def reference_spec(redundancy_rho: float = 0.9, drift_prob: float = 0.0, length: int = 5000) -> SimulationSpec:
    """Imbalanced four-category stream used by the ablation and its checks.

    Desk-scale settings: warm-up ends after 200 pseudo-labels and the
    student step sizes are 0.1 / 0.01 (ratio kept from the library defaults).
    The gamma of 0.975 is unchanged; with class_sigma 1.0 at radius 5 fresh
    draws mostly open new clusters, while jittered repeats (sigma 0.02) are
    absorbed, so keyframes track the number of fresh frames.
    """
    k, d = 4, 16
    source, target = _shifted_blobs(k, d, radius=5.0, common_shift=1.0, class_shift=0.5,
                                     toward_next=(0.4, 0.4, 0.4, 0.2), seed=2024)
    stream = StreamSpec(
        num_categories=k,
        feature_dim=d,
        class_frequencies=(0.5, 0.3, 0.18, 0.02),
        source_means=source,
        target_means=target,
        class_sigma=1.0,
        redundancy_rho=redundancy_rho,
        jitter_sigma=0.02,
        length=length,
        drift_prob=drift_prob,
    )
    engine = EngineConfig(feature_dim=d, num_categories=k, warmup_min_total=200,
                          learning_rate=0.1, warmup_learning_rate=0.01)
    return SimulationSpec(stream, engine, description="reference imbalanced stream")


def adversarial_spec() -> SimulationSpec:
    """Reference geometry with heavier redundancy.

    Every repeated frame carries an overconfident wrong label from an external teacher.
    """
    spec = reference_spec(redundancy_rho=0.97, drift_prob=1.0)
    return dataclasses.replace(spec, description="adversarial redundancy with drifted labels on repeats")


BUNDLED = {"reference": reference_spec, "adversarial": adversarial_spec}


def bundled_spec_path(name: str) -> Path:
    return Path(str(resources.files("keyframe_da") / "specs" / f"{name}.json"))


def load_bundled_spec(name: str) -> SimulationSpec:
    return SimulationSpec.load(bundled_spec_path(name))
