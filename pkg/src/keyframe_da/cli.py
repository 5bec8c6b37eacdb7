"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, source_vector
from .config import EngineConfig, Mode
from .engine import Engine
from .errors import CheckpointError, ConfigError, DataError, NumericDivergenceError, PretrainFailure
from .sim import BUNDLED, MIN_SEEDS, SimulationSpec, ablation_compare, load_bundled_spec
from .stream import read_stream

log = logging.getLogger("keyframe_da")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_source_params(config: EngineConfig, model, path: Optional[str]) -> np.ndarray:
    """Parameters from a checkpoint, checked against the configured model before any frame is read."""
    if path is None:
        return model.init_params()
    header, vectors = load_checkpoint(path)
    if header["model_name"] != model.name:
        raise CheckpointError(f"{path}: checkpoint is for model {header['model_name']!r}, config builds {model.name!r}")
    if int(header["param_count"]) != model.param_count:
        raise CheckpointError(
            f"{path}: checkpoint has {header['param_count']} parameters, configured model needs "
            f"{model.param_count} (num_categories={config.num_categories}, "
            f"embedding_dim={model.embedding_dim})"
        )
    return source_vector(header, vectors)


def _require_stream(config: EngineConfig) -> Path:
    if config.stream is None:
        raise UsageError("no stream given (use --stream or set 'stream' in the config)")
    path = Path(config.stream)
    if not path.is_file():
        raise DataError(f"{path}: stream file not found")
    return path


def cmd_select(config: EngineConfig, log_path=None, banks_out=None, out=None) -> dict:
    """Acquisition only: one decision record per frame, no model updates."""
    out = out or sys.stdout
    if config.mode is Mode.NO_ACQUIRE:
        raise UsageError("select needs an acquisition mode (auf or auf_arc)")
    stream_path = _require_stream(config)
    model = config.build_model()
    params = load_source_params(config, model, config.checkpoint_in)
    engine = Engine(config, params, model=model, adapt=False)
    log_path = log_path or config.decision_log
    warned = False
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for frame in read_stream(stream_path):
            if frame.detections is None and config.checkpoint_in is None and not warned:
                log.warning("frames without detections and no --checkpoint-in: the teacher is "
                            "untrained, so those frames get no pseudo-labels")
                warned = True
            res = engine.step(frame)
            if sink:
                sink.write(json.dumps(res.decision.to_record(res.frame_id)) + "\n")
    finally:
        if sink:
            sink.close()
    summary = engine.summary()
    if banks_out:
        Path(banks_out).write_text(json.dumps(engine.state.snapshot(), indent=2) + "\n", encoding="utf-8")
    print(f"frames: {summary['frames']}  keyframes: {summary['keyframes_total']} "
          f"(AUF {summary['keyframes_auf']}, ARC {summary['keyframes_arc']})", file=out)
    return summary


def cmd_adapt(config: EngineConfig, report_path=None, out=None) -> dict:
    """Full online loop; writes the finalized checkpoint and a run report."""
    out = out or sys.stdout
    stream_path = _require_stream(config)
    if config.checkpoint_in is None:
        raise UsageError("adapt needs --checkpoint-in (the pre-trained source model)")
    model = config.build_model()
    params = load_source_params(config, model, config.checkpoint_in)
    engine = Engine(config, params, model=model)
    log_path = config.decision_log
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    elapsed = 0.0
    try:
        for frame in read_stream(stream_path):
            t0 = time.perf_counter()
            res = engine.step(frame)
            elapsed += time.perf_counter() - t0
            if sink and res.decision is not None:
                sink.write(json.dumps(res.decision.to_record(res.frame_id)) + "\n")
    finally:
        if sink:
            sink.close()
    final = engine.finalize()
    report = engine.summary()
    report["labels_used"] = engine.labels_used
    report["per_frame_micros_mean"] = 1e6 * elapsed / report["frames"] if report["frames"] else 0.0
    if config.checkpoint_out:
        save_checkpoint(
            config.checkpoint_out,
            {"final": final, "teacher": engine.pair.teacher, "student": engine.pair.student},
            model.name, config.alpha1, config.alpha2,
        )
    report_path = report_path or config.report
    if report_path:
        Path(report_path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"frames: {report['frames']}  keyframes: {report['keyframes_total']} "
          f"(AUF {report['keyframes_auf']}, ARC {report['keyframes_arc']})  "
          f"labels used: {report['labels_used']}", file=out)
    return report


def parse_seeds(text: str) -> list:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad --seeds value {part!r}; use e.g. 0,1,2 or 0-4") from None
    if len(seeds) < MIN_SEEDS:
        raise UsageError(f"--seeds: minimum {MIN_SEEDS} seeds, got {len(seeds)}")
    return seeds


def resolve_spec(name_or_path: str) -> SimulationSpec:
    if name_or_path in BUNDLED:
        return load_bundled_spec(name_or_path)
    path = Path(name_or_path)
    if not path.is_file():
        raise DataError(f"{path}: spec file not found (bundled specs: {', '.join(BUNDLED)})")
    return SimulationSpec.load(path)


def cmd_simulate(spec: SimulationSpec, seeds, json_out=None, table_out=None, out=None):
    out = out or sys.stdout
    table = ablation_compare(spec, seeds)
    text = table.render()
    if json_out:
        Path(json_out).write_text(json.dumps(table.to_dict(), indent=2) + "\n", encoding="utf-8")
    if table_out:
        Path(table_out).write_text(text, encoding="utf-8")
    out.write(text)
    return table


def describe(path) -> str:
    """Human-readable summary of any artifact the other commands write."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    raw = path.read_bytes()
    first = raw.split(b"\n", 1)[0]
    try:
        header = json.loads(first)
    except (json.JSONDecodeError, UnicodeDecodeError):
        header = None
    if isinstance(header, dict) and "param_count" in header and "vectors" in header:
        header, vectors = load_checkpoint(path)
        lines = [f"checkpoint {path}", f"  model: {header['model_name']}  params: {header['param_count']}",
                 f"  alpha1: {header.get('alpha1')}  alpha2: {header.get('alpha2')}"]
        for name, v in vectors.items():
            lines.append(f"  {name}: norm {np.linalg.norm(v):.6g}  min {v.min():.6g}  max {v.max():.6g}")
        return "\n".join(lines) + "\n"
    try:
        data = json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise DataError(f"{path}: not a checkpoint or JSON report") from None
    if isinstance(data, dict) and "auf_bank" in data:
        from .cluster import ClusterBank

        lines = [f"acquisition snapshot {path}"]
        for key in ("auf_bank", "arc_bank"):
            bank = ClusterBank.from_dict(data[key])
            sizes = bank.counts
            lines.append(f"  {key}: {len(bank)} clusters, dimension {bank.dimension}, "
                         f"members {sum(sizes)}, largest {max(sizes) if sizes else 0}")
        lines.append(f"  histogram: {data['histogram']}  warm-up done: {data['warmup_done']}  "
                     f"rare category: {data['rare_category']}")
        return "\n".join(lines) + "\n"
    if isinstance(data, dict) and "rows" in data:
        lines = [f"ablation over seeds {data['seeds']}"]
        for mode, row in data["rows"].items():
            acc, rare = row["accuracy"], row["rare_keyframes"]
            lines.append(f"  {mode:<11} acc {acc[0]:.4f}±{acc[1]:.4f}  rare keyframes {rare[0]:.1f}±{rare[1]:.1f}  "
                         f"us/frame {row['per_frame_micros'][0]:.1f}")
        return "\n".join(lines) + "\n"
    if isinstance(data, dict):
        return "".join(f"{k}: {v}\n" for k, v in data.items())
    raise DataError(f"{path}: unrecognised report contents")


def build_config(args) -> EngineConfig:
    config = EngineConfig.load(args.config) if args.config else EngineConfig()
    overrides = {}
    for key in ("stream", "checkpoint_in", "checkpoint_out", "mode", "gamma"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "log", None):
        overrides["decision_log"] = args.log
    if overrides:
        config = EngineConfig.from_dict({**config.to_dict(), **overrides})
    return config


def _add_engine_flags(p, checkpoint_out=False):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--stream", help="JSON Lines stream file")
    p.add_argument("--checkpoint-in", dest="checkpoint_in", help="source model checkpoint")
    if checkpoint_out:
        p.add_argument("--checkpoint-out", dest="checkpoint_out", help="where to write the finalized model")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--gamma", type=float, help="similarity threshold for both cluster banks")
    p.add_argument("--log", help="decision log path (JSON Lines)")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="keyframe-da", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("select", help="run keyframe acquisition only and log every decision")
    _add_engine_flags(p)
    p.add_argument("--banks-out", help="write the final cluster banks and histogram as JSON")

    p = sub.add_parser("adapt", help="run acquisition plus online adaptation and write the final model")
    _add_engine_flags(p, checkpoint_out=True)
    p.add_argument("--report", help="write the run report as JSON")

    p = sub.add_parser("simulate", help="ablation over acquisition modes on a synthetic stream")
    p.add_argument("--spec", default="reference",
                   help=f"simulation spec file or bundled name ({', '.join(BUNDLED)})")
    p.add_argument("--seeds", default="0-4", help="e.g. 0,1,2,3,4 or 0-19 (at least 5)")
    p.add_argument("--json", dest="json_out", help="write the full result as JSON")
    p.add_argument("--table", dest="table_out", help="write the text table")
    p.add_argument("--print-config", action="store_true", help="print the spec and exit")

    p = sub.add_parser("report", help="summarise an artifact written by another command")
    p.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "simulate":
            spec = resolve_spec(args.spec)
            if args.print_config:
                print(json.dumps(spec.to_dict(), indent=2))
                return EXIT_OK
            cmd_simulate(spec, parse_seeds(args.seeds), args.json_out, args.table_out)
        elif args.command == "report":
            sys.stdout.write(describe(args.path))
        else:
            config = build_config(args)
            if args.print_config:
                print(json.dumps(config.to_dict(), indent=2))
                return EXIT_OK
            if args.command == "select":
                cmd_select(config, banks_out=args.banks_out)
            else:
                cmd_adapt(config, report_path=args.report)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericDivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, PretrainFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
