import dataclasses
import json

import numpy as np
import pytest

from keyframe_da.checkpoint import load_checkpoint, save_checkpoint
from keyframe_da.cli import main
from keyframe_da.config import EngineConfig
from keyframe_da.sim import reference_spec
from keyframe_da.stream import Detection, Frame, write_stream
from keyframe_da.toy_detector import ToyDetector

D, K = 6, 3


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _config(path, **kw):
    data = {"feature_dim": D, "num_categories": K, "warmup_min_total": 20, "learning_rate": 0.05,
            "warmup_learning_rate": 0.005}
    data.update(kw)
    path.write_text(json.dumps(data))
    return str(path)


def _checkpoint(path, params, model=None):
    model = model or ToyDetector(D, K)
    save_checkpoint(path, {"final": params}, model.name, 0.996, 0.9)
    return str(path)


def _random_stream(path, n, seed=0, labelled=True):
    rng = np.random.default_rng(seed)
    frames = []
    x = rng.normal(size=D)
    for i in range(n):
        if rng.random() > 0.7:
            x = rng.normal(size=D)
        dets = (Detection(int(rng.integers(K)), 0.95),) if labelled else None
        frames.append(Frame(i, x + rng.normal(0, 0.01, D), detections=dets))
    write_stream(path, frames)
    return str(path)


def test_select_writes_one_record_per_frame(workdir, capsys):
    stream = _random_stream(workdir / "s.jsonl", 100)
    rc = main(["select", "--config", _config(workdir / "c.json"), "--stream", stream, "--log", "d.jsonl"])
    assert rc == 0
    lines = (workdir / "d.jsonl").read_text().splitlines()
    assert len(lines) == 100
    recs = [json.loads(l) for l in lines]
    assert [r["frame_id"] for r in recs] == list(range(100))
    assert set(recs[0]) == {"frame_id", "verdict", "source", "auf_score", "arc_score", "rare_category"}
    n_key = sum(r["verdict"] == "keyframe" for r in recs)
    out = capsys.readouterr().out
    assert f"keyframes: {n_key}" in out and "AUF" in out and "ARC" in out


def test_select_missing_stream_names_path(workdir, capsys):
    rc = main(["select", "--stream", "does_not_exist.jsonl"])
    assert rc == 2
    assert "does_not_exist.jsonl" in capsys.readouterr().err


def test_select_bad_line_reports_line(workdir, capsys):
    stream = _random_stream(workdir / "s.jsonl", 5)
    with open(stream, "a") as fh:
        fh.write("{not json\n")
    rc = main(["select", "--config", _config(workdir / "c.json"), "--stream", stream])
    assert rc == 2
    assert "s.jsonl:6:" in capsys.readouterr().err


def test_select_logs_are_byte_identical(workdir):
    cfg = _config(workdir / "c.json")
    stream = _random_stream(workdir / "s.jsonl", 200, labelled=False)
    params = np.random.default_rng(1).normal(0, 3, ToyDetector(D, K).param_count)
    ckpt = _checkpoint(workdir / "in.ckpt", params)
    for name in ("a.jsonl", "b.jsonl"):
        assert main(["select", "--config", cfg, "--stream", stream, "--checkpoint-in", ckpt, "--log", name]) == 0
    assert (workdir / "a.jsonl").read_bytes() == (workdir / "b.jsonl").read_bytes()


def test_usage_errors_exit_one(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["select", "--no-such-flag"])
    assert exc.value.code == 1
    stream = _random_stream(workdir / "s.jsonl", 3)
    assert main(["adapt", "--stream", stream]) == 1
    assert main(["simulate", "--seeds", "0"]) == 1
    assert main(["select"]) == 1


def test_print_config_reflects_overrides(workdir, capsys):
    cfg = _config(workdir / "c.json", gamma=0.5)
    assert main(["adapt", "--config", cfg, "--mode", "auf", "--print-config"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["gamma"] == 0.5 and data["mode"] == "auf"
    assert data["alpha1"] == 0.996 and data["learning_rate"] == 0.05
    assert EngineConfig.from_dict(data).mode.value == "auf"


def test_bad_config_names_field(workdir, capsys):
    cfg = _config(workdir / "c.json", alpha2=3)
    assert main(["select", "--config", cfg, "--print-config"]) == 2
    assert "alpha2" in capsys.readouterr().err


def test_adapt_empty_stream_returns_input(workdir):
    (workdir / "empty.jsonl").write_text("")
    params = np.random.default_rng(2).normal(size=ToyDetector(D, K).param_count)
    ckpt = _checkpoint(workdir / "in.ckpt", params)
    rc = main(["adapt", "--config", _config(workdir / "c.json"), "--stream", "empty.jsonl",
               "--checkpoint-in", ckpt, "--checkpoint-out", "out.ckpt", "--report", "r.json"])
    assert rc == 0
    _, vecs = load_checkpoint(workdir / "out.ckpt")
    np.testing.assert_array_equal(vecs["final"], params)
    assert json.loads((workdir / "r.json").read_text())["keyframes_total"] == 0


def test_adapt_duplicate_stream_matches_two_step_oracle(workdir):
    """Frame 0 is the only keyframe; replay its single update by hand."""
    model = ToyDetector(D, K)
    rng = np.random.default_rng(3)
    params = rng.normal(size=model.param_count)
    x = rng.normal(size=D)
    label = Detection(1, 0.99)
    write_stream(workdir / "dup.jsonl", [Frame(i, x, detections=(label,)) for i in range(25)])
    lr, a1, a2, seed = 0.05, 0.996, 0.9, 11
    cfg = _config(workdir / "c.json", mode="auf", augment={"rng_seed": seed})
    rc = main(["adapt", "--config", cfg, "--stream", "dup.jsonl", "--checkpoint-in",
               _checkpoint(workdir / "in.ckpt", params, model), "--checkpoint-out", "out.ckpt"])
    assert rc == 0

    # oracle: strong view from the engine's seed, cross-entropy step (the
    # alignment term has zero gradient while teacher == student), EMA, blend
    strong = x + np.random.default_rng(seed).normal(0.0, 0.1, D)
    mask_rng = np.random.default_rng(seed)
    mask_rng.normal(0.0, 0.1, D)
    strong[mask_rng.random(D) < 0.2] = 0.0
    w, b = params[: K * D].reshape(K, D), params[K * D:]
    z = w @ strong + b
    p = np.exp(z - z.max())
    p /= p.sum()
    dz = p - np.eye(K)[1]
    student = params - lr * np.concatenate([np.outer(dz, strong).ravel(), dz])
    teacher = a1 * params + (1 - a1) * student
    expected = a2 * teacher + (1 - a2) * student

    _, vecs = load_checkpoint(workdir / "out.ckpt")
    np.testing.assert_allclose(vecs["student"], student, rtol=0, atol=1e-12)
    np.testing.assert_allclose(vecs["teacher"], teacher, rtol=0, atol=1e-12)
    np.testing.assert_allclose(vecs["final"], expected, rtol=0, atol=1e-12)
    assert not np.allclose(expected, params)


def test_adapt_keyframes_match_select(workdir):
    cfg = _config(workdir / "c.json")
    stream = _random_stream(workdir / "s.jsonl", 300, seed=4)
    ckpt = _checkpoint(workdir / "in.ckpt", np.zeros(ToyDetector(D, K).param_count))
    assert main(["select", "--config", cfg, "--stream", stream, "--log", "d.jsonl", "--checkpoint-in", ckpt]) == 0
    assert main(["adapt", "--config", cfg, "--stream", stream, "--checkpoint-in", ckpt,
                 "--checkpoint-out", "o.ckpt", "--report", "r.json"]) == 0
    log = [json.loads(l) for l in (workdir / "d.jsonl").read_text().splitlines()]
    report = json.loads((workdir / "r.json").read_text())
    assert report["keyframes_total"] == sum(r["verdict"] == "keyframe" for r in log)
    assert report["keyframes_arc"] == sum(r["source"] == "ARC" for r in log)
    assert report["keyframes_arc"] > 0


def test_adapt_shape_mismatch_fails_before_processing(workdir, capsys):
    wrong = ToyDetector(D, K + 1)
    ckpt = _checkpoint(workdir / "in.ckpt", np.zeros(wrong.param_count), wrong)
    stream = _random_stream(workdir / "s.jsonl", 10)
    rc = main(["adapt", "--config", _config(workdir / "c.json", decision_log="d.jsonl"), "--stream", stream,
               "--checkpoint-in", ckpt, "--checkpoint-out", "o.ckpt"])
    assert rc == 2
    assert "parameters" in capsys.readouterr().err
    assert not (workdir / "o.ckpt").exists() and not (workdir / "d.jsonl").exists()


def test_adapt_divergence_exit_three(workdir, capsys):
    model = ToyDetector(D, K)
    params = np.zeros(model.param_count)
    params[K * D + 0] = 30.0  # confident in category 0
    x = np.full(D, 1e6)
    write_stream(workdir / "s.jsonl", [Frame(0, x, detections=(Detection(2, 0.99),))])
    cfg = _config(workdir / "c.json", mode="auf", learning_rate=1e308)
    rc = main(["adapt", "--config", cfg, "--stream", "s.jsonl", "--checkpoint-in",
               _checkpoint(workdir / "in.ckpt", params, model), "--checkpoint-out", "o.ckpt"])
    assert rc == 3
    assert "divergence" in capsys.readouterr().err
    assert not (workdir / "o.ckpt").exists()


def test_report_describes_each_artifact(workdir, capsys):
    cfg = _config(workdir / "c.json")
    stream = _random_stream(workdir / "s.jsonl", 50)
    ckpt = _checkpoint(workdir / "in.ckpt", np.zeros(ToyDetector(D, K).param_count))
    main(["select", "--config", cfg, "--stream", stream, "--banks-out", "banks.json"])
    main(["adapt", "--config", cfg, "--stream", stream, "--checkpoint-in", ckpt,
          "--checkpoint-out", "o.ckpt", "--report", "r.json"])
    capsys.readouterr()
    assert main(["report", "o.ckpt"]) == 0
    out = capsys.readouterr().out
    assert "toy_linear_softmax" in out and "teacher" in out and "student" in out
    assert main(["report", "banks.json"]) == 0
    assert "auf_bank" in capsys.readouterr().out
    assert main(["report", "r.json"]) == 0
    assert "keyframes_total" in capsys.readouterr().out
    assert main(["report", "missing.bin"]) == 2


def test_simulate_small_spec_deterministic(workdir, capsys):
    spec = reference_spec()
    spec = dataclasses.replace(spec, stream=dataclasses.replace(spec.stream, length=150))
    spec.dump(workdir / "spec.json")
    assert main(["simulate", "--spec", "spec.json", "--seeds", "0-4", "--json", "a.json", "--table", "a.txt"]) == 0
    assert main(["simulate", "--spec", "spec.json", "--seeds", "0,1,2,3,4", "--table", "b.txt"]) == 0
    assert (workdir / "a.txt").read_bytes() == (workdir / "b.txt").read_bytes()
    data = json.loads((workdir / "a.json").read_text())
    assert list(data["rows"]) == ["no_acquire", "auf", "auf_arc"]
    assert data["seeds"] == [0, 1, 2, 3, 4]


def test_simulate_bundled_reference_five_seeds(workdir, capsys):
    assert main(["simulate", "--spec", "reference", "--seeds", "0-4", "--json", "t.json"]) == 0
    rows = json.loads((workdir / "t.json").read_text())["rows"]
    assert len(rows) == 3
    text = capsys.readouterr().out
    assert all(label in text for label in ("No acquire", "AUF ", "AUF+ARC"))


def test_simulate_spec_error_names_field(workdir, capsys):
    data = reference_spec().to_dict()
    data["stream"]["class_sigma"] = -1
    (workdir / "bad.json").write_text(json.dumps(data))
    assert main(["simulate", "--spec", "bad.json"]) == 2
    assert "class_sigma" in capsys.readouterr().err


def test_module_entry_point_runs():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "keyframe_da", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "select" in proc.stdout and "simulate" in proc.stdout
