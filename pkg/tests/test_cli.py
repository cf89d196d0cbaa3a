import csv
import json
import logging
import math

import pytest
import yaml

from ellelab import run_experiment
from ellelab.config import parse_config, to_sections
from ellelab.errors import DivergenceError
from ellelab.utils import (
    MetricsLog,
    config_hash,
    dumps_row,
    export_epoch_csv,
    read_jsonl,
    run_id,
    write_jsonl,
    write_metrics,
)

TINY = {
    "model": {"input_dim": 4, "hidden": [6], "classes": 2},
    "data": {"n_per_class": 8, "test_per_class": 4, "margin": 0.5, "spread": 0.1},
    "attack": {"kind": "fgsm", "epsilon": 0.1},
    "regularizer": {"kind": "elle", "lam": 1.0},
    "schedule": {"kind": "short", "lr_max": 0.1},
    "train": {"epochs": 2, "batch_size": 8},
    "eval": {"kind": "pgd", "steps": 2},
    "probe": {"every": 1, "n_samples": 1, "slice_size": 4},
    "run": {"name": "tiny", "checkpoint_every": 1},
}


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    saved, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in saved:
            root.removeHandler(handler)
            handler.close()
    for handler in saved:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def _write_config(tmp_path, raw, name="tiny.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return str(path)


def _run_dirs(out):
    return sorted(p for p in out.iterdir() if p.is_dir())


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "out"
    config = _write_config(tmp_path, TINY)
    assert run_experiment.main(["train", "--config", config, "--out", str(out)]) == 0
    return config, out, _run_dirs(out)[0]


class TestTrainCommand:
    def test_artifacts(self, trained):
        _, out, run_dir = trained
        assert run_dir.name.startswith("tiny-") and run_dir.name.endswith("-s0")
        assert (run_dir / "final.ckpt").exists()
        assert sorted(p.name for p in (run_dir / "checkpoints").iterdir()) == ["epoch0001.ckpt", "epoch0002.ckpt"]
        assert (out / "ellelab.log").exists()

    def test_metrics_lines_parse_independently(self, trained):
        _, _, run_dir = trained
        lines = (run_dir / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
        rows = [json.loads(line) for line in lines]
        kinds = [row["kind"] for row in rows]
        assert kinds[0] == "config"
        assert kinds.count("step") == 4
        assert kinds.count("epoch") == 2
        assert kinds[-1] == "summary"
        assert len({row["run_id"] for row in rows}) == 1
        assert rows[0]["config"]["regularizer"]["kind"] == "elle"

    def test_curves_csv(self, trained):
        _, _, run_dir = trained
        with (run_dir / "curves.csv").open(encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert rows[0][:3] == ["run_id", "epoch", "train_loss"]

    def test_seed_override_changes_the_run_id(self, trained):
        config, out, _ = trained
        assert run_experiment.main(["train", "--config", config, "--out", str(out), "--seed", "5"]) == 0
        names = [p.name for p in _run_dirs(out)]
        assert len(names) == 2
        assert any(name.endswith("-s5") for name in names)

    def test_metrics_log_is_byte_identical_across_runs(self, trained, tmp_path):
        config, _, run_dir = trained
        again = tmp_path / "again"
        assert run_experiment.main(["train", "--config", config, "--out", str(again)]) == 0
        (other,) = _run_dirs(again)
        assert other.name == run_dir.name
        assert (other / "metrics.jsonl").read_bytes() == (run_dir / "metrics.jsonl").read_bytes()


class TestOtherCommands:
    def test_eval(self, trained):
        config, out, run_dir = trained
        argv = ["eval", "--config", config, "--out", str(out), "--checkpoint", str(run_dir / "final.ckpt")]
        assert run_experiment.main(argv) == 0
        eval_dir = next(p for p in _run_dirs(out) if p.name.startswith("tiny-eval-"))
        row = list(read_jsonl(eval_dir / "metrics.jsonl"))[-1]
        assert row["kind"] == "eval"
        assert 0.0 <= row["clean_acc"] <= 1.0
        assert 0.0 <= row["robust_acc"] <= 1.0

    def test_probe(self, trained):
        config, out, run_dir = trained
        argv = ["probe", "--config", config, "--out", str(out), "--checkpoint", str(run_dir / "final.ckpt"), "--samples", "2"]
        assert run_experiment.main(argv) == 0
        probe_dir = next(p for p in _run_dirs(out) if p.name.startswith("tiny-probe-"))
        rows = [r for r in read_jsonl(probe_dir / "metrics.jsonl") if r["kind"] == "probe"]
        assert len(rows) == 4
        assert all(math.isfinite(r["value"]) and r["value"] >= 0 for r in rows)

    def test_grid(self, tmp_path):
        raw = {**TINY, "train": {"epochs": 1, "batch_size": 8}, "grid": {"lambdas": [0.0, 1.0], "seeds": [0, 1]}}
        out = tmp_path / "out"
        assert run_experiment.main(["grid", "--config", _write_config(tmp_path, raw), "--out", str(out)]) == 0
        summary = list(read_jsonl(out / "tiny-grid_summary.jsonl"))
        assert [row["lam"] for row in summary] == [0.0, 1.0]
        assert all(row["seeds"] == 2 for row in summary)
        assert all(row["robust_min"] <= row["robust_mean"] <= row["robust_max"] for row in summary)
        assert len(_run_dirs(out)) == 4
        with (out / "tiny-grid_summary.csv").open(encoding="utf-8") as fh:
            assert len(list(csv.reader(fh))) == 3

    def test_co_demo_writes_both_arms(self, tmp_path):
        raw = {**TINY, "train": {"epochs": 1, "batch_size": 8}}
        out = tmp_path / "out"
        argv = ["co-demo", "--config", _write_config(tmp_path, raw), "--out", str(out), "--lam", "10"]
        assert run_experiment.main(argv) == 0
        verdicts = {}
        for run_dir in _run_dirs(out):
            for row in read_jsonl(run_dir / "metrics.jsonl"):
                if row["kind"] == "verdict":
                    verdicts[row["arm"]] = row
        assert set(verdicts) == {"fgsm", "elle"}

    def test_timing(self, tmp_path):
        out = tmp_path / "out"
        argv = ["timing", "--config", _write_config(tmp_path, TINY), "--out", str(out), "--steps", "1"]
        assert run_experiment.main(argv) == 0
        rows = [r for r in read_jsonl(_run_dirs(out)[0] / "metrics.jsonl") if r["kind"] == "timing"]
        assert [r["method"] for r in rows] == ["fgsm", "elle", "elle_a", "gradalign", "llr_sq", "cure"]


class TestFailures:
    def test_bad_config_is_reported(self, tmp_path):
        raw = {**TINY, "attack": {"kind": "fgsm", "epsilonn": 0.1}}
        out = tmp_path / "out"
        assert run_experiment.main(["train", "--config", _write_config(tmp_path, raw), "--out", str(out)]) == 1
        (error,) = list(read_jsonl(out / "errors.jsonl"))
        assert error["error"] == "ConfigError"
        assert "attack.epsilonn" in error["message"]

    def test_missing_checkpoint(self, tmp_path):
        out = tmp_path / "out"
        argv = ["eval", "--config", _write_config(tmp_path, TINY), "--out", str(out), "--checkpoint", str(tmp_path / "none.ckpt")]
        assert run_experiment.main(argv) == 1
        (error,) = list(read_jsonl(out / "errors.jsonl"))
        assert error["error"] == "CheckpointError"
        assert error["run_id"].startswith("tiny-eval-")

    def test_divergence_is_reported_with_its_record(self, tmp_path, monkeypatch):
        def diverge(config, sink=None, checkpoint_dir=None):
            raise DivergenceError("non-finite loss", {"epoch": 3, "step": 7, "loss": float("nan"), "lam": 1.0})

        monkeypatch.setattr(run_experiment, "train", diverge)
        out = tmp_path / "out"
        assert run_experiment.main(["train", "--config", _write_config(tmp_path, TINY), "--out", str(out)]) == 1
        (run_dir,) = _run_dirs(out)
        (error,) = list(read_jsonl(out / "errors.jsonl"))
        assert error["error"] == "DivergenceError"
        assert error["run_id"] == run_dir.name
        assert error["record"] == {"epoch": 3, "step": 7, "loss": "nan", "lam": 1.0}
        rows = list(read_jsonl(run_dir / "metrics.jsonl"))
        assert [row["kind"] for row in rows] == ["config", "divergence"]
        assert rows[1]["record"]["step"] == 7

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            run_experiment.main(["fit", "--config", "x.yaml"])


class TestMetricsUtils:
    def test_hash_changes_with_any_field(self):
        base = to_sections(parse_config(TINY))
        assert config_hash(base) == config_hash(to_sections(parse_config(TINY)))
        changed = to_sections(parse_config({**TINY, "regularizer": {"kind": "elle", "lam": 2.0}}))
        assert config_hash(changed) != config_hash(base)

    def test_run_id_format(self):
        assert run_id("smoke", "ab" * 32, 3) == "smoke-abababababab-s3"

    def test_non_finite_values_survive_as_strings(self):
        row = json.loads(dumps_row({"loss": float("nan"), "acc": 0.5}))
        assert row == {"acc": 0.5, "loss": "nan"}

    def test_metrics_log_tags_rows(self, tmp_path):
        path = tmp_path / "m" / "metrics.jsonl"
        with MetricsLog(path, "r-1", "deadbeef") as log:
            log("step", {"loss": 1.0})
            write_metrics(log, [{"kind": "probe", "value": 0.1}, {"kind": "probe", "value": 0.2}])
        rows = list(read_jsonl(path))
        assert [r["kind"] for r in rows] == ["step", "probe", "probe"]
        assert all(r["run_id"] == "r-1" and r["config_hash"] == "deadbeef" for r in rows)

    def test_epoch_csv_export(self, tmp_path):
        log_path = tmp_path / "metrics.jsonl"
        write_jsonl(
            log_path,
            [{"kind": "step", "run_id": "r", "loss": 1.0}]
            + [{"kind": "epoch", "run_id": "r", "epoch": i, "train_loss": 1.0 / (i + 1)} for i in range(3)],
        )
        assert export_epoch_csv(log_path, tmp_path / "curves.csv") == 3
        with (tmp_path / "curves.csv").open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert [row["epoch"] for row in rows] == ["0", "1", "2"]
        assert rows[0]["elin_probe"] == ""
