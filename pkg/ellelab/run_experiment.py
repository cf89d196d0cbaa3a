"""Command-line entry point: train / eval / probe / grid / co-demo / timing.

    python -m ellelab.run_experiment train --config configs/smoke.yaml --out runs/
"""

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tabulate import tabulate

if __package__ is None or __package__ == "":
    ROOT = Path(__file__).resolve().parents[1]
    if str(ROOT) not in sys.path:
        sys.path.append(str(ROOT))

import ellelab.utils as utils
from ellelab.config import parse_config, parse_grid, to_sections
from ellelab.data import build_datasets
from ellelab.errors import DivergenceError, EllelabError
from ellelab.models import load_checkpoint, save_checkpoint
from ellelab.probes import estimate_elin, fd_gradalign_estimate, grad_misalignment
from ellelab.regularizers import RegularizerSpec
from ellelab.training import RunConfig, TrainResult, benchmark_methods, evaluate, train

logger = logging.getLogger("ellelab.run")

PROBE_SEED_STREAM = 31_337


def configure_logging(config: Dict[str, Any], log_path: Optional[Path] = None) -> None:
    log_path = Path(log_path or config["logging"]["log_file"])
    utils.ensure_dir(log_path)
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    root.setLevel(logging.DEBUG)
    formatter = logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s")

    file_handler = logging.FileHandler(log_path, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)
    root.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, config["logging"]["level"].upper(), logging.INFO))
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)


def log_stage(stage: str, **details) -> None:
    if details:
        detail_str = " ".join(f"{key}={value}" for key, value in details.items())
        logger.info("Experiment stage=%s %s", stage, detail_str)
    else:
        logger.info("Experiment stage=%s", stage)


class Run:
    """Resolved config plus the identity (hash, run id) and output paths of one run."""

    def __init__(self, config: RunConfig, out_root: Path, label: Optional[str] = None):
        self.config = config
        self.sections = to_sections(config)
        self.digest = utils.config_hash(self.sections)
        self.run_id = utils.run_id(label or config.run.name, self.digest, config.seed)
        self.dir = out_root / self.run_id
        self.metrics_path = self.dir / "metrics.jsonl"

    def open_log(self) -> utils.MetricsLog:
        log = utils.MetricsLog(self.metrics_path, self.run_id, self.digest)
        log.write("config", {"config": self.sections, "dataset": self.config.data.dataset_id})
        return log


def load_run_checkpoint(run: Run, path: str):
    try:
        return load_checkpoint(path)
    except EllelabError as exc:
        exc.run_id = run.run_id
        raise


def load_run_config(args: argparse.Namespace) -> RunConfig:
    config = parse_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def output_root(args: argparse.Namespace, repo_config: Dict[str, Any]) -> Path:
    return Path(args.out or repo_config.get("output", {}).get("directory", "runs"))


def train_run(run: Run, log: utils.MetricsLog) -> TrainResult:
    log_stage("train", run_id=run.run_id, epochs=run.config.epochs)
    try:
        result = train(run.config, sink=log, checkpoint_dir=run.dir / "checkpoints")
    except DivergenceError as exc:
        log.write("divergence", {"message": str(exc), "record": exc.record})
        exc.run_id = run.run_id
        raise
    save_checkpoint(result.params, run.dir / "final.ckpt")
    log.write(
        "summary",
        {
            "co_flag": result.detection.flagged,
            "co_epoch": result.detection.epoch,
            "final_clean_acc": result.epochs[-1].clean_acc,
            "final_robust_acc": result.epochs[-1].robust_acc,
            "max_elin_probe": max((e.elin_probe for e in result.epochs if e.elin_probe is not None), default=None),
        },
    )
    utils.export_epoch_csv(run.metrics_path, run.dir / "curves.csv")
    return result


def cmd_train(args: argparse.Namespace, repo_config: Dict[str, Any]) -> int:
    run = Run(load_run_config(args), output_root(args, repo_config))
    with run.open_log() as log:
        result = train_run(run, log)
    rows = [[e.epoch, e.train_loss, e.clean_acc, e.robust_acc, e.elin_probe, e.co_flag] for e in result.epochs]
    print(tabulate(rows, headers=["epoch", "loss", "clean", "robust", "elin", "co"], tablefmt="orgtbl"))
    return 0


def cmd_eval(args: argparse.Namespace, repo_config: Dict[str, Any]) -> int:
    config = load_run_config(args)
    run = Run(config, output_root(args, repo_config), label=f"{config.run.name}-eval")
    params = load_run_checkpoint(run, args.checkpoint)
    _, test = build_datasets(config.data)
    if config.eval.max_examples is not None:
        test = test.take(config.eval.max_examples)
    log_stage("eval", checkpoint=args.checkpoint, examples=len(test))
    clean = evaluate(params, test, None, config.seed, config.eval.batch_size)
    robust = evaluate(params, test, config.eval.attack, config.seed, config.eval.batch_size)
    with run.open_log() as log:
        log.write("eval", {"checkpoint": str(args.checkpoint), "clean_acc": clean, "robust_acc": robust})
    attack = config.eval.attack
    print(tabulate([[clean, robust]], headers=["clean", f"{attack.kind}-{attack.steps} eps={attack.epsilon}"], tablefmt="orgtbl"))
    return 0


def cmd_probe(args: argparse.Namespace, repo_config: Dict[str, Any]) -> int:
    config = load_run_config(args)
    run = Run(config, output_root(args, repo_config), label=f"{config.run.name}-probe")
    params = load_run_checkpoint(run, args.checkpoint)
    _, test = build_datasets(config.data)
    probe = test.take(config.probe.slice_size)
    eps = config.attack.epsilon
    rng = np.random.default_rng([config.seed, PROBE_SEED_STREAM])
    log_stage("probe", checkpoint=args.checkpoint, examples=len(probe))
    reports = [
        estimate_elin(params, probe.inputs, probe.labels, eps, args.samples, rng, seed=config.seed, on="loss"),
        estimate_elin(params, probe.inputs, probe.labels, eps, args.samples, rng, seed=config.seed, on="logits"),
        grad_misalignment(params, probe.inputs, probe.labels, eps, rng, seed=config.seed),
        fd_gradalign_estimate(params, probe.inputs, probe.labels, eps, args.sigma_fd, rng, seed=config.seed),
    ]
    with run.open_log() as log:
        utils.write_metrics(log, [report.as_row() for report in reports], kind="probe")
    rows = [[r.metric, r.value, r.std_error, r.samples] for r in reports]
    print(tabulate(rows, headers=["metric", "value", "std_error", "samples"], tablefmt="orgtbl"))
    return 0


def summarize_grid(results: Dict[float, List[TrainResult]]) -> List[Dict[str, Any]]:
    summary = []
    for lam, runs in results.items():
        clean = [r.epochs[-1].clean_acc for r in runs]
        robust = [r.epochs[-1].robust_acc for r in runs]
        summary.append(
            {
                "lam": lam,
                "seeds": len(runs),
                "clean_mean": float(np.mean(clean)),
                "clean_min": float(np.min(clean)),
                "clean_max": float(np.max(clean)),
                "robust_mean": float(np.mean(robust)),
                "robust_min": float(np.min(robust)),
                "robust_max": float(np.max(robust)),
                "co_runs": sum(1 for r in runs if r.detection.flagged),
            }
        )
    return summary


def cmd_grid(args: argparse.Namespace, repo_config: Dict[str, Any]) -> int:
    grid = parse_grid(args.config)
    root = output_root(args, repo_config)
    seeds = (args.seed,) if args.seed is not None else grid.seeds
    results: Dict[float, List[TrainResult]] = {}
    for lam in grid.lambdas:
        for seed in seeds:
            reg = dataclasses.replace(grid.base.regularizer, lam=lam)
            config = dataclasses.replace(grid.base, regularizer=reg, seed=seed)
            run = Run(config, root, label=f"{config.run.name}-lam{lam:g}")
            with run.open_log() as log:
                results.setdefault(lam, []).append(train_run(run, log))
    summary = summarize_grid(results)
    csv_path = root / f"{grid.base.run.name}-grid_summary.csv"
    utils.write_jsonl(root / f"{grid.base.run.name}-grid_summary.jsonl", summary)
    _write_csv(csv_path, summary)
    print(tabulate([list(r.values()) for r in summary], headers=list(summary[0]), tablefmt="orgtbl"))
    return 0


def _write_csv(path: Path, rows: Sequence[Dict[str, Any]]) -> None:
    utils.ensure_dir(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def co_demo_arms(base: RunConfig, lam: Optional[float] = None) -> Dict[str, RunConfig]:
    """The unregularised FGSM arm and the ELLE arm of a catastrophic-overfitting demo."""
    lam = base.regularizer.lam if lam is None else lam
    return {
        "fgsm": dataclasses.replace(base, regularizer=RegularizerSpec(kind="none")),
        "elle": dataclasses.replace(base, regularizer=dataclasses.replace(base.regularizer, kind="elle", lam=lam)),
    }


def co_verdict(arm: str, result: TrainResult) -> Dict[str, Any]:
    return {
        "arm": arm,
        "co_flag": result.detection.flagged,
        "co_epoch": result.detection.epoch,
        "final_robust_acc": result.epochs[-1].robust_acc,
        "max_elin_probe": max((e.elin_probe for e in result.epochs if e.elin_probe is not None), default=None),
    }


def cmd_co_demo(args: argparse.Namespace, repo_config: Dict[str, Any]) -> int:
    base = load_run_config(args)
    root = output_root(args, repo_config)
    verdicts = []
    for arm, config in co_demo_arms(base, args.lam).items():
        run = Run(config, root, label=f"{base.run.name}-{arm}")
        with run.open_log() as log:
            verdict = co_verdict(arm, train_run(run, log))
            log.write("verdict", verdict)
        verdicts.append(verdict)
    print(tabulate([list(v.values()) for v in verdicts], headers=list(verdicts[0]), tablefmt="orgtbl"))
    return 0


def cmd_timing(args: argparse.Namespace, repo_config: Dict[str, Any]) -> int:
    config = load_run_config(args)
    timing = repo_config.get("timing", {})
    run = Run(config, output_root(args, repo_config), label=f"{config.run.name}-timing")
    train_set, test_set = build_datasets(config.data)
    log_stage("timing", steps=args.steps or timing.get("steps", 20))
    rows = benchmark_methods(
        config,
        train_set,
        test_set,
        n_steps=args.steps or timing.get("steps", 20),
        warmup=timing.get("warmup", 2),
        lam=timing.get("lam", 1.0),
    )
    with run.open_log() as log:
        utils.write_metrics(log, [dataclasses.asdict(row) for row in rows], kind="timing")
    by_method = {r.method: r for r in rows}
    table = [[r.method, r.forward_ms, r.backward_ms, r.total_ms] for r in rows]
    print(tabulate(table, headers=["method", "forward ms", "backward ms", "total ms"], tablefmt="orgtbl"))
    if "elle" in by_method and "fgsm" in by_method:
        print(f"elle/fgsm total ratio: {by_method['elle'].total_ms / by_method['fgsm'].total_ms:.2f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "probe": cmd_probe,
    "grid": cmd_grid,
    "co-demo": cmd_co_demo,
    "timing": cmd_timing,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Local-linearity adversarial training experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment YAML (see schema/run_config.yaml)")
        p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
        p.add_argument("--out", default=None, help="output directory for logs, checkpoints and CSVs")
        if name in ("eval", "probe"):
            p.add_argument("--checkpoint", required=True)
        if name == "probe":
            p.add_argument("--samples", type=int, default=16, help="Monte-Carlo draws per example")
            p.add_argument("--sigma-fd", type=float, default=1e-3, help="finite-difference radius")
        if name == "co-demo":
            p.add_argument("--lam", type=float, default=None, help="ELLE weight for the regularised arm")
        if name == "timing":
            p.add_argument("--steps", type=int, default=None)
    return parser


def error_row(command: str, exc: EllelabError) -> Dict[str, Any]:
    row = {"kind": "error", "command": command, "run_id": exc.run_id, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, DivergenceError):
        row["record"] = exc.record
    return row


def run_command(command: str, args: argparse.Namespace) -> int:
    repo_config = utils.load_config()
    out = Path(args.out) if args.out else None
    configure_logging(repo_config, (out / "ellelab.log") if out else None)
    log_stage("start", command=command, config=args.config)
    try:
        status = COMMANDS[command](args, repo_config)
    except EllelabError as exc:
        logger.error("Command %s failed: %s", command, exc)
        error_log = (out or Path(repo_config.get("output", {}).get("directory", "runs"))) / "errors.jsonl"
        utils.ensure_dir(error_log)
        with error_log.open("a", encoding="utf-8") as fh:
            fh.write(utils.dumps_row(error_row(command, exc)) + "\n")
        return 1
    log_stage("finish", command=command, status=status)
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run_command(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
