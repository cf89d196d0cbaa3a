"""Single-step adversarial training with a pluggable local-linearity regulariser."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from ellelab.attacks import fgsm, run_attack
from ellelab.autodiff import Graph, backward_grad
from ellelab.data import Dataset, build_datasets
from ellelab.errors import DivergenceError, NonFiniteError
from ellelab.models import ModelParams, model_new, save_checkpoint
from ellelab.probes import estimate_elin, grad_misalignment
from ellelab.regularizers import AdaptiveLambdaState, adaptive_lambda_update, compute_term, draw_linearity_sample

from .config import RunConfig
from .evaluation import CODetection, co_detect, evaluate
from .optimizer import SGD
from .records import EpochRecord, StepRecord
from .schedules import lr_at
from .timing import StepTimer

logger = logging.getLogger(__name__)

# Extra entropy words for streams that must not disturb the per-step draw order.
SHUFFLE_STREAM = 104_729
PGD_STREAM = 1
PROBE_STREAM = 15_485_863

RecordSink = Callable[[str, Dict], None]


@dataclass
class TrainResult:
    params: ModelParams
    steps: List[StepRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)
    detection: CODetection = field(default_factory=lambda: CODetection(False))


class Trainer:
    def __init__(
        self,
        config: RunConfig,
        train_set: Dataset,
        test_set: Dataset,
        params: Optional[ModelParams] = None,
        sink: Optional[RecordSink] = None,
        checkpoint_dir: Optional[Path] = None,
    ):
        self.config = config
        self.train_set = train_set
        self.test_set = test_set
        self.params = params.copy() if params is not None else model_new(config.model)
        self.optimizer = SGD(config.momentum, config.weight_decay)
        reg = config.regularizer
        self.adaptive = AdaptiveLambdaState(lambda_max=reg.lam, gamma=reg.gamma) if reg.adaptive else None
        self.sink = sink
        self.checkpoint_dir = checkpoint_dir
        self.steps_per_epoch = max(1, math.ceil(len(train_set) / config.batch_size))
        self.probe_slice = test_set.take(config.probe.slice_size)

    def _emit(self, kind: str, row: Dict) -> None:
        if self.sink is not None:
            self.sink(kind, row)

    def step(self, epoch: int, step: int, x: np.ndarray, y: np.ndarray, lr: float) -> StepRecord:
        """One pass of attack, regulariser, λ update and SGD update on a batch."""
        cfg = self.config
        attack, reg = cfg.attack, cfg.regularizer
        eps = attack.epsilon
        timer = StepTimer()
        rng = np.random.default_rng([cfg.seed, epoch, step])
        # Fixed draw order: attack noise, x_a, x_b, α.
        noise = rng.uniform(-1.0, 1.0, size=x.shape) * (attack.noise_factor * eps)
        draw = draw_linearity_sample(x, eps, rng, alpha_mode=reg.alpha_mode, clamp=reg.clamp_samples)

        try:
            with timer.phase("forward"):
                pgd_rng = np.random.default_rng([cfg.seed, epoch, step, PGD_STREAM])
                x_adv = run_attack(self.params, x, y, attack, rng=pgd_rng, noise=noise)
                x_fgsm = None
                if reg.kind == "elle_2p":
                    x_fgsm = x_adv if attack.kind == "fgsm" else fgsm(self.params, x, y, eps)
                graph = Graph()
                bound = self.params.bind(graph)
                adv_loss = bound.per_example_loss(graph.input(x_adv, name="x_adv"), y).mean()
                term = compute_term(reg, bound, x, y, eps, draw, x_fgsm=x_fgsm)
        except NonFiniteError as exc:
            diagnostic = {"epoch": epoch, "step": step, "lr": lr}
            raise DivergenceError(f"non-finite forward pass at epoch {epoch} step {step}: {exc}", diagnostic) from exc

        threshold = None
        if self.adaptive is not None:
            lam = adaptive_lambda_update(self.adaptive, term.e_lin)
            threshold = self.adaptive.last_threshold
        else:
            lam = reg.lam if term is not None else 0.0

        record = StepRecord(
            epoch=epoch,
            step=step,
            loss=adv_loss.item(),
            lr=lr,
            e_lin=term.e_lin if term is not None else None,
            reg_value=term.value.item() if term is not None else None,
            lam=lam,
            threshold=threshold,
        )
        if not np.isfinite(record.loss) or (record.reg_value is not None and not np.isfinite(record.reg_value)):
            raise DivergenceError(f"non-finite loss at epoch {epoch} step {step}", record.as_row())

        names = list(bound.parameters)
        try:
            with timer.phase("backward"):
                objective = adv_loss if term is None or lam == 0 else adv_loss + term.value * lam
                grads = backward_grad(objective, [bound.parameters[n] for n in names])
        except NonFiniteError as exc:
            raise DivergenceError(f"non-finite gradient at epoch {epoch} step {step}: {exc}", record.as_row()) from exc
        with timer.phase("backward"):
            self.optimizer.step(self.params.tensors, {n: grads[bound.parameters[n]] for n in names}, lr)

        record.forward_ms = timer.forward_ms
        record.backward_ms = timer.backward_ms
        record.wall_ms = timer.wall_ms
        return record

    def run_epoch(self, epoch: int) -> List[StepRecord]:
        cfg = self.config
        order = np.random.default_rng([cfg.seed, epoch, SHUFFLE_STREAM]).permutation(len(self.train_set))
        records = []
        for step in range(self.steps_per_epoch):
            idx = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            x = np.asarray(self.train_set.inputs[idx])
            y = self.train_set.labels[idx]
            lr = lr_at(cfg.schedule, epoch, step, self.steps_per_epoch, cfg.epochs)
            record = self.step(epoch, step, x, y, lr)
            self._emit("step", record.as_row(timing=cfg.run.log_timing))
            records.append(record)
        return records

    def end_of_epoch(self, epoch: int, steps: List[StepRecord]) -> EpochRecord:
        cfg = self.config
        test = self.test_set
        if cfg.eval.max_examples is not None:
            test = test.take(cfg.eval.max_examples)
        eval_attack = cfg.eval.attack
        clean = evaluate(self.params, test, None, cfg.seed, cfg.eval.batch_size)
        robust = evaluate(self.params, test, eval_attack, cfg.seed + epoch, cfg.eval.batch_size)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean([s.loss for s in steps])),
            clean_acc=clean,
            robust_acc=robust,
        )
        if cfg.probe.every and (epoch + 1) % cfg.probe.every == 0:
            probe = self.probe_slice
            rng = np.random.default_rng([cfg.seed, PROBE_STREAM, epoch])
            eps = cfg.attack.epsilon
            record.elin_probe = estimate_elin(
                self.params, probe.inputs, probe.labels, eps, cfg.probe.n_samples, rng, seed=cfg.seed
            ).value
            record.misalignment_probe = grad_misalignment(
                self.params, probe.inputs, probe.labels, eps, rng, seed=cfg.seed
            ).value
        return record

    def train(self) -> TrainResult:
        cfg = self.config
        result = TrainResult(self.params)
        logger.info(
            "Training %s: attack=%s eps=%.4g regularizer=%s lambda=%.6g epochs=%d",
            cfg.run.name, cfg.attack.kind, cfg.attack.epsilon, cfg.regularizer.kind, cfg.regularizer.lam, cfg.epochs,
        )
        for epoch in range(cfg.epochs):
            steps = self.run_epoch(epoch)
            result.steps.extend(steps)
            record = self.end_of_epoch(epoch, steps)
            result.epochs.append(record)
            detection = co_detect(result.epochs, cfg.co_detector)
            record.co_flag = detection.flagged and detection.epoch == epoch
            if detection.flagged and not result.detection.flagged:
                result.detection = detection
            self._emit("epoch", record.as_row())
            logger.info(
                "epoch=%d loss=%.4f clean=%.4f robust=%.4f elin=%s",
                epoch, record.train_loss, record.clean_acc, record.robust_acc, record.elin_probe,
            )
            every = cfg.run.checkpoint_every
            if self.checkpoint_dir is not None and every and (epoch + 1) % every == 0:
                save_checkpoint(self.params, Path(self.checkpoint_dir) / f"epoch{epoch + 1:04d}.ckpt")
        return result


def train(
    config: RunConfig,
    train_set: Optional[Dataset] = None,
    test_set: Optional[Dataset] = None,
    params: Optional[ModelParams] = None,
    sink: Optional[RecordSink] = None,
    checkpoint_dir: Optional[Path] = None,
) -> TrainResult:
    if train_set is None or test_set is None:
        built_train, built_test = build_datasets(config.data)
        train_set = built_train if train_set is None else train_set
        test_set = built_test if test_set is None else test_set
    return Trainer(config, train_set, test_set, params, sink, checkpoint_dir).train()
