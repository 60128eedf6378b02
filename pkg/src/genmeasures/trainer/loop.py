"""Mini-batch Adam training with threshold or patience stopping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..model.checkpoint import Checkpoint, build, predict_logits
from ..model.network import NonFiniteActivationError, run_graph
from ..model.spec import NetworkSpec, SequentialSpec
from ..synthdata import LabeledDataset
from ..tensor import SeededRng
from .backprop import loss_and_grads
from .losses import combined_loss, cross_entropy
from .optim import AdamState, NonFiniteGradientError, adam_step

log = logging.getLogger(__name__)

# stream ids under the run seed
_INIT, _SHUFFLE, _DROPOUT = 1, 2, 3

THRESHOLD_MET = "threshold-met"
PATIENCE_EXHAUSTED = "patience-exhausted"
MAX_EPOCHS = "max-epochs"
DIVERGED = "diverged"


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Exactly one of ``target_error`` and ``patience`` selects the stopping mode.

    ``patience_metric`` picks the validation signal for patience stopping:
    ``"loss"`` (the training objective in eval mode) or ``"error"`` (1-0 risk).
    """

    learning_rate: float = 1e-5
    batch_size: int = 2
    lam: float = 1.0
    target_error: float | None = 0.01
    patience: int | None = None
    patience_metric: str = "loss"
    max_epochs: int = 200
    thresholds: tuple[float, ...] = (0.01, 0.1)
    seed: int = 0
    fold: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        self.validate()

    def validate(self) -> None:
        if (self.target_error is None) == (self.patience is None):
            raise TrainConfigError("set exactly one of target_error and patience")
        if self.target_error is not None and not 0.0 <= self.target_error < 1.0:
            raise TrainConfigError("target_error must be in [0, 1)")
        if self.patience is not None and self.patience < 1:
            raise TrainConfigError("patience must be at least 1")
        if any(not 0.0 < t < 1.0 for t in self.thresholds):
            raise TrainConfigError("thresholds must lie in (0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise TrainConfigError("lam must be in [0, 1]")
        if self.batch_size < 1 or self.max_epochs < 0 or self.learning_rate < 0:
            raise TrainConfigError("batch_size >= 1, max_epochs >= 0 and learning_rate >= 0 required")
        if self.patience_metric not in ("loss", "error"):
            raise TrainConfigError("patience_metric must be 'loss' or 'error'")

    @property
    def stopping(self) -> str:
        return "target" if self.target_error is not None else "patience"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_error: float
    val_risk: float | None = None
    val_error: float | None = None
    train_loss: float | None = None


@dataclass
class TrainingTrace:
    epochs: list[EpochRecord] = field(default_factory=list)
    first_crossing: dict[float, int | None] = field(default_factory=dict)
    stopping_reason: str = ""
    steps_taken: int = 0
    best_epoch: int | None = None
    failed: bool = False
    failure: str | None = None

    def record(self, rec: EpochRecord) -> None:
        if self.epochs and rec.step <= self.epochs[-1].step and rec.epoch > 0:
            raise ValueError("step counter must increase between records")
        self.epochs.append(rec)
        for thr, step in self.first_crossing.items():
            if step is None and rec.train_error <= thr:
                self.first_crossing[thr] = rec.step

    def to_text(self) -> str:
        """JSON Lines: one ``epoch`` record per evaluation, one ``crossing`` per threshold, one ``summary``."""
        lines = [json.dumps({"kind": "epoch", **asdict(r)}, sort_keys=True) for r in self.epochs]
        for thr, step in sorted(self.first_crossing.items()):
            lines.append(json.dumps({"kind": "crossing", "threshold": thr, "step": step}, sort_keys=True))
        lines.append(json.dumps({"kind": "summary", "stopping_reason": self.stopping_reason,
                                 "steps_taken": self.steps_taken, "best_epoch": self.best_epoch,
                                 "failed": self.failed, "failure": self.failure}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingTrace":
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "epoch":
                trace.epochs.append(EpochRecord(**rec))
            elif kind == "crossing":
                trace.first_crossing[float(rec["threshold"])] = rec["step"]
            elif kind == "summary":
                for key, value in rec.items():
                    setattr(trace, key, value)
        return trace

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainingTrace":
        return cls.from_text(Path(path).read_text())


def error_rate(logits: np.ndarray, labels: np.ndarray) -> float:
    """1-0 risk with argmax prediction; ties go to class 0."""
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred != labels))


def _partition(dataset: LabeledDataset, name: str, fold: int):
    if dataset.folds is None:
        if name == "train":
            return dataset.images, dataset.labels, dataset.masks
        return None
    idx = dataset.indices(name, fold)
    if len(idx) == 0:
        return None
    return (dataset.images[idx], dataset.labels[idx],
            None if dataset.masks is None else dataset.masks[idx])


def _eval_objective(ck: Checkpoint, images, labels, masks, lam: float, batch: int) -> tuple[float, float]:
    """(objective, 1-0 error) in eval mode."""
    graph = ck.graph
    if lam >= 1.0:
        logits = predict_logits(ck, images, batch)
        return cross_entropy(logits, labels), error_rate(logits, labels)
    logit_parts, mask_parts = [], []
    for i in range(0, len(images), batch):
        res = run_graph(graph, ck.weights, images[i:i + batch], outputs=("logits", "mask"))
        logit_parts.append(res["logits"])
        mask_parts.append(res["mask"])
    logits = np.concatenate(logit_parts)
    pm = np.concatenate(mask_parts)
    return combined_loss(logits, labels, pm, masks, lam), error_rate(logits, labels)


def train(spec: NetworkSpec | SequentialSpec | Checkpoint, dataset: LabeledDataset,
          config: TrainConfig) -> tuple[Checkpoint, TrainingTrace]:
    """Train from a fresh seeded initialization (or a given checkpoint).

    Every epoch ends with a full eval-mode pass over the training partition;
    its 1-0 error drives target stopping and the threshold first-crossing
    steps. Patience stopping restores the best-validation weights.
    """
    config.validate()
    train_part = _partition(dataset, "train", config.fold)
    val_part = _partition(dataset, "val", config.fold)
    if train_part is None:
        raise TrainConfigError("dataset has no training partition")
    if config.stopping == "patience" and val_part is None:
        raise TrainConfigError("patience stopping needs a validation partition")
    x, y, m = train_part
    if config.lam < 1.0 and m is None:
        raise TrainConfigError("a Dice term needs ground-truth masks")

    root = SeededRng(config.seed)
    if isinstance(spec, Checkpoint):
        ck = Checkpoint(spec.spec, {k: v.copy() for k, v in spec.weights.items()},
                        {k: v.copy() for k, v in spec.init_weights.items()}, dict(spec.meta))
    else:
        ck = build(spec, root.child(_INIT))
    trace = TrainingTrace(first_crossing={t: None for t in config.thresholds})
    state = AdamState()
    step = 0
    best_risk, best_weights, best_epoch, stale = math.inf, None, None, 0

    def evaluate_epoch(epoch: int) -> EpochRecord:
        tr_loss, tr_err = _eval_objective(ck, x, y, m, config.lam, config.eval_batch_size)
        rec = EpochRecord(epoch, step, tr_err, train_loss=tr_loss)
        if val_part is not None:
            v_loss, v_err = _eval_objective(ck, *val_part, config.lam, config.eval_batch_size)
            rec.val_error = v_err
            rec.val_risk = v_loss if config.patience_metric == "loss" else v_err
        trace.record(rec)
        return rec

    reason = MAX_EPOCHS
    try:
        rec = evaluate_epoch(0)
        if config.stopping == "target" and rec.train_error <= config.target_error:
            reason = THRESHOLD_MET
        else:
            n = len(y)
            for epoch in range(1, config.max_epochs + 1):
                order = root.child(_SHUFFLE, epoch).permutation(n)
                for b, start in enumerate(range(0, n, config.batch_size)):
                    idx = order[start:start + config.batch_size]
                    loss, grads = loss_and_grads(
                        ck, x[idx], y[idx], None if m is None else m[idx], config.lam,
                        train=True, rng=root.child(_DROPOUT, epoch, b))
                    if not math.isfinite(loss):
                        raise FloatingPointError(f"non-finite loss at step {step + 1}")
                    adam_step(ck.weights, grads, state, config.learning_rate)
                    step += 1
                rec = evaluate_epoch(epoch)
                if config.stopping == "target":
                    if rec.train_error <= config.target_error:
                        reason = THRESHOLD_MET
                        break
                    continue
                if rec.val_risk < best_risk:
                    best_risk, best_epoch, stale = rec.val_risk, epoch, 0
                    best_weights = {k: v.copy() for k, v in ck.weights.items()}
                else:
                    stale += 1
                    if stale >= config.patience:
                        reason = PATIENCE_EXHAUSTED
                        break
    except (FloatingPointError, NonFiniteActivationError, NonFiniteGradientError) as exc:
        reason = DIVERGED
        trace.failed = True
        trace.failure = str(exc)
        log.warning("training diverged (seed %s): %s", config.seed, exc)

    if best_weights is not None and not trace.failed:
        ck.weights.update(best_weights)
        trace.best_epoch = best_epoch
    trace.stopping_reason = reason
    trace.steps_taken = step
    threshold_step = None
    if config.target_error is not None:
        threshold_step = trace.first_crossing.get(config.target_error)
    ck.meta.update({
        "seed": config.seed,
        "steps_taken": step,
        "stopping_reason": reason,
        "step_at_error_threshold": threshold_step,
        "failed": trace.failed,
        "train_config": config.to_dict(),
    })
    return ck, trace
