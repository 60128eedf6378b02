from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..model.checkpoint import Checkpoint, predict_logits
from ..synthdata import LabeledDataset


@dataclass(frozen=True)
class EvalResult:
    error: float
    accuracy: float
    f1: float
    sensitivity: float
    specificity: float
    n: int
    dataset_tag: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int) -> float:
    # empty denominators (no positives, say) report 0 rather than NaN
    return num / den if den else 0.0


def metrics_from_predictions(pred: np.ndarray, labels: np.ndarray, tag: str = "") -> EvalResult:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(labels).astype(bool)
    n = len(truth)
    if n == 0:
        raise ValueError("cannot evaluate on an empty set")
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    acc = (tp + tn) / n
    return EvalResult(error=(fp + fn) / n, accuracy=acc, f1=_ratio(2 * tp, 2 * tp + fp + fn),
                      sensitivity=_ratio(tp, tp + fn), specificity=_ratio(tn, tn + fp), n=n, dataset_tag=tag)


def evaluate(checkpoint: Checkpoint, dataset: LabeledDataset, partition: str = "test",
             fold: int = 0, batch_size: int = 256) -> EvalResult:
    """Eval-mode metrics on one partition (``"all"`` for the whole set).

    Prediction is the argmax logit; ties resolve to class 0.
    """
    idx = dataset.indices(partition, fold)
    logits = predict_logits(checkpoint, dataset.images[idx], batch_size)
    return metrics_from_predictions(np.argmax(logits, axis=1), dataset.labels[idx], dataset.spec.shift_tag)
