"""Confusion matrices, classification metrics, imbalance ratios, latency.

All rates are percentages. Weighted metrics average per-class values with
true-class quantity weights; a class with a zero denominator contributes 0
and logs a warning. Weighted recall always equals accuracy (both reduce to
the trace weighted by true-class shares).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError
from .model import ArchitectureSpec, ModelHeads, ParameterSet

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray                 # rows = true class, cols = predicted
    class_names: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def true_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def predicted_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def confusion(true_labels: np.ndarray, predicted_labels: np.ndarray,
              num_classes: int,
              class_names: tuple[str, ...] | None = None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ConfigError("label sequences differ in length")
    if t.size and (t.min() < 0 or t.max() >= num_classes or
                   p.min() < 0 or p.max() >= num_classes):
        raise ConfigError(f"labels outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = class_names or tuple(f"class_{i}" for i in range(num_classes))
    return ConfusionMatrix(counts, tuple(names))


def accuracy(cm: ConfusionMatrix) -> float:
    """Percent of correct predictions: 100 * trace / total."""
    if cm.total == 0:
        raise ConfigError("empty confusion matrix")
    return 100.0 * float(np.trace(cm.counts)) / cm.total


def per_class_prf(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class (precision, recall, F1) in percent; 0 where undefined."""
    tp = np.diag(cm.counts).astype(np.float64)
    pred = cm.predicted_counts().astype(np.float64)
    true = cm.true_counts().astype(np.float64)

    precision = np.zeros_like(tp)
    recall = np.zeros_like(tp)
    f1 = np.zeros_like(tp)
    for i in range(tp.size):
        if pred[i] > 0:
            precision[i] = tp[i] / pred[i]
        elif true[i] > 0:
            logger.warning("class %s never predicted; precision set to 0",
                           cm.class_names[i])
        if true[i] > 0:
            recall[i] = tp[i] / true[i]
        if precision[i] + recall[i] > 0:
            f1[i] = 2 * precision[i] * recall[i] / (precision[i] + recall[i])
    return precision * 100.0, recall * 100.0, f1 * 100.0


def weighted_prf(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """Quantity-weighted (precision, recall, F1) in percent."""
    if cm.total == 0:
        raise ConfigError("empty confusion matrix")
    precision, recall, f1 = per_class_prf(cm)
    weights = cm.true_counts() / cm.total
    return (float(weights @ precision), float(weights @ recall),
            float(weights @ f1))


def imbalance_ratios(class_counts: np.ndarray) -> np.ndarray:
    """Majority count divided by each class count (1.00 for the majority)."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.max() <= 0:
        raise ConfigError("imbalance ratios need a positive reference count")
    return np.where(counts > 0, counts.max() / np.maximum(counts, 1e-300),
                    np.inf)


@dataclass
class MetricsReport:
    """Headline and per-class metrics for one evaluation."""
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: dict[str, dict[str, float]]
    confusion: ConfusionMatrix
    sample_count: int
    seeds: list[int] = field(default_factory=list)

    def headline(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.weighted_precision,
            "recall": self.weighted_recall,
            "f1": self.weighted_f1,
        }

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "per_class": self.per_class,
            "confusion": self.confusion.counts.tolist(),
            "class_names": list(self.confusion.class_names),
            "sample_count": self.sample_count,
            "seeds": self.seeds,
        }


def evaluate_predictions(true_labels: np.ndarray, predicted_labels: np.ndarray,
                         class_names: tuple[str, ...]) -> MetricsReport:
    cm = confusion(true_labels, predicted_labels, len(class_names), class_names)
    precision, recall, f1 = per_class_prf(cm)
    counts = cm.true_counts()
    ratios = imbalance_ratios(np.maximum(counts, 1))
    per_class = {
        name: {
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(counts[i]),
            "imbalance_ratio": float(ratios[i]),
        }
        for i, name in enumerate(class_names)
    }
    wp, wr, wf = weighted_prf(cm)
    return MetricsReport(
        accuracy=accuracy(cm), weighted_precision=wp, weighted_recall=wr,
        weighted_f1=wf, per_class=per_class, confusion=cm,
        sample_count=cm.total,
    )


def positive_class_prf(cm: ConfusionMatrix, positive: int = 1
                       ) -> tuple[float, float, float]:
    """Precision/recall/F1 of one class, as reported for binary comparisons."""
    precision, recall, f1 = per_class_prf(cm)
    return float(precision[positive]), float(recall[positive]), float(f1[positive])


def predict(arch: ArchitectureSpec, params: ParameterSet, X: np.ndarray,
            batch_size: int = 4096) -> np.ndarray:
    """Argmax class predictions, batched eval-mode forward passes."""
    heads = ModelHeads(arch)
    heads.load(params)
    preds = []
    with torch.no_grad():
        for start in range(0, X.shape[0], batch_size):
            xb = torch.as_tensor(X[start:start + batch_size], dtype=torch.float32)
            logits = heads.classifier(heads.encoder(xb))
            preds.append(logits.argmax(dim=1).numpy())
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def measure_latency(arch: ArchitectureSpec, params: ParameterSet,
                    test_batch: np.ndarray, batch_size: int = 16,
                    trials: int = 20) -> float:
    """Mean wall-clock milliseconds per sample over forward-pass trials."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    heads = ModelHeads(arch)
    heads.load(params)
    xb = torch.as_tensor(test_batch[:batch_size], dtype=torch.float32)
    with torch.no_grad():
        for _ in range(3):  # warmup excluded from timing
            heads.classifier(heads.encoder(xb))
        start = time.perf_counter()
        for _ in range(trials):
            heads.classifier(heads.encoder(xb))
        elapsed = time.perf_counter() - start
    return elapsed * 1000.0 / (trials * xb.shape[0])


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Average headline and per-class metrics over seed runs.

    Confusion counts are summed so the pooled matrix stays integral.
    """
    if not reports:
        raise ConfigError("no reports to average")
    base = reports[0]
    n = len(reports)
    per_class = {}
    for name in base.per_class:
        per_class[name] = {
            key: float(np.mean([r.per_class[name][key] for r in reports]))
            for key in base.per_class[name]
        }
        per_class[name]["support"] = base.per_class[name]["support"]
        per_class[name]["imbalance_ratio"] = base.per_class[name]["imbalance_ratio"]
    pooled = ConfusionMatrix(
        counts=np.sum([r.confusion.counts for r in reports], axis=0),
        class_names=base.confusion.class_names,
    )
    seeds = sorted({s for r in reports for s in r.seeds})
    return MetricsReport(
        accuracy=float(np.mean([r.accuracy for r in reports])),
        weighted_precision=float(np.mean([r.weighted_precision for r in reports])),
        weighted_recall=float(np.mean([r.weighted_recall for r in reports])),
        weighted_f1=float(np.mean([r.weighted_f1 for r in reports])),
        per_class=per_class, confusion=pooled,
        sample_count=base.sample_count, seeds=seeds,
    )


def format_report(report: MetricsReport, title: str = "") -> str:
    """Two-decimal percent table mirroring the comparison-table layout."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"samples: {report.sample_count}"
                 + (f"   seeds: {report.seeds}" if report.seeds else ""))
    lines.append("Acc {:.2f}  Pre {:.2f}  Recall {:.2f}  F1 {:.2f}".format(
        report.accuracy, report.weighted_precision, report.weighted_recall,
        report.weighted_f1))
    lines.append(f"{'class':<8}{'ratio':>9}{'Pre':>8}{'Recall':>8}{'F1':>8}")
    for name, row in report.per_class.items():
        ratio = row["imbalance_ratio"]
        ratio_s = f"{ratio:.2f}" if np.isfinite(ratio) else "inf"
        lines.append(f"{name:<8}{ratio_s:>9}{row['precision']:>8.2f}"
                     f"{row['recall']:>8.2f}{row['f1']:>8.2f}")
    return "\n".join(lines)
