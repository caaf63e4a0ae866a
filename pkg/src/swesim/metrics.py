"""Evaluation metrics: reward-simulation quality and resolve rate."""

from __future__ import annotations

from dataclasses import dataclass


class EmptyInput(Exception):
    pass


class DuplicateInstanceId(Exception):
    def __init__(self, instance_id: str):
        super().__init__(f"duplicate instance_id in results: {instance_id}")
        self.instance_id = instance_id


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; the positive class is reward 1."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float | None  # None when the denominator is zero
    recall: float | None
    f1: float | None
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "tn": self.counts.tn,
        }


def harmonic_f1(precision: float, recall: float) -> float | None:
    """F1 as the harmonic mean of an already-computed precision and recall."""
    if precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def classification_metrics(pairs: list[tuple[int, int]]) -> ClassificationReport:
    """Accuracy/precision/recall/F1 of predicted vs ground-truth rewards.

    pairs are (predicted, truth) with values in {0, 1}. Metrics whose
    denominator is zero are reported as None rather than coerced to 0, so
    degenerate fixtures stay visible instead of corrupting comparisons.
    """
    if not pairs:
        raise EmptyInput("no (predicted, truth) pairs to score")
    tp = fp = fn = tn = 0
    for predicted, truth in pairs:
        if predicted not in (0, 1) or truth not in (0, 1):
            raise ValueError(f"labels must be 0/1, got ({predicted!r}, {truth!r})")
        if predicted == 1 and truth == 1:
            tp += 1
        elif predicted == 1 and truth == 0:
            fp += 1
        elif predicted == 0 and truth == 1:
            fn += 1
        else:
            tn += 1
    counts = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)
    accuracy = (tp + tn) / counts.total
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    f1 = harmonic_f1(precision, recall) if precision is not None and recall is not None else None
    return ClassificationReport(accuracy, precision, recall, f1, counts)


def resolve_rate(results: list[tuple[str, bool]]) -> float:
    """Fraction of instances whose final patch passed all designated tests."""
    if not results:
        raise EmptyInput("no results")
    seen: set[str] = set()
    resolved = 0
    for instance_id, ok in results:
        if instance_id in seen:
            raise DuplicateInstanceId(instance_id)
        seen.add(instance_id)
        if ok:
            resolved += 1
    return resolved / len(results)


def format_percent(fraction: float) -> str:
    """Render a fraction the way resolve rates are reported: 0.52 -> '52.0'."""
    return f"{fraction * 100:.1f}"
