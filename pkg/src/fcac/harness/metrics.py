"""Session accuracy, average accuracy (AA), performance dropping rate (PD), confusion matrices."""
from __future__ import annotations

from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..errors import InvalidInputError

PARTITIONS = ("base", "novel", "both")


def accuracy(predictions: Sequence[int], labels: Sequence[int], classes: Optional[Iterable[int]] = None) -> Optional[float]:
    """Correct / total over samples whose label lies in ``classes`` (all samples if None).

    Returns None when the partition has no samples (e.g. novel classes at session 0).
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InvalidInputError("predictions and labels differ in length")
    if classes is not None:
        mask = np.isin(labels, list(classes))
        predictions, labels = predictions[mask], labels[mask]
    if labels.size == 0:
        return None
    return float(np.count_nonzero(predictions == labels)) / labels.size


def aa(accuracies: Sequence[Optional[float]]) -> float:
    """Mean of the available per-session accuracies."""
    vals = [a for a in accuracies if a is not None]
    if not vals:
        raise InvalidInputError("no accuracies to average")
    return float(sum(vals) / len(vals))


def pd(accuracies: Sequence[Optional[float]], partition: str = "both") -> float:
    """First relevant session minus last session: A_0 - A_last (base, both), A_1 - A_last (novel)."""
    if partition not in PARTITIONS:
        raise InvalidInputError(f"unknown partition {partition!r}")
    start = 1 if partition == "novel" else 0
    if len(accuracies) < 2 or len(accuracies) <= start:
        raise InvalidInputError(f"PD for {partition} needs at least {max(2, start + 1)} sessions")
    first, last = accuracies[start], accuracies[-1]
    if first is None or last is None:
        raise InvalidInputError(f"PD for {partition} needs accuracies at both endpoints")
    return float(first - last)


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], class_order: Sequence[int]) -> np.ndarray:
    """Rows are true classes, columns predicted classes, both in ``class_order``."""
    pos = {int(c): i for i, c in enumerate(class_order)}
    if len(pos) != len(class_order):
        raise InvalidInputError("class order has duplicates")
    m = np.zeros((len(pos), len(pos)), dtype=np.int64)
    for p, t in zip(predictions, labels):
        try:
            m[pos[int(t)], pos[int(p)]] += 1
        except KeyError as exc:
            raise InvalidInputError(f"class {exc.args[0]} not in class order") from None
    return m


def storage_elements(num_classes: int, dim: int) -> int:
    """Prototype storage N_c * D in float elements."""
    return int(num_classes) * int(dim)


def partition_accuracies(predictions: np.ndarray, labels: np.ndarray, base_classes: Iterable[int],
                         novel_classes: Iterable[int]) -> dict:
    return {
        "base": accuracy(predictions, labels, base_classes),
        "novel": accuracy(predictions, labels, novel_classes),
        "both": accuracy(predictions, labels),
    }


def partition_counts(labels: np.ndarray, base_classes: Iterable[int], novel_classes: Iterable[int]) -> dict:
    labels = np.asarray(labels)
    return {
        "base": int(np.isin(labels, list(base_classes)).sum()),
        "novel": int(np.isin(labels, list(novel_classes)).sum()),
        "both": int(labels.size),
    }


def series(records: List[dict], partition: str) -> List[Optional[float]]:
    return [r["accuracy"][partition] for r in records]
