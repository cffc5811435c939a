"""Ranking metrics: precision, recall and F1 at a cutoff, with macro averaging."""

from __future__ import annotations

from typing import Hashable, Iterable, Mapping, Sequence

from .errors import EmptyTruth
from .ontology import normalize_label


def metrics_at_n(predicted: Sequence[Hashable], truth: Iterable[Hashable], n: int) -> tuple[float, float, float]:
    """(P@n, R@n, F1@n). Precision divides by ``n`` even when fewer items were ranked.

    A truth item listed twice in the top ``n`` counts as one hit.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    truth = set(truth)
    if not truth:
        raise EmptyTruth("ground truth is empty")
    hits = len(truth.intersection(predicted[:n]))
    p = hits / n
    r = hits / len(truth)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def macro_average(values: Sequence[float]) -> float:
    if not values:
        raise ValueError("nothing to average")
    return sum(values) / len(values)


def macro_metrics(
    rankings: Sequence[Sequence[Hashable]], truths: Sequence[Iterable[Hashable]], n: int
) -> tuple[float, float, float]:
    """Per-scenario metrics averaged; F1 is the mean of per-scenario F1 values."""
    per = [metrics_at_n(r, t, n) for r, t in zip(rankings, truths, strict=True)]
    return tuple(macro_average([m[i] for m in per]) for i in range(3))


def canonicalize(label: str, aliases: Mapping[str, str] | None = None) -> str:
    key = normalize_label(label)
    if aliases:
        return aliases.get(key, key)
    return key


def dedupe(labels: Iterable[str]) -> list[str]:
    seen = set()
    out = []
    for label in labels:
        if label not in seen:
            seen.add(label)
            out.append(label)
    return out
