"""Top-k tag selection, micro-F1, Tags Learned, baselines, and analyses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import MovieRecord, TagVocabulary

# Review-count bins: width 10 up to 90, then 91-99, then 100+ on its own.
REVIEW_COUNT_BINS: list[tuple[int, int | None]] = [
    (1, 10), (11, 20), (21, 30), (31, 40), (41, 50),
    (51, 60), (61, 70), (71, 80), (81, 90), (91, 99), (100, None),
]


def top_k(distribution, k: int) -> list[int]:
    """Indices of the k largest probabilities; ties go to the lower index."""
    dist = np.asarray(distribution, dtype=np.float64)
    if not 1 <= k <= dist.shape[0]:
        raise ValueError(f"k must be in [1, {dist.shape[0]}], got {k}")
    order = sorted(range(dist.shape[0]), key=lambda i: (-dist[i], i))
    return order[:k]


def micro_f1(predictions: Sequence[set], golds: Sequence[set]) -> float:
    """Micro-averaged F1 as a percentage: counts pooled over instances and tags."""
    if len(predictions) != len(golds):
        raise ValueError("prediction/gold lists differ in length")
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pred = set(pred)
        gold = set(gold)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def tags_learned(predictions: Sequence[set]) -> int:
    """Number of distinct tags predicted across the whole evaluation set."""
    seen = set()
    for pred in predictions:
        seen.update(pred)
    return len(seen)


def most_frequent_baseline(
    train_records: Iterable[MovieRecord], k: int, tagvocab: TagVocabulary
) -> list[str]:
    """The k most frequent training tags (ties by tag index), as a constant
    prediction for every instance."""
    counts = {t: 0 for t in tagvocab.tags}
    n = 0
    for rec in train_records:
        n += 1
        for tag in rec.gold_tags:
            counts[tag] += 1
    if n == 0:
        raise ValueError("empty training split")
    ranked = sorted(tagvocab.tags, key=lambda t: (-counts[t], tagvocab.index[t]))
    return ranked[:k]


@dataclass
class ReviewCountBin:
    low: int
    high: int | None  # None = open-ended (the 100+ bin)
    n_instances: int
    f1_multi: float
    f1_synopsis: float

    @property
    def delta(self) -> float:
        return self.f1_multi - self.f1_synopsis

    def as_dict(self) -> dict:
        return {
            "low": self.low,
            "high": self.high,
            "n_instances": self.n_instances,
            "f1_multi": self.f1_multi,
            "f1_synopsis": self.f1_synopsis,
            "delta": self.delta,
        }


def analyze_by_review_count(
    predictions_multi: Sequence[set],
    predictions_synopsis: Sequence[set],
    golds: Sequence[set],
    review_counts: Sequence[int],
) -> list[ReviewCountBin]:
    """Per-bin F1 gain of the multi-view model over synopsis-only.

    Instances with zero reviews fall outside every bin.
    """
    lengths = {len(predictions_multi), len(predictions_synopsis), len(golds), len(review_counts)}
    if len(lengths) != 1:
        raise ValueError("aligned lists required")
    bins = []
    for low, high in REVIEW_COUNT_BINS:
        idx = [
            i
            for i, c in enumerate(review_counts)
            if c >= low and (high is None or c <= high)
        ]
        if not idx:
            continue
        bins.append(
            ReviewCountBin(
                low=low,
                high=high,
                n_instances=len(idx),
                f1_multi=micro_f1([predictions_multi[i] for i in idx], [golds[i] for i in idx]),
                f1_synopsis=micro_f1(
                    [predictions_synopsis[i] for i in idx], [golds[i] for i in idx]
                ),
            )
        )
    return bins


@dataclass
class EvalReport:
    """Evaluation summary: F1 and Tags Learned per k, plus optional analyses."""

    f1_at_k: dict[int, float]
    tl_at_k: dict[int, int]
    n_instances: int
    predictions: list[dict] = field(default_factory=list)
    review_count_bins: list[ReviewCountBin] | None = None
    gate_stats: dict | None = None

    def as_dict(self) -> dict:
        d = {
            "n_instances": self.n_instances,
            "f1_at_k": {str(k): round(v, 2) for k, v in self.f1_at_k.items()},
            "tl_at_k": {str(k): v for k, v in self.tl_at_k.items()},
        }
        if self.review_count_bins is not None:
            d["review_count_bins"] = [b.as_dict() for b in self.review_count_bins]
        if self.gate_stats is not None:
            d["gate_stats"] = self.gate_stats
        return d


def evaluate_distributions(
    distributions: Sequence[np.ndarray],
    golds: Sequence[set],
    tagvocab: TagVocabulary,
    ks: Sequence[int] = (3, 5),
    ids: Sequence[str] | None = None,
) -> EvalReport:
    """Score a list of tag distributions against gold tag sets."""
    f1_at_k: dict[int, float] = {}
    tl_at_k: dict[int, int] = {}
    per_k_preds: dict[int, list[set]] = {}
    for k in ks:
        preds = [
            {tagvocab.tags[j] for j in top_k(dist, k)} for dist in distributions
        ]
        per_k_preds[k] = preds
        f1_at_k[k] = micro_f1(preds, golds)
        tl_at_k[k] = tags_learned(preds)
    max_k = max(ks)
    predictions = []
    for i, dist in enumerate(distributions):
        predictions.append(
            {
                "id": ids[i] if ids is not None else str(i),
                "gold": sorted(golds[i]),
                "ranked": [tagvocab.tags[j] for j in top_k(dist, max_k)],
            }
        )
    return EvalReport(
        f1_at_k=f1_at_k,
        tl_at_k=tl_at_k,
        n_instances=len(distributions),
        predictions=predictions,
    )
