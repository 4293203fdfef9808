"""Extractive review summarization: all reviews of a movie collapse into one
document by ranking sentences with weighted PageRank over a token-overlap
similarity graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import normalize_text, split_sentences


@dataclass
class SummaryConfig:
    target_ratio: float = 0.2
    max_sentences: int = 120
    damping: float = 0.85
    tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if not 0 < self.target_ratio <= 1:
            raise ValueError("target_ratio must be in (0, 1]")
        if not 0 < self.damping < 1:
            raise ValueError("damping must be in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def sentence_similarity(s1: Sequence[str], s2: Sequence[str]) -> float:
    """Shared unique tokens over the sum of log sentence lengths.

    Defined as 0 when both sentences are single tokens (zero denominator).
    """
    shared = len(set(s1) & set(s2))
    if shared == 0:
        return 0.0
    denom = math.log(len(s1)) + math.log(len(s2))
    if denom == 0.0:
        return 0.0
    return shared / denom


def build_similarity_matrix(token_lists: Sequence[Sequence[str]]) -> np.ndarray:
    """Pairwise sentence similarities, vectorized; zero diagonal."""
    n = len(token_lists)
    sets = [set(t) for t in token_lists]
    vocab = {}
    for s in sets:
        for tok in s:
            vocab.setdefault(tok, len(vocab))
    incidence = np.zeros((n, max(len(vocab), 1)), dtype=np.float64)
    for i, s in enumerate(sets):
        for tok in s:
            incidence[i, vocab[tok]] = 1.0
    shared = incidence @ incidence.T
    logs = np.log(np.array([len(t) for t in token_lists], dtype=np.float64))
    denom = logs[:, None] + logs[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = np.where((shared > 0) & (denom > 0), shared / denom, 0.0)
    np.fill_diagonal(weights, 0.0)
    return weights


def pagerank(weights: np.ndarray, config: SummaryConfig | None = None) -> np.ndarray:
    """Weighted PageRank from uniform initialization.

    Nodes with zero outgoing weight spread their rank uniformly, so scores
    stay a distribution and no division by zero occurs.
    """
    config = config or SummaryConfig()
    n = weights.shape[0]
    if n == 0:
        raise ValueError("empty graph")
    out_strength = weights.sum(axis=1)
    dangling = out_strength == 0.0
    safe_out = np.where(dangling, 1.0, out_strength)
    d = config.damping
    scores = np.full(n, 1.0 / n)
    for _ in range(config.max_iter):
        outflow = np.where(dangling, 0.0, scores / safe_out)
        incoming = weights.T @ outflow
        dangling_mass = scores[dangling].sum()
        new_scores = (1.0 - d) / n + d * (incoming + dangling_mass / n)
        if np.max(np.abs(new_scores - scores)) < config.tol:
            scores = new_scores
            break
        scores = new_scores
    return scores


def summarize_reviews(
    reviews: Sequence[str],
    config: SummaryConfig | None = None,
    tokenizer: Callable[[str], list[str]] = normalize_text,
) -> str:
    """Summarize all reviews of one movie into a single document.

    Sentences from all reviews are pooled in order, exact duplicates (same
    token sequence) collapse to one node, and the top ceil(ratio * n)
    sentences by PageRank are emitted in their original order. No reviews
    means an empty summary.
    """
    config = config or SummaryConfig()
    raw_sentences: list[str] = []
    for review in reviews:
        raw_sentences.extend(split_sentences(review))

    keys_seen: dict[tuple, int] = {}
    kept_raw: list[str] = []
    kept_tokens: list[list[str]] = []
    for raw in raw_sentences:
        toks = tokenizer(raw)
        if not toks:
            continue
        key = tuple(toks)
        if key in keys_seen:
            continue
        keys_seen[key] = len(kept_raw)
        kept_raw.append(raw)
        kept_tokens.append(toks)

    n = len(kept_raw)
    if n == 0:
        return ""
    budget = min(math.ceil(config.target_ratio * n), config.max_sentences)
    if budget >= n:
        return " ".join(kept_raw)

    scores = pagerank(build_similarity_matrix(kept_tokens), config)
    # Rank descending; ties go to the earlier sentence.
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    selected = sorted(order[:budget])
    return " ".join(kept_raw[i] for i in selected)
