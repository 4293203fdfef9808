"""Open-vocabulary tag mining from review attention weights.

Each review word gets an importance score: its word attention times its
sentence's attention times the sentence's true length (the length factor
offsets the higher word weights shorter sentences get). Sorted scores form a
falling curve; candidates are the words before the point where the curve's
slope flattens out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import NUM_TOKEN, UNK_TOKEN, HierDocument, TagVocabulary, TokenVocabulary
from .fusion import ModelOutput
from .han import AttentionMap
from .stopwords import ENGLISH_STOPWORDS

SLOPE_THRESHOLD = 5e-3


@dataclass
class ScoredCandidate:
    token: str
    gamma: float
    sentence_index: int
    word_index: int


@dataclass
class MinedTagset:
    """Distinct complementary tags in descending score order, with provenance."""

    tags: list[str] = field(default_factory=list)
    provenance: dict[str, ScoredCandidate] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tags)


def importance_scores(
    attention: AttentionMap, doc: HierDocument, vocab: TokenVocabulary
) -> list[ScoredCandidate]:
    """One candidate per real word position, scored alpha_w * alpha_s * |s|."""
    L = doc.n_sentences
    if attention.word_weights.shape[0] != L or attention.sentence_weights.shape[0] != L:
        raise ValueError("attention map does not match document sentence count")
    if attention.word_weights.shape[1] < max(doc.lengths):
        raise ValueError("attention map is narrower than the longest sentence")
    expected_mask = (
        np.arange(attention.word_weights.shape[1])[None, :]
        < np.asarray(doc.lengths)[:, None]
    )
    if attention.word_mask.shape != expected_mask.shape or not np.array_equal(
        attention.word_mask, expected_mask
    ):
        raise ValueError("attention mask does not match document lengths")

    lengths = np.asarray(doc.lengths, dtype=np.float64)
    gamma = (attention.word_weights * attention.sentence_weights[:, None]) * lengths[:, None]
    candidates: list[ScoredCandidate] = []
    for i in range(L):
        sentence = doc.sentences[i]
        for j in range(doc.lengths[i]):
            candidates.append(
                ScoredCandidate(
                    token=vocab.id_to_token(sentence[j]),
                    gamma=float(gamma[i, j]),
                    sentence_index=i,
                    word_index=j,
                )
            )
    return candidates


def cutoff_index(sorted_scores: Sequence[float], threshold: float = SLOPE_THRESHOLD) -> int:
    """Candidate count: first position where the score curve goes flat.

    The derivative at position p is the least-squares slope over the five
    points p-2 .. p+2; the cutoff is the smallest p with |slope| below the
    threshold. Lists shorter than 5 keep everything, and a curve that never
    flattens keeps everything.
    """
    y = np.asarray(sorted_scores, dtype=np.float64)
    n = y.shape[0]
    if np.any(np.diff(y) > 0):
        raise ValueError("scores must be sorted in descending order")
    if n < 5:
        return n
    for p in range(2, n - 2):
        slope = (-2.0 * y[p - 2] - y[p - 1] + y[p + 1] + 2.0 * y[p + 2]) / 10.0
        if abs(slope) < threshold:
            return p
    return n


def _is_punctuation(token: str) -> bool:
    return not any(ch.isalnum() for ch in token)


def mine_tags(
    output: ModelOutput,
    review_doc: HierDocument,
    vocab: TokenVocabulary,
    tagvocab: TagVocabulary,
    stoplist: frozenset[str] | set[str] | None = None,
    threshold: float = SLOPE_THRESHOLD,
) -> MinedTagset:
    """Score, cut off, filter, and dedupe review words into complementary tags.

    Tags already in the closed tagset never appear. A review view holding no
    usable words yields an empty tagset.
    """
    if output.review_encoding is None:
        raise ValueError("complementary tags require the review view")
    if stoplist is None:
        stoplist = ENGLISH_STOPWORDS
    candidates = importance_scores(output.review_encoding.attention, review_doc, vocab)
    candidates.sort(key=lambda c: (-c.gamma, c.sentence_index, c.word_index))
    k = cutoff_index([c.gamma for c in candidates], threshold)

    mined = MinedTagset()
    for cand in candidates[:k]:
        token = cand.token
        if token in (UNK_TOKEN, NUM_TOKEN):
            continue
        if _is_punctuation(token) or token in stoplist:
            continue
        if token in tagvocab:
            continue
        if token in mined.provenance:
            continue
        mined.tags.append(token)
        mined.provenance[token] = cand
    return mined
