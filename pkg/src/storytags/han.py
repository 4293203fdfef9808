"""Hierarchical attention document encoder.

One view (a synopsis or a review summary) is encoded in two levels: a
bidirectional LSTM with attention pools each sentence's words into a sentence
vector, and a second bidirectional LSTM with attention pools the sentence
vectors into a document vector. Each sentence also gets its own tag
distribution; the attention-weighted sum of those per-sentence distributions
rides along inside the final document representation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import HierDocument


@dataclass
class AttentionMap:
    """Word/sentence attention weights for one document of one view.

    Masked positions hold exactly 0; each unmasked word row and the sentence
    vector sum to 1.
    """

    word_weights: np.ndarray  # (L, T) float64
    sentence_weights: np.ndarray  # (L,) float64
    word_mask: np.ndarray  # (L, T) bool
    sentence_mask: np.ndarray  # (L,) bool


@dataclass
class DocumentEncoding:
    """Per-document outputs of one view's encoder."""

    doc_vector: np.ndarray  # (2H + n_tags,)
    sentence_vectors: np.ndarray  # (L, 2H) word-level sentence representations
    sentence_predictions: np.ndarray  # (L, n_tags), one distribution per sentence
    mil_summary: np.ndarray  # (n_tags,) attention-weighted sum of predictions
    attention: AttentionMap


class EncoderOutput(NamedTuple):
    """Batched encoder tensors; padding rows/columns are exactly zero."""

    doc_vector: torch.Tensor  # (B, 2H + K)
    doc_context: torch.Tensor  # (B, 2H) sentence-attention context, pre-norm
    sentence_vectors: torch.Tensor  # (B, L, 2H)
    sentence_probs: torch.Tensor  # (B, L, K)
    mil_summary: torch.Tensor  # (B, K)
    word_weights: torch.Tensor  # (B, L, T)
    sentence_weights: torch.Tensor  # (B, L)


def load_embeddings(
    vocab_size: int,
    dim: int,
    path: str | Path | None = None,
    tokens: Sequence[str] | None = None,
    seed: int = 0,
    scale: float = 0.1,
) -> np.ndarray:
    """Embedding matrix: random-uniform rows, overwritten from a GloVe-format
    text file for tokens found there."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-scale, scale, size=(vocab_size, dim)).astype(np.float32)
    if path is not None:
        if tokens is None:
            raise ValueError("tokens are required to align pretrained vectors")
        index = {t: i for i, t in enumerate(tokens)}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip().split(" ")
                if len(parts) != dim + 1:
                    continue
                row = index.get(parts[0])
                if row is not None:
                    matrix[row] = np.asarray(parts[1:], dtype=np.float32)
    return matrix


class AttentionPooling(nn.Module):
    """Additive attention: weights = masked softmax of v . tanh(W s + b)."""

    def __init__(self, in_dim: int, attn_dim: int):
        super().__init__()
        self.proj = nn.Linear(in_dim, attn_dim)
        self.context = nn.Parameter(torch.empty(attn_dim).uniform_(-0.1, 0.1))

    def forward(self, states: torch.Tensor, mask: torch.Tensor):
        # states (N, T, D); mask (N, T) with at least one True per row
        if not bool(mask.any(dim=1).all()):
            raise ValueError("attention over a fully masked sequence")
        scores = torch.tanh(self.proj(states)) @ self.context
        scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=1)
        pooled = torch.bmm(weights.unsqueeze(1), states).squeeze(1)
        return pooled, weights


class DocumentEncoder(nn.Module):
    """Two-level attention encoder with a per-sentence tag head."""

    def __init__(
        self,
        vocab_size: int,
        n_tags: int,
        emb_dim: int = 300,
        hidden: int = 32,
        attn_dim: int | None = None,
        dropout: float = 0.5,
        batchnorm: bool = True,
        embedding_init: np.ndarray | None = None,
    ):
        super().__init__()
        attn_dim = attn_dim or 2 * hidden
        self.hidden = hidden
        self.n_tags = n_tags
        self.embedding = nn.Embedding(vocab_size, emb_dim)
        if embedding_init is not None:
            if embedding_init.shape != (vocab_size, emb_dim):
                raise ValueError("embedding matrix shape does not match vocabulary")
            with torch.no_grad():
                self.embedding.weight.copy_(torch.from_numpy(embedding_init))
        self.word_lstm = nn.LSTM(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.word_attn = AttentionPooling(2 * hidden, attn_dim)
        self.word_norm = nn.BatchNorm1d(2 * hidden) if batchnorm else None
        self.sent_lstm = nn.LSTM(2 * hidden, hidden, batch_first=True, bidirectional=True)
        self.sent_attn = AttentionPooling(2 * hidden, attn_dim)
        self.sent_norm = nn.BatchNorm1d(2 * hidden) if batchnorm else None
        self.tag_head = nn.Linear(2 * hidden, n_tags)
        self.dropout = nn.Dropout(dropout)

    @property
    def doc_dim(self) -> int:
        return 2 * self.hidden + self.n_tags

    def forward(
        self,
        tokens: torch.Tensor,  # (B, L, T) int64
        word_lengths: torch.Tensor,  # (B, L) int64, 0 marks padding sentences
        doc_lengths: torch.Tensor,  # (B,) int64, >= 1
    ) -> EncoderOutput:
        B, L, T = tokens.shape
        device = tokens.device
        flat_lens = word_lengths.reshape(B * L)
        real = flat_lens > 0
        if not bool(real.any()):
            raise ValueError("batch contains no sentences")
        real_tokens = tokens.reshape(B * L, T)[real]
        real_lens = flat_lens[real]

        # Word level: pack so padding never enters the recurrence.
        emb = self.embedding(real_tokens)
        packed = pack_padded_sequence(
            emb, real_lens.cpu(), batch_first=True, enforce_sorted=False
        )
        states, _ = self.word_lstm(packed)
        states, _ = pad_packed_sequence(states, batch_first=True, total_length=T)
        word_mask = torch.arange(T, device=device)[None, :] < real_lens[:, None]
        sh, w_weights = self.word_attn(states, word_mask)

        sh_proc = self.word_norm(sh) if self.word_norm is not None else sh
        sh_proc = self.dropout(sh_proc)
        sent_probs_real = torch.softmax(self.tag_head(sh_proc), dim=1)

        def scatter(values: torch.Tensor, width: int) -> torch.Tensor:
            full = values.new_zeros((B * L, width))
            full[real] = values
            return full.reshape(B, L, width)

        sent_input = scatter(sh_proc, 2 * self.hidden)
        sentence_vectors = scatter(sh, 2 * self.hidden)
        sentence_probs = scatter(sent_probs_real, self.n_tags)
        word_weights = scatter(w_weights, T)

        # Sentence level over the processed sentence vectors.
        packed = pack_padded_sequence(
            sent_input, doc_lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        g, _ = self.sent_lstm(packed)
        g, _ = pad_packed_sequence(g, batch_first=True, total_length=L)
        sent_mask = torch.arange(L, device=device)[None, :] < doc_lengths[:, None]
        doc_context, s_weights = self.sent_attn(g, sent_mask)

        mil = (s_weights.unsqueeze(-1) * sentence_probs).sum(dim=1)
        normed = self.sent_norm(doc_context) if self.sent_norm is not None else doc_context
        doc_vector = torch.cat([normed, mil], dim=1)
        return EncoderOutput(
            doc_vector=doc_vector,
            doc_context=doc_context,
            sentence_vectors=sentence_vectors,
            sentence_probs=sentence_probs,
            mil_summary=mil,
            word_weights=word_weights,
            sentence_weights=s_weights,
        )


def collate_documents(
    docs: Sequence[HierDocument], device: torch.device | str | None = None
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad a list of documents into (tokens, word_lengths, doc_lengths)."""
    if not docs:
        raise ValueError("empty batch")
    B = len(docs)
    L = max(d.n_sentences for d in docs)
    T = max(max(d.lengths) for d in docs)
    tokens = torch.zeros((B, L, T), dtype=torch.int64)
    word_lengths = torch.zeros((B, L), dtype=torch.int64)
    doc_lengths = torch.zeros(B, dtype=torch.int64)
    for b, doc in enumerate(docs):
        doc_lengths[b] = doc.n_sentences
        for i, sent in enumerate(doc.sentences):
            tokens[b, i, : len(sent)] = torch.tensor(sent, dtype=torch.int64)
            word_lengths[b, i] = len(sent)
    if device is not None:
        tokens = tokens.to(device)
        word_lengths = word_lengths.to(device)
        doc_lengths = doc_lengths.to(device)
    return tokens, word_lengths, doc_lengths


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float64)


def encoding_from_batch(
    out: EncoderOutput, index: int, doc: HierDocument
) -> DocumentEncoding:
    """Slice one document's encoding out of a batched EncoderOutput."""
    L = doc.n_sentences
    Tmax = max(doc.lengths)
    lengths = np.asarray(doc.lengths)
    word_mask = np.arange(Tmax)[None, :] < lengths[:, None]
    attention = AttentionMap(
        word_weights=_to_numpy(out.word_weights[index, :L, :Tmax]),
        sentence_weights=_to_numpy(out.sentence_weights[index, :L]),
        word_mask=word_mask,
        sentence_mask=np.ones(L, dtype=bool),
    )
    return DocumentEncoding(
        doc_vector=_to_numpy(out.doc_vector[index]),
        sentence_vectors=_to_numpy(out.sentence_vectors[index, :L]),
        sentence_predictions=_to_numpy(out.sentence_probs[index, :L]),
        mil_summary=_to_numpy(out.mil_summary[index]),
        attention=attention,
    )
