"""Multi-view tag prediction: combine synopsis and review encodings.

Four modes:
  synopsis  - single encoder over the synopsis only
  merge     - single encoder over the synopsis concatenated with the summary
  concat    - two encoders, representations concatenated
  gated     - two encoders blended by a learned sigmoid gate
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import HierDocument
from .han import (
    DocumentEncoder,
    DocumentEncoding,
    EncoderOutput,
    collate_documents,
    encoding_from_batch,
)

MODES = ("synopsis", "merge", "concat", "gated")
TWO_VIEW_MODES = ("concat", "gated")


@dataclass
class ModelOutput:
    """Per-movie prediction bundle."""

    tag_distribution: np.ndarray  # (n_tags,), sums to 1
    synopsis_encoding: DocumentEncoding
    review_encoding: DocumentEncoding | None
    gate: np.ndarray | None  # (fusion_dim,) in (0, 1), gated mode only
    mode: str


class ForwardOutput(NamedTuple):
    probs: torch.Tensor  # (B, K)
    logits: torch.Tensor  # (B, K)
    gate: torch.Tensor | None  # (B, F)
    synopsis: EncoderOutput
    review: EncoderOutput | None


def fuse_concat(d_ps: torch.Tensor, d_r: torch.Tensor) -> torch.Tensor:
    """[d_ps, d_r] along the feature axis."""
    return torch.cat([d_ps, d_r], dim=-1)


class GatedFusion(nn.Module):
    """h = z * tanh(W_ps d_ps) + (1 - z) * tanh(W_r d_r), z = sigmoid(W_z [d_ps, d_r])."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.syn_proj = nn.Linear(in_dim, out_dim, bias=False)
        self.rev_proj = nn.Linear(in_dim, out_dim, bias=False)
        self.gate_proj = nn.Linear(2 * in_dim, out_dim, bias=False)

    def forward(self, d_ps: torch.Tensor, d_r: torch.Tensor):
        h_ps = torch.tanh(self.syn_proj(d_ps))
        h_r = torch.tanh(self.rev_proj(d_r))
        z = torch.sigmoid(self.gate_proj(torch.cat([d_ps, d_r], dim=-1)))
        return z * h_ps + (1.0 - z) * h_r, z


def fuse_gated(d_ps: torch.Tensor, d_r: torch.Tensor, fusion: GatedFusion):
    """Functional form of GatedFusion.forward."""
    return fusion(d_ps, d_r)


class MultiViewTagger(nn.Module):
    """Complete tagger: view encoders, fusion, softmax output layer."""

    def __init__(
        self,
        vocab_size: int,
        n_tags: int,
        emb_dim: int = 300,
        hidden: int = 32,
        attn_dim: int | None = None,
        dropout: float = 0.5,
        batchnorm: bool = True,
        mode: str = "gated",
        fusion_dim: int | None = None,
        embedding_init: np.ndarray | None = None,
    ):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.n_tags = n_tags
        encoder_args = dict(
            vocab_size=vocab_size,
            n_tags=n_tags,
            emb_dim=emb_dim,
            hidden=hidden,
            attn_dim=attn_dim,
            dropout=dropout,
            batchnorm=batchnorm,
        )
        self.synopsis_encoder = DocumentEncoder(embedding_init=embedding_init, **encoder_args)
        doc_dim = self.synopsis_encoder.doc_dim
        self.review_encoder = None
        self.fusion = None
        if mode in TWO_VIEW_MODES:
            self.review_encoder = DocumentEncoder(embedding_init=embedding_init, **encoder_args)
        if mode == "gated":
            self.fusion_dim = fusion_dim or 2 * hidden
            self.fusion = GatedFusion(doc_dim, self.fusion_dim)
            out_in = self.fusion_dim
        elif mode == "concat":
            out_in = 2 * doc_dim
        else:
            out_in = doc_dim
        self.out_dropout = nn.Dropout(dropout)
        self.output = nn.Linear(out_in, n_tags)

    def forward(self, synopsis_batch, review_batch=None) -> ForwardOutput:
        syn = self.synopsis_encoder(*synopsis_batch)
        rev = None
        gate = None
        if self.mode in TWO_VIEW_MODES:
            if review_batch is None:
                raise ValueError(f"mode {self.mode!r} requires a review batch")
            rev = self.review_encoder(*review_batch)
            if self.mode == "concat":
                fused = fuse_concat(syn.doc_vector, rev.doc_vector)
            else:
                fused, gate = self.fusion(syn.doc_vector, rev.doc_vector)
        else:
            fused = syn.doc_vector
        logits = self.output(self.out_dropout(fused))
        probs = torch.softmax(logits, dim=-1)
        return ForwardOutput(probs=probs, logits=logits, gate=gate, synopsis=syn, review=rev)


def predict(
    model: MultiViewTagger,
    synopsis_docs: Sequence[HierDocument],
    review_docs: Sequence[HierDocument] | None = None,
    batch_size: int = 32,
    device: torch.device | str | None = None,
) -> list[ModelOutput]:
    """Deterministic inference: eval mode (running batch-norm statistics,
    no dropout), one ModelOutput per document."""
    needs_reviews = model.mode in TWO_VIEW_MODES
    if needs_reviews:
        if review_docs is None:
            raise ValueError(f"mode {model.mode!r} requires review documents")
        if len(review_docs) != len(synopsis_docs):
            raise ValueError("synopsis/review document counts differ")
    model.eval()
    outputs: list[ModelOutput] = []
    with torch.no_grad():
        for start in range(0, len(synopsis_docs), batch_size):
            syn_chunk = synopsis_docs[start : start + batch_size]
            syn_batch = collate_documents(syn_chunk, device)
            rev_batch = None
            rev_chunk = None
            if needs_reviews:
                rev_chunk = review_docs[start : start + batch_size]
                rev_batch = collate_documents(rev_chunk, device)
            out = model(syn_batch, rev_batch)
            for i, doc in enumerate(syn_chunk):
                outputs.append(
                    ModelOutput(
                        tag_distribution=out.probs[i].cpu().numpy().astype(np.float64),
                        synopsis_encoding=encoding_from_batch(out.synopsis, i, doc),
                        review_encoding=(
                            encoding_from_batch(out.review, i, rev_chunk[i])
                            if out.review is not None
                            else None
                        ),
                        gate=(
                            out.gate[i].cpu().numpy().astype(np.float64)
                            if out.gate is not None
                            else None
                        ),
                        mode=model.mode,
                    )
                )
    return outputs


def gate_activation_stats(
    outputs: Sequence[ModelOutput],
    gold_sets: Sequence[set[str]] | None = None,
    tag: str | None = None,
) -> dict[str, float]:
    """Fraction of gate components favoring each view, pooled over instances.

    A component counts for the synopsis side when z > 0.5 and for the review
    side otherwise. ``tag`` filters to instances whose gold set contains it.
    """
    if tag is not None and gold_sets is None:
        raise ValueError("filtering by tag requires gold tag sets")
    selected = []
    for i, out in enumerate(outputs):
        if out.gate is None:
            raise ValueError("gate statistics require gated-mode outputs")
        if tag is not None and tag not in gold_sets[i]:
            continue
        selected.append(out.gate)
    if not selected:
        raise ValueError(f"no instances match tag {tag!r}")
    gates = np.concatenate(selected)
    synopsis_side = float(np.mean(gates > 0.5))
    return {
        "synopsis": 100.0 * synopsis_side,
        "review": 100.0 * (1.0 - synopsis_side),
        "n_instances": len(selected),
    }
