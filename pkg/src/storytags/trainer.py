"""Supervised training of the multi-view tagger and checkpoint persistence."""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import (
    DEFAULT_SUMMARY_CAPS,
    DEFAULT_SYNOPSIS_CAPS,
    HierDocument,
    MovieRecord,
    TagVocabulary,
    TokenVocabulary,
    build_token_vocab,
    encode_labels,
    merge_views_text,
    merged_caps,
    segment_and_index,
)
from .evaluator import micro_f1, tags_learned, top_k
from .fusion import TWO_VIEW_MODES, MODES, MultiViewTagger, predict
from .han import collate_documents, load_embeddings

CHECKPOINT_MAGIC = b"STGC"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


class CheckpointError(Exception):
    """Raised for unreadable or incompatible checkpoint files."""


@dataclass
class TrainingConfig:
    epochs: int = 50
    learning_rate: float = 0.2
    momentum: float = 0.9
    l2_lambda: float = 0.15
    dropout: float = 0.5
    batch_size: int = 32
    seed: int = 13
    mode: str = "gated"
    emb_dim: int = 300
    hidden: int = 32
    attn_dim: int | None = None
    fusion_dim: int | None = None
    batchnorm: bool = True
    min_doc_freq: int = 10
    synopsis_caps: tuple[int, int] = DEFAULT_SYNOPSIS_CAPS
    summary_caps: tuple[int, int] = DEFAULT_SUMMARY_CAPS
    max_steps: int | None = None
    embeddings_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("learning_rate", "l2_lambda", "dropout", "momentum"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.synopsis_caps = tuple(self.synopsis_caps)
        self.summary_caps = tuple(self.summary_caps)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["synopsis_caps"] = list(self.synopsis_caps)
        d["summary_caps"] = list(self.summary_caps)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**dict(d))


@dataclass
class Checkpoint:
    """Frozen training artifact: parameters, vocabularies, config, history."""

    config: dict
    tags: list[str]
    tokens: list[str]
    params: dict[str, np.ndarray]
    epoch: int
    history: list[dict] = field(default_factory=list)


def kl_loss(predicted, target):
    """KL(target || predicted) with 0 log 0 = 0 and predictions clamped at 1e-12.

    Accepts single distributions or batches; batches reduce by the mean.
    Torch inputs stay in the graph, anything else returns a float.
    """
    if isinstance(predicted, torch.Tensor):
        target = torch.as_tensor(target, dtype=predicted.dtype, device=predicted.device)
        p = predicted.clamp_min(1e-12)
        terms = torch.where(
            target > 0, target * (torch.log(target.clamp_min(1e-12)) - torch.log(p)),
            torch.zeros((), dtype=predicted.dtype, device=predicted.device),
        )
        per_instance = terms.sum(dim=-1)
        return per_instance.mean()
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.maximum(predicted, 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(target > 0, target * (np.log(np.maximum(target, 1e-12)) - np.log(p)), 0.0)
    return float(terms.sum(axis=-1).mean())


def l2_parameters(model: nn.Module) -> list[nn.Parameter]:
    """Weights subject to l2: everything except biases and batch-norm params."""
    params = []
    for module in model.modules():
        if isinstance(module, nn.modules.batchnorm._BatchNorm):
            continue
        for name, p in module.named_parameters(recurse=False):
            if name.endswith("bias"):
                continue
            params.append(p)
    return params


def l2_penalty(model: nn.Module) -> torch.Tensor:
    total = torch.zeros((), dtype=next(model.parameters()).dtype)
    for p in l2_parameters(model):
        total = total + p.pow(2).sum()
    return total


@dataclass
class PreparedData:
    synopsis_docs: list[HierDocument]
    review_docs: list[HierDocument] | None
    targets: np.ndarray  # (N, K)
    golds: list[set[str]]
    ids: list[str]


def prepare_documents(
    records: Sequence[MovieRecord],
    summaries: Mapping[str, str],
    vocab: TokenVocabulary,
    tagvocab: TagVocabulary,
    config: TrainingConfig,
) -> PreparedData:
    """Index one split's documents for the configured mode."""
    syn_docs: list[HierDocument] = []
    rev_docs: list[HierDocument] | None = (
        [] if config.mode in TWO_VIEW_MODES else None
    )
    targets = np.zeros((len(records), len(tagvocab)), dtype=np.float64)
    golds: list[set[str]] = []
    ids: list[str] = []
    caps_merged = merged_caps(config.synopsis_caps, config.summary_caps)
    for i, rec in enumerate(records):
        summary = summaries.get(rec.id, "")
        if config.mode == "merge":
            text = merge_views_text(rec.synopsis, summary)
            syn_docs.append(segment_and_index(text, vocab, caps_merged))
        else:
            syn_docs.append(segment_and_index(rec.synopsis, vocab, config.synopsis_caps))
        if rev_docs is not None:
            rev_docs.append(segment_and_index(summary, vocab, config.summary_caps))
        targets[i] = encode_labels(rec.gold_tags, tagvocab)
        golds.append(set(rec.gold_tags))
        ids.append(rec.id)
    return PreparedData(syn_docs, rev_docs, targets, golds, ids)


def build_model(
    config: TrainingConfig, vocab: TokenVocabulary, tagvocab: TagVocabulary
) -> MultiViewTagger:
    embedding = load_embeddings(
        len(vocab),
        config.emb_dim,
        path=config.embeddings_path,
        tokens=vocab.tokens,
        seed=config.seed,
    )
    return MultiViewTagger(
        vocab_size=len(vocab),
        n_tags=len(tagvocab),
        emb_dim=config.emb_dim,
        hidden=config.hidden,
        attn_dim=config.attn_dim,
        dropout=config.dropout,
        batchnorm=config.batchnorm,
        mode=config.mode,
        fusion_dim=config.fusion_dim,
        embedding_init=embedding,
    )


def _bucketed_batches(
    docs: Sequence[HierDocument], batch_size: int
) -> list[list[int]]:
    """Batches of indices bucketed by sentence count to limit padding."""
    order = sorted(range(len(docs)), key=lambda i: (docs[i].n_sentences, i))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _state_to_numpy(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def validate_f1(
    model: MultiViewTagger, data: PreparedData, tagvocab: TagVocabulary, k: int = 3,
    batch_size: int = 64,
) -> tuple[float, int]:
    outputs = predict(model, data.synopsis_docs, data.review_docs, batch_size=batch_size)
    preds = [
        {tagvocab.tags[j] for j in top_k(o.tag_distribution, k)} for o in outputs
    ]
    return micro_f1(preds, data.golds), tags_learned(preds)


def train(
    records: Sequence[MovieRecord],
    summaries: Mapping[str, str],
    config: TrainingConfig,
    vocab: TokenVocabulary | None = None,
    tagvocab: TagVocabulary | None = None,
    log_path: str | Path | None = None,
    resume_from: Checkpoint | None = None,
) -> Checkpoint:
    """Train with momentum SGD on mean KL plus an l2 penalty on weights.

    The checkpoint with the best validation micro-F1@3 is returned (the final
    epoch when there is no validation split). Fully deterministic for a fixed
    seed.
    """
    torch.manual_seed(config.seed)
    shuffle_rng = np.random.default_rng(config.seed)

    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "val"]
    if not train_records:
        raise ValueError("no training records")
    if vocab is None:
        vocab = build_token_vocab(records, summaries, config.min_doc_freq)
    if tagvocab is None:
        tagvocab = TagVocabulary.from_records(records)

    train_data = prepare_documents(train_records, summaries, vocab, tagvocab, config)
    val_data = (
        prepare_documents(val_records, summaries, vocab, tagvocab, config)
        if val_records
        else None
    )

    model = build_model(config, vocab, tagvocab)
    start_epoch = 0
    history: list[dict] = []
    if resume_from is not None:
        _load_state(model, resume_from.params)
        start_epoch = resume_from.epoch
        history = list(resume_from.history)

    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.learning_rate, momentum=config.momentum
    )
    batches = _bucketed_batches(train_data.synopsis_docs, config.batch_size)

    best_state = _state_to_numpy(model)
    best_f1 = -1.0
    best_epoch = start_epoch
    steps = 0
    log_lines: list[str] = []
    stop = False
    for epoch in range(start_epoch, config.epochs):
        t0 = time.monotonic()
        model.train()
        order = shuffle_rng.permutation(len(batches))
        losses = []
        for batch_no in order:
            idx = batches[batch_no]
            syn_batch = collate_documents([train_data.synopsis_docs[i] for i in idx])
            rev_batch = (
                collate_documents([train_data.review_docs[i] for i in idx])
                if train_data.review_docs is not None
                else None
            )
            target = torch.from_numpy(train_data.targets[idx]).to(torch.float32)
            out = model(syn_batch, rev_batch)
            loss = kl_loss(out.probs, target)
            if config.l2_lambda > 0:
                loss = loss + config.l2_lambda * l2_penalty(model)
            if not torch.isfinite(loss):
                norm = float(
                    torch.sqrt(sum(p.pow(2).sum() for p in model.parameters()))
                )
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {int(batch_no)} "
                    f"(parameter norm {norm:.4g})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss))
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                stop = True
                break

        entry = {
            "epoch": epoch + 1,
            "train_loss": float(np.mean(losses)) if losses else None,
            "steps": steps,
        }
        if val_data is not None:
            f1, tl = validate_f1(model, val_data, tagvocab, k=3)
            entry["val_f1_at_3"] = f1
            entry["val_tl_at_3"] = tl
            if f1 > best_f1:
                best_f1 = f1
                best_state = _state_to_numpy(model)
                best_epoch = epoch + 1
        else:
            best_state = _state_to_numpy(model)
            best_epoch = epoch + 1
        entry["wall_time"] = time.monotonic() - t0
        history.append(entry)
        log_lines.append(json.dumps(entry, sort_keys=True))
        if stop:
            break

    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            for line in log_lines:
                fh.write(line + "\n")

    return Checkpoint(
        config=config.as_dict(),
        tags=list(tagvocab.tags),
        tokens=vocab.tokens,
        params=best_state,
        epoch=best_epoch,
        history=history,
    )


def _load_state(model: nn.Module, params: Mapping[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in params.items()}
    model.load_state_dict(state)


def model_from_checkpoint(
    ckpt: Checkpoint,
) -> tuple[MultiViewTagger, TokenVocabulary, TagVocabulary, TrainingConfig]:
    """Rebuild a frozen model (eval mode) from a checkpoint."""
    config = TrainingConfig.from_dict(ckpt.config)
    vocab = TokenVocabulary(ckpt.tokens, config.min_doc_freq)
    tagvocab = TagVocabulary(ckpt.tags)
    model = MultiViewTagger(
        vocab_size=len(vocab),
        n_tags=len(tagvocab),
        emb_dim=config.emb_dim,
        hidden=config.hidden,
        attn_dim=config.attn_dim,
        dropout=config.dropout,
        batchnorm=config.batchnorm,
        mode=config.mode,
        fusion_dim=config.fusion_dim,
    )
    _load_state(model, ckpt.params)
    model.eval()
    return model, vocab, tagvocab, config


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Versioned binary container; identical checkpoints produce identical bytes."""
    names = sorted(ckpt.params)
    manifest = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        manifest.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
    header = {
        "config": ckpt.config,
        "tags": ckpt.tags,
        "tokens": ckpt.tokens,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(ckpt.params[n]).astype(m["dtype"], copy=False).tobytes()
        for n, m in zip(names, manifest)
    )
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", data[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} is not supported "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    header_len = struct.unpack("<Q", data[8:16])[0]
    if len(data) < 16 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    params: dict[str, np.ndarray] = {}
    offset = 16 + header_len
    for m in header["params"]:
        dtype = np.dtype(m["dtype"])
        count = int(np.prod(m["shape"])) if m["shape"] else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated parameter payload")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy()
        params[m["name"]] = arr.reshape(m["shape"])
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after parameter payload")
    return Checkpoint(
        config=header["config"],
        tags=header["tags"],
        tokens=header["tokens"],
        params=params,
        epoch=header["epoch"],
        history=header["history"],
    )
