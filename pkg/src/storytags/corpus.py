"""Corpus loading, normalization, vocabularies, and document indexing.

The corpus file is line-delimited JSON, one movie per line with fields
``id``, ``synopsis``, ``reviews``, ``tags``, ``split``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SPLITS = ("train", "val", "test")

UNK_TOKEN = "<unk>"
NUM_TOKEN = "cc"
UNK_ID = 0
NUM_ID = 1

DEFAULT_SYNOPSIS_CAPS = (50, 25)
DEFAULT_SUMMARY_CAPS = (120, 30)

# Words (with internal apostrophes), number-like tokens, or single punctuation
# marks. Number-like means digits possibly joined by digit punctuation
# ("1,945", "3.5", "01/02/03"); those are collapsed to NUM_TOKEN.
_NUM_RE = r"\d+(?:[.,:\-/]\d+)*"
_WORD_RE = r"[^\W\d_]+(?:['’][^\W\d_]+)*"
_PUNCT_RE = r"[^\w\s]"
_TOKEN_RE = re.compile(f"({_NUM_RE})|({_WORD_RE})|({_PUNCT_RE})", re.UNICODE)

# Tokens that end with a period without terminating a sentence.
_ABBREVIATIONS = frozenset(
    """mr mrs ms dr prof sr jr st vs etc inc ltd co corp capt col gen lt sgt
    maj rev hon fr gov sen rep pres supt det mt ft no op vol approx dept
    e.g i.e a.m p.m u.s u.k a.k.a ph.d""".split()
)

_SENT_BOUNDARY = re.compile(r"([.!?]+)([\"'”’)\]]*)\s+(?=[\"'“‘(\[]?[A-Z])")


class CorpusError(Exception):
    """Raised for unrecoverable corpus-level failures."""


@dataclass
class MovieRecord:
    """One corpus instance: synopsis, raw reviews, gold tags, split."""

    id: str
    synopsis: str
    reviews: list[str]
    gold_tags: set[str]
    split: str

    def __post_init__(self):
        if not self.gold_tags:
            raise ValueError(f"record {self.id!r} has no gold tags")
        if self.split not in SPLITS:
            raise ValueError(f"record {self.id!r} has unknown split {self.split!r}")


@dataclass
class LoadReport:
    """Accounting of a corpus load: accepted count plus per-line rejections."""

    loaded: int = 0
    rejections: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_rejected(self) -> int:
        return len(self.rejections)


@dataclass
class LoadResult:
    records: list[MovieRecord]
    report: LoadReport


def normalize_text(text: str) -> list[str]:
    """Lowercase and tokenize; number-like tokens become NUM_TOKEN."""
    tokens = []
    for m in _TOKEN_RE.finditer(text.lower()):
        if m.group(1):
            tokens.append(NUM_TOKEN)
        else:
            tokens.append(m.group(0))
    return tokens


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence splitter.

    Splits at terminal punctuation followed by whitespace and a capital
    (optionally quoted), unless the preceding token is a known abbreviation
    or a single-letter initial.
    """
    pieces = []
    start = 0
    for m in _SENT_BOUNDARY.finditer(text):
        before = text[start : m.start()].rstrip()
        last = before.split()[-1].lower() if before.split() else ""
        last = last.strip("\"'“”‘’()[]")
        if last in _ABBREVIATIONS or (len(last) == 1 and last.isalpha()):
            continue
        pieces.append(text[start : m.end(2)])
        start = m.end()
    pieces.append(text[start:])
    return [p.strip() for p in pieces if p.strip()]


class TokenVocabulary:
    """Bijective token -> id map with reserved UNK and number-token ids."""

    def __init__(self, tokens: Sequence[str], min_doc_freq: int = 10):
        tokens = list(tokens)
        if tokens[:2] != [UNK_TOKEN, NUM_TOKEN]:
            raise ValueError("ids 0 and 1 are reserved for UNK and the number token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}
        self.min_doc_freq = min_doc_freq

    @classmethod
    def from_documents(
        cls, documents: Iterable[Sequence[str]], min_doc_freq: int = 10
    ) -> "TokenVocabulary":
        """Keep tokens appearing in at least ``min_doc_freq`` documents.

        Order: descending document frequency, ties alphabetical.
        """
        df: dict[str, int] = {}
        n_docs = 0
        for doc in documents:
            n_docs += 1
            for tok in set(doc):
                df[tok] = df.get(tok, 0) + 1
        if n_docs == 0:
            raise ValueError("cannot build a vocabulary from zero documents")
        df.pop(UNK_TOKEN, None)
        df.pop(NUM_TOKEN, None)
        kept = sorted(
            (t for t, c in df.items() if c >= min_doc_freq),
            key=lambda t: (-df[t], t),
        )
        return cls([UNK_TOKEN, NUM_TOKEN] + kept, min_doc_freq)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def lookup(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._index.get(t, UNK_ID) for t in tokens]

    def id_to_token(self, idx: int) -> str:
        return self._tokens[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, min_doc_freq: int = 10) -> "TokenVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines, min_doc_freq)


class TagVocabulary:
    """Fixed, ordered closed tagset (71 labels on the full corpus)."""

    def __init__(self, tags: Sequence[str]):
        tags = list(tags)
        if len(set(tags)) != len(tags):
            raise ValueError("tag vocabulary contains duplicates")
        self.tags = tags
        self.index = {t: i for i, t in enumerate(tags)}

    @classmethod
    def from_records(cls, records: Iterable[MovieRecord]) -> "TagVocabulary":
        tags = sorted({t for r in records for t in r.gold_tags})
        if not tags:
            raise ValueError("no tags found in records")
        return cls(tags)

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.index

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tags) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TagVocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class HierDocument:
    """A document as sentences of token ids, truncated to ``caps``."""

    sentences: list[list[int]]
    lengths: list[int]
    caps: tuple[int, int]

    def __post_init__(self):
        max_sentences, max_words = self.caps
        if len(self.sentences) > max_sentences:
            raise ValueError("sentence count exceeds cap")
        if any(n < 1 or n > max_words for n in self.lengths):
            raise ValueError("sentence length outside [1, max_words]")
        if [len(s) for s in self.sentences] != self.lengths:
            raise ValueError("lengths do not match sentences")

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)


def load_dataset(path: str | Path) -> LoadResult:
    """Load the line-delimited corpus; invalid records are counted, not fatal."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    records: list[MovieRecord] = []
    report = LoadReport()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                report.rejections.append((lineno, f"malformed line: {exc.msg}"))
                continue
            missing = [k for k in ("id", "synopsis", "reviews", "tags", "split") if k not in raw]
            if missing:
                report.rejections.append((lineno, f"missing fields: {', '.join(missing)}"))
                continue
            try:
                record = MovieRecord(
                    id=str(raw["id"]),
                    synopsis=str(raw["synopsis"]),
                    reviews=[str(r) for r in raw["reviews"]],
                    gold_tags=set(map(str, raw["tags"])),
                    split=str(raw["split"]),
                )
            except (TypeError, ValueError) as exc:
                report.rejections.append((lineno, str(exc)))
                continue
            records.append(record)
            report.loaded += 1
    return LoadResult(records, report)


def build_token_vocab(
    records: Iterable[MovieRecord],
    summaries: Mapping[str, str] | None = None,
    min_doc_freq: int = 10,
) -> TokenVocabulary:
    """Vocabulary from train-split synopses plus their review summaries."""
    train = [r for r in records if r.split == "train"]
    if not train:
        raise ValueError("no training records to build a vocabulary from")
    documents = [normalize_text(r.synopsis) for r in train]
    if summaries:
        for r in train:
            summary = summaries.get(r.id, "")
            if summary:
                documents.append(normalize_text(summary))
    return TokenVocabulary.from_documents(documents, min_doc_freq)


def segment_tokens(text: str, caps: tuple[int, int] | None) -> list[list[str]]:
    """Sentence-split, normalize, and truncate; empty sentences dropped."""
    sentence_tokens = []
    for sent in split_sentences(text):
        toks = normalize_text(sent)
        if toks:
            sentence_tokens.append(toks)
    if caps is not None:
        max_sentences, max_words = caps
        sentence_tokens = [s[:max_words] for s in sentence_tokens[:max_sentences]]
    return sentence_tokens


def segment_with_tokens(
    text: str, vocab: TokenVocabulary, caps: tuple[int, int]
) -> tuple[HierDocument, list[list[str]]]:
    """Index text, also returning the aligned token strings per sentence.

    A textless input becomes a single UNK sentence so the encoder always sees
    a non-empty document.
    """
    if caps[0] < 1 or caps[1] < 1:
        raise ValueError("caps must be positive")
    sentence_tokens = segment_tokens(text, caps)
    if not sentence_tokens:
        sentence_tokens = [[UNK_TOKEN]]
    sentences = [vocab.encode(toks) for toks in sentence_tokens]
    doc = HierDocument(sentences, [len(s) for s in sentences], caps)
    return doc, sentence_tokens


def segment_and_index(
    text: str, vocab: TokenVocabulary, caps: tuple[int, int]
) -> HierDocument:
    """Index text into a HierDocument; a textless input becomes one UNK sentence."""
    return segment_with_tokens(text, vocab, caps)[0]


def encode_labels(gold_tags: Iterable[str], tagvocab: TagVocabulary) -> np.ndarray:
    """Uniform target distribution over the gold tags."""
    gold = set(gold_tags)
    if not gold:
        raise ValueError("empty gold tag set")
    unknown = gold - set(tagvocab.tags)
    if unknown:
        raise ValueError(f"tags outside the vocabulary: {sorted(unknown)}")
    target = np.zeros(len(tagvocab), dtype=np.float64)
    mass = 1.0 / len(gold)
    for tag in gold:
        target[tagvocab.index[tag]] = mass
    return target


@dataclass
class SplitStats:
    instances: int
    tags_per_instance: float
    reviews_per_movie: float
    synopsis_sentences_per_doc: float
    synopsis_words_per_sentence: float
    summary_sentences_per_doc: float | None = None
    summary_words_per_sentence: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _doc_shape(texts: list[str]) -> tuple[float, float]:
    """Mean sentences per document and mean words per sentence, uncapped."""
    n_sents = []
    word_counts = []
    for text in texts:
        sents = segment_tokens(text, None)
        n_sents.append(len(sents))
        word_counts.extend(len(s) for s in sents)
    sent_mean = float(np.mean(n_sents)) if n_sents else 0.0
    word_mean = float(np.mean(word_counts)) if word_counts else 0.0
    return sent_mean, word_mean


def dataset_stats(
    records: Iterable[MovieRecord], summaries: Mapping[str, str] | None = None
) -> dict[str, SplitStats]:
    """Per-split corpus statistics (counts and document-shape means)."""
    by_split: dict[str, list[MovieRecord]] = {s: [] for s in SPLITS}
    for r in records:
        by_split[r.split].append(r)
    out: dict[str, SplitStats] = {}
    for split, recs in by_split.items():
        if not recs:
            continue
        syn_sents, syn_words = _doc_shape([r.synopsis for r in recs])
        stats = SplitStats(
            instances=len(recs),
            tags_per_instance=float(np.mean([len(r.gold_tags) for r in recs])),
            reviews_per_movie=float(np.mean([len(r.reviews) for r in recs])),
            synopsis_sentences_per_doc=syn_sents,
            synopsis_words_per_sentence=syn_words,
        )
        if summaries is not None:
            sum_sents, sum_words = _doc_shape([summaries.get(r.id, "") for r in recs])
            stats.summary_sentences_per_doc = sum_sents
            stats.summary_words_per_sentence = sum_words
        out[split] = stats
    return out


def merge_views_text(synopsis: str, summary: str) -> str:
    """Single-document text for the merge-texts mode."""
    summary = summary.strip()
    if not summary:
        return synopsis
    return synopsis.rstrip() + " " + summary


def merged_caps(
    synopsis_caps: tuple[int, int], summary_caps: tuple[int, int]
) -> tuple[int, int]:
    """Caps for merged documents: sentence caps add, word caps take the max."""
    return (
        synopsis_caps[0] + summary_caps[0],
        max(synopsis_caps[1], summary_caps[1]),
    )
