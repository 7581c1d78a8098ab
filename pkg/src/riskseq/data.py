"""Corpus ingestion, vocabulary construction, batching, and synthetic
desk-scale translation tasks (copy, reverse, lexicon)."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import EOS, PAD, RESERVED_TOKENS, UNK

__all__ = [
    "DataError",
    "Vocab",
    "SentencePair",
    "Corpus",
    "Batch",
    "build_vocab",
    "load_parallel",
    "gen_synthetic",
    "synthetic_vocab",
    "apply_lexicon",
    "make_batches",
    "unbatch",
    "read_token_lines",
]

log = logging.getLogger(__name__)


class DataError(Exception):
    pass


class Vocab:
    """token <-> id bijection with the four reserved ids fixed up front."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise DataError("vocab must start with the reserved tokens")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate token in vocab")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.index.get(w, UNK) for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


@dataclass
class SentencePair:
    src: list[int]
    tgt: list[int]  # EOS-terminated


@dataclass
class Corpus:
    name: str
    pairs: list[SentencePair]
    # per sentence: 1..R reference id sequences, reserved ids stripped
    references: list[list[tuple[int, ...]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class Batch:
    src: np.ndarray       # (B, max src len), PAD-padded
    tgt: np.ndarray       # (B, max tgt len), PAD-padded
    src_lens: list[int]
    tgt_lens: list[int]


def read_token_lines(path: str) -> list[list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def build_vocab(
    files: Sequence[str], max_size: int, lowercase: bool = False
) -> Vocab:
    """Most frequent tokens kept (ties lexicographic), remainder map to UNK."""
    if max_size < len(RESERVED_TOKENS):
        raise DataError(
            f"max vocab size {max_size} below reserved count {len(RESERVED_TOKENS)}"
        )
    counts: Counter = Counter()
    for path in files:
        for words in read_token_lines(path):
            if lowercase:
                words = [w.lower() for w in words]
            counts.update(words)
    if not counts:
        raise DataError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED_TOKENS)]]
    return Vocab(list(RESERVED_TOKENS) + keep)


def load_parallel(
    src_file: str,
    tgt_file: str,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    max_len: int,
    name: str = "corpus",
    lowercase: bool = False,
) -> Corpus:
    """Aligned parallel text -> Corpus. Targets get EOS appended; pairs with
    either side longer than max_len are filtered (count logged)."""
    src_lines = read_token_lines(src_file)
    tgt_lines = read_token_lines(tgt_file)
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"line-count mismatch: {len(src_lines)} source lines "
            f"vs {len(tgt_lines)} target lines"
        )
    pairs = []
    references = []
    filtered = 0
    for src_words, tgt_words in zip(src_lines, tgt_lines):
        if lowercase:
            src_words = [w.lower() for w in src_words]
            tgt_words = [w.lower() for w in tgt_words]
        if not src_words or not tgt_words:
            raise DataError("empty sentence in parallel corpus")
        if len(src_words) > max_len or len(tgt_words) + 1 > max_len:
            filtered += 1
            continue
        src_ids = src_vocab.encode(src_words)
        tgt_ids = tgt_vocab.encode(tgt_words)
        pairs.append(SentencePair(src=src_ids, tgt=tgt_ids + [EOS]))
        references.append([tuple(tgt_ids)])
    if filtered:
        log.info("%s: filtered %d over-length pairs (max_len=%d)", name, filtered, max_len)
    corpus = Corpus(name=name, pairs=pairs, references=references)
    corpus.filtered_count = filtered
    return corpus


# -- synthetic tasks ------------------------------------------------------

SYNTHETIC_TASKS = ("copy", "reverse", "lexicon")
N_SYNTHETIC_REFS = 4


def synthetic_vocab(vocab_size: int) -> Vocab:
    if vocab_size < 5:
        raise DataError(f"synthetic vocab size must be >= 5, got {vocab_size}")
    content = [f"w{i:02d}" for i in range(vocab_size - len(RESERVED_TOKENS))]
    return Vocab(list(RESERVED_TOKENS) + content)


def apply_lexicon(src_ids: Sequence[int], mapping: dict[int, int]) -> list[int]:
    """Per-token substitution, then swap each adjacent pair whose first
    index is a multiple of 3 (forces non-monotone alignment)."""
    out = [mapping[t] for t in src_ids]
    for i in range(0, len(out) - 1, 3):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def gen_synthetic(
    task: str,
    vocab_size: int,
    n_sentences: int,
    len_range: tuple[int, int],
    seed: int,
    n_valid: int | None = None,
    n_test: int | None = None,
) -> tuple[Corpus, Corpus, Corpus]:
    """Reproducible synthetic corpora with disjoint splits. Valid and test
    sentences carry four identical references to exercise the
    multi-reference evaluation path."""
    if task not in SYNTHETIC_TASKS:
        raise DataError(f"unknown synthetic task: {task!r}")
    vocab = synthetic_vocab(vocab_size)
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise DataError(f"bad length range {len_range}")
    if n_valid is None:
        n_valid = max(20, n_sentences // 10)
    if n_test is None:
        n_test = n_valid

    rng = np.random.default_rng(seed)
    content_ids = list(range(len(RESERVED_TOKENS), vocab.size))

    if task == "lexicon":
        perm = rng.permutation(len(content_ids))
        mapping = {
            content_ids[i]: content_ids[perm[i]] for i in range(len(content_ids))
        }

    def target_for(src_ids: list[int]) -> list[int]:
        if task == "copy":
            return list(src_ids)
        if task == "reverse":
            return list(reversed(src_ids))
        return apply_lexicon(src_ids, mapping)

    total = n_sentences + n_valid + n_test
    seen: set[tuple[int, ...]] = set()
    sources: list[list[int]] = []
    while len(sources) < total:
        length = int(rng.integers(lo, hi + 1))
        src = [content_ids[int(rng.integers(len(content_ids)))] for _ in range(length)]
        key = tuple(src)
        if key in seen:
            continue
        seen.add(key)
        sources.append(src)

    def make(name: str, chunk: list[list[int]], n_refs: int) -> Corpus:
        pairs = []
        references = []
        for src in chunk:
            tgt = target_for(src)
            pairs.append(SentencePair(src=src, tgt=tgt + [EOS]))
            references.append([tuple(tgt)] * n_refs)
        return Corpus(name=name, pairs=pairs, references=references)

    train = make("train", sources[:n_sentences], 1)
    valid = make(
        "valid", sources[n_sentences : n_sentences + n_valid], N_SYNTHETIC_REFS
    )
    test = make("test", sources[n_sentences + n_valid :], N_SYNTHETIC_REFS)
    return train, valid, test


# -- batching -------------------------------------------------------------


def make_batches(corpus: Corpus, batch_size: int, order: Sequence[int] | None = None) -> list[Batch]:
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    idx = list(order) if order is not None else list(range(len(corpus)))
    batches = []
    for start in range(0, len(idx), batch_size):
        chunk = [corpus.pairs[i] for i in idx[start : start + batch_size]]
        src_lens = [len(p.src) for p in chunk]
        tgt_lens = [len(p.tgt) for p in chunk]
        src = np.full((len(chunk), max(src_lens)), PAD, dtype=np.int64)
        tgt = np.full((len(chunk), max(tgt_lens)), PAD, dtype=np.int64)
        for r, p in enumerate(chunk):
            src[r, : len(p.src)] = p.src
            tgt[r, : len(p.tgt)] = p.tgt
        batches.append(Batch(src=src, tgt=tgt, src_lens=src_lens, tgt_lens=tgt_lens))
    return batches


def unbatch(batches: Sequence[Batch]) -> list[SentencePair]:
    pairs = []
    for batch in batches:
        for r in range(batch.src.shape[0]):
            pairs.append(
                SentencePair(
                    src=[int(t) for t in batch.src[r, : batch.src_lens[r]]],
                    tgt=[int(t) for t in batch.tgt[r, : batch.tgt_lens[r]]],
                )
            )
    return pairs
