"""Sentence-level loss functions and corpus-level evaluation.

Losses are oriented so that lower is better: negative smoothed sentence
BLEU, sentence TER, negative sentence NIST. Corpus BLEU follows
multi-bleu.perl semantics (unsmoothed, clipped 4-gram precisions, closest
reference length, reported x100).

All scorers work on sequences of hashable tokens. Reserved integer token
ids (PAD/EOS/BOS) are stripped on entry so model output can be scored
directly.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from typing import Hashable, Mapping, Sequence

from .model import BOS, EOS, PAD

__all__ = [
    "LossKind",
    "MetricError",
    "InfoTable",
    "sentence_bleu_smoothed",
    "sentence_ter",
    "sentence_nist",
    "delta",
    "corpus_bleu",
    "corpus_ter",
    "corpus_nist",
    "build_info_table",
]

MAX_NGRAM = 4

# NIST brevity factor exp(beta * ln^2(min(1, |hyp|/|ref|))), with beta
# calibrated so the factor is 0.5 at a length ratio of 2/3.
NIST_BETA = math.log(0.5) / math.log(2.0 / 3.0) ** 2

Token = Hashable
Tokens = Sequence[Token]


class MetricError(Exception):
    pass


class LossKind(enum.Enum):
    NEG_SMOOTHED_BLEU = "neg_sbleu"
    SMOOTHED_TER = "ster"
    NEG_SMOOTHED_NIST = "neg_snist"

    @classmethod
    def parse(cls, name: str) -> "LossKind":
        for kind in cls:
            if kind.value == name or kind.name.lower() == name.lower():
                return kind
        raise MetricError(f"unknown loss kind: {name!r}")


def _strip(tokens: Tokens) -> tuple:
    return tuple(t for t in tokens if t not in (PAD, EOS, BOS))


def _ngrams(tokens: tuple, n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


# -- sentence BLEU --------------------------------------------------------


def sentence_bleu_smoothed(hyp: Tokens, ref: Tokens) -> float:
    """Geometric mean of modified n-gram precisions (n=1..4), add-one
    smoothing on numerator and denominator for n >= 2, times the brevity
    penalty exp(min(0, 1 - |ref|/|hyp|)). Unigram precision is unsmoothed,
    so an all-wrong hypothesis scores 0."""
    hyp, ref = _strip(hyp), _strip(ref)
    if not ref:
        raise MetricError("empty reference")
    if not hyp:
        return 0.0
    log_sum = 0.0
    for n in range(1, MAX_NGRAM + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        total = max(0, len(hyp) - n + 1)
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1)
        log_sum += math.log(precision)
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(hyp)))
    return bp * math.exp(log_sum / MAX_NGRAM)


# -- sentence TER ---------------------------------------------------------


def _levenshtein(a: tuple, b: tuple) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, tok in enumerate(a, start=1):
        cur = [i]
        for j, ref_tok in enumerate(b, start=1):
            cur.append(
                min(
                    prev[j] + 1,
                    cur[j - 1] + 1,
                    prev[j - 1] + (tok != ref_tok),
                )
            )
        prev = cur
    return prev[-1]


def _shift_candidates(hyp: tuple, ref: tuple):
    """Spans of hyp that exactly match a contiguous span of ref, paired with
    every destination position they could move to."""
    ref_spans = set()
    for n in range(1, len(ref) + 1):
        for i in range(len(ref) - n + 1):
            ref_spans.add(ref[i : i + n])
    for length in range(1, len(hyp) + 1):
        for start in range(len(hyp) - length + 1):
            block = hyp[start : start + length]
            if block not in ref_spans:
                continue
            rest = hyp[:start] + hyp[start + length :]
            for dest in range(len(rest) + 1):
                if dest == start:
                    continue
                yield length, start, dest, rest[:dest] + block + rest[dest:]


def sentence_ter(hyp: Tokens, ref: Tokens) -> float:
    """(shifts + word edits) / |ref| with a greedy best-improvement shift
    search; ties broken toward the leftmost-shortest block."""
    hyp, ref = _strip(hyp), _strip(ref)
    if not ref:
        raise MetricError("empty reference")
    shifts = 0
    current = hyp
    edits = _levenshtein(current, ref)
    while edits > 0:
        # (edit distance after shift, block length, start, dest)
        best = None
        for length, start, dest, shifted in _shift_candidates(current, ref):
            d = _levenshtein(shifted, ref)
            if d >= edits:
                continue
            key = (d, length, start, dest)
            if best is None or key < best[0]:
                best = (key, shifted)
        if best is None:
            break
        shifts += 1
        edits = best[0][0]
        current = best[1]
    return (shifts + edits) / len(ref)


# -- sentence NIST --------------------------------------------------------

InfoTable = Mapping[tuple, float]


def build_info_table(ref_corpus: Sequence[Tokens]) -> dict[tuple, float]:
    """Information weights Info(w1..wn) = log2(count(prefix)/count(ngram)),
    with the empty-prefix count equal to the total token count. N-grams not
    observed in the corpus are simply absent."""
    if not ref_corpus:
        raise MetricError("empty reference corpus")
    sents = [_strip(s) for s in ref_corpus]
    counts: Counter = Counter()
    total_tokens = 0
    for sent in sents:
        total_tokens += len(sent)
        for n in range(1, MAX_NGRAM + 1):
            counts.update(_ngrams(sent, n))
    info: dict[tuple, float] = {}
    for gram, c in counts.items():
        prefix_count = total_tokens if len(gram) == 1 else counts[gram[:-1]]
        info[gram] = math.log2(prefix_count / c)
    return info


def _nist_brevity(hyp_len: int, ref_len: int) -> float:
    ratio = min(1.0, hyp_len / ref_len)
    return math.exp(NIST_BETA * math.log(ratio) ** 2)


def sentence_nist(hyp: Tokens, ref: Tokens, info: InfoTable) -> float:
    hyp, ref = _strip(hyp), _strip(ref)
    if not ref:
        raise MetricError("empty reference")
    if not hyp:
        return 0.0
    score = 0.0
    for n in range(1, MAX_NGRAM + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        gained = sum(
            min(c, ref_counts[g]) * info.get(g, 0.0)
            for g, c in hyp_counts.items()
            if g in ref_counts
        )
        score += gained / max(1, len(hyp) - n + 1)
    return score * _nist_brevity(len(hyp), len(ref))


# -- the loss dispatcher --------------------------------------------------


def delta(
    kind: LossKind, hyp: Tokens, ref: Tokens, info: InfoTable | None = None
) -> float:
    """Loss between a candidate and the gold translation; lower is better."""
    if kind is LossKind.NEG_SMOOTHED_BLEU:
        return -sentence_bleu_smoothed(hyp, ref)
    if kind is LossKind.SMOOTHED_TER:
        return sentence_ter(hyp, ref)
    if kind is LossKind.NEG_SMOOTHED_NIST:
        if info is None:
            raise MetricError("NIST loss requires an information table")
        return -sentence_nist(hyp, ref, info)
    raise MetricError(f"unhandled loss kind: {kind}")


# -- corpus-level scores --------------------------------------------------


def corpus_bleu(
    hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]]
) -> float:
    """multi-bleu.perl semantics: corpus-aggregated clipped n-gram
    precisions without smoothing, effective reference length = closest
    reference length per sentence (ties -> shorter), reported x100."""
    if len(hyps) != len(refs):
        raise MetricError(
            f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}"
        )
    matched = [0] * MAX_NGRAM
    totals = [0] * MAX_NGRAM
    hyp_len = 0
    ref_len = 0
    for hyp, ref_set in zip(hyps, refs):
        if not ref_set:
            raise MetricError("sentence without references")
        hyp = _strip(hyp)
        ref_set = [_strip(r) for r in ref_set]
        hyp_len += len(hyp)
        closest = min(ref_set, key=lambda r: (abs(len(r) - len(hyp)), len(r)))
        ref_len += len(closest)
        for n in range(1, MAX_NGRAM + 1):
            hyp_counts = _ngrams(hyp, n)
            max_ref: Counter = Counter()
            for ref in ref_set:
                for g, c in _ngrams(ref, n).items():
                    if c > max_ref[g]:
                        max_ref[g] = c
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    if hyp_len == 0 or any(m == 0 for m in matched) or any(t == 0 for t in totals):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matched, totals)) / MAX_NGRAM
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_prec)


def corpus_ter(hyps: Sequence[Tokens], refs: Sequence[Sequence[Tokens]]) -> float:
    """Total best-reference edits over total matching reference length,
    reported x100."""
    if len(hyps) != len(refs):
        raise MetricError(
            f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}"
        )
    total_edits = 0.0
    total_ref = 0
    for hyp, ref_set in zip(hyps, refs):
        best_edits = None
        best_len = None
        for ref in ref_set:
            stripped = _strip(ref)
            edits = sentence_ter(hyp, ref) * len(stripped)
            if best_edits is None or edits < best_edits:
                best_edits, best_len = edits, len(stripped)
        total_edits += best_edits
        total_ref += best_len
    if total_ref == 0:
        raise MetricError("empty references")
    return 100.0 * total_edits / total_ref


def corpus_nist(
    hyps: Sequence[Tokens],
    refs: Sequence[Sequence[Tokens]],
    info: InfoTable,
) -> float:
    """Corpus-aggregated information-weighted n-gram matches against the
    first reference, with the NIST brevity factor on total lengths."""
    if len(hyps) != len(refs):
        raise MetricError(
            f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}"
        )
    gained = [0.0] * MAX_NGRAM
    totals = [0] * MAX_NGRAM
    hyp_len = 0
    ref_len = 0
    for hyp, ref_set in zip(hyps, refs):
        hyp = _strip(hyp)
        ref = _strip(ref_set[0])
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_NGRAM + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            gained[n - 1] += sum(
                min(c, ref_counts[g]) * info.get(g, 0.0)
                for g, c in hyp_counts.items()
                if g in ref_counts
            )
            totals[n - 1] += max(0, len(hyp) - n + 1)
    if hyp_len == 0 or ref_len == 0:
        return 0.0
    score = sum(g / max(1, t) for g, t in zip(gained, totals))
    return score * _nist_brevity(hyp_len, ref_len)
