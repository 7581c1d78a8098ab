"""Sampled-space minimum risk training and maximum likelihood training.

The candidate space for a sentence is built by ancestral sampling from the
model's per-step distributions (k attempts, duplicates removed, gold
inserted first). Risk is the expectation of a sentence-level loss under
the alpha-sharpened Q-distribution over that space; its gradient uses
baseline subtraction and holds the candidate set fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffcore import ParamStore, Tape
from .model import BOS, EOS, PAD, BoundModel, ModelError, _strip_trailing_pad

__all__ = [
    "MrtError",
    "SampledSpace",
    "QDistribution",
    "RiskReport",
    "sample_trajectories",
    "sample_space",
    "q_distribution",
    "expected_risk",
    "mrt_grad",
    "mrt_grad_via_q",
    "mle_loss_and_grad",
    "DEFAULT_ALPHA",
    "DEFAULT_K",
]

# Sharpness of the Q-distribution and sample-attempt count defaults.
DEFAULT_ALPHA = 5e-3
DEFAULT_K = 100


class MrtError(Exception):
    pass


@dataclass
class SampledSpace:
    """Deduplicated candidate subset for one sentence, gold included once."""

    candidates: list[tuple[int, ...]]
    gold_index: int
    k_requested: int
    max_len: int
    logprobs: np.ndarray  # model log P(y | x) per candidate

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class QDistribution:
    weights: np.ndarray
    alpha: float
    logprobs: np.ndarray


@dataclass
class RiskReport:
    losses: np.ndarray
    expected_risk: float
    baseline: float
    advantages: np.ndarray = field(repr=False)


def _pair(item) -> tuple[Sequence[int], Sequence[int]]:
    if hasattr(item, "src") and hasattr(item, "tgt"):
        return item.src, item.tgt
    src, tgt = item
    return src, tgt


def sample_trajectories(
    params: ParamStore,
    src: Sequence[int],
    k: int,
    max_len: int,
    rng: np.random.Generator,
) -> list[tuple[int, ...]]:
    """k raw sampling trajectories (pre-dedup). Each trajectory samples the
    next target word from the full model distribution and stops at EOS or
    at the length limit."""
    if k < 1 or max_len < 1:
        raise MrtError("k and the length limit must be >= 1")
    tape = Tape(record=False)
    bound = BoundModel(params, tape)
    ann = bound.encode(src)
    init = bound.initial_state(ann)
    out: list[tuple[int, ...]] = []
    for _ in range(k):
        tokens: list[int] = []
        state = init
        prev = BOS
        for _ in range(max_len):
            dist, state = bound.decode_step(prev, state, ann)
            cdf = np.cumsum(dist.value)
            tok = int(np.searchsorted(cdf, rng.random(), side="right"))
            tok = min(tok, len(cdf) - 1)
            tokens.append(tok)
            if tok == EOS:
                break
            prev = tok
        out.append(tuple(tokens))
    return out


def candidate_logprobs(
    params: ParamStore, src: Sequence[int], candidates: Sequence[Sequence[int]]
) -> np.ndarray:
    """Model log-probabilities of candidates, encoder shared across them."""
    tape = Tape(record=False)
    bound = BoundModel(params, tape)
    ann = bound.encode(src)
    out = np.empty(len(candidates))
    for i, cand in enumerate(candidates):
        total, _ = bound.sequence_logprob_nodes(ann, cand)
        out[i] = float(total.value)
    return out


def build_space(
    params: ParamStore,
    src: Sequence[int],
    gold: Sequence[int],
    trajectories: Sequence[tuple[int, ...]],
    k_requested: int,
    max_len: int,
) -> SampledSpace:
    """Deduplicate trajectories and assemble the candidate space with the
    gold translation first."""
    gold = tuple(gold)
    if not gold or gold[-1] != EOS:
        raise MrtError("gold translation must end with EOS")
    candidates: list[tuple[int, ...]] = [gold]
    seen = {gold}
    for traj in trajectories:
        if traj not in seen:
            seen.add(traj)
            candidates.append(traj)
    logprobs = candidate_logprobs(params, src, candidates)
    return SampledSpace(
        candidates=candidates,
        gold_index=0,
        k_requested=k_requested,
        max_len=max_len,
        logprobs=logprobs,
    )


def sample_space(
    params: ParamStore,
    src: Sequence[int],
    gold: Sequence[int],
    k: int,
    max_len: int,
    rng: np.random.Generator,
) -> SampledSpace:
    trajectories = sample_trajectories(params, src, k, max_len, rng)
    return build_space(params, src, gold, trajectories, k, max_len)


def q_distribution(space: SampledSpace, alpha: float) -> QDistribution:
    """Probabilities proportional to P(y|x)^alpha, normalized in log space."""
    if alpha <= 0:
        raise MrtError(f"alpha must be positive, got {alpha}")
    logprobs = np.asarray(space.logprobs, dtype=np.float64)
    if not np.all(np.isfinite(logprobs)):
        raise MrtError("non-finite candidate log-probabilities")
    scaled = alpha * logprobs
    scaled = scaled - scaled.max()
    weights = np.exp(scaled - np.log(np.exp(scaled).sum()))
    return QDistribution(weights=weights, alpha=alpha, logprobs=logprobs)


def expected_risk(
    space: SampledSpace, q: QDistribution, losses: Sequence[float]
) -> RiskReport:
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (len(space.candidates),):
        raise MrtError(
            f"{losses.shape[0]} losses for {len(space.candidates)} candidates"
        )
    risk = float(q.weights @ losses)
    advantages = losses - risk
    return RiskReport(
        losses=losses, expected_risk=risk, baseline=risk, advantages=advantages
    )


def mrt_grad(
    params: ParamStore,
    src: Sequence[int],
    space: SampledSpace,
    q: QDistribution,
    report: RiskReport,
    alpha: float,
) -> np.ndarray:
    """Gradient of the sampled expected risk with the candidate set held
    fixed: alpha * sum_i w_i (loss_i - baseline) * grad log P(y_i | x)."""
    coeffs = alpha * q.weights * report.advantages
    if not np.any(coeffs):
        return np.zeros(params.size)
    tape = Tape()
    bound = BoundModel(params, tape)
    ann = bound.encode(src)
    terms = []
    for i, cand in enumerate(space.candidates):
        if coeffs[i] == 0.0:
            continue
        total, _ = bound.sequence_logprob_nodes(ann, cand)
        terms.append(tape.scale(total, coeffs[i]))
    seed = tape.sum(tape.stack_scalars(terms))
    return tape.gradient(seed, params, bound.pn)


def mrt_grad_via_q(
    params: ParamStore,
    src: Sequence[int],
    space: SampledSpace,
    losses: Sequence[float],
    alpha: float,
) -> np.ndarray:
    """Same gradient computed symbolically through the log-space Q
    normalization (softmax over alpha-scaled candidate log-probs). Used to
    cross-check the baseline-subtraction form."""
    losses = np.asarray(losses, dtype=np.float64)
    tape = Tape()
    bound = BoundModel(params, tape)
    ann = bound.encode(src)
    totals = [
        bound.sequence_logprob_nodes(ann, cand)[0] for cand in space.candidates
    ]
    scaled = tape.scale(tape.stack_scalars(totals), alpha)
    weights = tape.softmax(scaled)
    risk = tape.matmul(weights, tape.const(losses))
    return tape.gradient(risk, params, bound.pn)


def mle_loss_and_grad(
    params: ParamStore, batch: Sequence
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the batch and its gradient, summed over
    sentences in index order."""
    if not batch:
        raise MrtError("empty batch")
    loss = 0.0
    grad = np.zeros(params.size)
    for item in batch:
        src, tgt = _pair(item)
        tape = Tape()
        bound = BoundModel(params, tape)
        ann = bound.encode(src)
        stripped = _strip_trailing_pad(tgt)
        if not stripped or stripped[-1] != EOS:
            raise ModelError("target must end with EOS")
        if PAD in stripped:
            raise ModelError("PAD inside target sentence")
        total, _ = bound.sequence_logprob_nodes(ann, stripped)
        nll = tape.scale(total, -1.0)
        loss += float(nll.value)
        grad += tape.gradient(nll, params, bound.pn)
    return loss, grad
