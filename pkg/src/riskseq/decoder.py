"""Greedy and beam-search inference.

Beam search keeps the top-width expansions by accumulated log-prob;
finished hypotheses retire into a completed pool and the final answer is
the completed hypothesis with the best length-normalized score (ties go
to the lexicographically smallest token sequence). PAD and BOS are never
proposed as output tokens.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .diffcore import ParamStore, Tape
from .model import BOS, EOS, PAD, BoundModel

__all__ = ["greedy_decode", "beam_decode", "decode_corpus", "DEFAULT_BEAM"]

DEFAULT_BEAM = 10


def _masked_logdist(tape, bound, prev, state, ann):
    logits, new_state = bound.step_logits(prev, state, ann)
    logdist = tape.log_softmax(logits).value.copy()
    logdist[PAD] = -np.inf
    logdist[BOS] = -np.inf
    return logdist, new_state


def greedy_decode(
    params: ParamStore, src: Sequence[int], max_len: int
) -> tuple[int, ...]:
    """Argmax token per step until EOS or the length limit."""
    tape = Tape(record=False)
    bound = BoundModel(params, tape)
    ann = bound.encode(src)
    state = bound.initial_state(ann)
    prev = BOS
    tokens: list[int] = []
    for _ in range(max_len):
        logdist, state = _masked_logdist(tape, bound, prev, state, ann)
        tok = int(np.argmax(logdist))
        tokens.append(tok)
        if tok == EOS:
            break
        prev = tok
    return tuple(tokens)


def beam_decode(
    params: ParamStore,
    src: Sequence[int],
    width: int,
    max_len: int,
    length_normalize: bool = True,
) -> tuple[int, ...]:
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    tape = Tape(record=False)
    bound = BoundModel(params, tape)
    ann = bound.encode(src)

    # live hypothesis: (tokens, logprob, prev token, state)
    live = [((), 0.0, BOS, bound.initial_state(ann))]
    completed: list[tuple[tuple[int, ...], float]] = []

    def norm_score(tokens, lp):
        return lp / len(tokens) if length_normalize else lp

    for _ in range(max_len):
        if not live:
            break
        expansions = []
        for tokens, lp, prev, state in live:
            logdist, new_state = _masked_logdist(tape, bound, prev, state, ann)
            for tok in range(len(logdist)):
                if logdist[tok] == -np.inf:
                    continue
                expansions.append(
                    (tokens + (tok,), lp + float(logdist[tok]), tok, new_state)
                )
        expansions.sort(key=lambda h: (-h[1], h[0]))
        selected = expansions[:width]
        live = []
        for tokens, lp, tok, state in selected:
            if tok == EOS:
                completed.append((tokens, lp))
            else:
                live.append((tokens, lp, tok, state))
        if completed and live:
            best_done = max(norm_score(t, lp) for t, lp in completed)
            # Future steps only lower the raw score; bound the best
            # normalized score a live hypothesis could still reach.
            def bound_score(tokens, lp):
                if not length_normalize:
                    return lp
                return lp / max_len if lp < 0 else lp / (len(tokens) + 1)

            if all(bound_score(t, lp) < best_done for t, lp, _, _ in live):
                break

    pool = completed if completed else [(t, lp) for t, lp, _, _ in live]
    best = min(pool, key=lambda h: (-norm_score(h[0], h[1]), h[0]))
    return best[0]


def decode_corpus(
    params: ParamStore,
    sources: Sequence[Sequence[int]],
    width: int,
    max_len: int,
) -> list[tuple[int, ...]]:
    if width == 1:
        return [greedy_decode(params, src, max_len) for src in sources]
    return [beam_decode(params, src, width, max_len) for src in sources]
