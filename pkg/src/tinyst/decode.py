"""Greedy, beam and exhaustive decoding.

All three drive a *scorer*: an object exposing ``vocab_size``,
``default_max_len`` and ``log_probs(prefixes) -> (N, V)`` next-token
log-probabilities for equal-length BOS-led prefixes. PAD and BOS are never
emitted. ``max_len`` bounds the number of generated tokens including EOS;
hypotheses still open at that point are closed with EOS and flagged.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import CapacityError
from .model import BOS, EOS, PAD, ModelState, decode_logits, encode

MAX_DECODE_LEN = 256


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    score: float
    truncated: bool = False

    @property
    def length(self) -> int:
        """Number of scored tokens (a forced final EOS is not scored)."""
        return len(self.tokens) - 1 - (1 if self.truncated else 0)

    @property
    def normalized_score(self) -> float:
        return length_normalize(self.score, self.length)

    @property
    def body(self) -> tuple:
        return tuple(t for t in self.tokens[1:] if t != EOS)


def length_normalize(score: float, length: int) -> float:
    return score / max(length, 1)


def _rank_key(h: Hypothesis):
    return (-h.normalized_score, h.tokens, len(h.tokens))


def default_max_len(memory_length: int) -> int:
    return min(MAX_DECODE_LEN, 4 * int(memory_length))


class ModelScorer:
    """Next-token log-probabilities for one utterance from a frozen model."""

    def __init__(self, state: ModelState, features: np.ndarray):
        self.state = state
        with ag.no_grad():
            self.memory, self.valid = encode(state, [np.asarray(features)])
        self.vocab_size = state.config.vocab_size
        self.memory_length = int(self.valid.sum())
        self.default_max_len = default_max_len(self.memory_length)

    def log_probs(self, prefixes) -> np.ndarray:
        prefixes = np.asarray(prefixes, dtype=np.int64)
        n = prefixes.shape[0]
        mem = ag.Tensor(np.repeat(self.memory.data, n, axis=0))
        valid = np.repeat(self.valid, n, axis=0)
        with ag.no_grad():
            logits = decode_logits(self.state, mem, valid, prefixes)
        return ag.log_softmax_np(logits.data[:, -1, :].astype(np.float64))


def _as_scorer(model, features):
    if isinstance(model, ModelState):
        return ModelScorer(model, features)
    return model


def _emittable(vocab_size: int) -> np.ndarray:
    ids = np.arange(vocab_size)
    return ids[(ids != PAD) & (ids != BOS)]


def greedy_decode(model, features=None, max_len: int | None = None) -> Hypothesis:
    scorer = _as_scorer(model, features)
    max_len = max_len or scorer.default_max_len
    emit = _emittable(scorer.vocab_size)
    tokens = [BOS]
    score = 0.0
    for _ in range(max_len):
        lp = scorer.log_probs([tokens])[0]
        # argmax returns the lowest id on ties
        best = int(emit[np.argmax(lp[emit])])
        tokens.append(best)
        score += float(lp[best])
        if best == EOS:
            return Hypothesis(tuple(tokens), score)
    return Hypothesis(tuple(tokens) + (EOS,), score, truncated=True)


def beam_search(model, features=None, beam: int = 10, max_len: int | None = None) -> Hypothesis:
    """Width-``beam`` search ranked finally by length-normalised score.

    At each step every live prefix is extended by every emittable token; the
    best ``beam`` candidates by cumulative log-probability survive (ties go
    to the lexicographically smaller token sequence). Candidates ending in
    EOS retire; the search stops when nothing is live.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    scorer = _as_scorer(model, features)
    max_len = max_len or scorer.default_max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    emit = _emittable(scorer.vocab_size)
    live = [((BOS,), 0.0)]
    finished = []
    for step in range(max_len):
        lp = scorer.log_probs([seq for seq, _ in live])
        cands = []
        for (seq, score), row in zip(live, lp):
            for tok in emit:
                cands.append((seq + (int(tok),), score + float(row[tok])))
        cands.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for seq, score in cands[:beam]:
            if seq[-1] == EOS:
                finished.append(Hypothesis(seq, score))
            else:
                live.append((seq, score))
        if not live:
            break
    else:
        finished.extend(Hypothesis(seq + (EOS,), score, truncated=True) for seq, score in live)
    return min(finished, key=_rank_key)


@dataclass(frozen=True)
class OracleResult:
    best: Hypothesis
    n_bodies: int
    n_candidates: int


def exhaustive_search(model, features=None, max_len: int | None = None, limit: int = 10 ** 6) -> OracleResult:
    """Score every terminated sequence of at most ``max_len`` tokens.

    Bodies are non-empty strings over the non-EOS emittable tokens of length
    up to ``max_len``; a candidate is a body (or the empty body) closed by an
    emitted EOS, or a ``max_len`` body closed by force.
    """
    scorer = _as_scorer(model, features)
    max_len = max_len or scorer.default_max_len
    emit = _emittable(scorer.vocab_size)
    if len(emit) ** max_len > limit:
        raise CapacityError(f"{len(emit)}^{max_len} sequences exceed the limit of {limit}")
    symbols = [int(t) for t in emit if t != EOS]
    candidates = []
    level = [((BOS,), 0.0)]
    n_bodies = 0
    for depth in range(max_len):
        if not level:
            break
        lp = scorer.log_probs([seq for seq, _ in level])
        nxt = []
        for (seq, score), row in zip(level, lp):
            candidates.append(Hypothesis(seq + (EOS,), score + float(row[EOS])))
            for tok in symbols:
                nxt.append((seq + (tok,), score + float(row[tok])))
        n_bodies += len(nxt)
        level = nxt
    candidates.extend(Hypothesis(seq + (EOS,), score, truncated=True) for seq, score in level)
    best = min(candidates, key=_rank_key)
    return OracleResult(best, n_bodies, len(candidates))


def exhaustive_oracle(model, features=None, max_len: int | None = None) -> Hypothesis:
    return exhaustive_search(model, features, max_len).best


def greedy_decode_batch(state: ModelState, features: list, max_len: int | None = None) -> list[Hypothesis]:
    """Greedy decoding of several utterances in one padded batch."""
    with ag.no_grad():
        memory, valid = encode(state, features)
    n = len(features)
    limits = np.array([max_len or default_max_len(v) for v in valid.sum(axis=1)])
    emit = _emittable(state.config.vocab_size)
    tokens = np.full((n, 1), BOS, dtype=np.int64)
    scores = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    for step in range(int(limits.max())):
        with ag.no_grad():
            logits = decode_logits(state, memory, valid, tokens)
        lp = ag.log_softmax_np(logits.data[:, -1, :].astype(np.float64))
        best = emit[np.argmax(lp[:, emit], axis=1)]
        best = np.where(done, PAD, best)
        scores += np.where(done, 0.0, lp[np.arange(n), best])
        tokens = np.concatenate([tokens, best[:, None]], axis=1)
        lengths += ~done
        newly = ~done & (best == EOS)
        done |= newly
        hit_limit = ~done & (lengths >= limits)
        truncated |= hit_limit
        done |= hit_limit
        if done.all():
            break
    out = []
    for i in range(n):
        seq = tuple(int(t) for t in tokens[i, : lengths[i] + 1])
        if truncated[i]:
            seq = seq + (EOS,)
        out.append(Hypothesis(seq, float(scores[i]), bool(truncated[i])))
    return out


def brute_force_sequences(n_symbols: int, max_len: int):
    """All non-empty bodies of length <= max_len over ``n_symbols`` symbols."""
    for length in range(1, max_len + 1):
        yield from itertools.product(range(n_symbols), repeat=length)
