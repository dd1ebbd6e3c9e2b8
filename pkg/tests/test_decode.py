import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyst.decode import (Hypothesis, ModelScorer, beam_search, brute_force_sequences, default_max_len,
                           exhaustive_oracle, exhaustive_search, greedy_decode, greedy_decode_batch,
                           length_normalize)
from tinyst.errors import CapacityError
from tinyst.model import BOS, EOS, PAD, ModelConfig, init


class TableScorer:
    """Next-token distribution looked up from a random table keyed by prefix."""

    def __init__(self, vocab_size, seed, max_len=4, eos_bias=0.0):
        self.vocab_size = vocab_size
        self.default_max_len = max_len
        self.seed = seed
        self.eos_bias = eos_bias
        self.calls = 0

    def _row(self, prefix):
        rng = np.random.default_rng([self.seed, *prefix])
        logits = rng.normal(size=self.vocab_size) * 2.0
        logits[EOS] += self.eos_bias
        z = logits - logits.max()
        return z - np.log(np.exp(z).sum())

    def log_probs(self, prefixes):
        self.calls += 1
        return np.stack([self._row(tuple(int(t) for t in p)) for p in prefixes])


def _sequence_score(scorer, tokens):
    return sum(scorer.log_probs([tokens[:i]])[0][tokens[i]] for i in range(1, len(tokens)))


def test_hypothesis_properties():
    h = Hypothesis((BOS, 5, 6, EOS), -3.0)
    assert h.length == 3 and h.normalized_score == -1.0 and h.body == (5, 6)
    t = Hypothesis((BOS, 5, 6, EOS), -3.0, truncated=True)
    assert t.length == 2
    assert length_normalize(-3.0, 0) == -3.0


def test_default_max_len():
    assert default_max_len(10) == 40
    assert default_max_len(1000) == 256


def test_forced_eos_at_first_step():
    class EosOnly:
        vocab_size, default_max_len = 6, 5

        def log_probs(self, prefixes):
            row = np.full(6, -1e9)
            row[EOS] = 0.0
            return np.tile(row, (len(prefixes), 1))

    assert beam_search(EosOnly(), beam=3).tokens == (BOS, EOS)
    assert greedy_decode(EosOnly()).tokens == (BOS, EOS)


def test_pad_and_bos_never_emitted():
    class LovesPad:
        vocab_size, default_max_len = 5, 3

        def log_probs(self, prefixes):
            row = np.log(np.array([0.6, 0.3, 0.02, 0.04, 0.04]))
            return np.tile(row, (len(prefixes), 1))

    for h in (greedy_decode(LovesPad()), beam_search(LovesPad(), beam=4), exhaustive_oracle(LovesPad())):
        assert PAD not in h.tokens and BOS not in h.tokens[1:]


def test_truncation_is_flagged():
    s = TableScorer(5, 0, max_len=3, eos_bias=-50.0)
    h = greedy_decode(s)
    assert h.truncated and len(h.tokens) == 5 and h.tokens[-1] == EOS
    assert beam_search(s, beam=2).truncated


def test_greedy_score_is_sum_of_log_probs():
    s = TableScorer(6, 3, max_len=6)
    h = greedy_decode(s)
    assert h.score == pytest.approx(_sequence_score(s, h.tokens[: len(h.tokens) - h.truncated]))
    assert h.score <= 0


def test_oracle_counts():
    # V = 2 non-EOS symbols after removing PAD/BOS: ids {3, 4} plus EOS
    s = TableScorer(5, 1, max_len=2)
    result = exhaustive_search(s)
    assert result.n_bodies == 2 ** 1 + 2 ** 2
    assert result.n_candidates == 1 + 2 + 4
    assert len(list(brute_force_sequences(2, 2))) == 6


def test_oracle_max_len_one_picks_best_token():
    s = TableScorer(6, 9, max_len=1)
    row = s.log_probs([(BOS,)])[0]
    best = max([EOS, 3, 4, 5], key=lambda t: (row[t], -t))
    assert exhaustive_oracle(s).tokens[1] == best


def test_oracle_capacity():
    with pytest.raises(CapacityError):
        exhaustive_search(TableScorer(40, 0, max_len=6))


def _oracle_by_enumeration(scorer, max_len):
    symbols = [t for t in range(scorer.vocab_size) if t not in (PAD, BOS, EOS)]
    cands = []
    for body in itertools.chain([()], brute_force_sequences(len(symbols), max_len)):
        seq = (BOS,) + tuple(symbols[i] for i in body)
        if len(body) < max_len:
            cands.append(Hypothesis(seq + (EOS,), _sequence_score(scorer, seq + (EOS,))))
        if len(body) == max_len:
            cands.append(Hypothesis(seq + (EOS,), _sequence_score(scorer, seq), truncated=True))
    return min(cands, key=lambda h: (-h.normalized_score, h.tokens, len(h.tokens)))


@given(st.integers(4, 6), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_oracle_matches_independent_enumeration(v, max_len, seed):
    s = TableScorer(v, seed, max_len=max_len)
    ours = exhaustive_oracle(s)
    ref = _oracle_by_enumeration(s, max_len)
    assert ours.tokens == ref.tokens
    assert ours.score == pytest.approx(ref.score)


@given(st.integers(4, 7), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_saturated_beam_equals_oracle(v, max_len, seed):
    s = TableScorer(v, seed, max_len=max_len)
    n_emit = v - 2
    beam = n_emit ** max_len
    assert beam_search(s, beam=beam).tokens == exhaustive_oracle(s).tokens


@given(st.integers(4, 9), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_beam_one_is_greedy(v, max_len, seed):
    s = TableScorer(v, seed, max_len=max_len)
    assert beam_search(s, beam=1) == greedy_decode(s)


def test_beam_validation():
    with pytest.raises(ValueError):
        beam_search(TableScorer(5, 0), beam=0)
    with pytest.raises(ValueError):
        beam_search(TableScorer(5, 0), beam=2, max_len=-1)


def test_model_scorer_determinism_and_range(tiny_state, rng):
    f = rng.normal(size=(16, 80))
    a = beam_search(tiny_state, f, beam=3, max_len=6)
    b = beam_search(tiny_state, f, beam=3, max_len=6)
    assert a == b
    assert all(0 <= t < tiny_state.config.vocab_size for t in a.tokens)
    assert ModelScorer(tiny_state, f).default_max_len == 16


def test_batched_greedy_matches_single(tiny_state, rng):
    feats = [rng.normal(size=(t, 80)) for t in (16, 9, 24)]
    batched = greedy_decode_batch(tiny_state, feats, max_len=7)
    for f, h in zip(feats, batched):
        single = greedy_decode(tiny_state, f, max_len=7)
        assert single.tokens == h.tokens and single.truncated == h.truncated
        assert single.score == pytest.approx(h.score, abs=1e-9)


def test_random_models_beam_vs_oracle():
    for seed in range(10):
        cfg = ModelConfig(vocab_size=6, d_model=8, n_heads=2, enc_layers=1, dec_layers=1, ff_dim=16, dropout=0.0)
        state = init(cfg, seed)
        f = np.random.default_rng(seed).normal(size=(8, 80))
        scorer = ModelScorer(state, f)
        assert beam_search(scorer, beam=4 ** 3, max_len=3).tokens == exhaustive_oracle(scorer, max_len=3).tokens
