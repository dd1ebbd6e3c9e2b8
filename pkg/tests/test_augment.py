import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyst import corpus
from tinyst.augment import (AugmentPolicy, apply_masks, expand_with_speed, mask_rng, sample_masks,
                            spec_augment)
from tinyst.corpus import Manifest, Utterance
from tinyst.errors import DomainError, DuplicateIdError

SA = AugmentPolicy(sa_enabled=True)


def test_policy_defaults():
    p = AugmentPolicy()
    assert p.sp_factors == (0.9, 1.0, 1.1)
    assert (p.max_time_mask, p.max_freq_mask, p.n_time_masks, p.n_freq_masks) == (30, 30, 2, 2)


@pytest.mark.parametrize("kwargs", [{"sp_factors": (0.9, 0.0)}, {"max_time_mask": -1}, {"n_freq_masks": -2}])
def test_policy_validation(kwargs):
    with pytest.raises(DomainError):
        AugmentPolicy(**kwargs)


def test_short_input_clamps_time_masks(rng):
    for _ in range(500):
        for axis, start, width in sample_masks(20, 80, SA, rng):
            if axis == 0:
                assert width <= 20 and start + width <= 20


def test_zero_masks_is_identity(rng):
    f = rng.normal(size=(50, 80))
    p = AugmentPolicy(sa_enabled=True, n_time_masks=0, n_freq_masks=0)
    assert np.array_equal(spec_augment(f, p, rng), f)


def test_fixed_seed_reproduces_masked_cells(rng):
    f = rng.normal(size=(100, 80)) + 5.0
    a = spec_augment(f, SA, mask_rng(7, "utt1", 3))
    b = spec_augment(f, SA, mask_rng(7, "utt1", 3))
    assert np.array_equal(np.argwhere(a != f), np.argwhere(b != f))
    assert np.array_equal(a, b)


def test_streams_differ_by_epoch_and_id():
    draw = lambda seed, uid, ep: sample_masks(500, 80, SA, mask_rng(seed, uid, ep))
    assert draw(0, "a", 1) != draw(0, "a", 2)
    assert draw(0, "a", 1) != draw(0, "b", 1)
    assert draw(0, "a", 1) == draw(0, "a", 1)


def test_mask_fill_is_zero(rng):
    f = rng.normal(size=(10, 80)) + 3.0
    out = apply_masks(f, [(0, 2, 3), (1, 10, 5)])
    assert np.all(out[2:5] == 0) and np.all(out[:, 10:15] == 0)
    assert np.array_equal(out[0, :10], f[0, :10])


@given(st.integers(1, 200), st.integers(1, 80), st.integers(0, 2 ** 32 - 1))
def test_mask_bounds_and_untouched_cells(t, fdim, seed):
    f = np.random.default_rng(seed).normal(size=(t, fdim)) + 10.0  # no natural zeros
    masks = sample_masks(t, fdim, SA, np.random.default_rng(seed))
    covered = np.zeros((t, fdim), dtype=bool)
    for axis, start, width in masks:
        size = t if axis == 0 else fdim
        assert 0 <= width <= min(30, size)
        assert 0 <= start <= size - width
        if axis == 0:
            covered[start:start + width] = True
        else:
            covered[:, start:start + width] = True
    out = apply_masks(f, masks)
    assert np.array_equal(out[~covered], f[~covered])
    assert np.all(out[covered] == 0.0)
    bound = (2 * 30 * fdim + 2 * 30 * t) / (t * fdim)
    assert covered.mean() <= bound + 1e-12


def test_ten_thousand_masks_within_maxima():
    rng = np.random.default_rng(0)
    widths = {0: [], 1: []}
    while len(widths[0]) + len(widths[1]) < 10000:
        for axis, _, w in sample_masks(300, 80, SA, rng):
            widths[axis].append(w)
    assert max(widths[0]) <= 30 and max(widths[1]) <= 30
    assert max(widths[0]) == 30  # the maximum is reachable


def _manifest(n, dur=9.0):
    return Manifest("train", [Utterance(f"u{i}", f"a/{i}.wav", dur, "bho", "hi", "", "क") for i in range(n)])


def test_expand_triples():
    m = corpus.synthetic_manifest(10171, 20.0)
    out = expand_with_speed(m, AugmentPolicy(sp_enabled=True))
    assert len(out) == 30513


def test_expand_ids_and_durations():
    out = expand_with_speed(_manifest(1), AugmentPolicy(sp_enabled=True))
    assert out.ids == ["u0#sp0.9", "u0#sp1.0", "u0#sp1.1"]
    assert out[0].duration_sec == pytest.approx(10.0)
    assert out[0].audio_path == "a/0.wav#sp0.9"
    assert out[1].audio_path == "a/0.wav"


def test_expand_unit_factor_only():
    m = _manifest(3)
    out = expand_with_speed(m, AugmentPolicy(sp_enabled=True, sp_factors=(1.0,)))
    assert [u.id for u in out] == [f"{i}#sp1.0" for i in m.ids]
    assert [(u.audio_path, u.duration_sec, u.tgt_text) for u in out] == \
        [(u.audio_path, u.duration_sec, u.tgt_text) for u in m]


def test_expand_duplicate_factor():
    with pytest.raises(DuplicateIdError):
        expand_with_speed(_manifest(1), AugmentPolicy(sp_factors=(1.0, 1.0)))


@given(st.lists(st.floats(0.1, 20.0), min_size=1, max_size=20))
def test_expand_hours_per_factor(durations):
    m = Manifest("train", [Utterance(f"u{i}", "a.wav", d, "bho", "hi", "", "क") for i, d in enumerate(durations)])
    p = AugmentPolicy(sp_enabled=True)
    out = expand_with_speed(m, p)
    assert len(out) == 3 * len(m)
    hours = corpus.stats(m).total_hours
    for factor in p.sp_factors:
        part = [u.duration_sec for u in out if u.id.endswith(f"#sp{factor!r}")]
        assert math.isclose(math.fsum(part) / 3600, hours / factor, rel_tol=1e-9)
