import math

import numpy as np
import pytest

from tinyst import autograd as ag
from tinyst.errors import ConfigError, CorruptFileError, NumericalError, TooShortError
from tinyst.model import (BOS, EOS, PAD, UNK, ModelConfig, Vocab, encode, forward, grad_check, init,
                          init_bound, load_checkpoint, param_specs, relative_error, save_checkpoint)
from tinyst.training import batch_loss


def _feats(rng, *lengths):
    return [rng.normal(size=(t, 80)) for t in lengths]


def test_vocab_specials_and_round_trip():
    v = Vocab.from_texts(["नमक पानी", "राम"])
    assert v.tokens[:4] == ["<pad>", "<s>", "</s>", "<unk>"]
    ids = v.encode("राम पानी")
    assert ids[0] == BOS and ids[-1] == EOS
    assert v.decode(ids) == "राम पानी"
    assert v.encode("x", bos=False, eos=False) == [UNK]
    assert len(set(v.tokens)) == len(v)


def test_init_deterministic(tiny_state):
    again = init(tiny_state.config, seed=0, dtype=np.float64, vocab=tiny_state.vocab)
    for name, t in tiny_state.params.items():
        assert np.array_equal(t.data, again.params[name].data)
    other = init(tiny_state.config, seed=1, dtype=np.float64)
    assert not np.array_equal(other.params["dec.out.w"].data, tiny_state.params["dec.out.w"].data)


def test_init_within_bounds(tiny_state):
    for name, (shape, kind, fan_in, fan_out) in param_specs(tiny_state.config).items():
        data = tiny_state.params[name].data
        assert data.shape == shape
        if kind == "xavier":
            assert np.all(np.abs(data) <= init_bound(fan_in, fan_out))
        elif kind == "ones":
            assert np.all(data == 1)
        else:
            assert np.all(data == 0)
    assert tiny_state.step == 0


@pytest.mark.parametrize("kwargs,field", [
    ({"d_model": 63, "n_heads": 4}, "d_model"),
    ({"enc_layers": 0}, "enc_layers"),
    ({"conv_subsample_factor": 3}, "conv_subsample_factor"),
    ({"vocab_size": 2}, "vocab_size"),
])
def test_config_errors_name_field(kwargs, field):
    with pytest.raises(ConfigError) as err:
        init(ModelConfig(**{"vocab_size": 10, **kwargs}), 0)
    assert err.value.field == field


def test_memory_length_is_ceil(tiny_state, rng):
    mem, valid = encode(tiny_state, _feats(rng, 8))
    assert mem.shape[1] == 2
    mem, valid = encode(tiny_state, _feats(rng, 9, 4, 13))
    assert valid.sum(axis=1).tolist() == [math.ceil(9 / 4), 1, math.ceil(13 / 4)]


def test_too_short_input(tiny_state, rng):
    with pytest.raises(TooShortError):
        encode(tiny_state, _feats(rng, 3))


def test_batch_permutation(tiny_state, rng):
    feats = _feats(rng, 12, 7, 10)
    prefix = [[BOS, 4, 5, 6], [BOS, 5], [BOS, 6, 4]]
    full = forward(tiny_state, feats, prefix).data
    perm = [2, 0, 1]
    permuted = forward(tiny_state, [feats[i] for i in perm], [prefix[i] for i in perm]).data
    for new, old in enumerate(perm):
        n = len(prefix[old])
        np.testing.assert_allclose(permuted[new, :n], full[old, :n], atol=1e-12)


def test_padding_does_not_leak(tiny_state, rng):
    feats = _feats(rng, 9)
    alone = forward(tiny_state, feats, [[BOS, 4, 5]]).data[0]
    batched = forward(tiny_state, feats + _feats(rng, 20), [[BOS, 4, 5], [BOS, 4, 5, 6, 7]]).data[0, :3]
    np.testing.assert_allclose(batched, alone, atol=1e-10)


def test_decoder_causality(tiny_state, rng):
    feats = _feats(rng, 10)
    a = forward(tiny_state, feats, [[BOS, 4, 5, 6, 7]]).data
    b = forward(tiny_state, feats, [[BOS, 4, 5, 7, 4]]).data
    assert np.array_equal(a[0, :3], b[0, :3])
    assert not np.allclose(a[0, 3], b[0, 3])


def test_attention_rows_sum_to_one(tiny_state, rng):
    trace = {}
    forward(tiny_state, _feats(rng, 11, 6), [[BOS, 4, 5], [BOS, 6]], trace=trace)
    assert trace["attention"]
    for probs in trace["attention"].values():
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


def test_nan_raises_with_layer_name(tiny_state, rng):
    tiny_state.params["enc.l0.ff2.b"].data[:] = np.nan
    with pytest.raises(NumericalError) as err:
        forward(tiny_state, _feats(rng, 8), [[BOS]])
    assert err.value.where == "enc.l0"


def test_loss_reproducible(tiny_state, rng):
    feats = _feats(rng, 12, 9)
    seqs = [[BOS, 4, 5, EOS], [BOS, 6, EOS]]
    a = float(batch_loss(tiny_state, feats, seqs, 0.1).data)
    b = float(batch_loss(init(tiny_state.config, 0, vocab=tiny_state.vocab), feats, seqs, 0.1).data)
    assert a == b


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.2])
def test_grad_check_passes(tiny_state, rng, eps):
    batch = (_feats(rng, 12, 9), [[BOS, 4, 5, 6, EOS], [BOS, 7, EOS]])
    report = grad_check(tiny_state, batch, tolerance=1e-4, n_coords=200, label_smoothing=eps)
    assert report.n_checked >= 200
    assert report.passed, str(report)


def test_grad_check_catches_broken_rule(tiny_state, rng, monkeypatch):
    monkeypatch.setattr(ag, "silu_derivative", lambda x: np.ones_like(x))
    batch = (_feats(rng, 12), [[BOS, 4, 5, EOS]])
    report = grad_check(tiny_state, batch, tolerance=1e-4, n_coords=200)
    assert not report.passed


def test_grad_check_needs_float64(tiny_state, rng):
    with pytest.raises(ConfigError):
        grad_check(tiny_state.astype(np.float32), (_feats(rng, 8), [[BOS, EOS]]))


def test_degenerate_model_has_vanishing_gradients(tiny_state, rng):
    # the output layer ignores its input and puts all mass on EOS
    tiny_state.params["dec.out.w"].data[:] = 0.0
    bias = np.full(tiny_state.config.vocab_size, -50.0)
    bias[EOS] = 50.0
    tiny_state.params["dec.out.b"].data[:] = bias
    loss = batch_loss(tiny_state, _feats(rng, 8), [[BOS, EOS]], 0.0)
    loss.backward()
    assert float(loss.data) < 1e-8
    for t in tiny_state.params.values():
        if t.grad is not None:
            assert np.max(np.abs(t.grad)) < 1e-8


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-6)
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_checkpoint_round_trip(tiny_state, tmp_path):
    tiny_state.step, tiny_state.epoch = 7, 3
    tiny_state.opt_m = {k: np.full_like(t.data, 0.5) for k, t in tiny_state.params.items()}
    tiny_state.opt_v = {k: np.full_like(t.data, 0.25) for k, t in tiny_state.params.items()}
    p = tmp_path / "m.ckpt"
    save_checkpoint(tiny_state, p)
    back = load_checkpoint(p)
    assert back.config == tiny_state.config and back.vocab == tiny_state.vocab
    assert (back.step, back.epoch) == (7, 3)
    assert list(back.params) == list(tiny_state.params)
    for k, t in tiny_state.params.items():
        assert np.array_equal(back.params[k].data, t.data)
        assert back.params[k].data.dtype == t.data.dtype
        assert np.array_equal(back.opt_m[k], tiny_state.opt_m[k])


def test_checkpoint_float32(tiny_state, tmp_path):
    s32 = tiny_state.astype(np.float32)
    save_checkpoint(s32, tmp_path / "a.ckpt")
    assert load_checkpoint(tmp_path / "a.ckpt").dtype == np.float32


def test_checkpoint_header_layout(tiny_state, tmp_path):
    import json
    import struct
    p = tmp_path / "m.ckpt"
    save_checkpoint(tiny_state, p)
    raw = p.read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n])
    assert header["version"] == 1
    assert {e["name"] for e in header["tensors"]} == set(tiny_state.params)


def test_checkpoint_corrupt(tiny_state, tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(tiny_state, p)
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(CorruptFileError):
        load_checkpoint(p)
    p.write_bytes(b"\x02\x00")
    with pytest.raises(CorruptFileError):
        load_checkpoint(p)


def test_pad_never_attended(tiny_state, rng):
    trace = {}
    forward(tiny_state, _feats(rng, 8), [[BOS, 4, PAD, PAD]], trace=trace)
    probs = trace["attention"]["dec.l0.self"]
    assert np.all(probs[0, :, :, 2:] < 1e-12)
