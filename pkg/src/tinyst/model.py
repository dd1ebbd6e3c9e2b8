"""Tiny conformer-lite encoder and transformer decoder.

Encoder: stride-2 convolutional subsampling, sinusoidal positions, then
blocks of (depthwise convolution module, self-attention, feed-forward), each
pre-normed with a residual connection. Decoder: character embeddings,
causal self-attention, cross-attention over encoder memory, feed-forward.
Targets are characters; ids 0-3 are PAD, BOS, EOS, UNK.
"""

from __future__ import annotations

import json
import math
import struct
import unicodedata
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, CorruptFileError, NumericalError, TooShortError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")
CHECKPOINT_VERSION = 1
NEG_INF = -1e9


class Vocab:
    """Character inventory with fixed special ids."""

    def __init__(self, chars: Sequence[str] = ()):
        chars = [c for c in dict.fromkeys(chars) if c not in SPECIALS]
        self.tokens = list(SPECIALS) + chars
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_texts(cls, texts) -> "Vocab":
        chars = set()
        for t in texts:
            chars.update(unicodedata.normalize("NFC", t))
        return cls(sorted(chars))

    @classmethod
    def devanagari(cls) -> "Vocab":
        return cls([" "] + [chr(c) for c in range(0x0900, 0x0980)])

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, text: str, bos=True, eos=True) -> list[int]:
        ids = [self.index.get(c, UNK) for c in unicodedata.normalize("NFC", text)]
        return ([BOS] if bos else []) + ids + ([EOS] if eos else [])

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.tokens[i] if i != UNK and i < len(self.tokens) else "")
        return "".join(out)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ff_dim: int = 128
    conv_subsample_factor: int = 4
    dropout: float = 0.1
    n_mels: int = 80

    def validate(self) -> "ModelConfig":
        for name in ("vocab_size", "d_model", "n_heads", "enc_layers", "dec_layers",
                     "ff_dim", "conv_subsample_factor", "n_mels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ConfigError(name, f"{name} must be a positive integer, got {v!r}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size", "vocab_size must cover PAD, BOS and EOS")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model", f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        f = self.conv_subsample_factor
        if f & (f - 1):
            raise ConfigError("conv_subsample_factor", "subsampling factor must be a power of two")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout")
        return self

    @property
    def n_subsample(self) -> int:
        return int(math.log2(self.conv_subsample_factor))


@dataclass
class ModelState:
    config: ModelConfig
    params: dict
    step: int = 0
    epoch: int = 0
    opt_m: dict = field(default_factory=dict)
    opt_v: dict = field(default_factory=dict)
    vocab: Vocab | None = None

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()},
            self.step,
            self.epoch,
            {k: v.copy() for k, v in self.opt_m.items()},
            {k: v.copy() for k, v in self.opt_v.items()},
            self.vocab,
        )

    def astype(self, dtype) -> "ModelState":
        out = self.copy()
        for t in out.params.values():
            t.data = t.data.astype(dtype)
        out.opt_m = {k: v.astype(dtype) for k, v in out.opt_m.items()}
        out.opt_v = {k: v.astype(dtype) for k, v in out.opt_v.items()}
        return out

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())


# parameters -----------------------------------------------------------------------

def _linear(specs, name, n_in, n_out):
    specs[f"{name}.w"] = ((n_in, n_out), "xavier", n_in, n_out)
    specs[f"{name}.b"] = ((n_out,), "zeros", n_in, n_out)


def _norm(specs, name, d):
    specs[f"{name}.g"] = ((d,), "ones", d, d)
    specs[f"{name}.b"] = ((d,), "zeros", d, d)


def _attention_specs(specs, name, d):
    for proj in ("q", "k", "v", "o"):
        _linear(specs, f"{name}.{proj}", d, d)


def param_specs(cfg: ModelConfig) -> dict:
    """``name -> (shape, init, fan_in, fan_out)`` in a fixed order."""
    d, ff = cfg.d_model, cfg.ff_dim
    specs = {}
    c_in = cfg.n_mels
    for i in range(cfg.n_subsample):
        _linear(specs, f"enc.sub{i}", 3 * c_in, d)
        c_in = d
    if cfg.n_subsample == 0:
        _linear(specs, "enc.proj", c_in, d)
    for i in range(cfg.enc_layers):
        p = f"enc.l{i}"
        _norm(specs, f"{p}.conv_ln", d)
        _linear(specs, f"{p}.conv_pw1", d, 2 * d)
        specs[f"{p}.conv_dw.w"] = ((3, d), "xavier", 3, 3)
        specs[f"{p}.conv_dw.b"] = ((d,), "zeros", 3, 3)
        _linear(specs, f"{p}.conv_pw2", d, d)
        _norm(specs, f"{p}.att_ln", d)
        _attention_specs(specs, f"{p}.att", d)
        _norm(specs, f"{p}.ff_ln", d)
        _linear(specs, f"{p}.ff1", d, ff)
        _linear(specs, f"{p}.ff2", ff, d)
    _norm(specs, "enc.ln_out", d)
    specs["dec.emb"] = ((cfg.vocab_size, d), "xavier", cfg.vocab_size, d)
    for i in range(cfg.dec_layers):
        p = f"dec.l{i}"
        _norm(specs, f"{p}.self_ln", d)
        _attention_specs(specs, f"{p}.self", d)
        _norm(specs, f"{p}.cross_ln", d)
        _attention_specs(specs, f"{p}.cross", d)
        _norm(specs, f"{p}.ff_ln", d)
        _linear(specs, f"{p}.ff1", d, ff)
        _linear(specs, f"{p}.ff2", ff, d)
    _norm(specs, "dec.ln_out", d)
    _linear(specs, "dec.out", d, cfg.vocab_size)
    return specs


def init_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init(cfg: ModelConfig, seed: int, dtype=np.float64, vocab: Vocab | None = None) -> ModelState:
    """Scaled-uniform (Glorot) weights, zero biases, unit norm gains."""
    cfg.validate()
    if vocab is not None and len(vocab) != cfg.vocab_size:
        raise ConfigError("vocab_size", f"vocab has {len(vocab)} entries, config says {cfg.vocab_size}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, kind, fan_in, fan_out) in param_specs(cfg).items():
        if kind == "xavier":
            b = init_bound(fan_in, fan_out)
            value = rng.uniform(-b, b, size=shape)
        elif kind == "ones":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
    return ModelState(cfg, params, vocab=vocab)


# building blocks --------------------------------------------------------------------

def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def _lin(P, name, x):
    return x @ P[f"{name}.w"] + P[f"{name}.b"]


def _ln(P, name, x):
    return ag.layer_norm(x, P[f"{name}.g"], P[f"{name}.b"])


def _check(x: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericalError(where)
    return x


def _mask_time(x: Tensor, valid: np.ndarray) -> Tensor:
    return x * valid[:, :, None].astype(x.dtype)


def _pad_time(x: Tensor, before: int, after: int) -> Tensor:
    b, _, c = x.shape
    parts = []
    if before:
        parts.append(Tensor(np.zeros((b, before, c), dtype=x.dtype)))
    parts.append(x)
    if after:
        parts.append(Tensor(np.zeros((b, after, c), dtype=x.dtype)))
    return ag.concat(parts, axis=1)


def attention(P, name, xq, xkv, bias, cfg, training, rng, trace=None):
    b, lq, d = xq.shape
    lk = xkv.shape[1]
    h = cfg.n_heads
    dk = d // h

    def heads(t, n):
        return t.reshape(b, n, h, dk).transpose(0, 2, 1, 3)

    q = heads(_lin(P, f"{name}.q", xq), lq)
    k = heads(_lin(P, f"{name}.k", xkv), lk)
    v = heads(_lin(P, f"{name}.v", xkv), lk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk)) + Tensor(bias)
    probs = ag.softmax(scores, axis=-1)
    if trace is not None:
        trace.setdefault("attention", {})[name] = probs.data
    probs = ag.dropout(probs, cfg.dropout, rng, training)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
    return _lin(P, f"{name}.o", ctx)


def _feed_forward(P, name, x, cfg, training, rng):
    hdn = ag.dropout(ag.silu(_lin(P, f"{name}.ff1", _ln(P, f"{name}.ff_ln", x))), cfg.dropout, rng, training)
    return ag.dropout(_lin(P, f"{name}.ff2", hdn), cfg.dropout, rng, training)


def _conv_module(P, name, x, valid, cfg, training, rng):
    d = cfg.d_model
    y = _lin(P, f"{name}.conv_pw1", _ln(P, f"{name}.conv_ln", x))
    y = y[:, :, :d] * ag.sigmoid(y[:, :, d:])
    y = _mask_time(y, valid)
    t = y.shape[1]
    yp = _pad_time(y, 1, 1)
    w = P[f"{name}.conv_dw.w"]
    y = yp[:, 0:t] * w[0] + yp[:, 1:t + 1] * w[1] + yp[:, 2:t + 2] * w[2] + P[f"{name}.conv_dw.b"]
    y = _lin(P, f"{name}.conv_pw2", ag.silu(y))
    return ag.dropout(y, cfg.dropout, rng, training)


def subsampled_length(n: int, factor: int) -> int:
    return -(-n // factor)


def pad_features(features) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(features, np.ndarray) and features.ndim == 3:
        return features, np.full(features.shape[0], features.shape[1])
    lengths = np.array([f.shape[0] for f in features])
    out = np.zeros((len(features), lengths.max(), features[0].shape[1]))
    for i, f in enumerate(features):
        out[i, : len(f)] = f
    return out, lengths


def pad_ids(seqs, pad=PAD) -> np.ndarray:
    if isinstance(seqs, np.ndarray) and seqs.ndim == 2:
        return seqs
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def encode(state: ModelState, features, lengths=None, training=False, rng=None, trace=None):
    """Encoder memory ``(B, S, d)`` and its validity mask ``(B, S)``."""
    cfg, P = state.config, state.params
    dtype = state.dtype
    if lengths is None:
        feats, lengths = pad_features(features)
    else:
        feats = features
    if int(lengths.min()) < cfg.conv_subsample_factor:
        raise TooShortError(cfg.conv_subsample_factor, int(lengths.min()))
    x = Tensor(np.asarray(feats, dtype=dtype))
    valid = np.arange(x.shape[1])[None, :] < lengths[:, None]
    x = _mask_time(x, valid)
    for i in range(cfg.n_subsample):
        t_out = subsampled_length(x.shape[1], 2)
        xp = _pad_time(x, 1, 1)
        win = ag.concat([xp[:, j:j + 2 * t_out:2] for j in range(3)], axis=-1)
        x = ag.silu(_lin(P, f"enc.sub{i}", win))
        lengths = -(-lengths // 2)
        valid = np.arange(t_out)[None, :] < lengths[:, None]
        x = _check(_mask_time(x, valid), f"enc.sub{i}")
    if cfg.n_subsample == 0:
        x = _mask_time(_lin(P, "enc.proj", x), valid)
    s = x.shape[1]
    x = x + Tensor(sinusoidal_positions(s, cfg.d_model).astype(dtype))
    x = ag.dropout(x, cfg.dropout, rng, training)
    bias = np.where(valid, 0.0, NEG_INF).astype(dtype)[:, None, None, :]
    for i in range(cfg.enc_layers):
        p = f"enc.l{i}"
        x = x + _conv_module(P, p, x, valid, cfg, training, rng)
        h = _ln(P, f"{p}.att_ln", x)
        x = x + ag.dropout(attention(P, f"{p}.att", h, h, bias, cfg, training, rng, trace),
                           cfg.dropout, rng, training)
        x = x + _feed_forward(P, p, x, cfg, training, rng)
        x = _check(x, p)
    x = _ln(P, "enc.ln_out", x)
    return _mask_time(x, valid), valid


def decode_logits(state: ModelState, memory: Tensor, mem_valid: np.ndarray, prefix,
                  training=False, rng=None, trace=None) -> Tensor:
    """Teacher-forced decoder pass; ``prefix`` is a PAD-padded id batch."""
    cfg, P = state.config, state.params
    dtype = state.dtype
    tokens = pad_ids(prefix)
    b, n = tokens.shape
    x = ag.embedding(P["dec.emb"], tokens) * math.sqrt(cfg.d_model)
    x = x + Tensor(sinusoidal_positions(n, cfg.d_model).astype(dtype))
    x = ag.dropout(x, cfg.dropout, rng, training)
    causal = np.triu(np.ones((n, n), dtype=bool), k=1)
    self_masked = causal[None, :, :] | (tokens == PAD)[:, None, :]
    self_bias = np.where(self_masked, NEG_INF, 0.0).astype(dtype)[:, None, :, :]
    cross_bias = np.where(mem_valid, 0.0, NEG_INF).astype(dtype)[:, None, None, :]
    for i in range(cfg.dec_layers):
        p = f"dec.l{i}"
        h = _ln(P, f"{p}.self_ln", x)
        x = x + ag.dropout(attention(P, f"{p}.self", h, h, self_bias, cfg, training, rng, trace),
                           cfg.dropout, rng, training)
        h = _ln(P, f"{p}.cross_ln", x)
        x = x + ag.dropout(attention(P, f"{p}.cross", h, memory, cross_bias, cfg, training, rng, trace),
                           cfg.dropout, rng, training)
        x = x + _feed_forward(P, p, x, cfg, training, rng)
        x = _check(x, p)
    logits = _lin(P, "dec.out", _ln(P, "dec.ln_out", x))
    return _check(logits, "dec.out")


def forward(state: ModelState, features, target_prefix, training=False, rng=None, trace=None) -> Tensor:
    """Logits ``(B, L, vocab_size)`` for a feature batch and BOS-led prefixes."""
    memory, valid = encode(state, features, training=training, rng=rng, trace=trace)
    if trace is not None:
        trace["memory_lengths"] = valid.sum(axis=1)
    return decode_logits(state, memory, valid, target_prefix, training=training, rng=rng, trace=trace)


# gradient check -------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tolerance: float
    passed: bool
    worst: list = field(default_factory=list)

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"grad_check {verdict}: max rel err {self.max_rel_error:.3e} over "
                f"{self.n_checked} coords (tol {self.tolerance:g})")


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor guards vanishing gradients."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(state: ModelState, batch, tolerance: float = 1e-4, n_coords: int = 200,
               label_smoothing: float = 0.1, h: float = 1e-5, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    ``batch`` is ``(features, sequences)`` with BOS...EOS id sequences.
    Every parameter tensor contributes at least one sampled coordinate.
    """
    from .training import batch_loss

    if state.dtype != np.float64:
        raise ConfigError("dtype", "grad_check needs a float64 model")
    features, seqs = batch
    state.zero_grad()
    loss = batch_loss(state, features, seqs, label_smoothing)
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in state.params.items()}

    rng = np.random.default_rng(seed)
    names = list(state.params)
    coords = [(name, int(rng.integers(state.params[name].data.size))) for name in names]
    sizes = np.array([state.params[n].data.size for n in names], dtype=float)
    while len(coords) < n_coords:
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        coords.append((name, int(rng.integers(state.params[name].data.size))))

    def loss_at() -> float:
        with ag.no_grad():
            return float(batch_loss(state, features, seqs, label_smoothing).data)

    errors = []
    for name, flat in coords:
        arr = state.params[name].data.reshape(-1)
        orig = arr[flat]
        arr[flat] = orig + h
        up = loss_at()
        arr[flat] = orig - h
        down = loss_at()
        arr[flat] = orig
        numeric = (up - down) / (2 * h)
        a = float(analytic[name].reshape(-1)[flat])
        errors.append((relative_error(a, numeric, floor), abs(a - numeric), name, flat, a, numeric))
    state.zero_grad()
    errors.sort(key=lambda e: -e[0])
    max_rel = errors[0][0] if errors else 0.0
    return GradCheckReport(
        max_rel_error=max_rel,
        max_abs_error=max(e[1] for e in errors) if errors else 0.0,
        n_checked=len(errors),
        tolerance=tolerance,
        passed=max_rel < tolerance,
        worst=errors[:5],
    )


# checkpoints ----------------------------------------------------------------------

def save_checkpoint(state: ModelState, path) -> None:
    """JSON header (length-prefixed, uint64 LE) followed by raw LE arrays."""
    arrays = [(k, t.data) for k, t in state.params.items()]
    arrays += [(f"opt.m/{k}", v) for k, v in state.opt_m.items()]
    arrays += [(f"opt.v/{k}", v) for k, v in state.opt_v.items()]
    entries, blobs, offset = [], [], 0
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"))
        blob = le.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "step": state.step,
        "epoch": state.epoch,
        "vocab": state.vocab.tokens if state.vocab is not None else None,
        "tensors": entries,
    }
    raw = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> ModelState:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CorruptFileError(f"{path}: not a checkpoint")
    (n,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: bad header ({exc})") from None
    if "version" not in header:
        raise CorruptFileError(f"{path}: header has no version field")
    if header["version"] != CHECKPOINT_VERSION:
        raise CorruptFileError(f"{path}: unsupported checkpoint version {header['version']}")
    body = data[8 + n:]
    cfg = ModelConfig(**header["config"])
    params, m, v = {}, {}, {}
    for e in header["tensors"]:
        chunk = body[e["offset"]: e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CorruptFileError(f"{path}: tensor {e['name']} truncated")
        arr = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        arr = arr.astype(arr.dtype.newbyteorder("="))
        name = e["name"]
        if name.startswith("opt.m/"):
            m[name[6:]] = arr
        elif name.startswith("opt.v/"):
            v[name[6:]] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True, name=name)
    vocab = None
    if header.get("vocab"):
        vocab = Vocab(header["vocab"][len(SPECIALS):])
    return ModelState(cfg, params, header["step"], header["epoch"], m, v, vocab)
