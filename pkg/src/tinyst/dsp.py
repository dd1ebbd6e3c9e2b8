"""Audio I/O, resampling-based speed perturbation and log-mel features.

Feature front-end: 80 mel bins over 20 Hz - 7.6 kHz, 25 ms Hann window,
10 ms hop, 512-point FFT, natural log with a 1e-10 floor. Feature matrices
are plain ``(T, 80)`` float arrays.
"""

from __future__ import annotations

import math
import re
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, DomainError, TooShortError, UnsupportedFormatError

SAMPLE_RATE = 16000
N_MELS = 80
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
F_MIN = 20.0
F_MAX = 7600.0
LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-10
SINC_TAPS = 16

_SPEED_REF = re.compile(r"^(?P<path>.*)#sp(?P<factor>[0-9.]+)$")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DomainError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("waveform samples must be finite")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise DomainError("waveform samples must lie in [-1, 1]")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_sec(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def read_wav(path) -> Waveform:
    """Read 16-bit mono 16 kHz PCM; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise UnsupportedFormatError("channels", f"expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise UnsupportedFormatError("bit_depth", f"expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            if wf.getframerate() != SAMPLE_RATE:
                raise UnsupportedFormatError("sample_rate", f"expected {SAMPLE_RATE} Hz, got {wf.getframerate()} Hz")
            n = wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormatError("format", msg) from None
        raise CorruptFileError(f"{path}: {msg}") from None
    except (EOFError, struct.error) as exc:
        raise CorruptFileError(f"{path}: truncated header ({exc})") from None
    if len(raw) != 2 * n:
        raise CorruptFileError(f"{path}: header announces {n} frames, found {len(raw) // 2}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, SAMPLE_RATE)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(np.asarray(w.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def speed_ref(path: str, factor: float) -> str:
    return f"{path}#sp{float(factor)!r}"


def load_audio(ref: str, root=None) -> Waveform:
    """Load an audio reference, resolving ``path#sp<factor>`` virtual copies."""
    m = _SPEED_REF.match(ref)
    path, factor = (m.group("path"), float(m.group("factor"))) if m else (ref, 1.0)
    p = Path(path)
    if root is not None and not p.is_absolute():
        p = Path(root) / p
    w = read_wav(p)
    return speed_perturb(w, factor) if factor != 1.0 else w


def _sinc_kernel(x: np.ndarray, cutoff: float) -> np.ndarray:
    half = SINC_TAPS / 2
    window = np.where(np.abs(x) < half, 0.5 * (1.0 + np.cos(np.pi * x / half)), 0.0)
    return cutoff * np.sinc(cutoff * x) * window


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Play ``w`` ``factor`` times faster by resampling the time axis.

    Output length is ``round(n / factor)``; pitch scales with the factor.
    Uses a 16-tap Hann-windowed sinc interpolator, low-passed at
    ``min(1, 1/factor)`` of Nyquist to avoid aliasing when speeding up.
    """
    if not factor > 0:
        raise DomainError(f"speed factor must be > 0, got {factor}")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    x = w.samples
    n = len(x)
    n_out = round_half_away(n / factor)
    t = np.arange(n_out, dtype=np.float64) * factor
    base = np.floor(t).astype(np.int64)
    taps = base[:, None] + np.arange(-SINC_TAPS // 2 + 1, SINC_TAPS // 2 + 1)[None, :]
    weights = _sinc_kernel(t[:, None] - taps, min(1.0, 1.0 / factor))
    valid = (taps >= 0) & (taps < n)
    gathered = np.where(valid, x[np.clip(taps, 0, max(n - 1, 0))], 0.0) if n else np.zeros_like(weights)
    y = np.sum(gathered * weights, axis=1)
    return Waveform(np.clip(y, -1.0, 1.0), w.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sr=SAMPLE_RATE, fmin=F_MIN, fmax=F_MAX) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


_FBANK = mel_filterbank()
_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)


def num_frames(n_samples: int) -> int:
    if n_samples < WIN_LENGTH:
        return 0
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def log_mel(w: Waveform) -> np.ndarray:
    x = np.asarray(w.samples if isinstance(w, Waveform) else w, dtype=np.float64)
    if len(x) < WIN_LENGTH:
        raise TooShortError(WIN_LENGTH, len(x))
    t = num_frames(len(x))
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(t)[:, None]
    frames = x[idx] * _WINDOW
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    return np.log(power @ _FBANK.T + LOG_FLOOR)


def cmvn(f: np.ndarray) -> np.ndarray:
    """Per-utterance, per-bin mean/variance normalisation."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] < 2:
        raise TooShortError(2, f.shape[0])
    mean = f.mean(axis=0)
    var = np.maximum(f.var(axis=0), VAR_FLOOR)
    return (f - mean) / np.sqrt(var)


def write_features(path, f: np.ndarray) -> None:
    """Binary dump: two little-endian uint32 (T, F) then float32 frames."""
    f = np.asarray(f, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *f.shape))
        fh.write(f.tobytes(order="C"))


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CorruptFileError(f"{path}: missing feature header")
    t, fdim = struct.unpack("<II", data[:8])
    if len(data) != 8 + 4 * t * fdim:
        raise CorruptFileError(f"{path}: expected {t}x{fdim} floats")
    return np.frombuffer(data[8:], dtype="<f4").reshape(t, fdim).astype(np.float64)


def features_for(ref: str, root=None) -> np.ndarray:
    """Normalised log-mel features for one audio reference."""
    return cmvn(log_mel(load_audio(ref, root)))
