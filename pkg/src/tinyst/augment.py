"""SpecAugment masking and speed-factor corpus expansion."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from .corpus import Manifest
from .dsp import speed_ref
from .errors import DomainError, DuplicateIdError

MASK_FILL = 0.0


@dataclass(frozen=True)
class AugmentPolicy:
    sp_enabled: bool = False
    sp_factors: tuple = (0.9, 1.0, 1.1)
    sa_enabled: bool = False
    max_time_mask: int = 30
    max_freq_mask: int = 30
    n_time_masks: int = 2
    n_freq_masks: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sp_factors", tuple(float(f) for f in self.sp_factors))
        if any(not f > 0 for f in self.sp_factors):
            raise DomainError("speed factors must be > 0")
        for name in ("max_time_mask", "max_freq_mask", "n_time_masks", "n_freq_masks"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sp_factors"] = list(self.sp_factors)
        return d


def mask_rng(seed: int, utt_id: str, epoch: int) -> np.random.Generator:
    """Independent stream per (seed, utterance, epoch)."""
    return np.random.default_rng([seed & 0xFFFFFFFF, epoch, zlib.crc32(utt_id.encode("utf-8"))])


def sample_masks(n_frames: int, n_bins: int, p: AugmentPolicy, rng: np.random.Generator):
    """Draw mask rectangles as ``(axis, start, width)``; axis 0 is time."""
    masks = []
    for axis, size, count, max_width in (
        (0, n_frames, p.n_time_masks, p.max_time_mask),
        (1, n_bins, p.n_freq_masks, p.max_freq_mask),
    ):
        for _ in range(count):
            w = int(rng.integers(0, min(max_width, size) + 1))
            start = int(rng.integers(0, size - w + 1))
            masks.append((axis, start, w))
    return masks


def apply_masks(f: np.ndarray, masks) -> np.ndarray:
    out = np.array(f, copy=True)
    for axis, start, width in masks:
        if axis == 0:
            out[start:start + width, :] = MASK_FILL
        else:
            out[:, start:start + width] = MASK_FILL
    return out


def spec_augment(f: np.ndarray, p: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Mask random time and frequency bands of a normalised feature matrix.

    Unmasked cells are returned bit-identical. ``p.sa_enabled`` is not
    consulted here; callers decide when to augment.
    """
    t, fdim = f.shape
    return apply_masks(f, sample_masks(t, fdim, p, rng))


def expand_with_speed(m: Manifest, p: AugmentPolicy) -> Manifest:
    """One copy of every utterance per speed factor.

    Copies are named ``<id>#sp<factor>``; non-unit factors point at a virtual
    ``<audio>#sp<factor>`` reference that the audio loader resamples on read.
    """
    if not p.sp_factors:
        raise DomainError("no speed factors configured")
    out = []
    seen = set()
    for u in m:
        for factor in p.sp_factors:
            new_id = f"{u.id}#sp{factor!r}"
            if new_id in seen:
                raise DuplicateIdError(new_id)
            seen.add(new_id)
            audio = u.audio_path if factor == 1.0 else speed_ref(u.audio_path, factor)
            out.append(replace(u, id=new_id, audio_path=audio, duration_sec=u.duration_sec / factor))
    return Manifest(m.split, out)
