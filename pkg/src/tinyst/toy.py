"""Synthetic tone corpus with Devanagari targets.

Every character of the target lexicon owns a pure tone. An utterance reads
its target sentence aloud as one tone segment per character, with a short
silence between words, so the audio fully determines the text.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import Manifest, Utterance, save_manifest
from .dsp import SAMPLE_RATE, Waveform, write_wav

LEXICON = ("राम", "घर", "जल", "कल", "नमक", "पानी", "दिन", "मन", "सब", "काम")
SECOND_LEXICON = ("आज", "गाना", "दस", "फल")
CHAR_SEC = 0.05
GAP_SEC = 0.03
AMPLITUDE = 0.5


def char_frequencies(lexicon=LEXICON + SECOND_LEXICON) -> dict:
    chars = sorted({c for w in lexicon for c in w})
    freqs = np.geomspace(250.0, 3500.0, len(chars))
    return {c: float(f) for c, f in zip(chars, freqs)}


def synthesize(text: str, freqs: dict, rng: np.random.Generator | None = None) -> Waveform:
    n_char = int(CHAR_SEC * SAMPLE_RATE)
    n_gap = int(GAP_SEC * SAMPLE_RATE)
    t = np.arange(n_char) / SAMPLE_RATE
    ramp = np.minimum(1.0, np.minimum(np.arange(n_char), np.arange(n_char)[::-1]) / 40.0)
    parts = [np.zeros(n_gap)]
    for word in text.split():
        for c in word:
            parts.append(AMPLITUDE * ramp * np.sin(2 * np.pi * freqs[c] * t))
        parts.append(np.zeros(n_gap))
    x = np.concatenate(parts)
    if rng is not None:
        x = x + rng.normal(scale=1e-3, size=x.shape)
    return Waveform(np.clip(x, -1.0, 1.0))


def make_sentences(n: int, n_words: int, lexicon, rng) -> list[str]:
    out, seen = [], set()
    while len(out) < n:
        s = " ".join(rng.choice(lexicon, size=n_words))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def make_toy_corpus(out_dir, n: int = 20, n_words: int = 4, seed: int = 0, src_lang: str = "bho",
                    lexicon=LEXICON, prefix: str | None = None, split: str = "train") -> Manifest:
    """Write ``n`` wav files plus ``<split>.tsv`` into ``out_dir``.

    Audio paths in the manifest are relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    freqs = char_frequencies()
    prefix = prefix or src_lang
    utts = []
    for i, sentence in enumerate(make_sentences(n, n_words, list(lexicon), rng)):
        w = synthesize(sentence, freqs, rng)
        rel = f"audio/{prefix}_{i:03d}.wav"
        write_wav(out_dir / rel, w)
        utts.append(Utterance(f"{prefix}_{i:03d}", rel, round(w.duration_sec, 6), src_lang, "hi", "", sentence))
    m = Manifest(split, utts)
    save_manifest(m, out_dir / f"{split}.tsv")
    return m
