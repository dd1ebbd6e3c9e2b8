"""Manifest ingestion, validation, statistics and multilingual mixing.

A manifest is a UTF-8 TSV with the header::

    id  audio  duration_sec  src_lang  tgt_lang  src_text  tgt_text

Tabs and newlines are not allowed inside fields, so no quoting rules apply.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateIdError,
    EmptyCorpusError,
    ParseError,
    SchemaError,
    SplitMismatchError,
)

COLUMNS = ("id", "audio", "duration_sec", "src_lang", "tgt_lang", "src_text", "tgt_text")
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Utterance:
    id: str
    audio_path: str
    duration_sec: float
    src_lang: str
    tgt_lang: str
    src_text: str
    tgt_text: str

    @property
    def pair(self) -> tuple[str, str]:
        return (self.src_lang, self.tgt_lang)


@dataclass(frozen=True)
class Manifest:
    split: str
    utterances: tuple[Utterance, ...] = ()

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ParseError(f"unknown split {self.split!r}")
        object.__setattr__(self, "utterances", tuple(self.utterances))
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise DuplicateIdError(u.id)
            seen.add(u.id)

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.utterances]


@dataclass(frozen=True)
class CorpusStats:
    n_utterances: int
    total_hours: float
    mean_duration_sec: float
    per_pair: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_utterances": self.n_utterances,
            "total_hours": self.total_hours,
            "mean_duration_sec": self.mean_duration_sec,
            "per_pair": {f"{s}-{t}": v for (s, t), v in sorted(self.per_pair.items())},
        }


def _check_field(value: str, column: str, line: int | None):
    if "\t" in value or "\n" in value or "\r" in value:
        raise ParseError(f"tab or newline inside field {column!r}", line)


def validate_utterance(u: Utterance, line: int | None = None) -> Utterance:
    if not u.id:
        raise ParseError("empty id", line)
    if not (math.isfinite(u.duration_sec) and u.duration_sec > 0):
        raise ParseError(f"duration_sec must be > 0, got {u.duration_sec!r}", line)
    if not u.tgt_text.strip():
        raise ParseError("empty tgt_text", line)
    for col, value in zip(COLUMNS, _row(u)):
        _check_field(value, col, line)
    return u


def _row(u: Utterance) -> list[str]:
    return [u.id, u.audio_path, repr(float(u.duration_sec)), u.src_lang, u.tgt_lang,
            u.src_text, u.tgt_text]


def load_manifest(path, split: str = "train") -> Manifest:
    """Read a manifest TSV; rows keep their file order."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError("id", "manifest has no header line")
    header = lines[0].rstrip("\r").split("\t")
    for col in COLUMNS:
        if col not in header:
            raise SchemaError(col)
    index = {name: header.index(name) for name in COLUMNS}

    utterances = []
    seen = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.rstrip("\r")
        if not raw.strip():
            continue
        cells = raw.split("\t")
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(cells)}", lineno)
        try:
            duration = float(cells[index["duration_sec"]])
        except ValueError:
            raise ParseError(
                f"non-numeric duration_sec {cells[index['duration_sec']]!r}", lineno
            ) from None
        u = Utterance(
            id=cells[index["id"]],
            audio_path=cells[index["audio"]],
            duration_sec=duration,
            src_lang=cells[index["src_lang"]],
            tgt_lang=cells[index["tgt_lang"]],
            src_text=cells[index["src_text"]],
            tgt_text=cells[index["tgt_text"]],
        )
        validate_utterance(u, lineno)
        if u.id in seen:
            raise DuplicateIdError(u.id)
        seen.add(u.id)
        utterances.append(u)
    return Manifest(split, utterances)


def dumps_manifest(m: Manifest) -> str:
    out = ["\t".join(COLUMNS)]
    for u in m:
        validate_utterance(u)
        out.append("\t".join(_row(u)))
    return "\n".join(out) + "\n"


def save_manifest(m: Manifest, path) -> None:
    Path(path).write_text(dumps_manifest(m), encoding="utf-8", newline="\n")


def stats(m: Manifest) -> CorpusStats:
    if len(m) == 0:
        raise EmptyCorpusError("cannot compute statistics of an empty manifest")
    # fsum is exact, so totals do not depend on row order
    total_sec = math.fsum(u.duration_sec for u in m)
    per_pair = {}
    for pair in sorted({u.pair for u in m}):
        durs = [u.duration_sec for u in m if u.pair == pair]
        per_pair[pair] = {"n_utterances": len(durs), "total_hours": math.fsum(durs) / 3600.0}
    return CorpusStats(
        n_utterances=len(m),
        total_hours=total_sec / 3600.0,
        mean_duration_sec=total_sec / len(m),
        per_pair=per_pair,
    )


def _tagged(m: Manifest) -> list[Utterance]:
    return [replace(u, id=f"{u.src_lang}-{u.tgt_lang}:{u.id}") for u in m]


def mix(a: Manifest, b: Manifest, seed: int) -> Manifest:
    """Union of two train manifests, shuffled deterministically by ``seed``.

    If the two id sets overlap, every id is prefixed with its language-pair
    tag (``bho-hi:``) before merging.
    """
    if a.split != "train" or b.split != "train":
        raise SplitMismatchError(f"mix needs two train splits, got {a.split!r} and {b.split!r}")
    if set(a.ids) & set(b.ids):
        merged = _tagged(a) + _tagged(b)
    else:
        merged = list(a) + list(b)
    order = np.random.default_rng(seed).permutation(len(merged))
    return Manifest("train", [merged[i] for i in order])


def filter_pair(m: Manifest, src: str) -> Manifest:
    return Manifest(m.split, [u for u in m if u.src_lang == src])


def concat(manifests: Iterable[Manifest], split: str | None = None) -> Manifest:
    manifests = list(manifests)
    split = split or (manifests[0].split if manifests else "train")
    return Manifest(split, [u for m in manifests for u in m])


def pair_counts(m: Manifest) -> Counter:
    return Counter(u.pair for u in m)


def synthetic_manifest(
    n: int,
    total_hours: float,
    src_lang: str = "bho",
    tgt_lang: str = "hi",
    split: str = "train",
    prefix: str | None = None,
    seed: int = 0,
) -> Manifest:
    """Placeholder manifest with ``n`` rows summing to ``total_hours``.

    Durations vary around the mean; no audio files are created.
    """
    if n <= 0:
        return Manifest(split, [])
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, size=n)
    durations = weights / weights.sum() * total_hours * 3600.0
    prefix = prefix or src_lang
    utts = [
        Utterance(
            id=f"{prefix}_{i:06d}",
            audio_path=f"audio/{prefix}_{i:06d}.wav",
            duration_sec=float(d),
            src_lang=src_lang,
            tgt_lang=tgt_lang,
            src_text="",
            tgt_text="पाठ",
        )
        for i, d in enumerate(durations)
    ]
    return Manifest(split, utts)


def from_rows(rows: Sequence[dict], split: str = "train") -> Manifest:
    return Manifest(split, [validate_utterance(Utterance(**r)) for r in rows])
