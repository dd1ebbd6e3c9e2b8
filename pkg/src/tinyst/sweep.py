"""Hyperparameter grids, resumable sweeps, best-run selection and tables."""

from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .augment import AugmentPolicy
from .errors import ConfigError, LayoutError, NoResultError
from .training import HyperParams

# The learning-rate axis holds reference values; the run uses
# ``base.lr_peak * value / LR_REFERENCE`` so a toy model keeps the ratios.
LR_REFERENCE = 1e-5

AXES = ("batch", "beam", "lr", "ls", "patience", "sa", "sp", "warmup")

STUDIED_VALUES = {
    "lr": (2e-5, 1e-5, 1e-6),
    "ls": (0.0, 0.1, 0.2),
    "batch": (5, 10, 32, 64),
    "warmup": (100, 250, 350, 400),
    "patience": (5, 10, 20),
    "beam": (1, 5, 10),
    "sp": (False, True),
    "sa": (False, True),
}

DEFAULT_CONFIG = {
    "lr": 1e-5, "ls": 0.1, "batch": 32, "sp": False, "sa": True,
    "warmup": 250, "patience": 10, "beam": 10,
}

_AXIS_TYPES = {"lr": float, "ls": float, "batch": int, "warmup": int, "patience": int, "beam": int,
               "sp": bool, "sa": bool}


def _coerce(axis: str, value):
    kind = _AXIS_TYPES[axis]
    if kind is bool:
        if isinstance(value, str):
            low = value.strip().lower()
            if low not in ("true", "false", "on", "off", "1", "0"):
                raise ConfigError(axis, f"cannot read {value!r} as a flag")
            return low in ("true", "on", "1")
        return bool(value)
    try:
        return kind(float(value)) if kind is int else kind(value)
    except (TypeError, ValueError):
        raise ConfigError(axis, f"cannot read {value!r} for axis {axis}") from None


@dataclass(frozen=True)
class Grid:
    """Candidate values per axis; runs are the cross product."""

    axes: dict

    def __post_init__(self):
        clean = {}
        for key, values in self.axes.items():
            if key not in _AXIS_TYPES:
                raise ConfigError(key, f"unknown sweep axis {key!r}")
            values = tuple(_coerce(key, v) for v in values)
            if not values:
                raise ConfigError(key, f"axis {key!r} is empty")
            clean[key] = values
        object.__setattr__(self, "axes", clean)

    def __len__(self):
        return math.prod(len(v) for v in self.axes.values())

    def configs(self) -> list[dict]:
        """Full configurations in lexicographic axis order.

        Axes are nested by sorted name, the last name varying fastest;
        within an axis values keep their listed order. Axes not in the grid
        take their default.
        """
        keys = sorted(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[k] for k in keys)):
            out.append({**DEFAULT_CONFIG, **dict(zip(keys, combo))})
        return out

    @classmethod
    def parse(cls, specs) -> "Grid":
        """From ``["lr=2e-5,1e-5", "batch=5,10"]`` style strings."""
        axes = {}
        for spec in specs:
            key, sep, values = spec.partition("=")
            if not sep:
                raise ConfigError(spec, f"expected axis=v1,v2,... got {spec!r}")
            axes[key.strip()] = [v for v in values.split(",") if v.strip()]
        return cls(axes)


def config_key(config: dict) -> str:
    return json.dumps({k: config[k] for k in sorted(config)}, sort_keys=True)


def hyperparams_for(config: dict, base: HyperParams | None = None,
                    policy: AugmentPolicy | None = None) -> tuple[HyperParams, AugmentPolicy]:
    base = base or HyperParams()
    policy = policy or AugmentPolicy()
    hp = base.replace(
        lr_peak=base.lr_peak * config["lr"] / LR_REFERENCE,
        label_smoothing=config["ls"],
        batch_size=config["batch"],
        warmup_steps=config["warmup"],
        patience=config["patience"],
        beam_size=config["beam"],
    )
    pol = AugmentPolicy(**{**policy.to_dict(), "sp_enabled": config["sp"], "sa_enabled": config["sa"]})
    return hp, pol


@dataclass
class ExperimentRecord:
    config: dict
    hyperparams: dict
    policy: dict
    dev_bleu: float | None = None
    dev_chrf: float | None = None
    best_epoch: int | None = None
    wall_time_sec: float = 0.0
    error: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def key(self) -> str:
        return config_key(self.config)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @classmethod
    def from_config(cls, config: dict, **scores) -> "ExperimentRecord":
        """Record for a configuration without running it (e.g. transcribed results)."""
        config = {**DEFAULT_CONFIG, **config}
        hp, pol = hyperparams_for(config)
        return cls(config, hp.to_dict(), pol.to_dict(), **scores)


def load_records(path) -> list[ExperimentRecord]:
    """Read a record file, ignoring a torn final line."""
    path = Path(path)
    if not path.exists():
        return []
    out = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(ExperimentRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise
    return out


def _append(path: Path, record: ExperimentRecord) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")
        fh.flush()


Runner = Callable[[HyperParams, AugmentPolicy], dict]


def _execute(runner: Runner, config: dict, base: HyperParams | None, policy: AugmentPolicy | None):
    hp, pol = hyperparams_for(config, base, policy)
    start = time.perf_counter()
    rec = ExperimentRecord(dict(config), hp.to_dict(), pol.to_dict())
    try:
        out = runner(hp, pol)
        bleu, chrf = float(out["dev_bleu"]), float(out["dev_chrf"])
        if not (math.isfinite(bleu) and math.isfinite(chrf)):
            raise FloatingPointError(f"non-finite scores {bleu}, {chrf}")
        rec.dev_bleu, rec.dev_chrf = bleu, chrf
        rec.best_epoch = int(out.get("best_epoch", 0))
        rec.extra = dict(out.get("extra", {}))
    except Exception as exc:  # a failed run must not end the sweep
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time_sec = time.perf_counter() - start
    return rec


def run_grid(grid: Grid, runner: Runner, budget: int | None = None, out_path=None, parallel: int = 1,
             base: HyperParams | None = None, policy: AugmentPolicy | None = None) -> list[ExperimentRecord]:
    """Run the first ``budget`` configurations of ``grid``.

    With ``out_path`` every finished record is appended as one JSON line,
    and configurations already present in the file are not run again.
    Records come back in grid order.
    """
    if budget is not None and budget < 1:
        raise ConfigError("budget", "budget must be >= 1")
    plan = grid.configs()[:budget]
    done = {}
    path = Path(out_path) if out_path is not None else None
    if path is not None:
        existing = load_records(path)
        # rewrite so a torn tail line is dropped before appending
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(r.to_json() + "\n" for r in existing), encoding="utf-8")
        done = {r.key: r for r in existing}
    todo = [c for c in plan if config_key(c) not in done]
    if parallel > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = pool.map(lambda c: _execute(runner, c, base, policy), todo)
            for rec in results:
                if path is not None:
                    _append(path, rec)
                done[rec.key] = rec
    else:
        for config in todo:
            rec = _execute(runner, config, base, policy)
            if path is not None:
                _append(path, rec)
            done[rec.key] = rec
    return [done[config_key(c)] for c in plan]


def select_best(records) -> ExperimentRecord:
    """Highest dev BLEU; then higher chrF++, smaller batch, earlier record."""
    ranked = [(i, r) for i, r in enumerate(records) if r.ok]
    if not ranked:
        raise NoResultError("no successful runs to select from")
    _, best = max(ranked, key=lambda ir: (ir[1].dev_bleu, ir[1].dev_chrf if ir[1].dev_chrf is not None else -1.0,
                                          -ir[1].config["batch"], -ir[0]))
    return best


class TrainingRunner:
    """Trains a fresh model per configuration and beam-decodes the dev set."""

    def __init__(self, train, dev, model_config, vocab, store, max_epochs: int | None = None,
                 dtype=np.float32):
        self.train, self.dev = train, dev
        self.model_config, self.vocab = model_config, vocab
        self.store = store
        self.max_epochs = max_epochs
        self.dtype = dtype

    def __call__(self, hp: HyperParams, policy: AugmentPolicy) -> dict:
        from .decode import beam_search
        from .metrics import chrf_pp, corpus_bleu
        from .model import init
        from .training import Trainer

        if self.max_epochs is not None:
            hp = hp.replace(max_epochs=self.max_epochs)
        state = init(self.model_config, hp.seed, dtype=self.dtype, vocab=self.vocab)
        state, log = Trainer(hp, policy, self.store).fit(state, self.train, self.dev)
        hyps = [self.vocab.decode(beam_search(state, self.store(u.audio_path), beam=hp.beam_size).tokens)
                for u in self.dev]
        refs = [u.tgt_text for u in self.dev]
        return {"dev_bleu": corpus_bleu(hyps, refs).bleu, "dev_chrf": chrf_pp(hyps, refs),
                "best_epoch": log.returned_epoch}


# tables -----------------------------------------------------------------------------

def format_lr(value: float) -> str:
    """``1e-05`` style floats as ``1e-5``."""
    mantissa, _, exp = f"{value:.0e}".partition("e")
    return f"{mantissa}e{int(exp)}"


def _fmt_score(v) -> str:
    return "" if v is None else f"{v:.1f}"


def _parse_score(s: str):
    return None if s == "" else float(s)


def _parse_bool(s: str) -> bool:
    if s not in ("True", "False"):
        raise LayoutError(f"expected True/False, got {s!r}")
    return s == "True"


# (header, alignment, render, parse, record field)
_COLUMNS = {
    "lr": ("LR", "---", lambda r: format_lr(r.config["lr"]), float, ("config", "lr")),
    "ls": ("LS", "---", lambda r: f"{r.config['ls']:.1f}", float, ("config", "ls")),
    "batch": ("Batch size", "---:", lambda r: str(r.config["batch"]), int, ("config", "batch")),
    "sp": ("SP", ":---:", lambda r: str(r.config["sp"]), _parse_bool, ("config", "sp")),
    "sa": ("SA", ":---:", lambda r: str(r.config["sa"]), _parse_bool, ("config", "sa")),
    "warmup": ("Warm up steps", "---:", lambda r: str(r.config["warmup"]), int, ("config", "warmup")),
    "patience": ("Patience", "---:", lambda r: str(r.config["patience"]), int, ("config", "patience")),
    "beam": ("Beam size", "---:", lambda r: str(r.config["beam"]), int, ("config", "beam")),
    "bleu": ("BLEU", "---:", lambda r: _fmt_score(r.dev_bleu), _parse_score, ("dev_bleu",)),
    "chrf": ("chrF++", "---:", lambda r: _fmt_score(r.dev_chrf), _parse_score, ("dev_chrf",)),
    "strategy": ("Strategy", "---", lambda r: str(r.extra.get("strategy", "")), str, ("extra", "strategy")),
    "epochs": ("Epochs", "---:", lambda r: str(r.extra.get("epochs", "")), str, ("extra", "epochs")),
}

LAYOUTS = {
    "lr_batch": ("lr", "batch", "bleu", "chrf"),
    "smoothing": ("ls", "bleu", "chrf"),
    "augment": ("sp", "sa", "bleu"),
    "full": ("lr", "ls", "batch", "sp", "sa", "warmup", "patience", "beam", "bleu"),
    "joint": ("strategy", "epochs", "bleu"),
}


def _layout(name: str):
    try:
        return LAYOUTS[name]
    except KeyError:
        raise LayoutError(f"unknown layout {name!r}; choose from {', '.join(sorted(LAYOUTS))}") from None


def _row(cells) -> str:
    return "| " + " | ".join(cells) + " |"


def render_tables(records, layout: str) -> str:
    """Markdown table of ``records`` in the named column layout."""
    cols = [_COLUMNS[c] for c in _layout(layout)]
    lines = [_row(c[0] for c in cols), "|" + "|".join(c[1] for c in cols) + "|"]
    for r in records:
        lines.append(_row(c[2](r) for c in cols))
    return "\n".join(lines) + "\n"


def parse_table(text: str, layout: str) -> list[dict]:
    """Inverse of :func:`render_tables` for the rendered fields.

    Each row comes back as ``{column: value}`` using the layout's column
    names (``lr``, ``batch``, ``bleu`` ...).
    """
    names = _layout(layout)
    cols = [_COLUMNS[c] for c in names]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise LayoutError("table needs a header and an alignment row")
    header = [c.strip() for c in lines[0].strip().strip("|").split("|")]
    if header != [c[0] for c in cols]:
        raise LayoutError(f"header {header} does not match layout {layout!r}")
    rows = []
    for line in lines[2:]:
        cells = [c.strip() for c in line.strip()[1:-1].split("|")]
        if len(cells) != len(cols):
            raise LayoutError(f"row has {len(cells)} cells, expected {len(cols)}")
        rows.append({n: c[3](cell) for n, c, cell in zip(names, cols, cells)})
    return rows
