"""Label-smoothed training with warmup, Adam, early stopping and the
joint-then-target fine-tuning schedule."""

from __future__ import annotations

import configparser
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .augment import AugmentPolicy, expand_with_speed, mask_rng, spec_augment
from .corpus import Manifest
from .decode import greedy_decode_batch
from .dsp import features_for
from .errors import ConfigError, DomainError, EmptyCorpusError, NumericalError
from .metrics import chrf_pp, corpus_bleu
from .model import PAD, ModelState, forward, pad_ids, save_checkpoint

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-9


@dataclass(frozen=True)
class HyperParams:
    lr_peak: float = 3e-4
    label_smoothing: float = 0.1
    batch_size: int = 32
    warmup_steps: int = 250
    patience: int = 10
    beam_size: int = 10
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.lr_peak > 0:
            raise ConfigError("lr_peak")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing")
        for name in ("batch_size", "warmup_steps", "patience", "beam_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(name)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "HyperParams":
        return HyperParams(**{**asdict(self), **changes})


_HP_TYPES = {f.name: f.type for f in fields(HyperParams)}


def parse_hyperparams(values: dict, base: HyperParams | None = None) -> HyperParams:
    base = base or HyperParams()
    out = {}
    for key, raw in values.items():
        if key not in _HP_TYPES:
            raise ConfigError(key, f"unknown hyperparameter {key!r}")
        cast = float if _HP_TYPES[key] == "float" else int
        try:
            out[key] = cast(raw) if cast is float else int(float(raw))
        except (TypeError, ValueError):
            raise ConfigError(key, f"cannot parse {key}={raw!r}") from None
    return base.replace(**out)


def load_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string("[config]\n" + text)
    return dict(parser["config"])


# loss, schedule, optimiser ----------------------------------------------------------

def label_smoothed_loss(logits: np.ndarray, targets: np.ndarray, eps: float, pad_id: int = PAD):
    """Mean smoothed cross-entropy over non-PAD positions and its logit gradient.

    The target distribution puts ``1 - eps`` on the gold token and
    ``eps / (V - 1)`` on each other token.
    """
    if not 0.0 <= eps < 1.0:
        raise DomainError(f"label smoothing must be in [0, 1), got {eps}")
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    v = logits.shape[-1]
    if eps > 0 and v < 2:
        raise DomainError("label smoothing needs at least two classes")
    logp = ag.log_softmax_np(logits, axis=-1)
    q = np.full(logits.shape, eps / (v - 1) if v > 1 else 0.0, dtype=logits.dtype)
    np.put_along_axis(q, targets[..., None], 1.0 - eps, axis=-1)
    mask = (targets != pad_id).astype(logits.dtype)
    n = mask.sum()
    if n == 0:
        return 0.0, np.zeros_like(logits)
    per_pos = -(q * logp).sum(axis=-1)
    loss = float((per_pos * mask).sum() / n)
    grad = (np.exp(logp) - q) * (mask / n)[..., None]
    return loss, grad


def cross_entropy(logits: np.ndarray, targets: np.ndarray, pad_id: int = PAD) -> float:
    logp = ag.log_softmax_np(np.asarray(logits), axis=-1)
    gold = np.take_along_axis(logp, np.asarray(targets)[..., None], axis=-1)[..., 0]
    mask = np.asarray(targets) != pad_id
    return float(-(gold * mask).sum() / mask.sum()) if mask.any() else 0.0


def lr_at_step(t: int, hp: HyperParams) -> float:
    """Linear warmup to ``lr_peak`` then inverse-square-root decay."""
    w = hp.warmup_steps
    if t <= w:
        return hp.lr_peak * t / w
    return hp.lr_peak * math.sqrt(w / t)


def adam_step(state: ModelState, grads: dict | None = None, lr: float = 1e-3,
              betas=ADAM_BETAS, eps=ADAM_EPS) -> ModelState:
    """Bias-corrected Adam update, applied in place; returns ``state``."""
    if grads is None:
        grads = {k: p.grad for k, p in state.params.items()}
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(name, f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.opt_m.get(name)
        v = state.opt_v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.opt_m[name] = m.astype(p.data.dtype)
        state.opt_v[name] = v.astype(p.data.dtype)
        if lr:
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state


def batch_loss(state: ModelState, features, seqs, eps: float, training=False, rng=None) -> ag.Tensor:
    """Smoothed loss of BOS...EOS sequences as a differentiable scalar."""
    prefix = pad_ids([s[:-1] for s in seqs])
    targets = pad_ids([s[1:] for s in seqs])
    logits = forward(state, features, prefix, training=training, rng=rng)
    loss, grad = label_smoothed_loss(logits.data, targets, eps)

    def backward(g):
        logits._accumulate(grad * g)

    return ag.custom(np.asarray(loss, dtype=logits.dtype), [logits], backward)


# early stopping ---------------------------------------------------------------------

class EarlyStopping:
    """Patience rule on a score where higher is better.

    Scores may be tuples, compared lexicographically.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = None
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, score) -> bool:
        """Record ``score``; True when training should stop."""
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.bad_epochs == 0


def simulate_early_stopping(scores, patience: int, max_epochs: int | None = None):
    """Run the stopping rule over a score sequence: ``(stop_epoch, best_epoch, reason)``."""
    stopper = EarlyStopping(patience)
    limit = len(scores) if max_epochs is None else min(max_epochs, len(scores))
    for epoch in range(1, limit + 1):
        if stopper.update(epoch, scores[epoch - 1]):
            return epoch, stopper.best_epoch, "patience"
    return limit, stopper.best_epoch, "max_epochs"


# training loop ----------------------------------------------------------------------

@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    phase_boundaries: list = field(default_factory=list)
    returned_epoch: int = 0

    def argmax_epoch(self) -> int:
        """Epoch with the highest dev BLEU (chrF++ breaks ties, then earliest)."""
        if not self.records:
            return 0
        best = max(self.records, key=lambda r: (r["dev_bleu"], r["dev_chrf"], -r["epoch"]))
        return best["epoch"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    def phase(self, name: str) -> list:
        return [r for r in self.records if r["phase"] == name]

    @property
    def best_record(self):
        return next((r for r in self.records if r["epoch"] == self.best_epoch), None)


class FeatureStore:
    """Caches normalised log-mel features per audio reference."""

    def __init__(self, audio_root=None, loader: Callable | None = None):
        self.audio_root = audio_root
        self.loader = loader or (lambda ref: features_for(ref, self.audio_root))
        self._cache = {}

    def __call__(self, ref: str) -> np.ndarray:
        if ref not in self._cache:
            self._cache[ref] = self.loader(ref)
        return self._cache[ref]

    def put(self, ref: str, feats: np.ndarray) -> None:
        self._cache[ref] = feats


def make_batches(lengths, batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Length-sorted buckets of ``batch_size`` items in shuffled order."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    buckets = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [buckets[i] for i in rng.permutation(len(buckets))]


def evaluate(state: ModelState, manifest: Manifest, store: FeatureStore, batch_size: int = 32):
    """Greedy-decode ``manifest`` and return ``(bleu, chrf, hypotheses)``."""
    hyps = []
    for i in range(0, len(manifest), batch_size):
        chunk = manifest.utterances[i:i + batch_size]
        out = greedy_decode_batch(state, [store(u.audio_path) for u in chunk])
        hyps.extend(state.vocab.decode(h.tokens) for h in out)
    refs = [u.tgt_text for u in manifest]
    return corpus_bleu(hyps, refs).bleu, chrf_pp(hyps, refs), hyps


class Trainer:
    """Runs epochs over one manifest and logs dev scores.

    Early stopping monitors dev BLEU; equal BLEU is broken by dev chrF++.
    """

    def __init__(self, hp: HyperParams, policy: AugmentPolicy | None = None, store: FeatureStore | None = None,
                 checkpoint_path=None, eval_batch_size: int = 32):
        self.hp = hp
        self.policy = policy or AugmentPolicy()
        self.store = store or FeatureStore()
        self.checkpoint_path = checkpoint_path
        self.eval_batch_size = eval_batch_size

    def _prepare(self, state: ModelState, manifest: Manifest):
        if len(manifest) == 0:
            raise EmptyCorpusError("training manifest is empty")
        if state.vocab is None:
            raise ConfigError("vocab", "model state carries no vocabulary")
        if self.policy.sp_enabled:
            manifest = expand_with_speed(manifest, self.policy)
        items = [(u.id, u.audio_path, state.vocab.encode(u.tgt_text)) for u in manifest]
        lengths = [self.store(ref).shape[0] for _, ref, _ in items]
        return items, lengths

    def run_epoch(self, state: ModelState, items, lengths, epoch: int) -> float:
        hp = self.hp
        order_rng = np.random.default_rng([hp.seed, epoch, 0])
        drop_rng = np.random.default_rng([hp.seed, epoch, 1])
        losses = []
        for batch in make_batches(lengths, hp.batch_size, order_rng):
            feats = []
            for i in batch:
                utt_id, ref, _ = items[i]
                f = self.store(ref)
                if self.policy.sa_enabled:
                    f = spec_augment(f, self.policy, mask_rng(self.policy.seed, utt_id, epoch))
                feats.append(f)
            state.zero_grad()
            loss = batch_loss(state, feats, [items[i][2] for i in batch], hp.label_smoothing,
                              training=True, rng=drop_rng)
            if not np.isfinite(loss.data):
                raise NumericalError("loss")
            loss.backward()
            adam_step(state, lr=lr_at_step(state.step + 1, hp))
            losses.append(float(loss.data))
        state.zero_grad()
        state.epoch += 1
        return float(np.mean(losses))

    def fit(self, state: ModelState, train: Manifest, dev: Manifest, *, max_epochs: int | None = None,
            early_stopping: bool = True, phase: str = "train", log: TrainLog | None = None):
        """Train until patience runs out (or for exactly ``max_epochs`` when
        ``early_stopping`` is off). Returns the best-epoch state when early
        stopping, the last state otherwise."""
        if len(dev) == 0:
            raise EmptyCorpusError("dev manifest is empty")
        log = log if log is not None else TrainLog()
        items, lengths = self._prepare(state, train)
        epochs = self.hp.max_epochs if max_epochs is None else max_epochs
        stopper = EarlyStopping(self.hp.patience)
        best_state = state.copy()
        offset = len(log.records)
        log.phase_boundaries.append({"phase": phase, "first_epoch": offset + 1, "n_train": len(items)})
        stop_reason = "max_epochs" if early_stopping else "fixed_epochs"
        for k in range(1, epochs + 1):
            epoch = offset + k
            train_loss = self.run_epoch(state, items, lengths, epoch)
            bleu, chrf, _ = evaluate(state, dev, self.store, self.eval_batch_size)
            log.records.append({
                "epoch": epoch, "phase": phase, "phase_epoch": k, "train_loss": train_loss,
                "dev_bleu": bleu, "dev_chrf": chrf, "lr": lr_at_step(state.step, self.hp),
                "step": state.step,
            })
            logger.info("[%s] epoch %d loss %.4f dev BLEU %.2f chrF++ %.2f", phase, epoch, train_loss, bleu, chrf)
            if not early_stopping:
                continue
            stop = stopper.update(epoch, (bleu, chrf))
            if stopper.improved_last:
                best_state = state.copy()
                if self.checkpoint_path is not None:
                    save_checkpoint(best_state, self.checkpoint_path)
            if stop:
                stop_reason = "patience"
                break
        if early_stopping:
            result = best_state
            log.returned_epoch = stopper.best_epoch
        else:
            result = state
            log.returned_epoch = log.records[-1]["epoch"] if epochs else log.returned_epoch
            if self.checkpoint_path is not None:
                save_checkpoint(state, self.checkpoint_path)
        log.best_epoch = log.argmax_epoch()
        log.stop_reason = stop_reason
        log.phase_boundaries[-1]["stop_reason"] = stop_reason
        return result, log


def train(model: ModelState, train_manifest: Manifest, dev: Manifest, hp: HyperParams,
          policy: AugmentPolicy | None = None, store: FeatureStore | None = None, checkpoint_path=None):
    """Early-stopped training; returns ``(best_state, TrainLog)``."""
    trainer = Trainer(hp, policy, store, checkpoint_path)
    return trainer.fit(model.copy(), train_manifest, dev)


def joint_finetune(model: ModelState, mixed: Manifest, target_only: Manifest, dev: Manifest,
                   hp: HyperParams, k_target_epochs="convergence", policy: AugmentPolicy | None = None,
                   store: FeatureStore | None = None, checkpoint_path=None):
    """Train on the mixed corpus until early stop, then on the target pair.

    ``k_target_epochs`` is an epoch count (exactly that many target-only
    epochs, no early stopping) or ``"convergence"`` (the patience rule).
    """
    mixed_pairs = {u.pair for u in mixed}
    if not {u.pair for u in target_only} <= mixed_pairs:
        raise DomainError("mixed manifest does not contain the target language pair")
    trainer = Trainer(hp, policy, store, checkpoint_path)
    state, log = trainer.fit(model.copy(), mixed, dev, phase="joint")
    if k_target_epochs == "convergence":
        state, log = trainer.fit(state, target_only, dev, phase="target", log=log)
    else:
        k = int(k_target_epochs)
        if k < 0:
            raise DomainError("k_target_epochs must be >= 0")
        if k > 0:
            state, log = trainer.fit(state, target_only, dev, max_epochs=k, early_stopping=False,
                                     phase="target", log=log)
    return state, log
