"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import analysis, corpus, sweep
from .augment import AugmentPolicy, expand_with_speed, mask_rng, sample_masks
from .decode import beam_search, greedy_decode
from .errors import ConfigError, DataError, DomainError, LayoutError, NumericalError, PairingError, ParseError
from .metrics import score_corpus
from .model import ModelConfig, Vocab, init, load_checkpoint
from .training import FeatureStore, HyperParams, Trainer, joint_finetune, load_config, parse_hyperparams

logger = logging.getLogger("tinyst")

DECODE_COLUMNS = ("id", "hypothesis", "normalized_score", "truncated")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# configuration ----------------------------------------------------------------------

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size"}
_POLICY_KEYS = {f.name for f in fields(AugmentPolicy)}
_HP_KEYS = {f.name for f in fields(HyperParams)}
_OTHER_KEYS = {"low_bleu_threshold"}


def _settings(args) -> dict:
    values = load_config(args.config) if args.config else {}
    unknown = set(values) - _MODEL_KEYS - _POLICY_KEYS - _HP_KEYS - _OTHER_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown configuration key(s): {', '.join(sorted(unknown))}")
    return values


def _cast(value: str, like):
    if isinstance(like, bool):
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, tuple):
        return tuple(float(v) for v in str(value).split(","))
    return type(like)(float(value)) if isinstance(like, int) else type(like)(value)


def build_hp(args, settings: dict) -> HyperParams:
    hp = parse_hyperparams({k: v for k, v in settings.items() if k in _HP_KEYS})
    overrides = {}
    for name in ("lr_peak", "label_smoothing", "batch_size", "warmup_steps", "patience", "beam_size", "max_epochs"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return hp.replace(**overrides)


def build_policy(args, settings: dict) -> AugmentPolicy:
    base = AugmentPolicy()
    values = {k: _cast(v, getattr(base, k)) for k, v in settings.items() if k in _POLICY_KEYS}
    if getattr(args, "sp", False):
        values["sp_enabled"] = True
    if getattr(args, "sa", False):
        values["sa_enabled"] = True
    if args.seed is not None:
        values["seed"] = args.seed
    return AugmentPolicy(**{**base.to_dict(), **values})


def build_model_config(settings: dict, vocab_size: int) -> ModelConfig:
    base = ModelConfig(vocab_size=vocab_size)
    values = {k: _cast(v, getattr(base, k)) for k, v in settings.items() if k in _MODEL_KEYS}
    return replace(base, **values).validate()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, path, split: str) -> corpus.Manifest:
    """Load a manifest with audio paths resolved against ``--audio-root``
    or, by default, the manifest's own directory."""
    m = corpus.load_manifest(path, split=split)
    root = Path(args.audio_root) if getattr(args, "audio_root", None) else Path(path).parent
    utts = [u if Path(u.audio_path).is_absolute()
            else replace(u, audio_path=str((root / u.audio_path).resolve()))
            for u in m]
    return corpus.Manifest(m.split, utts)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


# decode-output TSV ------------------------------------------------------------------

def write_decode_tsv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\", lineterminator="\n")
        w.writerow(DECODE_COLUMNS)
        for row in rows:
            w.writerow([row["id"], row["hypothesis"], f"{row['normalized_score']:.6f}",
                        "1" if row["truncated"] else "0"])


def read_decode_tsv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\"))
    if not rows or tuple(rows[0]) != DECODE_COLUMNS:
        raise ParseError(f"{path}: expected header {' / '.join(DECODE_COLUMNS)}", 1)
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(DECODE_COLUMNS):
            raise ParseError(f"{path}: expected {len(DECODE_COLUMNS)} fields, got {len(row)}", i)
        out.append({"id": row[0], "hypothesis": row[1], "normalized_score": float(row[2]),
                    "truncated": row[3] == "1"})
    return out


def _read_segments(path):
    """``(ids, texts)`` from decode TSV, manifest TSV or plain lines (ids None)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n").split("\t")
    if tuple(first) == DECODE_COLUMNS:
        rows = read_decode_tsv(path)
        return [r["id"] for r in rows], [r["hypothesis"] for r in rows]
    if set(corpus.COLUMNS) <= set(first):
        m = corpus.load_manifest(path, split="test")
        return m.ids, [u.tgt_text for u in m]
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return None, lines


def _paired(hyp_path, ref_path):
    """Hypotheses and references aligned by id when both files carry ids,
    by line order otherwise."""
    hyp_ids, hyps = _read_segments(hyp_path)
    ref_ids, refs = _read_segments(ref_path)
    if len(hyps) != len(refs):
        raise PairingError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if hyp_ids is not None and ref_ids is not None:
        by_id = dict(zip(hyp_ids, hyps))
        missing = [i for i in ref_ids if i not in by_id]
        if missing:
            raise PairingError(f"{len(missing)} reference ids have no hypothesis, e.g. {missing[0]!r}")
        hyps = [by_id[i] for i in ref_ids]
    ids = ref_ids or hyp_ids or [str(i + 1) for i in range(len(refs))]
    return ids, hyps, refs


# subcommands ------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    out = _out_dir(args)
    if args.toy:
        from .toy import LEXICON, SECOND_LEXICON, make_toy_corpus
        lexicon = SECOND_LEXICON if args.toy_lexicon == "second" else LEXICON
        seed = args.seed if args.seed is not None else 0
        m = make_toy_corpus(out, n=args.toy, seed=seed, src_lang=args.toy_lang, lexicon=lexicon,
                            split=args.split or "train")
        manifests = {f"{out / (m.split + '.tsv')}": m}
    else:
        if not args.manifests:
            raise UsageError("prepare: give manifest paths or --toy N")
        manifests = {p: corpus.load_manifest(p, split=args.split or "train") for p in args.manifests}
    report = {path: corpus.stats(m).to_dict() for path, m in manifests.items()}
    _write_json(out / "stats.json", report)
    print(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_augment(args) -> int:
    settings = _settings(args)
    policy = build_policy(args, settings)
    m = corpus.load_manifest(args.manifest, split="train")
    out = _out_dir(args)
    if args.preview_masks is not None:
        n_frames = args.preview_masks
        preview = {u.id: [list(mk) for mk in sample_masks(n_frames, 80, policy, mask_rng(policy.seed, u.id, args.epoch))]
                   for u in m}
        _write_json(out / "masks.json", preview)
        print(json.dumps(preview, sort_keys=True, ensure_ascii=False))
        return EXIT_OK
    expanded = expand_with_speed(m, policy)
    target = out / (Path(args.manifest).stem + ".sp.tsv")
    corpus.save_manifest(expanded, target)
    print(f"{len(m)} -> {len(expanded)} utterances written to {target}")
    return EXIT_OK


def _fit(args, train_m, dev_m, joint_target=None):
    settings = _settings(args)
    hp = build_hp(args, settings)
    policy = build_policy(args, settings)
    vocab = Vocab.from_texts([u.tgt_text for u in train_m] + [u.tgt_text for u in dev_m])
    cfg = build_model_config(settings, len(vocab))
    dtype = np.float64 if args.float64 else np.float32
    state = init(cfg, hp.seed, dtype=dtype, vocab=vocab)
    store = FeatureStore()
    out = _out_dir(args)
    ckpt = out / "model.ckpt"
    if joint_target is None:
        best, log = Trainer(hp, policy, store, ckpt).fit(state, train_m, dev_m)
    else:
        k = args.k if args.k == "convergence" else int(args.k)
        best, log = joint_finetune(state, train_m, joint_target, dev_m, hp, k, policy, store, ckpt)
    log.save(out / "train_log.jsonl")
    summary = {"best_epoch": log.best_epoch, "returned_epoch": log.returned_epoch, "stop_reason": log.stop_reason,
               "phases": log.phase_boundaries, "hyperparams": hp.to_dict(), "policy": policy.to_dict(),
               "checkpoint": str(ckpt)}
    _write_json(out / "train_summary.json", summary)
    print(json.dumps(summary, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_train(args) -> int:
    return _fit(args, _load(args, args.train, "train"), _load(args, args.dev, "dev"))


def cmd_finetune_joint(args) -> int:
    target = _load(args, args.target, "train")
    aux = _load(args, args.aux, "train")
    dev_m = _load(args, args.dev, "dev")
    seed = args.seed if args.seed is not None else 0
    mixed = corpus.mix(target, aux, seed)
    logger.info("mixed manifest: %d utterances (%d target + %d auxiliary)", len(mixed), len(target), len(aux))
    return _fit(args, mixed, dev_m, joint_target=target)


def cmd_decode(args) -> int:
    state = load_checkpoint(args.checkpoint)
    m = _load(args, args.manifest, "test")
    store = FeatureStore()
    rows = []
    for u in m:
        f = store(u.audio_path)
        if args.beam == 1:
            h = greedy_decode(state, f, max_len=args.max_len)
        else:
            h = beam_search(state, f, beam=args.beam, max_len=args.max_len)
        rows.append({"id": u.id, "hypothesis": state.vocab.decode(h.tokens),
                     "normalized_score": h.normalized_score, "truncated": h.truncated})
    out = _out_dir(args)
    write_decode_tsv(out / "decode.tsv", rows)
    print(f"decoded {len(rows)} utterances to {out / 'decode.tsv'}")
    return EXIT_OK


def cmd_score(args) -> int:
    _, hyps, refs = _paired(args.hyp, args.ref)
    report = score_corpus(hyps, refs).to_dict()
    _write_json(_out_dir(args) / "score.json", report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    settings = _settings(args)
    grid = sweep.Grid.parse(args.axis) if args.axis else sweep.Grid({"lr": sweep.STUDIED_VALUES["lr"]})
    hp = build_hp(args, settings)
    policy = build_policy(args, settings)
    train_m = _load(args, args.train, "train")
    dev_m = _load(args, args.dev, "dev")
    vocab = Vocab.from_texts([u.tgt_text for u in train_m] + [u.tgt_text for u in dev_m])
    runner = sweep.TrainingRunner(train_m, dev_m, build_model_config(settings, len(vocab)), vocab,
                                  FeatureStore(), max_epochs=hp.max_epochs)
    out = _out_dir(args)
    records = sweep.run_grid(grid, runner, budget=args.budget, out_path=out / "records.jsonl",
                             parallel=args.parallel, base=hp, policy=policy)
    failed = [r for r in records if not r.ok]
    for r in failed:
        logger.warning("run %s failed: %s", r.key, r.error)
    best = sweep.select_best(records)
    print(json.dumps({"runs": len(records), "failed": len(failed), "best": best.to_dict()}, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    settings = _settings(args)
    threshold = args.threshold
    if threshold is None:
        threshold = float(settings.get("low_bleu_threshold", analysis.DEFAULT_LOW_BLEU))
    ids, hyps, refs = _paired(args.hyp, args.ref)
    buckets = analysis.classify_lengths(list(zip(hyps, refs)), threshold, ids)
    audits = [analysis.numeral_audit(h, r, i) for i, h, r in zip(ids, hyps, refs)]
    rep = analysis.report(buckets, audits)
    out = _out_dir(args)
    (out / "analysis.md").write_text(rep.to_markdown(), encoding="utf-8")
    with open(out / "analysis.jsonl", "w", encoding="utf-8") as fh:
        for b, a in zip(buckets, audits):
            fh.write(json.dumps({**b.to_dict(), "numerals": a.to_dict()}, ensure_ascii=False, sort_keys=True) + "\n")
    print(rep.to_markdown(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    records = sweep.load_records(args.records)
    text = sweep.render_tables([r for r in records if r.ok], args.layout)
    (_out_dir(args) / f"report_{args.layout}.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# parser -----------------------------------------------------------------------------

def _global_flags(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="flat key = value settings file")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--out", default=default if suppress else ".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _hp_flags(p):
    p.add_argument("--lr-peak", dest="lr_peak", type=float)
    p.add_argument("--label-smoothing", dest="label_smoothing", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--beam-size", dest="beam_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--sp", action="store_true", help="enable speed perturbation")
    p.add_argument("--sa", action="store_true", help="enable SpecAugment")
    p.add_argument("--audio-root", dest="audio_root", help="defaults to the manifest's directory")
    p.add_argument("--float64", action="store_true", help="train in double precision")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tinyst", description="Desk-scale speech translation toolkit.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("prepare", cmd_prepare, "validate manifests and compute corpus statistics")
    p.add_argument("manifests", nargs="*")
    p.add_argument("--split", choices=corpus.SPLITS)
    p.add_argument("--toy", type=int, metavar="N", help="generate an N-utterance synthetic corpus into --out")
    p.add_argument("--toy-lang", default="bho")
    p.add_argument("--toy-lexicon", choices=("first", "second"), default="first")

    p = add("augment", cmd_augment, "expand a manifest with speed factors or preview SpecAugment masks")
    p.add_argument("manifest")
    p.add_argument("--preview-masks", type=int, metavar="FRAMES")
    p.add_argument("--epoch", type=int, default=1)

    p = add("train", cmd_train, "train with early stopping on the dev set")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    _hp_flags(p)

    p = add("finetune-joint", cmd_finetune_joint, "joint training on two pairs, then target-only epochs")
    p.add_argument("--target", required=True, help="target-pair training manifest")
    p.add_argument("--aux", required=True, help="auxiliary-pair training manifest")
    p.add_argument("--dev", required=True)
    p.add_argument("--k", default="1", help="target-only epochs, or 'convergence'")
    _hp_flags(p)

    p = add("decode", cmd_decode, "decode a manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--max-len", type=int)
    p.add_argument("--audio-root", dest="audio_root")

    p = add("score", cmd_score, "corpus BLEU and chrF++ of decode output against a manifest")
    p.add_argument("--hyp", required=True, help="decode TSV or one segment per line")
    p.add_argument("--ref", required=True, help="manifest TSV or one segment per line")

    p = add("sweep", cmd_sweep, "run a hyperparameter grid")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--axis", action="append", metavar="KEY=V1,V2",
                   help=f"grid axis, repeatable; keys: {', '.join(sweep.AXES)}")
    p.add_argument("--budget", type=int)
    p.add_argument("--parallel", type=int, default=1)
    _hp_flags(p)

    p = add("analyze", cmd_analyze, "length buckets and numeral audit of decode output")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--threshold", type=float, help="LOW_BLEU sentence-BLEU threshold")

    p = add("report", cmd_report, "render sweep records as a Markdown table")
    p.add_argument("--records", required=True)
    p.add_argument("--layout", required=True, choices=sorted(sweep.LAYOUTS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, LayoutError, DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
