"""Corpus BLEU and chrF++ compatible with the sacrebleu defaults.

BLEU uses the mteval-13a tokenizer, exponential smoothing and a brevity
penalty; chrF++ combines character 1-6-grams (whitespace removed) with word
1-2-grams at beta = 2, averaging precision and recall over the orders that
occur before taking the F-score.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache

from .errors import PairingError

MAX_ORDER = 4
CHAR_ORDER = 6
WORD_ORDER = 2
BETA = 2.0

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]
_CHRF_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")


@lru_cache(maxsize=2 ** 16)
def _tokenize(text: str) -> tuple[str, ...]:
    line = text.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (line.replace("&quot;", '"').replace("&amp;", "&")
                .replace("&lt;", "<").replace("&gt;", ">"))
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return tuple(line.split())


def tokenize(text: str) -> list[str]:
    """mteval-13a tokenization."""
    return list(_tokenize(text))


@dataclass(frozen=True)
class ScoreReport:
    bleu: float
    ngram_precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    chrf_pp: float | None = None
    effective_order: int = MAX_ORDER

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ngram_precisions"] = list(self.ngram_precisions)
        return d


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyp: str, ref: str):
    h, r = tokenize(hyp), tokenize(ref)
    correct, total = [], []
    for n in range(1, MAX_ORDER + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        correct.append(sum(min(c, rc[g]) for g, c in hc.items()))
        total.append(max(len(h) - n + 1, 0))
    return correct, total, len(h), len(r)


def _check_pairing(hyps, refs):
    if len(hyps) != len(refs):
        raise PairingError(f"{len(hyps)} hypotheses vs {len(refs)} references")


def bleu_from_stats(correct, total, hyp_len, ref_len) -> ScoreReport:
    bp = 1.0
    if hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len) if hyp_len > 0 else 0.0
    precisions = [0.0] * MAX_ORDER
    if not any(correct):
        return ScoreReport(0.0, tuple(precisions), bp, hyp_len, ref_len)
    smooth = 1.0
    order = 0
    for n in range(MAX_ORDER):
        if total[n] == 0:
            break
        order = n + 1
        if correct[n] == 0:
            smooth *= 2.0
            precisions[n] = 1.0 / (smooth * total[n])
        else:
            precisions[n] = correct[n] / total[n]
    score = bp * math.exp(sum(math.log(p) for p in precisions[:order]) / order) * 100.0
    return ScoreReport(score, tuple(precisions), bp, hyp_len, ref_len, effective_order=order)


def corpus_bleu(hyps, refs) -> ScoreReport:
    """Single-reference corpus BLEU.

    n-gram orders with no hypothesis n-grams anywhere in the corpus are left
    out of the geometric mean instead of zeroing the score.
    """
    hyps, refs = list(hyps), list(refs)
    _check_pairing(hyps, refs)
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        c, t, hl, rl = bleu_stats(h, r)
        correct = [a + b for a, b in zip(correct, c)]
        total = [a + b for a, b in zip(total, t)]
        hyp_len += hl
        ref_len += rl
    return bleu_from_stats(correct, total, hyp_len, ref_len)


def sentence_bleu(hyp: str, ref: str) -> float:
    return corpus_bleu([hyp], [ref]).bleu


def _chrf_words(text: str) -> list[str]:
    out = []
    for w in text.split():
        if len(w) == 1:
            out.append(w)
        elif w[-1] in _CHRF_PUNCT:
            out += [w[:-1], w[-1]]
        elif w[0] in _CHRF_PUNCT:
            out += [w[0], w[1:]]
        else:
            out.append(w)
    return out


def chrf_stats(hyp: str, ref: str) -> list[tuple[int, int, int]]:
    """``(hyp_count, ref_count, matches)`` per order: chars 1..6 then words 1..2."""
    hc_line, rc_line = "".join(hyp.split()), "".join(ref.split())
    pairs = []
    for n in range(1, CHAR_ORDER + 1):
        pairs.append((Counter(hc_line[i:i + n] for i in range(len(hc_line) - n + 1)),
                      Counter(rc_line[i:i + n] for i in range(len(rc_line) - n + 1))))
    hw, rw = _chrf_words(hyp), _chrf_words(ref)
    pairs += [(_ngrams(hw, n), _ngrams(rw, n)) for n in range(1, WORD_ORDER + 1)]
    stats = []
    for h, r in pairs:
        # hypothesis n-grams are not counted when the reference has none of that order
        n_hyp = sum(h.values()) if r else 0
        stats.append((n_hyp, sum(r.values()), sum(min(c, r[g]) for g, c in h.items())))
    return stats


def chrf_from_stats(stats) -> float:
    factor = BETA ** 2
    prec = rec = 0.0
    order = 0
    for n_hyp, n_ref, n_match in stats:
        if n_hyp > 0 and n_ref > 0:
            prec += n_match / n_hyp
            rec += n_match / n_ref
            order += 1
    if order == 0:
        return 0.0
    prec /= order
    rec /= order
    if prec + rec == 0:
        return 0.0
    return 100.0 * (1 + factor) * prec * rec / (factor * prec + rec)


def chrf_pp(hyps, refs) -> float:
    hyps, refs = list(hyps), list(refs)
    _check_pairing(hyps, refs)
    total = [(0, 0, 0)] * (CHAR_ORDER + WORD_ORDER)
    for h, r in zip(hyps, refs):
        total = [tuple(a + b for a, b in zip(t, s)) for t, s in zip(total, chrf_stats(h, r))]
    return chrf_from_stats(total)


def score_corpus(hyps, refs) -> ScoreReport:
    """BLEU report with chrF++ filled in."""
    hyps, refs = list(hyps), list(refs)
    report = corpus_bleu(hyps, refs)
    return ScoreReport(**{**asdict(report), "chrf_pp": chrf_pp(hyps, refs)})
