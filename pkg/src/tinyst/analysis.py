"""Error analysis of hypothesis/reference pairs.

Two diagnostics: bucketing pairs by which side has more words (with low
sentence-BLEU flags), and auditing numerals after normalising digits,
Hindi and English number words and the crore/lakh place values.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .metrics import sentence_bleu, tokenize

DEFAULT_LOW_BLEU = 15.0
WORST_N = 20


class Category(str, Enum):
    REF_LONGER = "REF_LONGER"
    EQUAL = "EQUAL"
    HYP_LONGER = "HYP_LONGER"


class Verdict(str, Enum):
    MATCH = "MATCH"
    VALUE_MISMATCH = "VALUE_MISMATCH"
    SCRIPT_MISMATCH_ONLY = "SCRIPT_MISMATCH_ONLY"
    MISSING = "MISSING"


LOW_BLEU = "LOW_BLEU"
SUSPECT_TRUNCATION = "SUSPECT_TRUNCATION"
SUSPECT_NOISE = "SUSPECT_NOISE"


@dataclass(frozen=True)
class ErrorBucket:
    category: Category
    pair_id: str
    sentence_bleu: float
    flags: frozenset = frozenset()
    hyp_words: int = 0
    ref_words: int = 0

    def to_dict(self) -> dict:
        return {"id": self.pair_id, "category": self.category.value, "sentence_bleu": self.sentence_bleu,
                "flags": sorted(self.flags), "hyp_words": self.hyp_words, "ref_words": self.ref_words}


def classify_lengths(pairs, threshold: float = DEFAULT_LOW_BLEU, ids=None) -> list[ErrorBucket]:
    """Bucket ``(hyp, ref)`` pairs by 13a word counts and flag low scorers."""
    pairs = list(pairs)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(pairs))]
    out = []
    for pid, (hyp, ref) in zip(ids, pairs):
        nh, nr = len(tokenize(hyp)), len(tokenize(ref))
        cat = Category.REF_LONGER if nr > nh else Category.HYP_LONGER if nh > nr else Category.EQUAL
        score = sentence_bleu(hyp, ref)
        flags = set()
        if score < threshold:
            flags.add(LOW_BLEU)
            if cat is Category.REF_LONGER:
                flags.add(SUSPECT_TRUNCATION)
            elif cat is Category.HYP_LONGER:
                flags.add(SUSPECT_NOISE)
        out.append(ErrorBucket(cat, pid, score, frozenset(flags), nh, nr))
    return out


# numerals ---------------------------------------------------------------------------

_EN_UNITS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
             "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
             "eighteen", "nineteen"]
_EN_TENS = {"twenty": 20, "thirty": 30, "forty": 40, "fifty": 50, "sixty": 60, "seventy": 70,
            "eighty": 80, "ninety": 90}
EN_WORDS = {w: i for i, w in enumerate(_EN_UNITS)} | _EN_TENS

_HI_0_100 = (
    "शून्य एक दो तीन चार पाँच छह सात आठ नौ दस "
    "ग्यारह बारह तेरह चौदह पंद्रह सोलह सत्रह अठारह उन्नीस बीस "
    "इक्कीस बाईस तेईस चौबीस पच्चीस छब्बीस सत्ताईस अट्ठाईस उनतीस तीस "
    "इकतीस बत्तीस तैंतीस चौंतीस पैंतीस छत्तीस सैंतीस अड़तीस उनतालीस चालीस "
    "इकतालीस बयालीस तैंतालीस चवालीस पैंतालीस छियालीस सैंतालीस अड़तालीस उनचास पचास "
    "इक्यावन बावन तिरेपन चौवन पचपन छप्पन सत्तावन अट्ठावन उनसठ साठ "
    "इकसठ बासठ तिरेसठ चौंसठ पैंसठ छियासठ सड़सठ अड़सठ उनहत्तर सत्तर "
    "इकहत्तर बहत्तर तिहत्तर चौहत्तर पचहत्तर छिहत्तर सतहत्तर अठहत्तर उन्यासी अस्सी "
    "इक्यासी बयासी तिरासी चौरासी पचासी छियासी सत्तासी अट्ठासी नवासी नब्बे "
    "इक्यानबे बानबे तिरानबे चौरानबे पचानबे छियानबे सत्तानबे अट्ठानबे निन्यानबे सौ"
).split()
_HI_VARIANTS = {"पांच": 5, "छः": 6, "छ": 6, "पन्द्रह": 15, "सत्तरह": 17, "उन्तीस": 29, "चौसठ": 64,
                "इक्यानवे": 91, "बानवे": 92, "तिरानवे": 93, "चौरानवे": 94, "पचानवे": 95,
                "छियानवे": 96, "सत्तानवे": 97, "अट्ठानवे": 98, "निन्यानवे": 99, "नब्बे": 90}
HI_WORDS = {unicodedata.normalize("NFC", w): i for i, w in enumerate(_HI_0_100)}
HI_WORDS |= {unicodedata.normalize("NFC", w): v for w, v in _HI_VARIANTS.items()}
assert len(_HI_0_100) == 101

MULTIPLIERS = {
    "crore": 10 ** 7, "crores": 10 ** 7, "करोड़": 10 ** 7, "करोड": 10 ** 7,
    "lakh": 10 ** 5, "lakhs": 10 ** 5, "lac": 10 ** 5, "lacs": 10 ** 5, "लाख": 10 ** 5,
    "thousand": 10 ** 3, "हज़ार": 10 ** 3, "हजार": 10 ** 3,
    "hundred": 100,
}
MULTIPLIERS = {unicodedata.normalize("NFC", k): v for k, v in MULTIPLIERS.items()}

_DEVANAGARI_DIGITS = str.maketrans("०१२३४५६७८९", "0123456789")
_TOKEN = re.compile(r"[0-9०-९]+(?:[.,][0-9०-९]+)*|[^\W\d_]+(?:[ऀ-ःऺ-ॏॕ-ॗॢॣ]+[^\W\d_]*)*", re.UNICODE)


@dataclass(frozen=True)
class Numeral:
    value: int | float
    form: tuple
    surface: str


def _classify_token(tok: str):
    """``(kind, value)`` for a numeric token, or None."""
    if tok[0].isdigit():
        ascii_form = tok.translate(_DEVANAGARI_DIGITS)
        kind = "ascii_digits" if ascii_form == tok else "devanagari_digits"
        # commas are digit-group separators ("1,00,000")
        return kind, Decimal(ascii_form.replace(",", ""))
    low = unicodedata.normalize("NFC", tok.lower())
    if low in MULTIPLIERS:
        script = "latin" if low.isascii() else "devanagari"
        return f"{script}_multiplier", MULTIPLIERS[low]
    if low in EN_WORDS:
        return "latin_word", Decimal(EN_WORDS[low])
    if low in HI_WORDS:
        return "devanagari_word", Decimal(HI_WORDS[low])
    return None


def _normalize(value: Decimal):
    value = value.normalize()
    return int(value) if value == value.to_integral_value() else float(value)


def _tokens(text: str) -> list[str]:
    text = unicodedata.normalize("NFC", text)
    return _TOKEN.findall(text.replace("-", " "))


def extract_numerals_detailed(text: str) -> list[Numeral]:
    numerals = []
    run = []  # (kind, value, surface)

    def flush():
        if not run:
            return
        total = Decimal(0)
        current = None
        last_mult = None
        current_is_tens_word = False
        current_tokens = 0
        kinds, surfaces = [], []

        def emit():
            nonlocal total, current, last_mult
            if current is not None or total:
                value = total + (current if current is not None else 0)
                numerals.append(Numeral(_normalize(value), tuple(kinds), " ".join(surfaces)))
            total, current, last_mult = Decimal(0), None, None
            kinds.clear()
            surfaces.clear()

        for kind, value, surface in run:
            if kind.endswith("multiplier"):
                mult = value
                if last_mult is not None and mult >= last_mult:
                    # magnitudes must descend within one number; the digits just
                    # read belong to the next one
                    pending = current if current is not None else Decimal(1)
                    n = current_tokens if current is not None else 0
                    carried = (kinds[len(kinds) - n:], surfaces[len(surfaces) - n:])
                    del kinds[len(kinds) - n:], surfaces[len(surfaces) - n:]
                    current = None
                    emit()
                    current = pending
                    kinds.extend(carried[0])
                    surfaces.extend(carried[1])
                base = current if current is not None else Decimal(1)
                total += base * mult
                current = None
                last_mult = mult
                current_is_tens_word = False
            else:
                if current is not None:
                    if current_is_tens_word and kind == "latin_word" and 1 <= value <= 9:
                        current += value
                        current_tokens += 1
                        current_is_tens_word = False
                        kinds.append(kind)
                        surfaces.append(surface)
                        continue
                    emit()
                current = value
                current_tokens = 1
                current_is_tens_word = kind == "latin_word" and value in _EN_TENS.values()
            kinds.append(kind)
            surfaces.append(surface)
        emit()
        run.clear()

    for tok in _tokens(text):
        cls = _classify_token(tok)
        if cls is None:
            flush()
            continue
        run.append((cls[0], cls[1], tok))
    flush()
    return numerals


def extract_numerals(text: str) -> list:
    """Normalised absolute values of every numeral in ``text``.

    ``"8 crores 74 lakhs"`` gives ``[87400000]``; ``"87.4 lakhs"`` gives
    ``[8740000]``; ``"Fifteen"`` and ``"पन्द्रह"`` both give ``[15]``.
    """
    return [n.value for n in extract_numerals_detailed(text)]


def render_numeral(value) -> str:
    return str(value)


@dataclass(frozen=True)
class NumeralAudit:
    pair_id: str
    hyp_values: tuple
    ref_values: tuple
    verdict: Verdict
    missing_in: str | None = None

    def to_dict(self) -> dict:
        return {"id": self.pair_id, "verdict": self.verdict.value, "hyp_values": list(self.hyp_values),
                "ref_values": list(self.ref_values), "missing_in": self.missing_in}


def numeral_audit(hyp: str, ref: str, pair_id: str = "") -> NumeralAudit:
    """Compare numerals of both sides as multisets of normalised values."""
    h, r = extract_numerals_detailed(hyp), extract_numerals_detailed(ref)
    hv, rv = Counter(n.value for n in h), Counter(n.value for n in r)
    only_h, only_r = hv - rv, rv - hv
    missing_in = None
    if not only_h and not only_r:
        same_form = Counter((n.value, n.form) for n in h) == Counter((n.value, n.form) for n in r)
        verdict = Verdict.MATCH if same_form else Verdict.SCRIPT_MISMATCH_ONLY
    elif only_h and only_r:
        verdict = Verdict.VALUE_MISMATCH
    else:
        verdict = Verdict.MISSING
        missing_in = "hyp" if only_r else "ref"
    return NumeralAudit(pair_id, tuple(n.value for n in h), tuple(n.value for n in r), verdict, missing_in)


# report -----------------------------------------------------------------------------

@dataclass
class AnalysisReport:
    category_counts: dict = field(default_factory=dict)
    flag_counts: dict = field(default_factory=dict)
    worst: list = field(default_factory=list)
    verdict_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"category_counts": self.category_counts, "flag_counts": self.flag_counts,
                "worst": self.worst, "verdict_counts": self.verdict_counts}

    def to_markdown(self) -> str:
        lines = ["# Error analysis", "", "## Length categories", "", "| category | pairs |", "|---|---:|"]
        lines += [f"| {k} | {v} |" for k, v in self.category_counts.items()]
        lines += ["", "## Flags", "", "| flag | pairs |", "|---|---:|"]
        lines += [f"| {k} | {v} |" for k, v in self.flag_counts.items()]
        lines += ["", f"## Lowest sentence BLEU (up to {WORST_N})", "",
                  "| id | category | sentence BLEU | flags |", "|---|---|---:|---|"]
        lines += [f"| {w['id']} | {w['category']} | {w['sentence_bleu']:.1f} | {', '.join(w['flags'])} |"
                  for w in self.worst]
        lines += ["", "## Numeral audit", "", "| verdict | pairs |", "|---|---:|"]
        lines += [f"| {k} | {v} |" for k, v in self.verdict_counts.items()]
        return "\n".join(lines) + "\n"


def report(buckets, audits) -> AnalysisReport:
    buckets, audits = list(buckets), list(audits)
    cats = Counter(b.category for b in buckets)
    flags = Counter(f for b in buckets for f in b.flags)
    verdicts = Counter(a.verdict for a in audits)
    worst = sorted(buckets, key=lambda b: (b.sentence_bleu, b.pair_id))[:WORST_N]
    return AnalysisReport(
        category_counts={c.value: cats.get(c, 0) for c in Category},
        flag_counts={f: flags.get(f, 0) for f in (LOW_BLEU, SUSPECT_TRUNCATION, SUSPECT_NOISE)},
        worst=[b.to_dict() for b in worst],
        verdict_counts={v.value: verdicts.get(v, 0) for v in Verdict},
    )
