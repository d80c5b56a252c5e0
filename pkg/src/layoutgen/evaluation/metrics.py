"""Spelling precision and layer-count bucket aggregation."""
from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from typing import Sequence

from ..errors import ConfigurationError, EmptyInputError

ALPHABETIC = ("en", "fr", "de", "es", "it", "pt", "ru")
CHARACTER_BASED = ("zh", "ja", "ko")
LANGUAGES = ALPHABETIC + CHARACTER_BASED


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def units(text: str, language: str) -> list[str]:
    """Comparison units: case-folded words for alphabetic scripts, characters for CJK."""
    if language in CHARACTER_BASED:
        return [c for c in text if not c.isspace() and not _is_punct(c)]
    if language in ALPHABETIC:
        words = ("".join(c for c in w if not _is_punct(c)).casefold() for w in text.split())
        return [w for w in words if w]
    raise ConfigurationError(f"unsupported language {language!r}; expected one of {LANGUAGES}")


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def spelling_precision(reference: str, hypothesis: str, language: str) -> float:
    """LCS-aligned unit matches over the reference length.

    An empty reference scores 1.0 against an empty hypothesis and 0.0 otherwise.
    """
    ref, hyp = units(reference, language), units(hypothesis, language)
    if not ref:
        return 1.0 if not hyp else 0.0
    return lcs_length(ref, hyp) / len(ref)


# ------------------------------------------------------------------ buckets

@dataclass(frozen=True)
class Bucket:
    label: str
    lo: float        # exclusive unless lo_inclusive
    hi: float        # inclusive unless hi_exclusive
    lo_inclusive: bool = False
    hi_exclusive: bool = False

    def contains(self, n: int) -> bool:
        above = n >= self.lo if self.lo_inclusive else n > self.lo
        below = n < self.hi if self.hi_exclusive else n <= self.hi
        return above and below


BUCKETS = {
    "infographics": (
        Bucket("<=10", -math.inf, 10),
        Bucket("10-15", 10, 15),
        Bucket("15-20", 15, 20, hi_exclusive=True),
        Bucket(">=20", 20, math.inf, lo_inclusive=True),
    ),
    "slides": (
        Bucket("<=10", -math.inf, 10),
        Bucket("10-20", 10, 20),
        Bucket("20-30", 20, 30, hi_exclusive=True),
        Bucket(">=30", 30, math.inf, lo_inclusive=True),
    ),
}


def bucket_of(n_layers: int, scheme: str = "infographics") -> str:
    if scheme not in BUCKETS:
        raise ConfigurationError(f"unknown bucket scheme {scheme!r}")
    for b in BUCKETS[scheme]:
        if b.contains(n_layers):
            return b.label
    raise AssertionError(f"no bucket holds {n_layers}")  # buckets tile the integers


@dataclass(frozen=True)
class ItemMetrics:
    name: str
    n_layers: int
    spelling: float | None
    lgsr: float | None
    complete: bool = True


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def aggregate(items: Sequence[ItemMetrics], scheme: str = "infographics") -> dict:
    """Per-bucket means of spelling precision and LGSR (machine-readable)."""
    if not items:
        raise EmptyInputError("nothing to aggregate")
    if scheme not in BUCKETS:
        raise ConfigurationError(f"unknown bucket scheme {scheme!r}")
    buckets = {}
    for b in BUCKETS[scheme]:
        members = [it for it in items if b.contains(it.n_layers)]
        buckets[b.label] = {
            "count": len(members),
            "spelling_precision": _mean(it.spelling for it in members),
            "lgsr": _mean(it.lgsr for it in members),
        }
    return {
        "scheme": scheme,
        "bucket_labels": [b.label for b in BUCKETS[scheme]],
        "buckets": buckets,
        "overall": {
            "count": len(items),
            "spelling_precision": _mean(it.spelling for it in items),
            "lgsr": _mean(it.lgsr for it in items),
        },
        "complete": all(it.complete for it in items),
        "items": [
            {"name": it.name, "n_layers": it.n_layers, "bucket": bucket_of(it.n_layers, scheme),
             "spelling_precision": it.spelling, "lgsr": it.lgsr, "complete": it.complete}
            for it in items
        ],
    }
