"""Corpus BLEU, positional accuracy, and direction-of-origin statistics.

BLEU is the classic 4-gram corpus score with clipped counts and the
exponential brevity penalty, no smoothing: a zero precision at any order
gives BLEU 0. All counts are integers, so the score is exactly invariant
under a consistent reordering of (hypothesis, reference) pairs.
"""

from __future__ import annotations

import collections
import math
import re
from dataclasses import dataclass

from .errors import UsageError
from .vocab import L2R, R2L


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    hyp_tokens: int
    ref_tokens: int

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "precisions": self.precisions,
            "brevity_penalty": self.brevity_penalty,
            "hyp_tokens": self.hyp_tokens,
            "ref_tokens": self.ref_tokens,
        }


@dataclass
class PositionAccuracyReport:
    first: float | None
    last: float | None
    n: int
    sentences_evaluated: int

    def to_dict(self) -> dict:
        return {"first": self.first, "last": self.last, "n": self.n,
                "sentences_evaluated": self.sentences_evaluated}


@dataclass
class DirectionShareReport:
    l2r: float
    r2l: float
    count: int

    def to_dict(self) -> dict:
        return {"l2r": self.l2r, "r2l": self.r2l, "count": self.count}


def _ngrams(tokens, n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, lowercase: bool = False, max_order: int = 4) -> BleuReport:
    """Corpus-level BLEU in [0, 100], single reference per hypothesis."""
    hypotheses = list(hypotheses)
    references = list(references)
    if not hypotheses:
        raise UsageError("BLEU needs a non-empty corpus")
    if len(hypotheses) != len(references):
        raise UsageError(
            f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if lowercase:
        hypotheses = [[t.lower() if isinstance(t, str) else t for t in h] for h in hypotheses]
        references = [[t.lower() if isinstance(t, str) else t for t in r] for r in references]
    matched = [0] * max_order
    total = [0] * max_order
    hyp_tokens = 0
    ref_tokens = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens += len(hyp)
        ref_tokens += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            total[n - 1] += max(len(hyp) - n + 1, 0)
            for gram, c in hyp_counts.items():
                matched[n - 1] += min(c, ref_counts.get(gram, 0))
    precisions = [(m / t if t > 0 else 0.0) for m, t in zip(matched, total)]
    if hyp_tokens == 0 or ref_tokens == 0:
        bp = 0.0
    elif hyp_tokens >= ref_tokens:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_tokens / hyp_tokens)
    if min(precisions) > 0.0:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_order) * 100.0
    else:
        score = 0.0
    return BleuReport(bleu=score, precisions=precisions, brevity_penalty=bp,
                      hyp_tokens=hyp_tokens, ref_tokens=ref_tokens)


def position_accuracy(hypotheses, references, n: int = 4) -> PositionAccuracyReport:
    """Position-wise token accuracy over the first and last n positions.

    A sentence qualifies only if both sides have at least n tokens; with
    no qualifying sentences the accuracies are reported as undefined
    (None), never as zero.
    """
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    hypotheses = list(hypotheses)
    references = list(references)
    if len(hypotheses) != len(references):
        raise UsageError(
            f"hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}"
        )
    first_sum = last_sum = 0.0
    qualifying = 0
    for hyp, ref in zip(hypotheses, references):
        if len(hyp) < n or len(ref) < n:
            continue
        qualifying += 1
        first_sum += sum(h == r for h, r in zip(hyp[:n], ref[:n])) / n
        last_sum += sum(h == r for h, r in zip(hyp[-n:], ref[-n:])) / n
    if qualifying == 0:
        return PositionAccuracyReport(first=None, last=None, n=n, sentences_evaluated=0)
    return PositionAccuracyReport(first=first_sum / qualifying,
                                  last=last_sum / qualifying,
                                  n=n, sentences_evaluated=qualifying)


def direction_share(origins) -> DirectionShareReport:
    """Fraction of final outputs that came from each decoding direction."""
    counts = collections.Counter()
    for origin in origins:
        if isinstance(origin, dict):
            origin = origin.get("origin_direction", origin.get("origin"))
        elif hasattr(origin, "origin_direction"):
            origin = origin.origin_direction
        if origin not in (L2R, R2L):
            raise UsageError(f"unknown origin direction {origin!r}")
        counts[origin] += 1
    total = counts[L2R] + counts[R2L]
    if total == 0:
        return DirectionShareReport(l2r=0.0, r2l=0.0, count=0)
    return DirectionShareReport(l2r=counts[L2R] / total, r2l=counts[R2L] / total,
                                count=total)


_TOKENIZE_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize_international(line: str) -> list[str]:
    """Whitespace + punctuation splitting used by the CLI before scoring."""
    return _TOKENIZE_RE.findall(line)


def exact_match(hypotheses, references) -> float:
    """Fraction of hypotheses identical to their reference."""
    hypotheses = list(hypotheses)
    references = list(references)
    if not hypotheses or len(hypotheses) != len(references):
        raise UsageError("exact_match needs equal non-empty corpora")
    hits = sum(list(h) == list(r) for h, r in zip(hypotheses, references))
    return hits / len(hypotheses)
