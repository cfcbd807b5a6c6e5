"""Byte-pair-encoding subword learner and applier.

Words are whitespace-pretokenized; the final character of each word carries
an end-of-word marker so segmentation is reversible. Merge rules are stored
in priority order, one "left right" pair per line.
"""

from __future__ import annotations

import collections

from .errors import DataError, UsageError
from .vocab import SPECIAL_TOKENS, Vocab

WORD_END = "</w>"


def normalize(line: str) -> str:
    """Collapse runs of whitespace; this is the round-trip normal form."""
    return " ".join(line.split())


def _word_symbols(word: str) -> tuple[str, ...]:
    chars = list(word)
    chars[-1] = chars[-1] + WORD_END
    return tuple(chars)


class BpeModel:
    def __init__(self, merges, vocab_size_target: int = 0):
        merges = [tuple(m) for m in merges]
        if len(set(merges)) != len(merges):
            raise DataError("merge list contains duplicates")
        self.merges = merges
        self.vocab_size_target = vocab_size_target
        self._rank = {pair: i for i, pair in enumerate(merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for left, right in self.merges:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        merges = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'left right', got {line!r}")
                merges.append((parts[0], parts[1]))
        return cls(merges, vocab_size_target=len(merges))


def learn_bpe(lines, num_merges: int) -> BpeModel:
    """Greedy highest-frequency pair merging; ties break lexicographically."""
    if num_merges < 0:
        raise UsageError(f"num_merges must be >= 0, got {num_merges}")
    word_freq = collections.Counter()
    for line in lines:
        for word in line.split():
            word_freq[word] += 1
    if not word_freq:
        raise UsageError("cannot learn BPE from an empty corpus")

    words = {w: _word_symbols(w) for w in word_freq}
    merges = []
    for _ in range(num_merges):
        pair_freq = collections.Counter()
        for w, syms in words.items():
            f = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += f
        if not pair_freq:
            break
        best = max(pair_freq.items(), key=lambda kv: (kv[1], _neg_lex(kv[0])))[0]
        merges.append(best)
        words = {w: _merge_pair(syms, best) for w, syms in words.items()}
    return BpeModel(merges, vocab_size_target=num_merges)


class _neg_lex:
    """Orders pairs so that max() prefers the lexicographically smallest."""

    __slots__ = ("pair",)

    def __init__(self, pair):
        self.pair = pair

    def __lt__(self, other):
        return self.pair > other.pair

    def __eq__(self, other):
        return self.pair == other.pair


def _merge_pair(syms: tuple, pair: tuple) -> tuple:
    """Merge non-overlapping occurrences of `pair`, left to right."""
    a, b = pair
    out = []
    i = 0
    n = len(syms)
    while i < n:
        if i + 1 < n and syms[i] == a and syms[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def _encode_word(model: BpeModel, word: str) -> tuple[str, ...]:
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    syms = _word_symbols(word)
    rank = model._rank
    while len(syms) > 1:
        best = None
        for pair in zip(syms, syms[1:]):
            r = rank.get(pair)
            if r is not None and (best is None or r < best[0]):
                best = (r, pair)
        if best is None:
            break
        syms = _merge_pair(syms, best[1])
    model._cache[word] = syms
    return syms


def apply_bpe(model: BpeModel, line: str) -> list[str]:
    """Segment a line into subword tokens; unknown characters pass through."""
    out = []
    for word in line.split():
        out.extend(_encode_word(model, word))
    return out


def detokenize(tokens) -> str:
    """Reassemble subword tokens into whitespace-normalized text."""
    words, current = [], []
    for tok in tokens:
        if tok.endswith(WORD_END):
            current.append(tok[: -len(WORD_END)])
            words.append("".join(current))
            current = []
        else:
            current.append(tok)
    if current:
        words.append("".join(current))
    return " ".join(words)


def build_vocab(model: BpeModel, lines) -> Vocab:
    """Vocabulary of the segmented corpus, ordered by frequency then token."""
    freq = collections.Counter()
    for line in lines:
        freq.update(apply_bpe(model, line))
    ordered = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(SPECIAL_TOKENS) + [tok for tok, _ in ordered])
