"""Parallel corpus loading and direction-mixed mini-batch construction.

A sentence pair stores its target in natural order and carries a direction
tag; the reversed token stream for right-to-left rows is materialized only
when a batch is assembled, so each pair exists once in memory and
contributes both directions to the same mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .vocab import DIRECTIONS, EOS, L2R, PAD, R2L, Vocab, sos_for


@dataclass
class SentencePair:
    src: list[int]
    tgt: list[int]          # natural order, EOS-terminated
    direction: str = L2R

    def __post_init__(self):
        if not self.src:
            raise DataError("source side is empty")
        if not self.tgt or self.tgt[-1] != EOS or EOS in self.tgt[:-1]:
            raise DataError("target must end with exactly one EOS")
        if self.direction not in DIRECTIONS:
            raise DataError(f"unknown direction {self.direction!r}")

    @property
    def content(self) -> list[int]:
        return self.tgt[:-1]


def reverse_pair(pair: SentencePair) -> SentencePair:
    """Tag a left-to-right pair as right-to-left; token storage is shared."""
    if pair.direction != L2R:
        raise UsageError("reverse_pair expects a left-to-right pair")
    return SentencePair(src=pair.src, tgt=pair.tgt, direction=R2L)


def materialize_rows(pair: SentencePair):
    """(decoder input, gold output) streams for this pair's direction."""
    content = pair.content
    if pair.direction == R2L:
        content = content[::-1]
    return [sos_for(pair.direction)] + content, content + [EOS]


@dataclass
class Batch:
    """Padded matrices for one optimizer step.

    Sources are stored once per unique sentence; `row_to_src` maps each
    decoder row to its encoder row, so the two directions of one pair
    share a single encoder pass.
    """

    src: np.ndarray          # (n_src, max_src) int
    src_mask: np.ndarray     # (n_src, max_src) bool
    row_to_src: np.ndarray   # (n_rows,) int
    dec_in: np.ndarray       # (n_rows, max_tgt) int
    gold: np.ndarray         # (n_rows, max_tgt) int
    gold_mask: np.ndarray    # (n_rows, max_tgt) bool
    directions: list[str]

    @property
    def num_rows(self) -> int:
        return self.dec_in.shape[0]

    @property
    def num_target_tokens(self) -> int:
        return int(self.gold_mask.sum())


def build_batch(pairs) -> Batch:
    """Assemble padded matrices from tagged pairs (one row per pair)."""
    pairs = list(pairs)
    if not pairs:
        raise UsageError("cannot build an empty batch")
    sources = []
    src_key_to_row = {}
    row_to_src = []
    rows = []
    for pair in pairs:
        key = tuple(pair.src)
        if key not in src_key_to_row:
            src_key_to_row[key] = len(sources)
            sources.append(pair.src)
        row_to_src.append(src_key_to_row[key])
        rows.append(materialize_rows(pair))
    max_src = max(len(s) for s in sources)
    max_tgt = max(len(r[0]) for r in rows)
    src = np.full((len(sources), max_src), PAD, dtype=np.int64)
    src_mask = np.zeros((len(sources), max_src), dtype=bool)
    for i, s in enumerate(sources):
        src[i, : len(s)] = s
        src_mask[i, : len(s)] = True
    n = len(rows)
    dec_in = np.full((n, max_tgt), PAD, dtype=np.int64)
    gold = np.full((n, max_tgt), PAD, dtype=np.int64)
    gold_mask = np.zeros((n, max_tgt), dtype=bool)
    for r, (inp, out) in enumerate(rows):
        dec_in[r, : len(inp)] = inp
        gold[r, : len(out)] = out
        gold_mask[r, : len(out)] = True
    return Batch(src=src, src_mask=src_mask, row_to_src=np.asarray(row_to_src),
                 dec_in=dec_in, gold=gold, gold_mask=gold_mask,
                 directions=[p.direction for p in pairs])


def load_parallel(src_path, tgt_path, src_vocab: Vocab, tgt_vocab: Vocab | None = None,
                  max_len: int = 256, lowercase: bool = False):
    """Line-aligned corpus -> (pairs, n_dropped); all pairs tagged L2R."""
    tgt_vocab = tgt_vocab or src_vocab
    with open(src_path, encoding="utf-8") as f:
        src_lines = f.read().splitlines()
    with open(tgt_path, encoding="utf-8") as f:
        tgt_lines = f.read().splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"line count mismatch: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}"
        )
    pairs = []
    dropped = 0
    for s_line, t_line in zip(src_lines, tgt_lines):
        if lowercase:
            s_line, t_line = s_line.lower(), t_line.lower()
        s_toks, t_toks = s_line.split(), t_line.split()
        if not s_toks or not t_toks:
            dropped += 1
            continue
        if len(s_toks) > max_len or len(t_toks) + 1 > max_len:
            dropped += 1
            continue
        pairs.append(SentencePair(src=src_vocab.encode(s_toks),
                                  tgt=tgt_vocab.encode(t_toks) + [EOS]))
    return pairs, dropped


def _bucket_key(pair: SentencePair) -> int:
    # ±20% length tolerance: bucket by log1.2 of the longer side
    n = max(len(pair.src), len(pair.tgt))
    return int(np.floor(np.log(n) / np.log(1.2)))


def make_batches(corpus, token_budget: int, seed: int, epoch: int = 0,
                 directions=DIRECTIONS, paired: bool = True):
    """Deterministic batch list for one epoch.

    Pairs are shuffled, grouped into length buckets, and gathered until
    either side reaches token_budget / (rows per pair); with both
    directions and `paired`, each pair contributes its L2R and R2L row to
    the same batch.
    """
    corpus = list(corpus)
    if not corpus:
        return []
    directions = tuple(directions)
    if not directions or any(d not in DIRECTIONS for d in directions):
        raise UsageError(f"invalid directions {directions}")
    per_pair = len(directions)
    fill_budget = max(1, token_budget // per_pair)
    for pair in corpus:
        if len(pair.src) > fill_budget or len(pair.tgt) > fill_budget:
            raise DataError(
                f"pair with lengths ({len(pair.src)}, {len(pair.tgt)}) exceeds "
                f"token budget {token_budget}"
            )
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(corpus))
    shuffled = [corpus[i] for i in order]
    shuffled.sort(key=_bucket_key)  # stable: keeps shuffle order inside buckets

    if paired or per_pair == 1:
        groups = []
        cur, cur_src, cur_tgt = [], 0, 0
        for pair in shuffled:
            if cur and (cur_src + len(pair.src) > fill_budget
                        or cur_tgt + len(pair.tgt) > fill_budget):
                groups.append(cur)
                cur, cur_src, cur_tgt = [], 0, 0
            cur.append(pair)
            cur_src += len(pair.src)
            cur_tgt += len(pair.tgt)
        if cur:
            groups.append(cur)
        batches = []
        for group in groups:
            rows = []
            for pair in group:
                for d in directions:
                    rows.append(pair if d == L2R else reverse_pair(pair))
            batches.append(build_batch(rows))
    else:
        # unpaired ablation: both directions appear in the epoch but are
        # batched independently
        rows = []
        for pair in shuffled:
            for d in directions:
                rows.append(pair if d == L2R else reverse_pair(pair))
        row_order = rng.permutation(len(rows))
        rows = [rows[i] for i in row_order]
        rows.sort(key=_bucket_key)
        batches = []
        cur, cur_src, cur_tgt = [], 0, 0
        for row in rows:
            if cur and (cur_src + len(row.src) > token_budget
                        or cur_tgt + len(row.tgt) > token_budget):
                batches.append(build_batch(cur))
                cur, cur_src, cur_tgt = [], 0, 0
            cur.append(row)
            cur_src += len(row.src)
            cur_tgt += len(row.tgt)
        if cur:
            batches.append(build_batch(cur))
    batch_order = rng.permutation(len(batches))
    return [batches[i] for i in batch_order]
