"""Synthetic corpora for desk-scale experiments.

copy task: target == source; checks that one model learns both decoding
directions to (near-)perfect sequence accuracy.

noisy chain task: each target token is the running modular sum of the
source prefix, with sparse unpredictable noise added during generation;
the last source token carries the noise-free checksum. A mistake anywhere
corrupts everything decoded after it, in either direction, so decoded
outputs show the error-propagation signature: accuracy decays along the
generation order.
"""

from __future__ import annotations

import numpy as np

from .data import SentencePair
from .vocab import EOS, Vocab


def copy_vocab(size: int = 20) -> Vocab:
    return Vocab.from_tokens([f"w{i}" for i in range(size)])


def copy_corpus(n_pairs: int, vocab_size: int = 20, min_len: int = 3,
                max_len: int = 12, seed: int = 0):
    """(vocab, pairs): random token sequences copied verbatim."""
    vocab = copy_vocab(vocab_size)
    rng = np.random.default_rng(seed)
    first_content = 5  # ids 0..4 are reserved
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(min_len, max_len + 1))
        toks = (rng.integers(0, vocab_size, size=n) + first_content).tolist()
        pairs.append(SentencePair(src=list(toks), tgt=list(toks) + [EOS]))
    return vocab, pairs


def chain_vocab(base: int = 10) -> Vocab:
    return Vocab.from_tokens([f"d{i}" for i in range(base)])


def noisy_chain_corpus(n_pairs: int, base: int = 10, p_noise: float = 0.12,
                       min_len: int = 6, max_len: int = 10, seed: int = 0):
    """(vocab, pairs) for the noisy running-sum transduction task.

    source  = s_1 .. s_m, checksum            (checksum = sum(s) mod base)
    target  = t_1 .. t_m, EOS                 (t_i = t_{i-1} + s_i + noise_i)

    The left-to-right conditionals are local (t_i from t_{i-1} and s_i),
    and so are the right-to-left ones (t_i from t_{i+1} and s_{i+1}, with
    the checksum anchoring the first right-to-left step), so a small model
    learns both; the injected noise is unpredictable by construction.
    """
    vocab = chain_vocab(base)
    rng = np.random.default_rng(seed)
    first_content = 5
    pairs = []
    for _ in range(n_pairs):
        m = int(rng.integers(min_len, max_len + 1))
        s = rng.integers(0, base, size=m)
        t = np.zeros(m, dtype=np.int64)
        acc = 0
        for i in range(m):
            acc = (acc + int(s[i])) % base
            if rng.random() < p_noise:
                acc = (acc + int(rng.integers(1, base))) % base
            t[i] = acc
        checksum = int(s.sum()) % base
        src = (s + first_content).tolist() + [checksum + first_content]
        tgt = (t + first_content).tolist() + [EOS]
        pairs.append(SentencePair(src=src, tgt=tgt))
    return vocab, pairs


def split_corpus(pairs, n_heldout: int):
    """Deterministic train/held-out split (tail becomes held-out)."""
    if n_heldout >= len(pairs):
        raise ValueError("held-out split larger than corpus")
    return pairs[:-n_heldout], pairs[-n_heldout:]


def write_parallel_files(pairs, vocab: Vocab, src_path, tgt_path) -> None:
    """Dump a pair list as two line-aligned token files."""
    with open(src_path, "w", encoding="utf-8") as fs, \
            open(tgt_path, "w", encoding="utf-8") as ft:
        for pair in pairs:
            fs.write(" ".join(vocab.decode(pair.src)) + "\n")
            ft.write(" ".join(vocab.decode(pair.content)) + "\n")
