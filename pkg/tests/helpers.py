"""Independent oracles shared by the test modules.

Everything here is deliberately naive (loops, repeated scans, exhaustive
enumeration) and never calls the code path it is used to check.
"""

from __future__ import annotations

import itertools

import numpy as np

from bidimt import autodiff as ad
from bidimt import model as M
from bidimt.vocab import EOS, L2R, PAD, R2L, SOS_L2R, SOS_R2L


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += float(a[i, l]) * float(b[l, j])
            out[i, j] = s
    return out


def finite_difference_grads(fn, tensors, h: float = 1e-3):
    """Central finite differences of fn() w.r.t. each float64 Tensor."""
    grads = []
    for t in tensors:
        assert t.data.dtype == np.float64, "finite differences need the 64-bit path"
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def fd_agreement(analytic: np.ndarray, numeric: np.ndarray,
                 rel_tol: float = 1e-4, abs_floor: float = 1e-6) -> float:
    """Fraction of coordinates whose relative error is below rel_tol."""
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = np.abs(analytic - numeric) <= np.maximum(rel_tol * denom, abs_floor)
    return float(ok.mean())


def naive_bpe_apply(merges, word: str):
    """Repeated full scans over the rule list until nothing applies."""
    syms = list(word)
    syms[-1] = syms[-1] + "</w>"
    while True:
        applied = False
        for left, right in merges:
            out, i = [], 0
            changed = False
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    out.append(left + right)
                    i += 2
                    changed = True
                else:
                    out.append(syms[i])
                    i += 1
            if changed:
                syms = out
                applied = True
                break
        if not applied:
            return syms


def stepwise_logprob(params, src, target, direction, config):
    """Score a target one position at a time, one decode_logits call each."""
    content = list(target[:-1])
    if direction == R2L:
        content = content[::-1]
    stream = content + [EOS]
    sos = SOS_L2R if direction == L2R else SOS_R2L
    prefix = [sos]
    with ad.no_grad():
        enc = M.encode(params, src, config)
        per_token = []
        for tok in stream:
            logits = M.decode_logits(params, [prefix], enc, config)
            row = logits.data[0, -1].astype(np.float64)
            row = row - row.max()
            lsm = row - np.log(np.exp(row).sum())
            per_token.append(float(lsm[tok]))
            prefix.append(tok)
    return sum(per_token), per_token


def tiny_model(seed: int, content_vocab: int = 2, dtype=np.float64,
               d_model: int = 16, layers: int = 1, heads: int = 2,
               d_ff: int = 32, max_positions: int = 12):
    """A randomly initialized micro-model whose target space is enumerable."""
    cfg = M.ModelConfig(num_encoder_layers=layers, num_decoder_layers=layers,
                        d_model=d_model, num_heads=heads, d_ff=d_ff,
                        dropout=0.0, max_positions=max_positions)
    vocab_size = 5 + content_vocab
    rng = np.random.default_rng(seed)
    params = M.Parameters.init(cfg, vocab_size, vocab_size, rng, dtype=dtype)
    return params, cfg, vocab_size


def enumerable_tokens(vocab_size: int):
    """Every id a decoder may emit as content (specials except UNK excluded)."""
    return [i for i in range(vocab_size) if i not in (PAD, EOS, SOS_L2R, SOS_R2L)]


def enumerate_candidates(vocab_size: int, max_len: int):
    """All content sequences of length 0..max_len."""
    alphabet = enumerable_tokens(vocab_size)
    for n in range(max_len + 1):
        for combo in itertools.product(alphabet, repeat=n):
            yield list(combo)


def exhaustive_best(params, src, config, max_len: int):
    """Brute-force argmax of the summed two-direction log-likelihood.

    Returns (tokens, combined, per-candidate dict). Ties broken like the
    selection rule: higher score, then L2R-ish preference is irrelevant
    here (scores are direction-free), then lexicographic order.
    """
    scores = {}
    with ad.no_grad():
        enc = M.encode(params, src, config)
        for cand in enumerate_candidates(params.tgt_vocab_size, max_len):
            target = cand + [EOS]
            l2r = M.sequence_logprobs(params, enc, [target], L2R, config)[0][0]
            r2l = M.sequence_logprobs(params, enc, [target], R2L, config)[0][0]
            scores[tuple(cand)] = l2r + r2l
    best = min(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return list(best[0]), best[1], scores
