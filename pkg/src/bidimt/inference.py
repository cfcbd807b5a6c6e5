"""Bidirectional decoding: beam search per direction, cross-rescoring,
and selection of the candidate with the best summed log-likelihood.

The full pipeline encodes the source once, generates K candidates per
direction, fills in each candidate's missing-direction log-probability
with one batched teacher-forced pass, and returns the argmax of
logprob_l2r + logprob_r2l over the merged pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import model as M
from .errors import ConfigError, UsageError
from .vocab import EOS, L2R, PAD, R2L, SOS_L2R, SOS_R2L, other_direction, sos_for

HARD_BEAM_CAP = 4096

MODES = ("bidi", "l2r", "r2l", "l2r-pool-only", "r2l-pool-only")


@dataclass
class DecodeConfig:
    beam: int = 4
    alpha: float = 0.6           # length penalty exponent inside beam search
    max_len: int = 128           # max content tokens generated
    tie_break: str = L2R         # preferred origin on combined-score ties
    normalize_combined: bool = False   # apply lp() to the final comparison too
    unfinished_penalty: float = float("-inf")

    def validate(self) -> None:
        if not 1 <= self.beam <= HARD_BEAM_CAP:
            raise ConfigError(f"beam must be in [1, {HARD_BEAM_CAP}], got {self.beam}")
        if self.alpha < 0:
            raise ConfigError("length penalty alpha must be >= 0")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.tie_break not in (L2R, R2L):
            raise ConfigError(f"tie_break must be a direction, got {self.tie_break!r}")


def length_penalty(n: int, alpha: float) -> float:
    return ((5.0 + n) / 6.0) ** alpha


def _last_log_softmax(logits: np.ndarray) -> np.ndarray:
    """Log-softmax of the final position only, in float64."""
    last = logits[:, -1].astype(np.float64)
    z = last - last.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class Hypothesis:
    """One decoded candidate; tokens are content-only, natural order."""

    tokens: tuple
    origin_direction: str
    logprob_l2r: float | None = None
    logprob_r2l: float | None = None
    finished: bool = True

    def logprob(self, direction: str) -> float | None:
        return self.logprob_l2r if direction == L2R else self.logprob_r2l

    def origin_logprob(self) -> float:
        return self.logprob(self.origin_direction)


@dataclass
class ScoredCandidate:
    hypothesis: Hypothesis
    combined_score: float

    @property
    def dedup_key(self) -> tuple:
        return self.hypothesis.tokens


@dataclass
class TranslationResult:
    hypothesis: Hypothesis
    candidates: list = field(default_factory=list)
    mode: str = "bidi"

    @property
    def origin_direction(self) -> str:
        return self.hypothesis.origin_direction


def greedy_decode(params: M.Parameters, src_ids, direction: str,
                  config: M.ModelConfig | None = None, max_len: int = 128,
                  enc: M.EncodedSource | None = None) -> Hypothesis:
    """Argmax-per-step decoding; the reference point for beam == 1."""
    config = config or params.config
    with ad.no_grad():
        if enc is None:
            enc = M.encode(params, src_ids, config)
        prefix = [sos_for(direction)]
        total = 0.0
        finished = False
        while True:
            logits = M.decode_logits(params, [prefix], enc, config)
            lsm = ad.log_softmax(logits).data[0, -1].astype(np.float64)
            lsm[PAD] = lsm[SOS_L2R] = lsm[SOS_R2L] = -np.inf
            tok = int(lsm.argmax())
            total += float(lsm[tok])
            if tok == EOS:
                finished = True
                break
            prefix.append(tok)
            if len(prefix) - 1 >= max_len:
                break
    content = prefix[1:]
    if direction == R2L:
        content = content[::-1]
    hyp = Hypothesis(tokens=tuple(content), origin_direction=direction,
                     finished=finished)
    if direction == L2R:
        hyp.logprob_l2r = total
    else:
        hyp.logprob_r2l = total
    return hyp


def greedy_decode_batch(params: M.Parameters, src_batch, src_mask, direction: str,
                        config: M.ModelConfig | None = None, max_len: int = 128):
    """Greedy decoding over many sources at once; returns token lists."""
    config = config or params.config
    src_batch = np.asarray(src_batch)
    n = src_batch.shape[0]
    with ad.no_grad():
        enc = M.encode(params, src_batch, config, src_mask=src_mask)
        prefix = np.full((n, 1), sos_for(direction), dtype=np.int64)
        alive = np.ones(n, dtype=bool)
        outputs = [[] for _ in range(n)]
        for _ in range(max_len):
            logits = M.decode_logits(params, prefix, enc, config)
            lsm = _last_log_softmax(logits.data)
            lsm[:, [PAD, SOS_L2R, SOS_R2L]] = -np.inf
            tok = lsm.argmax(axis=1)
            for r in range(n):
                if alive[r]:
                    if tok[r] == EOS:
                        alive[r] = False
                    else:
                        outputs[r].append(int(tok[r]))
            if not alive.any():
                break
            step_tok = np.where(alive, tok, PAD)
            prefix = np.concatenate([prefix, step_tok[:, None]], axis=1)
    if direction == R2L:
        outputs = [seq[::-1] for seq in outputs]
    return outputs


def beam_search(params: M.Parameters, src_ids, direction: str,
                decode_config: DecodeConfig, config: M.ModelConfig | None = None,
                enc: M.EncodedSource | None = None):
    """Length-normalized beam search in one direction.

    Returns up to K finished hypotheses (natural token order, raw
    generation-direction logprob recorded). If nothing finishes within
    max_len, the force-terminated live prefixes are returned with
    finished=False.
    """
    config = config or params.config
    decode_config.validate()
    k = decode_config.beam
    alpha = decode_config.alpha
    with ad.no_grad():
        if enc is None:
            enc = M.encode(params, src_ids, config)
        sos = sos_for(direction)
        live_tokens = [[]]
        live_scores = np.zeros(1, dtype=np.float64)
        finished = []  # (norm_score, raw_score, content tokens)
        for step in range(decode_config.max_len + 1):
            prefix = np.full((len(live_tokens), step + 1), sos, dtype=np.int64)
            for r, toks in enumerate(live_tokens):
                prefix[r, 1 : 1 + len(toks)] = toks
            logits = M.decode_logits(params, prefix, enc, config)
            lsm = _last_log_softmax(logits.data)
            lsm[:, [PAD, SOS_L2R, SOS_R2L]] = -np.inf
            cand = live_scores[:, None] + lsm

            # A continuation ending in EOS retires to the finished pool only
            # when it ranks inside the step's top-K pooled candidates (for
            # K=1 this is exactly greedy termination); live slots take the
            # best K non-EOS continuations of the whole pool.
            vocab = cand.shape[1]
            flat = cand.reshape(-1)
            order = np.argsort(-flat, kind="stable")
            new_tokens, new_scores = [], []
            for rank, idx in enumerate(order):
                score = float(flat[idx])
                if not np.isfinite(score):
                    break
                r, t = divmod(int(idx), vocab)
                if t == EOS:
                    if rank < k:
                        n_tok = len(live_tokens[r]) + 1  # content + EOS
                        finished.append((score / length_penalty(n_tok, alpha),
                                         score, list(live_tokens[r])))
                elif len(new_tokens) < k:
                    new_tokens.append(live_tokens[r] + [t])
                    new_scores.append(score)
                if len(new_tokens) >= k and rank >= k:
                    break
            if step == decode_config.max_len or not new_tokens:
                if not new_tokens and step < decode_config.max_len:
                    live_tokens, live_scores = [], np.zeros(0)
                break
            live_tokens = new_tokens
            live_scores = np.asarray(new_scores)

    def to_hypothesis(tokens, raw, is_finished):
        content = tokens[::-1] if direction == R2L else list(tokens)
        hyp = Hypothesis(tokens=tuple(content), origin_direction=direction,
                         finished=is_finished)
        if direction == L2R:
            hyp.logprob_l2r = raw
        else:
            hyp.logprob_r2l = raw
        return hyp

    if finished:
        finished.sort(key=lambda f: -f[0])
        return [to_hypothesis(toks, raw, True) for _, raw, toks in finished[:k]]
    # nothing terminated: flag the best live prefixes as unfinished
    order = np.argsort(-live_scores, kind="stable")[:k]
    return [to_hypothesis(live_tokens[int(r)], float(live_scores[int(r)]), False)
            for r in order]


def cross_rescore(params: M.Parameters, hypotheses, src_ids=None,
                  config: M.ModelConfig | None = None,
                  enc: M.EncodedSource | None = None):
    """Fill in each hypothesis' missing-direction logprob.

    One batched teacher-forced pass per direction group; the recorded
    origin-direction logprob is left untouched.
    """
    config = config or params.config
    if enc is None:
        if src_ids is None:
            raise UsageError("cross_rescore needs the source or its encoding")
        with ad.no_grad():
            enc = M.encode(params, src_ids, config)
    out = list(hypotheses)
    with ad.no_grad():
        for direction in (L2R, R2L):
            idx = [i for i, h in enumerate(out)
                   if h.logprob(direction) is None and h.finished]
            if not idx:
                continue
            targets = [list(out[i].tokens) + [EOS] for i in idx]
            scores = M.sequence_logprobs(
                params, enc, targets, direction, config,
                enc_row_index=np.zeros(len(idx), dtype=np.int64))
            for i, (total, _) in zip(idx, scores):
                h = out[i]
                if direction == L2R:
                    out[i] = replace(h, logprob_l2r=total)
                else:
                    out[i] = replace(h, logprob_r2l=total)
    return out


def _combined(hyp: Hypothesis, decode_config: DecodeConfig) -> float:
    if not hyp.finished:
        return decode_config.unfinished_penalty
    if hyp.logprob_l2r is None or hyp.logprob_r2l is None:
        raise UsageError("combined score needs both directions' logprobs")
    total = hyp.logprob_l2r + hyp.logprob_r2l
    if decode_config.normalize_combined:
        total /= length_penalty(len(hyp.tokens) + 1, decode_config.alpha)
    return total


def select_best(candidates, tie_break: str = L2R,
                decode_config: DecodeConfig | None = None):
    """Merge duplicate token sequences, then argmax of the combined score.

    Ties prefer the configured origin direction, then the lexicographically
    smallest token sequence. Returns (winner, merged candidate list).
    """
    decode_config = decode_config or DecodeConfig(tie_break=tie_break)
    candidates = list(candidates)
    if not candidates:
        raise UsageError("select_best needs a non-empty candidate set")
    merged: dict = {}
    for cand in candidates:
        if isinstance(cand, Hypothesis):
            cand = ScoredCandidate(cand, _combined(cand, decode_config))
        key = cand.dedup_key
        prev = merged.get(key)
        if prev is None:
            merged[key] = cand
        elif (prev.hypothesis.origin_direction != tie_break
              and cand.hypothesis.origin_direction == tie_break):
            merged[key] = cand
    pool = list(merged.values())

    def sort_key(c: ScoredCandidate):
        origin_pref = 0 if c.hypothesis.origin_direction == tie_break else 1
        return (-c.combined_score, origin_pref, c.hypothesis.tokens)

    pool.sort(key=sort_key)
    return pool[0], pool


def translate(params: M.Parameters, src_ids, decode_config: DecodeConfig,
              config: M.ModelConfig | None = None, mode: str = "bidi") -> TranslationResult:
    """Full inference for one source sentence.

    bidi: K candidates per direction, cross-rescored, best summed score.
    l2r / r2l: plain unidirectional beam search (no rescoring).
    l2r-pool-only / r2l-pool-only: one direction's candidates only, but
    still rescored and selected by the summed score (ablation).
    """
    config = config or params.config
    decode_config.validate()
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {MODES}")
    with ad.no_grad():
        enc = M.encode(params, src_ids, config)
    if mode in (L2R, R2L):
        hyps = beam_search(params, src_ids, mode, decode_config, config, enc=enc)
        best = hyps[0]
        cands = [ScoredCandidate(h, h.origin_logprob()) for h in hyps]
        return TranslationResult(hypothesis=best, candidates=cands, mode=mode)
    if mode == "bidi":
        pool = beam_search(params, src_ids, L2R, decode_config, config, enc=enc)
        pool += beam_search(params, src_ids, R2L, decode_config, config, enc=enc)
    else:
        direction = L2R if mode.startswith(L2R) else R2L
        pool = beam_search(params, src_ids, direction, decode_config, config, enc=enc)
    pool = cross_rescore(params, pool, config=config, enc=enc)
    winner, merged = select_best(pool, tie_break=decode_config.tie_break,
                                 decode_config=decode_config)
    return TranslationResult(hypothesis=winner.hypothesis, candidates=merged, mode=mode)


def translate_corpus(params: M.Parameters, sources, decode_config: DecodeConfig,
                     config: M.ModelConfig | None = None, mode: str = "bidi"):
    return [translate(params, src, decode_config, config, mode=mode)
            for src in sources]
