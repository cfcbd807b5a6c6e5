#!/usr/bin/env python3
"""Desk-scale copy-task experiment.

Trains the small configuration on a synthetic copy corpus until greedy
decoding in both directions reproduces held-out sequences, then compares
pure left-to-right, pure right-to-left, and bidirectional inference.
"""

import argparse
import json
import time

import numpy as np

from bidimt import model as M
from bidimt.data import make_batches
from bidimt.evaluation import direction_share, exact_match
from bidimt.inference import DecodeConfig, greedy_decode_batch, translate_corpus
from bidimt.synthetic import copy_corpus, split_corpus
from bidimt.training import TrainConfig, train
from bidimt.vocab import L2R, R2L


def source_matrix(pairs):
    max_src = max(len(p.src) for p in pairs)
    ids = np.zeros((len(pairs), max_src), dtype=np.int64)
    mask = np.zeros((len(pairs), max_src), dtype=bool)
    for i, p in enumerate(pairs):
        ids[i, : len(p.src)] = p.src
        mask[i, : len(p.src)] = True
    return ids, mask


def greedy_exact(params, cfg, pairs, direction, max_len=14):
    ids, mask = source_matrix(pairs)
    outs = greedy_decode_batch(params, ids, mask, direction, cfg, max_len=max_len)
    return exact_match(outs, [p.content for p in pairs])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=10000)
    ap.add_argument("--heldout", type=int, default=500)
    ap.add_argument("--vocab-size", type=int, default=20)
    ap.add_argument("--max-len", type=int, default=12)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--max-epochs", type=int, default=20)
    ap.add_argument("--beam", type=int, default=4)
    ap.add_argument("--run-dir", default=None)
    args = ap.parse_args()

    vocab, pairs = copy_corpus(args.pairs, vocab_size=args.vocab_size,
                               min_len=3, max_len=args.max_len, seed=args.seed)
    train_pairs, heldout = split_corpus(pairs, args.heldout)
    cfg = M.small_config(dropout=0.1, max_positions=32)
    params = M.Parameters.init(cfg, len(vocab), len(vocab),
                               np.random.default_rng(args.seed))
    print(f"model: {params.num_parameters() / 1e6:.2f}M parameters")

    tcfg = TrainConfig(max_epochs=args.max_epochs, warmup=400, token_budget=2048,
                       checkpoint_interval=400, log_interval=40, seed=args.seed,
                       lr_factor=1.0)

    def stop_when_copied(step, current):
        acc_l = greedy_exact(current, cfg, heldout[:200], L2R)
        acc_r = greedy_exact(current, cfg, heldout[:200], R2L)
        print(f"step {step}: exact l2r={acc_l:.3f} r2l={acc_r:.3f}", flush=True)
        return acc_l >= 0.995 and acc_r >= 0.995

    t0 = time.time()
    _, report = train(params, train_pairs, tcfg, cfg, run_dir=args.run_dir,
                      eval_hook=stop_when_copied)
    print(f"trained {report.final_step} steps in {time.time() - t0:.0f}s, "
          f"final loss {report.final_loss:.4f}")

    results = {}
    for direction in (L2R, R2L):
        results[direction] = greedy_exact(params, cfg, heldout, direction)
    dcfg = DecodeConfig(beam=args.beam, alpha=0.0, max_len=14)
    translations = translate_corpus(params, [p.src for p in heldout], dcfg, cfg,
                                    mode="bidi")
    hyps = [list(t.hypothesis.tokens) for t in translations]
    results["bidi"] = exact_match(hyps, [p.content for p in heldout])
    share = direction_share(t.hypothesis for t in translations)
    print(json.dumps({"exact_match": results,
                      "direction_share": share.to_dict()}, indent=2))


if __name__ == "__main__":
    main()
