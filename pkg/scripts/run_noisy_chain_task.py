#!/usr/bin/env python3
"""Error-propagation experiment on the noisy running-sum task.

Greedy decoding of a trained model is compared position-wise against the
(noisy) references: left-to-right decoding should be most accurate at the
start of the sentence and degrade toward the end, right-to-left decoding
the mirror image.
"""

import argparse
import json
import time

import numpy as np

from bidimt import model as M
from bidimt.evaluation import position_accuracy
from bidimt.inference import greedy_decode_batch
from bidimt.synthetic import noisy_chain_corpus, split_corpus
from bidimt.training import TrainConfig, train
from bidimt.vocab import L2R, R2L


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=12000)
    ap.add_argument("--heldout", type=int, default=600)
    ap.add_argument("--base", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.12)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--max-epochs", type=int, default=30)
    args = ap.parse_args()

    vocab, pairs = noisy_chain_corpus(args.pairs, base=args.base,
                                      p_noise=args.noise, min_len=8,
                                      max_len=12, seed=args.seed)
    train_pairs, heldout = split_corpus(pairs, args.heldout)
    cfg = M.ModelConfig(num_encoder_layers=2, num_decoder_layers=2, d_model=64,
                        num_heads=4, d_ff=256, dropout=0.1, max_positions=32)
    params = M.Parameters.init(cfg, len(vocab), len(vocab),
                               np.random.default_rng(args.seed))
    tcfg = TrainConfig(max_epochs=args.max_epochs, warmup=400, token_budget=2048,
                       checkpoint_interval=200, log_interval=50, seed=args.seed)

    max_src = max(len(p.src) for p in heldout)
    ids = np.zeros((len(heldout), max_src), dtype=np.int64)
    mask = np.zeros((len(heldout), max_src), dtype=bool)
    for i, p in enumerate(heldout):
        ids[i, : len(p.src)] = p.src
        mask[i, : len(p.src)] = True
    refs = [p.content for p in heldout]

    def chain_rule_accuracy(step, current):
        # fraction of teacher-forced next-token modes the model has learned
        outs = greedy_decode_batch(current, ids[:100], mask[:100], L2R, cfg,
                                   max_len=14)
        report = position_accuracy(outs, refs[:100], n=4)
        print(f"step {step}: l2r first4={report.first} last4={report.last}",
              flush=True)
        return False

    t0 = time.time()
    _, report = train(params, train_pairs, tcfg, cfg,
                      eval_hook=chain_rule_accuracy)
    print(f"trained {report.final_step} steps in {time.time() - t0:.0f}s")

    out = {}
    for direction in (L2R, R2L):
        hyps = greedy_decode_batch(params, ids, mask, direction, cfg, max_len=14)
        acc = position_accuracy(hyps, refs, n=4)
        out[direction] = acc.to_dict()
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
