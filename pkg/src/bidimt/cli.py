"""Command-line entry point.

Subcommands: learn-bpe, apply-bpe, train, translate, score, stats.
Exit codes: 0 success, 2 input/data error, 3 model/checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bpe as B
from . import model as M
from .config import load_run_config
from .data import load_parallel
from .errors import BidimtError, CheckpointError, ConfigError, DataError, UsageError
from .evaluation import (bleu, direction_share, position_accuracy,
                         tokenize_international)
from .inference import MODES, DecodeConfig, translate
from .training import TrainConfig, load_train_state, train, validate
from .vocab import Vocab


def _read_lines(path):
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def smart_detokenize(tokens) -> str:
    """Undo BPE when subword markers are present, else join with spaces."""
    if any(t.endswith(B.WORD_END) for t in tokens):
        return B.detokenize(tokens)
    return " ".join(tokens)


def cmd_learn_bpe(args) -> int:
    lines = []
    for path in args.input:
        lines.extend(_read_lines(path))
    if args.lowercase:
        lines = [l.lower() for l in lines]
    model = B.learn_bpe(lines, args.merges)
    model.save(args.merges_out)
    if args.vocab_out:
        B.build_vocab(model, lines).save(args.vocab_out)
    return 0


def cmd_apply_bpe(args) -> int:
    model = B.BpeModel.load(args.merges)
    lines = _read_lines(args.input)
    with open(args.output, "w", encoding="utf-8") as f:
        for line in lines:
            if args.lowercase:
                line = line.lower()
            f.write(" ".join(B.apply_bpe(model, line)) + "\n")
    return 0


def _load_vocabs(cfg_data):
    if cfg_data.vocab:
        shared = Vocab.load(cfg_data.vocab)
        return shared, shared
    if not (cfg_data.src_vocab and cfg_data.tgt_vocab):
        raise ConfigError("set data.vocab (shared) or both data.src_vocab and data.tgt_vocab")
    return Vocab.load(cfg_data.src_vocab), Vocab.load(cfg_data.tgt_vocab)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or [])
    if args.directions:
        cfg.train.directions = tuple(args.directions.split(","))
    if args.max_steps is not None:
        cfg.train.max_steps = args.max_steps
    if args.seed is not None:
        cfg.train.seed = args.seed
    cfg.model.validate()
    cfg.train.validate()
    src_vocab, tgt_vocab = _load_vocabs(cfg.data)
    if not (cfg.data.train_src and cfg.data.train_tgt):
        raise ConfigError("data.train_src and data.train_tgt are required for training")
    corpus, dropped = load_parallel(cfg.data.train_src, cfg.data.train_tgt,
                                    src_vocab, tgt_vocab,
                                    max_len=cfg.data.max_len,
                                    lowercase=cfg.data.lowercase)
    if not corpus:
        raise DataError("training corpus is empty after filtering")
    os.makedirs(args.run_dir, exist_ok=True)
    with open(os.path.join(args.run_dir, "effective_config.json"), "w",
              encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")

    resume_state = None
    start_epoch = start_batch = 0
    if args.resume:
        params, resume_state, meta = load_train_state(args.run_dir)
        if params.config != cfg.model:
            raise CheckpointError("checkpoint config does not match run config")
        start_epoch, start_batch = meta["epoch"], meta["batch_index"]
        print(f"resuming from step {resume_state.step}", file=sys.stderr)
    else:
        rng = np.random.default_rng(cfg.train.seed)
        params = M.Parameters.init(cfg.model, len(src_vocab), len(tgt_vocab), rng)

    eval_hook = None
    if cfg.data.dev_src and cfg.data.dev_tgt:
        dev_corpus, _ = load_parallel(cfg.data.dev_src, cfg.data.dev_tgt,
                                      src_vocab, tgt_vocab,
                                      max_len=cfg.data.max_len,
                                      lowercase=cfg.data.lowercase)
        report_path = os.path.join(args.run_dir, "report.jsonl")

        def eval_hook(step, current):
            scores = validate(current, dev_corpus, cfg.model, cfg.decode,
                              token_budget=cfg.train.token_budget)
            row = {"step": step, "val_loss": scores["loss"], "val_bleu": scores["bleu"]}
            with open(report_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(row) + "\n")
            print(json.dumps(row), file=sys.stderr)
            return False

    train(params, corpus, cfg.train, cfg.model, run_dir=args.run_dir,
          report_path=os.path.join(args.run_dir, "report.jsonl"),
          eval_hook=eval_hook, resume_state=resume_state,
          start_epoch=start_epoch, start_batch=start_batch)
    return 0


def _fmt(x) -> str:
    return "nan" if x is None else f"{x:.6f}"


def cmd_translate(args) -> int:
    params, _ = M.load_checkpoint(args.checkpoint)
    if args.vocab:
        src_vocab = tgt_vocab = Vocab.load(args.vocab)
    elif args.src_vocab and args.tgt_vocab:
        src_vocab, tgt_vocab = Vocab.load(args.src_vocab), Vocab.load(args.tgt_vocab)
    else:
        raise ConfigError("set --vocab or both --src-vocab and --tgt-vocab")
    if len(src_vocab) != params.src_vocab_size or len(tgt_vocab) != params.tgt_vocab_size:
        raise CheckpointError(
            f"vocabulary sizes ({len(src_vocab)}, {len(tgt_vocab)}) do not match "
            f"checkpoint ({params.src_vocab_size}, {params.tgt_vocab_size})"
        )
    dcfg = DecodeConfig(beam=args.beam, alpha=args.alpha, max_len=args.max_len)
    dcfg.validate()
    lines = _read_lines(args.input)
    out_f = open(args.output, "w", encoding="utf-8")
    nbest_f = open(args.nbest, "w", encoding="utf-8") if args.nbest else None
    prov_f = open(args.provenance, "w", encoding="utf-8") if args.provenance else None
    try:
        for i, line in enumerate(lines):
            src = src_vocab.encode(line.split())
            if not src:
                out_f.write("\n")
                continue
            result = translate(params, src, dcfg, params.config, mode=args.mode)
            text = smart_detokenize(tgt_vocab.decode(result.hypothesis.tokens))
            out_f.write(text + "\n")
            if nbest_f:
                for cand in result.candidates:
                    h = cand.hypothesis
                    cand_text = smart_detokenize(tgt_vocab.decode(h.tokens))
                    nbest_f.write(
                        f"{i} {h.origin_direction} {_fmt(h.logprob_l2r)} "
                        f"{_fmt(h.logprob_r2l)} {_fmt(cand.combined_score)}\t{cand_text}\n"
                    )
            if prov_f:
                record = {
                    "index": i,
                    "mode": result.mode,
                    "winner": _hyp_dict(result.hypothesis),
                    "candidates": [dict(_hyp_dict(c.hypothesis),
                                        combined_score=c.combined_score)
                                   for c in result.candidates],
                }
                prov_f.write(json.dumps(record) + "\n")
    finally:
        out_f.close()
        if nbest_f:
            nbest_f.close()
        if prov_f:
            prov_f.close()
    return 0


def _hyp_dict(h) -> dict:
    return {
        "tokens": list(h.tokens),
        "origin_direction": h.origin_direction,
        "logprob_l2r": h.logprob_l2r,
        "logprob_r2l": h.logprob_r2l,
        "finished": h.finished,
    }


def cmd_score(args) -> int:
    hyp_lines = _read_lines(args.hyp)
    ref_lines = _read_lines(args.ref)
    if len(hyp_lines) != len(ref_lines):
        raise DataError(
            f"line count mismatch: {args.hyp} has {len(hyp_lines)}, "
            f"{args.ref} has {len(ref_lines)}"
        )
    tok = str.split if args.pre_tokenized else tokenize_international
    hyps = [tok(l) for l in hyp_lines]
    refs = [tok(l) for l in ref_lines]
    report = {
        "bleu": bleu(hyps, refs, lowercase=args.lowercase).to_dict(),
        "position_accuracy": position_accuracy(hyps, refs, n=args.position_n).to_dict(),
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_stats(args) -> int:
    origins = []
    for line in _read_lines(args.provenance):
        if not line.strip():
            continue
        record = json.loads(line)
        origins.append(record["winner"]["origin_direction"])
    print(json.dumps(direction_share(origins).to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bidimt",
                                description="bidirectional sequence generation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    lb = sub.add_parser("learn-bpe", help="learn byte-pair merges from a corpus")
    lb.add_argument("--input", nargs="+", required=True)
    lb.add_argument("--merges", type=int, required=True)
    lb.add_argument("--merges-out", required=True)
    lb.add_argument("--vocab-out")
    lb.add_argument("--lowercase", action="store_true")
    lb.set_defaults(func=cmd_learn_bpe)

    ab = sub.add_parser("apply-bpe", help="segment a corpus with learned merges")
    ab.add_argument("--merges", required=True)
    ab.add_argument("--input", required=True)
    ab.add_argument("--output", required=True)
    ab.add_argument("--lowercase", action="store_true")
    ab.set_defaults(func=cmd_apply_bpe)

    tr = sub.add_parser("train", help="train a bidirectional model")
    tr.add_argument("--config", required=True)
    tr.add_argument("--run-dir", required=True)
    tr.add_argument("--resume", action="store_true")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--max-steps", type=int)
    tr.add_argument("--directions", help="comma-separated subset of l2r,r2l")
    tr.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    tr.set_defaults(func=cmd_train)

    tl = sub.add_parser("translate", help="decode a file with a trained model")
    tl.add_argument("--checkpoint", required=True)
    tl.add_argument("--vocab")
    tl.add_argument("--src-vocab")
    tl.add_argument("--tgt-vocab")
    tl.add_argument("--input", required=True)
    tl.add_argument("--output", required=True)
    tl.add_argument("--nbest")
    tl.add_argument("--provenance")
    tl.add_argument("--beam", type=int, default=4)
    tl.add_argument("--alpha", type=float, default=0.6)
    tl.add_argument("--max-len", type=int, default=128)
    tl.add_argument("--mode", choices=MODES, default="bidi")
    tl.set_defaults(func=cmd_translate)

    sc = sub.add_parser("score", help="BLEU and positional accuracy")
    sc.add_argument("--hyp", required=True)
    sc.add_argument("--ref", required=True)
    sc.add_argument("--lowercase", action="store_true")
    sc.add_argument("--pre-tokenized", action="store_true")
    sc.add_argument("--position-n", type=int, default=4)
    sc.set_defaults(func=cmd_score)

    st = sub.add_parser("stats", help="direction-of-origin share from provenance")
    st.add_argument("--provenance", required=True)
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (DataError, ConfigError, UsageError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BidimtError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
