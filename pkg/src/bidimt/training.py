"""Unified bidirectional training loss and the optimization loop.

Each mini-batch carries both generation directions of its pairs; the loss
is the token-mean negative log-likelihood over all rows, so maximizing it
maximizes the summed log-likelihood of the left-to-right and reversed
targets under one shared parameter set.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .data import Batch, make_batches
from .errors import CheckpointError, ConfigError, NumericError
from .optim import OptimState, adam_step, clip_by_global_norm, lr_schedule
from .vocab import DIRECTIONS, L2R, R2L

LATEST_MARKER = "latest"


@dataclass
class TrainConfig:
    max_steps: int | None = None
    max_epochs: int | None = None
    warmup: int = 4000
    label_smoothing: float = 0.1
    clip_norm: float | None = 1.0
    checkpoint_interval: int = 1000
    seed: int = 1
    token_budget: int = 4096
    lr_factor: float = 1.0
    directions: tuple = DIRECTIONS
    paired_directions: bool = True
    log_interval: int = 50
    loss_threshold: float | None = None   # steps-to-threshold report metric

    def validate(self) -> None:
        if self.max_steps is None and self.max_epochs is None:
            raise ConfigError("set max_steps or max_epochs")
        if self.warmup < 1:
            raise ConfigError("warmup must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if self.token_budget < 2:
            raise ConfigError("token_budget too small")


@dataclass
class LossStats:
    """Per-direction components of one loss evaluation (NLL sums)."""

    nll_l2r: float = 0.0
    nll_r2l: float = 0.0
    tokens_l2r: int = 0
    tokens_r2l: int = 0
    single_direction: bool = False

    @property
    def total_tokens(self) -> int:
        return self.tokens_l2r + self.tokens_r2l


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    final_step: int = 0
    final_loss: float = float("nan")
    steps_to_threshold: int | None = None
    single_direction_batches: int = 0

    def to_dict(self) -> dict:
        return {
            "final_step": self.final_step,
            "final_loss": self.final_loss,
            "steps_to_threshold": self.steps_to_threshold,
            "single_direction_batches": self.single_direction_batches,
            "validations": self.validations,
        }


def bidirectional_loss(params: M.Parameters, batch: Batch,
                       config: M.ModelConfig | None = None,
                       label_smoothing: float = 0.0,
                       train: bool = False, rng=None):
    """Token-mean NLL over all rows of a direction-mixed batch.

    Returns (loss Tensor, LossStats). PAD positions are excluded; the
    per-direction sums partition the numerator of the mean.
    """
    config = config or params.config
    enc = M.encode(params, batch.src, config, src_mask=batch.src_mask,
                   train=train, rng=rng)
    logits = M.decode_logits(params, batch.dec_in, enc, config,
                             enc_row_index=batch.row_to_src, train=train, rng=rng)
    n_rows, t_len, vocab = logits.shape
    flat = ad.reshape(logits, (n_rows * t_len, vocab))
    nll = ad.cross_entropy(flat, batch.gold.reshape(-1), label_smoothing)
    nll = ad.reshape(nll, (n_rows, t_len))
    weights = ad.Tensor(batch.gold_mask.astype(logits.dtype.name))
    masked = ad.mul(nll, weights)
    total_tokens = int(batch.gold_mask.sum())
    loss = ad.scale(ad.sum_(masked), 1.0 / total_tokens)

    dirs = np.asarray(batch.directions)
    per_row = (masked.data.astype(np.float64)).sum(axis=1)
    row_tokens = batch.gold_mask.sum(axis=1)
    l2r_rows = dirs == L2R
    stats = LossStats(
        nll_l2r=float(per_row[l2r_rows].sum()),
        nll_r2l=float(per_row[~l2r_rows].sum()),
        tokens_l2r=int(row_tokens[l2r_rows].sum()),
        tokens_r2l=int(row_tokens[~l2r_rows].sum()),
        single_direction=len({d for d in batch.directions}) < 2,
    )
    return loss, stats


def _save_state(run_dir: str, step: int, params: M.Parameters, state: OptimState,
                epoch: int, batch_index: int) -> str:
    ckpt = os.path.join(run_dir, f"step{step}.ckpt")
    M.save_checkpoint(ckpt, params, extra={"step": step})
    opt_named = {}
    for name, m in state.first_moment.items():
        opt_named[f"m.{name}"] = ad.Tensor(m)
    for name, v in state.second_moment.items():
        opt_named[f"v.{name}"] = ad.Tensor(v)
    opt_path = ckpt + ".opt"
    _write_raw_tensors(opt_path, opt_named, {
        "step": state.step, "beta1": state.beta1, "beta2": state.beta2,
        "eps": state.eps, "epoch": epoch, "batch_index": batch_index,
    })
    with open(os.path.join(run_dir, LATEST_MARKER), "w", encoding="utf-8") as f:
        f.write(os.path.basename(ckpt) + "\n")
    return ckpt


def _write_raw_tensors(path: str, named: dict, meta: dict) -> None:
    manifest, offset = [], 0
    for name, t in named.items():
        manifest.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        offset += t.data.size * 4
    header = {"format": "bidimt-opt-v1", "tensors": manifest, "meta": meta}
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for t in named.values():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def _read_raw_tensors(path: str):
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: malformed optimizer state: {e}") from e
        if header.get("format") != "bidimt-opt-v1":
            raise CheckpointError(f"{path}: not an optimizer state file")
        payload_start = f.tell()
        named = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            f.seek(payload_start + entry["offset"])
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise CheckpointError(f"{path}: truncated tensor '{entry['name']}'")
            named[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return named, header["meta"]


def load_train_state(run_dir: str, dtype=np.float32):
    """(params, OptimState, meta) from the latest checkpoint in run_dir."""
    marker = os.path.join(run_dir, LATEST_MARKER)
    with open(marker, encoding="utf-8") as f:
        name = f.read().strip()
    ckpt = os.path.join(run_dir, name)
    params, _ = M.load_checkpoint(ckpt, dtype=dtype)
    named, meta = _read_raw_tensors(ckpt + ".opt")
    state = OptimState(step=meta["step"], beta1=meta["beta1"],
                       beta2=meta["beta2"], eps=meta["eps"])
    for pname in params.named:
        m = named.get(f"m.{pname}")
        v = named.get(f"v.{pname}")
        if m is None or v is None or m.shape != params.named[pname].data.shape:
            raise CheckpointError(f"{ckpt}.opt: moment tensors do not match parameters")
        state.first_moment[pname] = m
        state.second_moment[pname] = v
    return params, state, meta


def train(params: M.Parameters, corpus, tcfg: TrainConfig,
          config: M.ModelConfig | None = None, run_dir: str | None = None,
          report_path: str | None = None, eval_hook=None,
          resume_state: OptimState | None = None, start_epoch: int = 0,
          start_batch: int = 0):
    """Optimize `params` in place; returns (params, TrainReport).

    `eval_hook(step, params) -> bool` runs at every checkpoint interval;
    returning True stops training early (used for held-out early stopping).
    """
    config = config or params.config
    tcfg.validate()
    state = resume_state or OptimState.for_params(params.named)
    report = TrainReport()
    report_file = open(report_path, "a", encoding="utf-8") if report_path else None
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)

    step = state.step
    max_epochs = tcfg.max_epochs if tcfg.max_epochs is not None else 10 ** 9
    stop = False
    last_loss = float("nan")
    try:
        for epoch in range(start_epoch, max_epochs):
            batches = make_batches(corpus, tcfg.token_budget, tcfg.seed, epoch,
                                   directions=tcfg.directions,
                                   paired=tcfg.paired_directions)
            for b_idx, batch in enumerate(batches):
                if epoch == start_epoch and b_idx < start_batch:
                    continue
                t0 = time.perf_counter()
                rng = np.random.default_rng([tcfg.seed, 7, step])
                params.zero_grads()
                try:
                    loss, stats = bidirectional_loss(
                        params, batch, config,
                        label_smoothing=tcfg.label_smoothing, train=True, rng=rng)
                    loss_val = loss.item()
                    if not np.isfinite(loss_val):
                        raise NumericError("non-finite loss")
                    ad.backward(loss)
                except NumericError as e:
                    raise NumericError(
                        f"{e} at step {step}; last checkpoint retained"
                    ) from e
                grads = params.grads()
                if tcfg.clip_norm is not None:
                    clip_by_global_norm(grads, tcfg.clip_norm)
                lr = lr_schedule(step + 1, config.d_model, tcfg.warmup) * tcfg.lr_factor
                adam_step(params.named, grads, state, lr)
                step = state.step
                last_loss = loss_val
                if stats.single_direction:
                    report.single_direction_batches += 1
                if (tcfg.loss_threshold is not None
                        and report.steps_to_threshold is None
                        and loss_val < tcfg.loss_threshold):
                    report.steps_to_threshold = step
                if step % tcfg.log_interval == 0 or step == 1:
                    dt = time.perf_counter() - t0
                    row = {
                        "step": step,
                        "loss": loss_val,
                        "nll_l2r": stats.nll_l2r / max(stats.tokens_l2r, 1),
                        "nll_r2l": stats.nll_r2l / max(stats.tokens_r2l, 1),
                        "lr": lr,
                        "tokens_per_sec": stats.total_tokens / max(dt, 1e-9),
                    }
                    report.steps.append(row)
                    if report_file:
                        report_file.write(json.dumps(row) + "\n")
                        report_file.flush()
                at_interval = step % tcfg.checkpoint_interval == 0
                hit_max = tcfg.max_steps is not None and step >= tcfg.max_steps
                if run_dir and (at_interval or hit_max):
                    _save_state(run_dir, step, params, state, epoch, b_idx + 1)
                if eval_hook and (at_interval or hit_max):
                    if eval_hook(step, params):
                        stop = True
                if hit_max or stop:
                    stop = True
                    break
            if stop:
                break
            start_batch = 0
    finally:
        if report_file:
            report_file.close()
    report.final_step = step
    report.final_loss = last_loss
    return params, report


def validate(params: M.Parameters, dev_corpus, config: M.ModelConfig | None = None,
             decode_config=None, label_smoothing: float = 0.0,
             token_budget: int = 4096, mode: str = "bidi"):
    """Dev loss (bidirectional form) and dev BLEU from decoded hypotheses."""
    from .evaluation import bleu
    from .inference import translate_corpus

    config = config or params.config
    total_nll, total_tokens = 0.0, 0
    with ad.no_grad():
        for batch in make_batches(dev_corpus, token_budget, seed=0, epoch=0):
            _, stats = bidirectional_loss(params, batch, config,
                                          label_smoothing=label_smoothing)
            total_nll += stats.nll_l2r + stats.nll_r2l
            total_tokens += stats.total_tokens
    dev_loss = total_nll / max(total_tokens, 1)
    dev_bleu = None
    if decode_config is not None:
        sources = [pair.src for pair in dev_corpus]
        refs = [pair.content for pair in dev_corpus]
        results = translate_corpus(params, sources, decode_config, config, mode=mode)
        hyps = [list(r.hypothesis.tokens) for r in results]
        dev_bleu = bleu(hyps, refs).bleu
    return {"loss": dev_loss, "bleu": dev_bleu}
