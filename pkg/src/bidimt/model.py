"""Transformer encoder-decoder shared by both generation directions.

One parameter set serves left-to-right and right-to-left decoding; the
only direction signal is the start token at decoder position 0, whose
embedding is a learned row of the target embedding table. Pre-norm
residual blocks with sinusoidal positions. Right-to-left scoring reverses
the target content at this boundary only; everything upstream stores
targets in natural order.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, DataError, UsageError
from .vocab import EOS, L2R, R2L, SOS_L2R, SOS_R2L, sos_for

CHECKPOINT_MAGIC = "bidimt-checkpoint-v1"

# Forward-pass instrumentation (encoder-once and rescoring-cost contracts).
COUNTERS = {"encode_calls": 0, "decode_calls": 0, "scored_sequences": 0}


def reset_counters() -> None:
    for k in COUNTERS:
        COUNTERS[k] = 0


@dataclass
class ModelConfig:
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    d_model: int = 256
    num_heads: int = 4
    d_ff: int = 1024
    dropout: float = 0.1
    max_positions: int = 256
    tied_embeddings: bool = True

    def validate(self) -> None:
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        for name in ("num_encoder_layers", "num_decoder_layers", "d_model",
                     "num_heads", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


def small_config(**overrides) -> ModelConfig:
    """2+2 layers, 256-dim: the small experiment configuration."""
    return ModelConfig(**{**dict(num_encoder_layers=2, num_decoder_layers=2,
                                 d_model=256, num_heads=4, d_ff=1024), **overrides})


def big_config(**overrides) -> ModelConfig:
    """6+6 layers, 1024-dim: the large experiment configuration."""
    return ModelConfig(**{**dict(num_encoder_layers=6, num_decoder_layers=6,
                                 d_model=1024, num_heads=16, d_ff=4096), **overrides})


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    # resample anything beyond 2 sigma
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def parameter_shapes(config: ModelConfig, src_vocab_size: int, tgt_vocab_size: int):
    """Ordered name -> shape manifest for one parameter set."""
    d, f = config.d_model, config.d_ff
    shapes: dict[str, tuple] = {
        "src_embed": (src_vocab_size, d),
        "tgt_embed": (tgt_vocab_size, d),
    }

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}.{b}"] = (d,)

    def ln(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    for i in range(config.num_encoder_layers):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.self")
        ln(f"enc.{i}.ln2")
        shapes[f"enc.{i}.ffn.w1"] = (d, f)
        shapes[f"enc.{i}.ffn.b1"] = (f,)
        shapes[f"enc.{i}.ffn.w2"] = (f, d)
        shapes[f"enc.{i}.ffn.b2"] = (d,)
    ln("enc.ln_f")
    for i in range(config.num_decoder_layers):
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        ln(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln3")
        shapes[f"dec.{i}.ffn.w1"] = (d, f)
        shapes[f"dec.{i}.ffn.b1"] = (f,)
        shapes[f"dec.{i}.ffn.w2"] = (f, d)
        shapes[f"dec.{i}.ffn.b2"] = (d,)
    ln("dec.ln_f")
    if not config.tied_embeddings:
        shapes["out_proj"] = (tgt_vocab_size, d)
    return shapes


class Parameters:
    """All model weights, addressable by name; both directions read them."""

    def __init__(self, named: dict, config: ModelConfig,
                 src_vocab_size: int, tgt_vocab_size: int):
        self.named = named
        self.config = config
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size

    @classmethod
    def init(cls, config: ModelConfig, src_vocab_size: int, tgt_vocab_size: int,
             rng: np.random.Generator, dtype=np.float32) -> "Parameters":
        config.validate()
        shapes = parameter_shapes(config, src_vocab_size, tgt_vocab_size)
        emb_std = config.d_model ** -0.5
        named = {}
        for name, shape in shapes.items():
            if name in ("src_embed", "tgt_embed", "out_proj"):
                data = _truncated_normal(rng, shape, emb_std, dtype)
            elif name.endswith(".g"):
                data = np.ones(shape, dtype=dtype)
            elif len(shape) == 1:
                data = np.zeros(shape, dtype=dtype)
            else:
                data = _xavier(rng, shape[0], shape[1], dtype)
            named[name] = Tensor(data, requires_grad=True)
        return cls(named, config, src_vocab_size, tgt_vocab_size)

    def __getitem__(self, name: str) -> Tensor:
        return self.named[name]

    @property
    def dtype(self):
        return self.named["tgt_embed"].dtype

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.named.values())

    def zero_grads(self) -> None:
        for p in self.named.values():
            p.grad = None

    def grads(self) -> dict:
        return {n: p.grad for n, p in self.named.items() if p.grad is not None}

    def copy(self) -> "Parameters":
        named = {n: Tensor(p.data.copy(), requires_grad=True) for n, p in self.named.items()}
        return Parameters(named, self.config, self.src_vocab_size, self.tgt_vocab_size)


@dataclass
class EncodedSource:
    """Encoder hidden states plus the padding mask they were built with."""

    hidden: Tensor          # (batch, src_len, d_model)
    mask: np.ndarray        # (batch, src_len) bool, True = real token


@functools.lru_cache(maxsize=8)
def _positional_encoding(max_positions: int, d_model: int, dtype_name: str) -> np.ndarray:
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(i / 2.0)) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype_name)


def _as_batch(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DataError(f"expected 1-D or 2-D token ids, got shape {arr.shape}")
    return arr


def _embed(table: Tensor, ids: np.ndarray, config: ModelConfig,
           train: bool, rng) -> Tensor:
    d = config.d_model
    if ids.shape[1] > config.max_positions:
        raise DataError(
            f"sequence length {ids.shape[1]} exceeds max_positions {config.max_positions}"
        )
    x = ad.scale(ad.embedding(table, ids), d ** 0.5)
    pe = _positional_encoding(config.max_positions, d, table.data.dtype.name)
    x = ad.add(x, Tensor(pe[None, : ids.shape[1]]))
    return ad.dropout(x, config.dropout, rng, train)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def _layer_norm(x: Tensor, p: Parameters, prefix: str) -> Tensor:
    return ad.add(ad.mul(ad.layer_norm(x), p[f"{prefix}.g"]), p[f"{prefix}.b"])


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    b, t, d = x.shape
    hd = d // num_heads
    return ad.transpose(ad.reshape(x, (b, t, num_heads, hd)), (0, 2, 1, 3))


def _attention(p: Parameters, prefix: str, x_q: Tensor, x_kv: Tensor,
               blocked, config: ModelConfig, train: bool, rng) -> Tensor:
    """Multi-head attention; `blocked` is a bool mask, True = not attendable."""
    h = config.num_heads
    hd = config.d_model // h
    q = _split_heads(_linear(x_q, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), h)
    k = _split_heads(_linear(x_kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), h)
    v = _split_heads(_linear(x_kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), h)
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), hd ** -0.5)
    if blocked is not None:
        scores = ad.masked_fill(scores, blocked, ad.NEG_FILL)
    attn = ad.dropout(ad.softmax(scores), config.dropout, rng, train)
    ctx = ad.matmul(attn, v)
    b, _, t, _ = ctx.shape
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, config.d_model))
    return _linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _ffn(p: Parameters, prefix: str, x: Tensor, config: ModelConfig,
         train: bool, rng) -> Tensor:
    inner = ad.relu(_linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return _linear(inner, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _residual(x: Tensor, sub: Tensor, config: ModelConfig, train: bool, rng) -> Tensor:
    return ad.add(x, ad.dropout(sub, config.dropout, rng, train))


@functools.lru_cache(maxsize=32)
def _causal_blocked(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]


def encode(params: Parameters, src_ids, config: ModelConfig | None = None,
           src_mask=None, train: bool = False, rng=None) -> EncodedSource:
    """Run the encoder once over a (batch of) source sentence(s)."""
    config = config or params.config
    ids = _as_batch(src_ids)
    if src_mask is None:
        mask = np.ones(ids.shape, dtype=bool)
    else:
        mask = np.asarray(src_mask, dtype=bool)
    COUNTERS["encode_calls"] += 1
    blocked = ~mask[:, None, None, :]
    x = _embed(params["src_embed"], ids, config, train, rng)
    for i in range(config.num_encoder_layers):
        normed = _layer_norm(x, params, f"enc.{i}.ln1")
        a = _attention(params, f"enc.{i}.self", normed, normed, blocked, config, train, rng)
        x = _residual(x, a, config, train, rng)
        f = _ffn(params, f"enc.{i}.ffn", _layer_norm(x, params, f"enc.{i}.ln2"),
                 config, train, rng)
        x = _residual(x, f, config, train, rng)
    x = _layer_norm(x, params, "enc.ln_f")
    return EncodedSource(hidden=x, mask=mask)


def decode_logits(params: Parameters, prefix_ids, enc: EncodedSource,
                  config: ModelConfig | None = None, enc_row_index=None,
                  train: bool = False, rng=None) -> Tensor:
    """Teacher-forced decoder logits for every prefix position.

    prefix_ids[:, 0] must be one of the two direction start tokens; when
    `enc_row_index` is given, decoder row r attends encoder row
    enc_row_index[r] (so shared sources are encoded once).
    """
    config = config or params.config
    ids = _as_batch(prefix_ids)
    starts = ids[:, 0]
    if not np.isin(starts, (SOS_L2R, SOS_R2L)).all():
        raise UsageError("decoder prefix must begin with a direction start token")
    COUNTERS["decode_calls"] += 1
    mem = enc.hidden
    mem_mask = enc.mask
    if enc_row_index is not None:
        enc_row_index = np.asarray(enc_row_index)
        mem = ad.take_rows(mem, enc_row_index)
        mem_mask = mem_mask[enc_row_index]
    elif mem.shape[0] == 1 and ids.shape[0] > 1:
        mem = ad.take_rows(mem, np.zeros(ids.shape[0], dtype=np.int64))
        mem_mask = np.broadcast_to(mem_mask, (ids.shape[0], mem_mask.shape[1]))
    if mem.shape[0] != ids.shape[0]:
        raise ConfigError(
            f"decoder batch {ids.shape[0]} does not match encoder batch {mem.shape[0]}"
        )
    causal = _causal_blocked(ids.shape[1])
    cross_blocked = ~mem_mask[:, None, None, :]
    x = _embed(params["tgt_embed"], ids, config, train, rng)
    for i in range(config.num_decoder_layers):
        normed = _layer_norm(x, params, f"dec.{i}.ln1")
        a = _attention(params, f"dec.{i}.self", normed, normed, causal, config, train, rng)
        x = _residual(x, a, config, train, rng)
        c = _attention(params, f"dec.{i}.cross", _layer_norm(x, params, f"dec.{i}.ln2"),
                       mem, cross_blocked, config, train, rng)
        x = _residual(x, c, config, train, rng)
        f = _ffn(params, f"dec.{i}.ffn", _layer_norm(x, params, f"dec.{i}.ln3"),
                 config, train, rng)
        x = _residual(x, f, config, train, rng)
    x = _layer_norm(x, params, "dec.ln_f")
    proj = params["tgt_embed"] if config.tied_embeddings else params["out_proj"]
    # d^-0.5 logit scaling, the usual companion of an embedding-tied softmax;
    # keeps the initial output distribution near uniform
    return ad.scale(ad.matmul(x, ad.transpose(proj, (1, 0))), config.d_model ** -0.5)


def oriented_stream(target_ids, direction: str) -> list[int]:
    """Gold output stream for a direction: content (reversed for R2L) + EOS."""
    target_ids = list(target_ids)
    if not target_ids or target_ids[-1] != EOS:
        raise DataError("target must end with EOS")
    content = target_ids[:-1]
    if EOS in content:
        raise DataError("target must contain exactly one EOS, at the end")
    if direction == R2L:
        content = content[::-1]
    return content + [EOS]


def sequence_logprobs(params: Parameters, enc: EncodedSource, targets,
                      direction: str, config: ModelConfig | None = None,
                      enc_row_index=None):
    """Teacher-forced log-probabilities for a batch of targets, one direction.

    Each target is EOS-terminated and in natural order; reversal for R2L
    happens here. Returns a list of (total, per_token) pairs.
    """
    config = config or params.config
    targets = [list(t) for t in targets]
    streams = [oriented_stream(t, direction) for t in targets]
    sos = sos_for(direction)
    max_len = max(len(s) for s in streams)
    n = len(streams)
    dec_in = np.zeros((n, max_len), dtype=np.int64)
    gold = np.zeros((n, max_len), dtype=np.int64)
    mask = np.zeros((n, max_len), dtype=bool)
    for r, s in enumerate(streams):
        dec_in[r, 0] = sos
        dec_in[r, 1:len(s)] = s[:-1]
        gold[r, :len(s)] = s
        mask[r, :len(s)] = True
    logits = decode_logits(params, dec_in, enc, config, enc_row_index=enc_row_index)
    lsm = ad.log_softmax(logits)
    picked = ad.gather_last(lsm, gold).data
    COUNTERS["scored_sequences"] += n
    out = []
    for r, s in enumerate(streams):
        per_token = picked[r, :len(s)].astype(np.float64)
        out.append((float(per_token.sum()), per_token))
    return out


def sequence_logprob(params: Parameters, src_ids, target_ids, direction: str,
                     config: ModelConfig | None = None):
    """(total logprob, per-token logprobs) of one target under one direction."""
    config = config or params.config
    with ad.no_grad():
        enc = encode(params, src_ids, config)
        return sequence_logprobs(params, enc, [target_ids], direction, config)[0]


# ---------------------------------------------------------------------------
# Checkpoints: one-line JSON header, then raw little-endian float32 payloads
# in manifest order. Offsets are relative to the end of the header line.
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: Parameters, extra: dict | None = None) -> None:
    manifest = []
    offset = 0
    for name, p in params.named.items():
        nbytes = p.data.size * 4
        manifest.append({"name": name, "shape": list(p.data.shape), "offset": offset})
        offset += nbytes
    header = {
        "format": CHECKPOINT_MAGIC,
        "config": asdict(params.config),
        "src_vocab_size": params.src_vocab_size,
        "tgt_vocab_size": params.tgt_vocab_size,
        "tensors": manifest,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for p in params.named.values():
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        line = f.readline()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint header: {e}") from e
    if header.get("format") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    return header


def load_checkpoint(path, dtype=np.float32):
    """Load parameters; validates every shape against the stored config."""
    header = read_checkpoint_header(path)
    try:
        config = ModelConfig(**header["config"])
    except TypeError as e:
        raise CheckpointError(f"{path}: bad config in header: {e}") from e
    config.validate()
    expected = parameter_shapes(config, header["src_vocab_size"], header["tgt_vocab_size"])
    stored = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
    if stored.keys() != expected.keys():
        missing = sorted(expected.keys() - stored.keys())
        surplus = sorted(stored.keys() - expected.keys())
        raise CheckpointError(
            f"{path}: tensor manifest mismatch (missing {missing}, surplus {surplus})"
        )
    for name, shape in expected.items():
        if stored[name] != shape:
            raise CheckpointError(
                f"{path}: tensor '{name}' has shape {stored[name]}, config implies {shape}"
            )
    named = {}
    with open(path, "rb") as f:
        f.readline()
        payload_start = f.tell()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            f.seek(payload_start + entry["offset"])
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise CheckpointError(f"{path}: truncated payload for '{entry['name']}'")
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(dtype)
            named[entry["name"]] = Tensor(arr, requires_grad=True)
    params = Parameters(named, config, header["src_vocab_size"], header["tgt_vocab_size"])
    return params, header
