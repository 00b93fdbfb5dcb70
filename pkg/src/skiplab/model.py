"""Decoder-only transformer forward pass with per-layer skip hooks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np

from .tensor import DTYPE, ShapeError, layer_norm, matmul, softmax_rows

if TYPE_CHECKING:
    from .plan import SkipPlan
    from .trace import LayerTrace

# Byte-level vocabulary: ids 0..255 are raw bytes, then two reserved ids.
SEP = 256
PAD = 257
BYTE_VOCAB = 258

MASK_VALUE = -1e9


def encode(text: bytes | str) -> list[int]:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


class LayerSkipMode(enum.Flag):
    """Which sublayer blocks of a layer are bypassed.

    ``SKIP_ATTENTION | SKIP_FFWD`` is ``SKIP_FULL``.
    """

    ACTIVE = 0
    SKIP_ATTENTION = 1
    SKIP_FFWD = 2
    SKIP_FULL = 3

    @property
    def runs_attention(self) -> bool:
        return not (self & LayerSkipMode.SKIP_ATTENTION)

    @property
    def runs_ffwd(self) -> bool:
        return not (self & LayerSkipMode.SKIP_FFWD)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = BYTE_VOCAB
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 64
    max_seq_len: int = 64
    norm_placement: str = "post"
    layernorm_eps: float = 1e-5

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.norm_placement not in ("post", "pre"):
            raise ValueError(f"norm_placement must be 'post' or 'pre', got {self.norm_placement!r}")
        if not self.layernorm_eps > 0:
            raise ValueError("layernorm_eps must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


LAYER_TENSORS = tuple(f.name for f in fields(LayerWeights))


def tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected name -> shape for every tensor of a model with this config."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"token_embedding": (v, d)}
    per_layer = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w1": (d, f), "b1": (f,), "w2": (f, d), "b2": (d,),
        "ln1_g": (d,), "ln1_b": (d,), "ln2_g": (d,), "ln2_b": (d,),
    }
    for i in range(cfg.n_layers):
        for name in LAYER_TENSORS:
            shapes[f"layers.{i}.{name}"] = per_layer[name]
    shapes["lnf_g"] = (d,)
    shapes["lnf_b"] = (d,)
    shapes["w_out"] = (d, v)
    return shapes


@dataclass
class Model:
    """Config plus every learned tensor. Treated as immutable once built."""

    config: ModelConfig
    token_embedding: np.ndarray
    layers: list[LayerWeights]
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    w_out: np.ndarray
    metadata: dict | None = None

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {"token_embedding": self.token_embedding}
        for i, layer in enumerate(self.layers):
            for name in LAYER_TENSORS:
                out[f"layers.{i}.{name}"] = getattr(layer, name)
        out["lnf_g"] = self.lnf_g
        out["lnf_b"] = self.lnf_b
        out["w_out"] = self.w_out
        return out

    @classmethod
    def from_named(cls, config: ModelConfig, tensors: dict[str, np.ndarray], metadata=None) -> "Model":
        expected = tensor_shapes(config)
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        if missing or extra:
            raise ValueError(f"tensor set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        layers = [
            LayerWeights(**{n: tensors[f"layers.{i}.{n}"] for n in LAYER_TENSORS})
            for i in range(config.n_layers)
        ]
        return cls(
            config=config,
            token_embedding=tensors["token_embedding"],
            layers=layers,
            lnf_g=tensors["lnf_g"],
            lnf_b=tensors["lnf_b"],
            w_out=tensors["w_out"],
            metadata=metadata,
        )

    def astype(self, dtype) -> "Model":
        return Model.from_named(
            self.config,
            {k: v.astype(dtype) for k, v in self.named_tensors().items()},
            self.metadata,
        )

    def replace_tensors(self, **updates: np.ndarray) -> "Model":
        tensors = dict(self.named_tensors())
        tensors.update(updates)
        return Model.from_named(self.config, tensors, self.metadata)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_tensors().values())

    def check_finite(self) -> None:
        for name, t in self.named_tensors().items():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"tensor {name} contains non-finite values")


def positional_encoding(pos: int, cfg: ModelConfig, dtype=DTYPE) -> np.ndarray:
    """Sinusoidal encoding: sin on even indices, cos on odd, wavelength 10000^(2i/d_model)."""
    if not 0 <= pos < cfg.max_seq_len:
        raise ValueError(f"position {pos} outside [0, {cfg.max_seq_len})")
    d = cfg.d_model
    pe = np.empty(d, dtype=np.float64)
    two_i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d)
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle[: d // 2])
    return pe.astype(dtype)


def positional_table(n: int, cfg: ModelConfig, dtype=DTYPE) -> np.ndarray:
    return np.stack([positional_encoding(p, cfg, dtype) for p in range(n)])


def causal_mask(n: int, dtype=DTYPE) -> np.ndarray:
    return np.triu(np.full((n, n), MASK_VALUE, dtype=dtype), k=1)


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, causal: bool = False) -> np.ndarray:
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention operands must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"Q and K widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"K and V lengths differ: {k.shape} vs {v.shape}")
    d_k = q.shape[1]
    scores = matmul(q, k.T) / np.asarray(math.sqrt(d_k), dtype=q.dtype)
    if causal:
        if q.shape[0] != k.shape[0]:
            raise ShapeError("causal attention needs equal query and key lengths")
        scores = scores + causal_mask(q.shape[0], scores.dtype)
    return matmul(softmax_rows(scores), v)


def multi_head_attention(x: np.ndarray, layer: LayerWeights, cfg: ModelConfig, causal: bool = True) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != cfg.d_model:
        raise ShapeError(f"expected (seq, {cfg.d_model}) input, got {x.shape}")
    q = matmul(x, layer.wq)
    k = matmul(x, layer.wk)
    v = matmul(x, layer.wv)
    dh = cfg.d_head
    heads = [
        scaled_dot_attention(q[:, h * dh:(h + 1) * dh], k[:, h * dh:(h + 1) * dh], v[:, h * dh:(h + 1) * dh], causal)
        for h in range(cfg.n_heads)
    ]
    return matmul(np.concatenate(heads, axis=1), layer.wo)


def feed_forward(x: np.ndarray, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """ReLU MLP, ``max(0, x W1 + b1) W2 + b2``. Accepts a vector or row-stacked matrix."""
    single = x.ndim == 1
    xm = x[None, :] if single else x
    if b1.shape != (w1.shape[1],) or b2.shape != (w2.shape[1],):
        raise ShapeError("bias shapes do not match weight widths")
    hidden = np.maximum(matmul(xm, w1) + b1, 0)
    out = matmul(hidden, w2) + b2
    return out[0] if single else out


def attention_block(x: np.ndarray, layer: LayerWeights, cfg: ModelConfig) -> np.ndarray:
    eps = cfg.layernorm_eps
    if cfg.norm_placement == "post":
        return layer_norm(x + multi_head_attention(x, layer, cfg), layer.ln1_g, layer.ln1_b, eps)
    return x + multi_head_attention(layer_norm(x, layer.ln1_g, layer.ln1_b, eps), layer, cfg)


def ffwd_block(x: np.ndarray, layer: LayerWeights, cfg: ModelConfig) -> np.ndarray:
    eps = cfg.layernorm_eps
    ff = lambda h: feed_forward(h, layer.w1, layer.b1, layer.w2, layer.b2)  # noqa: E731
    if cfg.norm_placement == "post":
        return layer_norm(x + ff(x), layer.ln2_g, layer.ln2_b, eps)
    return x + ff(layer_norm(x, layer.ln2_g, layer.ln2_b, eps))


def layer_forward(
    x: np.ndarray,
    layer: LayerWeights,
    mode: LayerSkipMode,
    cfg: ModelConfig,
    trace: "LayerTrace | None" = None,
    index: int = 0,
) -> np.ndarray:
    """One transformer layer; a skipped block is replaced by the identity, norm included."""
    out = x
    if mode.runs_attention:
        out = attention_block(out, layer, cfg)
    if mode.runs_ffwd:
        out = ffwd_block(out, layer, cfg)
    if out.shape != x.shape:
        raise ShapeError(f"layer {index} changed shape {x.shape} -> {out.shape}")
    if trace is not None:
        trace.record(index, x, out)
    return out


def _check_tokens(tokens: Sequence[int], cfg: ModelConfig) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("tokens must be a non-empty 1-D sequence")
    if ids.size > cfg.max_seq_len:
        raise ValueError(f"sequence length {ids.size} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    return ids


def embed(tokens: Sequence[int], model: Model) -> np.ndarray:
    cfg = model.config
    ids = _check_tokens(tokens, cfg)
    dtype = model.token_embedding.dtype
    return model.token_embedding[ids] + positional_table(ids.size, cfg, dtype)


def layer_modes(model: Model, plan: "SkipPlan | None") -> Iterator[LayerSkipMode]:
    n = model.config.n_layers
    if plan is None:
        yield from (LayerSkipMode.ACTIVE for _ in range(n))
        return
    if plan.n_layers != n:
        raise ValueError(f"plan covers {plan.n_layers} layers but the model has {n}")
    yield from plan.modes


def hidden_states(
    tokens: Sequence[int],
    model: Model,
    plan: "SkipPlan | None" = None,
    trace: "LayerTrace | None" = None,
) -> np.ndarray:
    """Residual stream after the last layer, before the final norm."""
    cfg = model.config
    x = embed(tokens, model)
    for i, (layer, mode) in enumerate(zip(model.layers, layer_modes(model, plan))):
        x = layer_forward(x, layer, mode, cfg, trace, i)
    return x


def model_forward(
    tokens: Sequence[int],
    model: Model,
    plan: "SkipPlan | None" = None,
    trace: "LayerTrace | None" = None,
) -> np.ndarray:
    """Logits of shape (seq, vocab_size); row i is the next-token distribution after token i."""
    cfg = model.config
    x = hidden_states(tokens, model, plan, trace)
    x = layer_norm(x, model.lnf_g, model.lnf_b, cfg.layernorm_eps)
    return matmul(x, model.w_out)


def baseline_forward(tokens: Sequence[int], model: Model) -> np.ndarray:
    """Forward pass with no skip machinery at all; reference for the no-op plan."""
    cfg = model.config
    x = embed(tokens, model)
    for layer in model.layers:
        x = ffwd_block(attention_block(x, layer, cfg), layer, cfg)
    x = layer_norm(x, model.lnf_g, model.lnf_b, cfg.layernorm_eps)
    return matmul(x, model.w_out)


def scale_sublayer_outputs(model: Model, factor: float) -> Model:
    """Scale the output projections (Wo, W2, b2) so every sublayer output shrinks by ``factor``."""
    updates = {}
    for i, layer in enumerate(model.layers):
        updates[f"layers.{i}.wo"] = (layer.wo * factor).astype(layer.wo.dtype)
        updates[f"layers.{i}.w2"] = (layer.w2 * factor).astype(layer.w2.dtype)
        updates[f"layers.{i}.b2"] = (layer.b2 * factor).astype(layer.b2.dtype)
    return model.replace_tensors(**updates)


def with_config(model: Model, **changes) -> Model:
    return Model.from_named(replace(model.config, **changes), model.named_tensors(), model.metadata)
