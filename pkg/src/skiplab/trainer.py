"""Next-token training for desk-scale models: loss, hand-written backprop, SGD/Adam."""

from __future__ import annotations

import math
from pathlib import Path
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Model, causal_mask, layer_modes, model_forward, positional_table
from .plan import SkipPlan
from .tensor import log_softmax_rows, matmul, softmax_rows


class TrainingDivergenceError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    steps: int = 200
    batch_size: int = 8
    context_length: int = 32
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1 or self.context_length < 1:
            raise ValueError("batch_size and context_length must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def cross_entropy_loss(logits: np.ndarray, targets: Sequence[int]) -> float:
    """Mean over positions of ``-log softmax(logits_row)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ValueError(f"need one target per logits row: {targets.shape} vs {logits.shape}")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ValueError("target id outside the vocabulary")
    logp = log_softmax_rows(logits.astype(np.float64))
    return float(-logp[np.arange(targets.size), targets].mean())


# -- forward with caches ---------------------------------------------------

def _ln_forward(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return g * xhat + b, (xhat, rstd, g)


def _ln_backward(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _attn_forward(x, layer, cfg, mask):
    q, k, v = matmul(x, layer.wq), matmul(x, layer.wk), matmul(x, layer.wv)
    dh = cfg.d_head
    scale = np.asarray(math.sqrt(dh), dtype=x.dtype)
    probs, heads = [], []
    for h in range(cfg.n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        p = softmax_rows(matmul(q[:, sl], k[:, sl].T) / scale + mask)
        probs.append(p)
        heads.append(matmul(p, v[:, sl]))
    o = np.concatenate(heads, axis=1)
    return matmul(o, layer.wo), (x, q, k, v, probs, o)


def _attn_backward(dout, cache, layer, cfg, grads, prefix):
    x, q, k, v, probs, o = cache
    dh = cfg.d_head
    scale = math.sqrt(dh)
    grads[prefix + "wo"] += matmul(o.T, dout)
    do = matmul(dout, layer.wo.T)
    dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
    for h, p in enumerate(probs):
        sl = slice(h * dh, (h + 1) * dh)
        doh = do[:, sl]
        dv[:, sl] = matmul(p.T, doh)
        dp = matmul(doh, v[:, sl].T)
        ds = p * (dp - (dp * p).sum(axis=1, keepdims=True)) / scale
        dq[:, sl] = matmul(ds, k[:, sl])
        dk[:, sl] = matmul(ds.T, q[:, sl])
    grads[prefix + "wq"] += matmul(x.T, dq)
    grads[prefix + "wk"] += matmul(x.T, dk)
    grads[prefix + "wv"] += matmul(x.T, dv)
    return matmul(dq, layer.wq.T) + matmul(dk, layer.wk.T) + matmul(dv, layer.wv.T)


def _ffwd_forward(x, layer):
    z = matmul(x, layer.w1) + layer.b1
    f = np.maximum(z, 0)
    return matmul(f, layer.w2) + layer.b2, (x, z, f)


def _ffwd_backward(dout, cache, layer, grads, prefix):
    x, z, f = cache
    grads[prefix + "w2"] += matmul(f.T, dout)
    grads[prefix + "b2"] += dout.sum(axis=0)
    dz = matmul(dout, layer.w2.T) * (z > 0)
    grads[prefix + "w1"] += matmul(x.T, dz)
    grads[prefix + "b1"] += dz.sum(axis=0)
    return matmul(dz, layer.w1.T)


def _block_forward(x, layer, cfg, kind, mask):
    """Run one residual block; returns (output, cache)."""
    eps = cfg.layernorm_eps
    g, b = (layer.ln1_g, layer.ln1_b) if kind == "attn" else (layer.ln2_g, layer.ln2_b)
    run = (lambda h: _attn_forward(h, layer, cfg, mask)) if kind == "attn" else (lambda h: _ffwd_forward(h, layer))
    if cfg.norm_placement == "post":
        s, sub_cache = run(x)
        y, ln_cache = _ln_forward(x + s, g, b, eps)
    else:
        h, ln_cache = _ln_forward(x, g, b, eps)
        s, sub_cache = run(h)
        y = x + s
    return y, (kind, sub_cache, ln_cache)


def _block_backward(dy, cache, layer, cfg, grads, prefix):
    kind, sub_cache, ln_cache = cache
    gname, bname = ("ln1_g", "ln1_b") if kind == "attn" else ("ln2_g", "ln2_b")

    def sub_back(ds):
        if kind == "attn":
            return _attn_backward(ds, sub_cache, layer, cfg, grads, prefix)
        return _ffwd_backward(ds, sub_cache, layer, grads, prefix)

    if cfg.norm_placement == "post":
        dr, dg, db = _ln_backward(dy, ln_cache)
        dx = dr + sub_back(dr)
    else:
        dh = sub_back(dy)
        dxn, dg, db = _ln_backward(dh, ln_cache)
        dx = dy + dxn
    grads[prefix + gname] += dg
    grads[prefix + bname] += db
    return dx


def _sequence_grads(model: Model, tokens, targets, modes, grads, weight: float) -> float:
    cfg = model.config
    dtype = model.token_embedding.dtype
    ids = np.asarray(tokens, dtype=np.int64)
    n = ids.size
    mask = causal_mask(n, dtype)
    x = model.token_embedding[ids] + positional_table(n, cfg, dtype)
    caches = []
    for layer, mode in zip(model.layers, modes):
        layer_caches = []
        if mode.runs_attention:
            x, c = _block_forward(x, layer, cfg, "attn", mask)
            layer_caches.append(c)
        if mode.runs_ffwd:
            x, c = _block_forward(x, layer, cfg, "ffwd", mask)
            layer_caches.append(c)
        caches.append(layer_caches)
    hf, lnf_cache = _ln_forward(x, model.lnf_g, model.lnf_b, cfg.layernorm_eps)
    logits = matmul(hf, model.w_out)

    tgt = np.asarray(targets, dtype=np.int64)
    logp = log_softmax_rows(logits.astype(np.float64))
    loss = float(-logp[np.arange(n), tgt].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), tgt] -= 1.0
    dlogits = (dlogits * (weight / n)).astype(dtype)

    grads["w_out"] += matmul(hf.T, dlogits)
    dx, dg, db = _ln_backward(matmul(dlogits, model.w_out.T), lnf_cache)
    grads["lnf_g"] += dg
    grads["lnf_b"] += db
    for i in reversed(range(cfg.n_layers)):
        for c in reversed(caches[i]):
            dx = _block_backward(dx, c, model.layers[i], cfg, grads, f"layers.{i}.")
    np.add.at(grads["token_embedding"], ids, dx)
    return loss


def batch_loss(model: Model, batch: np.ndarray, plan: SkipPlan | None = None) -> float:
    """Mean cross-entropy over a batch of (context + 1)-token windows, via the inference path."""
    batch = np.atleast_2d(batch)
    return float(np.mean([cross_entropy_loss(model_forward(w[:-1], model, plan), w[1:]) for w in batch]))


def backward(model: Model, batch: np.ndarray, plan: SkipPlan | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradient of every tensor for a batch of token windows (shape ``(B, T + 1)``)."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.int64))
    modes = list(layer_modes(model, plan))
    grads = {name: np.zeros_like(t) for name, t in model.named_tensors().items()}
    weight = 1.0 / batch.shape[0]
    losses = [_sequence_grads(model, w[:-1], w[1:], modes, grads, weight) for w in batch]
    loss = float(np.mean(losses))
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDivergenceError("non-finite loss or gradient")
    return loss, grads


def sample_batch(stream: np.ndarray, rng: np.random.Generator, batch_size: int, context: int) -> np.ndarray:
    starts = rng.integers(0, stream.size - context, size=batch_size)
    return np.stack([stream[s:s + context + 1] for s in starts])


def _token_stream(corpus: bytes | Sequence[int], context: int) -> np.ndarray:
    data = np.frombuffer(corpus, dtype=np.uint8).astype(np.int64) if isinstance(corpus, (bytes, bytearray)) else np.asarray(corpus, dtype=np.int64)
    if data.size == 0:
        raise ValueError("corpus is empty")
    reps = -(-(context + 2) // data.size)
    return np.tile(data, max(reps, 1))


@dataclass
class TrainResult:
    model: Model
    losses: list[tuple[int, float]] = field(default_factory=list)

    def write_curve(self, path) -> None:
        lines = ["step\tloss"] + [f"{s}\t{loss!r}" for s, loss in self.losses]
        Path(path).write_text("\n".join(lines) + "\n")


def train(model: Model, corpus: bytes | Sequence[int], config: TrainConfig, plan: SkipPlan | None = None) -> TrainResult:
    """Train on random windows of ``corpus``; returns the new model and the per-step loss curve."""
    if config.context_length > model.config.max_seq_len:
        raise ValueError("context_length exceeds the model's max_seq_len")
    stream = _token_stream(corpus, config.context_length)
    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in model.named_tensors().items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, lr = config.beta1, config.beta2, config.learning_rate
    current = Model.from_named(model.config, params, model.metadata)
    losses = []
    for step in range(1, config.steps + 1):
        batch = sample_batch(stream, rng, config.batch_size, config.context_length)
        try:
            loss, grads = backward(current, batch, plan)
        except TrainingDivergenceError as e:
            raise TrainingDivergenceError(str(e), step) from None
        losses.append((step, loss))
        for name, g in grads.items():
            if config.optimizer == "sgd":
                params[name] -= (lr * g).astype(params[name].dtype)
            else:
                m[name] = b1 * m[name] + (1 - b1) * g
                v2[name] = b2 * v2[name] + (1 - b2) * g * g
                mhat = m[name] / (1 - b1 ** step)
                vhat = v2[name] / (1 - b2 ** step)
                params[name] -= (lr * mhat / (np.sqrt(vhat) + config.eps_opt)).astype(params[name].dtype)
    meta = dict(model.metadata or {})
    if config.steps:
        meta["trained_steps"] = meta.get("trained_steps", 0) + config.steps
    return TrainResult(Model.from_named(model.config, params, meta) if config.steps else model, losses)



def relu_pattern(model: Model, batch: np.ndarray, plan: SkipPlan | None = None) -> np.ndarray:
    """Signs of every feed-forward pre-activation over the batch, flattened.

    A finite-difference probe is only valid if this pattern is the same at both
    perturbed points.
    """
    cfg = model.config
    dtype = model.token_embedding.dtype
    modes = list(layer_modes(model, plan))
    out = []
    for w in np.atleast_2d(batch):
        ids = np.asarray(w[:-1], dtype=np.int64)
        mask = causal_mask(ids.size, dtype)
        x = model.token_embedding[ids] + positional_table(ids.size, cfg, dtype)
        for layer, mode in zip(model.layers, modes):
            if mode.runs_attention:
                x, _ = _block_forward(x, layer, cfg, "attn", mask)
            if mode.runs_ffwd:
                x, (_, (_, z, _), _) = _block_forward(x, layer, cfg, "ffwd", mask)
                out.append((z > 0).ravel())
    return np.concatenate(out) if out else np.zeros(0, dtype=bool)
