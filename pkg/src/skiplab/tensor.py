"""Dense numeric kernels shared by the model, trainer and diagnostics.

Matrices and vectors are plain numpy arrays. Everything runs in float32 by
default; the kernels preserve the dtype they are given so the trainer can
re-run the exact same code in float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def as_matrix(data, dtype=DTYPE) -> np.ndarray:
    m = np.asarray(data, dtype=dtype)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation.

    The result keeps the (promoted) dtype of the operands.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out_dtype = np.result_type(a.dtype, b.dtype)
    prod = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    return prod.astype(out_dtype, copy=False)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's maximum."""
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(m: np.ndarray) -> np.ndarray:
    shifted = m - m.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalise over the last axis with population variance, then apply gain and bias.

    Works on a single vector or row-wise on a matrix.
    """
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm length mismatch: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gain * ((x - mu) / np.sqrt(var + eps)) + bias
