"""Deterministic dense kernels: matmul, row softmax, GELU, layer norm, cross entropy.

Everything is 64-bit. A "Tensor2D" throughout the package is simply a
C-contiguous 2-D float64 ndarray; `as_tensor2d` is the checked constructor.
All functions here are pure and guarantee finite outputs for inputs that
meet their preconditions.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError, ShapeError

Tensor2D = np.ndarray

# GELU tanh-approximation constants.
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def as_tensor2d(data, rows: int | None = None, cols: int | None = None) -> Tensor2D:
    """Coerce to a 2-D float64 array, optionally checking its shape."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D tensor, got ndim={arr.ndim}")
    if rows is not None and arr.shape != (rows, cols):
        raise ShapeError(f"expected shape ({rows}, {cols}), got {arr.shape}")
    return arr


def matmul(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    """Matrix product. Raises ShapeError naming both shapes on mismatch."""
    a = as_tensor2d(a)
    b = as_tensor2d(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def softmax_rows(m: Tensor2D) -> Tensor2D:
    """Row-wise softmax with row-max subtraction.

    Entries as negative as -10000 (additive attention masks) underflow to
    exact zero probability instead of producing NaN.
    """
    m = as_tensor2d(m)
    if np.isnan(m).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gelu(x):
    """GELU via the tanh approximation 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x * x * x)))


def gelu_grad(x):
    """Analytic derivative of the tanh-approximated GELU."""
    x = np.asarray(x, dtype=np.float64)
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalize a vector to zero mean / unit variance, then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if not (x.shape == gamma.shape == beta.shape):
        raise ShapeError(f"layer_norm length mismatch: x{x.shape} gamma{gamma.shape} beta{beta.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mean = x.mean()
    var = x.var()
    return (x - mean) / math.sqrt(var + eps) * gamma + beta


def layer_norm_rows(x: Tensor2D, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> Tensor2D:
    """Row-wise layer norm; gamma/beta broadcast over rows."""
    x = as_tensor2d(x)
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    return shifted - math.log(np.exp(shifted).sum())


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label]; always >= 0 up to rounding."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= label < logits.size:
        raise IndexError(f"label {label} out of range for {logits.size} logits")
    return float(-log_softmax(logits)[label])


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    """Raise NumericError if arr contains NaN or Inf."""
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains non-finite values")
    return arr
