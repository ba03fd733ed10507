"""Deterministic scalar and dense-matrix primitives shared across the package.

All reductions accumulate strictly left to right (no pairwise or blocked
summation), so results are bit-reproducible across runs and match a naive
loop evaluation exactly.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

# Clamp bound applied only where a log or a division follows; stored
# probabilities are never clamped.
LOG_EPS = 1e-12


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded PCG64 generator; (seed, stream) fully determines the sequence."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def _as_float_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def sigmoid(z):
    """Numerically stable logistic function 1 / (1 + exp(-z)).

    Evaluated through exp(-|z|) so neither branch can overflow. Scalar
    input returns a float, array input returns an array.
    """
    arr = _as_float_array(z)
    if not np.all(np.isfinite(arr)):
        raise DomainError("sigmoid requires finite input")
    e = np.exp(-np.abs(arr))
    out = np.where(arr >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if arr.ndim == 0 else out


def logit(p):
    """Inverse of sigmoid; defined on the open interval (0, 1) only."""
    arr = _as_float_array(p)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("logit requires 0 < p < 1")
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if arr.ndim == 0 else out


def clip_probability(p, eps: float = LOG_EPS):
    """Clamp a probability to [eps, 1 - eps] ahead of a log or division."""
    return np.clip(p, eps, 1.0 - eps)


def as_matrix(a) -> np.ndarray:
    arr = _as_float_array(a)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated left to right over the inner axis.

    Matches the classic triple loop bit for bit, unlike BLAS kernels that
    may reorder the summation.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def elementwise(a, fn) -> np.ndarray:
    """Apply a scalar function to every element of a matrix."""
    arr = as_matrix(a)
    return np.vectorize(fn, otypes=[np.float64])(arr)


def row_sums(a) -> np.ndarray:
    """Per-row sums, columns accumulated left to right."""
    a = as_matrix(a)
    out = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        out += a[:, j]
    return out


def col_sums(a) -> np.ndarray:
    """Per-column sums, rows accumulated top to bottom."""
    a = as_matrix(a)
    out = np.zeros(a.shape[1])
    for i in range(a.shape[0]):
        out += a[i, :]
    return out
