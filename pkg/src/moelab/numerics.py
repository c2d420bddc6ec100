"""Shared numeric primitives: stable softmax / log-sum-exp, top-k selection,
seeded randomness, and the finite-difference oracle used by gradient tests.

Matrices throughout this package are plain numpy float64 arrays in row-major
layout. Randomness always flows through :func:`make_rng`, which is pinned to
the PCG64 bit generator: a given seed reproduces the same stream on every
platform, which is what makes the experiment CSVs byte-reproducible.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic PCG64 generator for ``seed``.

    Extra integers select independent substreams (data stream, per-expert
    init, ...) so derived generators never share draws.
    """
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction so huge logits cannot overflow.

    Works on vectors and on batched rows (``axis`` selects the normalized
    dimension). Each output row is positive and sums to 1 up to rounding.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of empty input")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(softmax(v)) computed without forming intermediate exponentials."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_softmax of empty input")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def log_sum_exp(v: np.ndarray, axis: int = -1):
    """ln sum_i exp(v_i), exact under max-shift: lse([1000, 1000]) = 1000 + ln 2.

    Returns a float for vector input, an array when reducing an axis of a
    batched input.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of empty input")
    m = v.max(axis=axis, keepdims=True)
    out = np.squeeze(m, axis=axis) + np.log(np.exp(v - m).sum(axis=axis))
    return float(out) if out.ndim == 0 else out


def argtop_k(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, descending by value.

    Ties break toward the lowest index (stable sort), so results are
    reproducible regardless of how the vector was produced.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if not 1 <= k <= v.size:
        raise ValueError(f"k={k} out of range for vector of length {v.size}")
    return np.argsort(-v, kind="stable")[:k]


def argtop_k_rows(x: np.ndarray, k: int) -> np.ndarray:
    """Row-wise :func:`argtop_k` for a (T, N) matrix, same tie rule."""
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= x.shape[1]:
        raise ValueError(f"k={k} out of range for {x.shape[1]} columns")
    return np.argsort(-x, axis=1, kind="stable")[:, :k]


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+eps*e_i) - f(x-eps*e_i)) / 2eps.

    ``x`` may have any shape; the gradient matches it. Every analytic gradient
    in this package is checked against this oracle, so it deliberately stays
    naive and independent of the code paths it verifies.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += eps
        xm = x.copy()
        xm.flat[i] -= eps
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        grad.flat[i] = (fp - fm) / (2.0 * eps)
    return grad
