"""Shared test utilities: finite-difference wrappers and error metrics."""

import numpy as np

from moelab.numerics import finite_diff_grad

EPS = 1e-5
GRAD_TOL = 1e-4


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise relative error with an absolute floor for tiny entries."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float((np.abs(a - f) / denom).max())


def fd_wrt(loss_at, arr: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Finite differences of ``loss_at(perturbed_copy_of_arr)``; same shape as arr."""
    return finite_diff_grad(loss_at, arr, eps)
