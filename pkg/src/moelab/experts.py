"""Expert feed-forward networks and the gated mixture layer.

Each expert is a two-layer tanh network; the mixture output for a token is the
gate-weighted sum of its selected experts' outputs. Routing decisions arrive
precomputed (selected indices plus gate weights) and are treated as constants
here: the backward pass differentiates only through the expert networks, which
is what makes non-selected experts receive exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .numerics import make_rng

if TYPE_CHECKING:
    from .routers import RoutingDecision


@dataclass
class ExpertParams:
    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (d, h)
    b2: np.ndarray  # (d,)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, d = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape != (d, h) or self.b2.shape != (d,):
            raise ValueError("inconsistent expert parameter shapes")

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "ExpertParams":
        return ExpertParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": self.hidden,
            "w1": self.w1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.ravel().tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExpertParams":
        dim, h = int(d["dim"]), int(d["hidden"])
        return cls(
            np.asarray(d["w1"], dtype=np.float64).reshape(h, dim),
            np.asarray(d["b1"], dtype=np.float64),
            np.asarray(d["w2"], dtype=np.float64).reshape(dim, h),
            np.asarray(d["b2"], dtype=np.float64),
        )


@dataclass
class ExpertPool:
    experts: list[ExpertParams]

    def __post_init__(self) -> None:
        if not self.experts:
            raise ValueError("pool needs at least one expert")
        d, h = self.experts[0].dim, self.experts[0].hidden
        for e in self.experts:
            if e.dim != d or e.hidden != h:
                raise ValueError("all experts must share (dim, hidden)")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def dim(self) -> int:
        return self.experts[0].dim

    def copy(self) -> "ExpertPool":
        return ExpertPool([e.copy() for e in self.experts])

    def to_json_dict(self) -> dict:
        return {"experts": [e.to_json_dict() for e in self.experts]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExpertPool":
        return cls([ExpertParams.from_json_dict(e) for e in d["experts"]])


@dataclass
class ExpertGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class MoEOutput:
    outputs: np.ndarray  # (T, d), mixture only; the residual is the caller's job
    decisions: "RoutingDecision"


def init_expert(dim: int, hidden: int, rng: np.random.Generator) -> ExpertParams:
    s1 = 1.0 / np.sqrt(dim)
    s2 = 1.0 / np.sqrt(hidden)
    return ExpertParams(
        rng.uniform(-s1, s1, size=(hidden, dim)),
        np.zeros(hidden),
        rng.uniform(-s2, s2, size=(dim, hidden)),
        np.zeros(dim),
    )


def init_pool(n_experts: int, dim: int, hidden: int, seed: int) -> ExpertPool:
    # one substream per expert so the experts start distinguishable
    return ExpertPool([init_expert(dim, hidden, make_rng(seed, i)) for i in range(n_experts)])


def ffn_forward(e: ExpertParams, u: np.ndarray) -> np.ndarray:
    """Single-token expert output: w2 @ tanh(w1 @ u + b1) + b2."""
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.shape != (e.dim,):
        raise ValueError(f"token length {u.shape[0]} != dim {e.dim}")
    return e.w2 @ np.tanh(e.w1 @ u + e.b1) + e.b2


def ffn_forward_rows(e: ExpertParams, U: np.ndarray) -> np.ndarray:
    """Batched expert forward for a (T, d) slice of tokens."""
    return np.tanh(U @ e.w1.T + e.b1) @ e.w2.T + e.b2


def _check_decisions(pool: ExpertPool, decisions: "RoutingDecision", U: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != pool.dim:
        raise ValueError(f"token batch shape {U.shape} incompatible with dim {pool.dim}")
    if decisions.selected.shape[0] != U.shape[0]:
        raise ValueError("decisions were computed for a different batch size")
    if decisions.selected.min() < 0 or decisions.selected.max() >= pool.n_experts:
        raise ValueError("selected expert index out of range")
    return U


def moe_forward(pool: ExpertPool, decisions: "RoutingDecision", U: np.ndarray) -> MoEOutput:
    """Gate-weighted sum of the selected experts' outputs per token.

    output_t = sum_j gates[t, j] * FFN_{selected[t, j]}(u_t)
    """
    U = _check_decisions(pool, decisions, U)
    out = np.zeros_like(U)
    for i, e in enumerate(pool.experts):
        hit = decisions.selected == i  # (T, k); at most one hit per row
        rows = hit.any(axis=1)
        if not rows.any():
            continue
        w = (decisions.gates * hit).sum(axis=1)[rows]
        out[rows] += w[:, None] * ffn_forward_rows(e, U[rows])
    return MoEOutput(out, decisions)


def moe_backward(
    pool: ExpertPool,
    decisions: "RoutingDecision",
    U: np.ndarray,
    upstream_grad: np.ndarray,
) -> tuple[list[ExpertGrads], np.ndarray]:
    """Exact gradients of sum_t upstream_t . moe_output_t.

    Returns per-expert parameter gradients plus the gradient with respect to U
    through the expert inputs. Selected indices and gate values are constants
    (the routers own any gate gradients), so an expert selected for no token
    gets an exactly-zero gradient block. Experts are processed in index order,
    giving a fixed reduction order into the U gradient.
    """
    U = _check_decisions(pool, decisions, U)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != U.shape:
        raise ValueError("upstream gradient shape must match the token batch")
    grads: list[ExpertGrads] = []
    d_U = np.zeros_like(U)
    for i, e in enumerate(pool.experts):
        hit = decisions.selected == i
        rows = hit.any(axis=1)
        if not rows.any():
            grads.append(
                ExpertGrads(
                    np.zeros_like(e.w1),
                    np.zeros_like(e.b1),
                    np.zeros_like(e.w2),
                    np.zeros_like(e.b2),
                )
            )
            continue
        w = (decisions.gates * hit).sum(axis=1)[rows]
        Ur = U[rows]
        a = np.tanh(Ur @ e.w1.T + e.b1)  # (R, h)
        v = w[:, None] * upstream_grad[rows]  # (R, d) grad at the expert output
        g_w2 = v.T @ a
        g_b2 = v.sum(axis=0)
        d_pre = (v @ e.w2) * (1.0 - a * a)  # (R, h)
        g_w1 = d_pre.T @ Ur
        g_b1 = d_pre.sum(axis=0)
        d_U[rows] += d_pre @ e.w1
        grads.append(ExpertGrads(g_w1, g_b1, g_w2, g_b2))
    return grads, d_U
