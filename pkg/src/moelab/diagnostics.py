"""Analysis instruments: the routing-gradient decomposition, expert-utilization
coefficient of variation, and routing entropy.

The decomposition splits the task gradient on the expert embeddings into the
per-(token, expert) quantities that drive the rich-get-richer loop of coupled
routing: mu[t, i] scores how well expert i would serve token t, mu_bar[t] is
the gate-weighted score the token actually received, and the probability and
selection factors amplify or gate each contribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .experts import ExpertPool, ffn_forward_rows, moe_forward

if TYPE_CHECKING:
    from .routers import RoutingDecision


@dataclass
class GradDecomposition:
    mu: np.ndarray  # (T, N): upstream . FFN_i(u_t) for every expert
    mu_bar: np.ndarray  # (T,): upstream . MoE(u_t)
    p: np.ndarray  # (T, N) routing probabilities
    delta: np.ndarray  # (T, N) bool top-k selection indicators
    per_expert_grad: np.ndarray  # (N, d) task-loss gradient on each embedding


@dataclass
class MetricsRecord:
    """One training step's diagnostics row."""

    step: int
    cv_mean: float
    entropy_mean: float
    expert_counts: np.ndarray  # (N,) int
    loss_task: float
    loss_ae: float
    loss_gmm: float
    loss_react: float
    loss_aux: float


def assemble_embedding_grad(
    mu: np.ndarray, mu_bar: np.ndarray, p: np.ndarray, delta: np.ndarray, U: np.ndarray
) -> np.ndarray:
    """Assemble the embedding gradient from decomposition terms:

        grad_i = sum_t p[t, i] * (delta[t, i] * mu[t, i] - mu_bar[t]) * u_t

    For a selected (t, i) the summand reduces to p * (mu - mu_bar) * u — the
    relative-performance term scaled by the probability-amplification factor.
    Non-selected experts keep only the -p * mu_bar * u pull that the shared
    softmax normalizer induces, so the whole assembly equals the true gradient
    of the task loss while routing selections hold still.
    """
    coeff = p * (delta * mu - mu_bar[:, None])
    return coeff.T @ U


def grad_decompose(
    pool: ExpertPool,
    decisions: "RoutingDecision",
    U: np.ndarray,
    task_grad_at_moe_output: np.ndarray,
) -> GradDecomposition:
    """Decompose the task gradient on the baseline router's expert embeddings."""
    U = np.asarray(U, dtype=np.float64)
    g = np.asarray(task_grad_at_moe_output, dtype=np.float64)
    if g.shape != U.shape:
        raise ValueError("task gradient shape must match the token batch")
    n = pool.n_experts
    mu = np.empty((U.shape[0], n))
    for i, e in enumerate(pool.experts):
        mu[:, i] = (g * ffn_forward_rows(e, U)).sum(axis=1)
    moe_out = moe_forward(pool, decisions, U).outputs
    mu_bar = (g * moe_out).sum(axis=1)
    delta = np.zeros((U.shape[0], n), dtype=bool)
    np.put_along_axis(delta, decisions.selected, True, axis=1)
    p = decisions.full_probs
    grad = assemble_embedding_grad(mu, mu_bar, p, delta, U)
    return GradDecomposition(mu, mu_bar, p, delta, grad)


def batch_cv(counts: np.ndarray) -> float:
    """Population coefficient of variation of one batch's expert counts.

    std/mean with the population standard deviation; an all-zero batch is
    defined as perfectly balanced (0).
    """
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValueError("counts must be non-negative")
    mean = counts.mean()
    if mean == 0.0:
        return 0.0
    return float(counts.std() / mean)


def cv_mean(expert_counts_series) -> float:
    """Average of per-batch CVs over a series of count vectors."""
    series = list(expert_counts_series)
    if not series:
        raise ValueError("empty counts series")
    return float(np.mean([batch_cv(c) for c in series]))


def routing_entropy(prob_row: np.ndarray) -> float:
    """Shannon entropy in bits of one token's expert distribution.

    0 log 0 counts as 0; with 4 experts the range is [0, 2] and a clean
    two-expert split scores exactly 1.
    """
    p = np.asarray(prob_row, dtype=np.float64).ravel()
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probability row sums to {p.sum()!r}, not 1")
    nz = p[p > 0.0]
    return float(-(nz * np.log2(nz)).sum())


def mean_routing_entropy(prob_rows: np.ndarray) -> float:
    """Mean per-token routing entropy over a (T, N) probability table."""
    p = np.asarray(prob_rows, dtype=np.float64)
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("probability rows must sum to 1")
    logs = np.where(p > 0.0, np.log2(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(-(p * logs).sum(axis=1).mean())


def rank_score_distribution(tables: np.ndarray) -> np.ndarray:
    """Average of per-rank expert scores normalized over experts, (T, N)."""
    tables = np.asarray(tables, dtype=np.float64)
    normalized = tables / tables.sum(axis=2, keepdims=True)
    return normalized.mean(axis=0)


def ida_expert_distribution(decisions: "RoutingDecision") -> np.ndarray:
    """Expert-probability rows for mixture-routing decisions.

    Each rank's max-component scores are normalized over experts, and the
    per-rank rows are averaged. This is what entropy and heatmap diagnostics
    consume; it plays the role the full softmax row plays for the baseline.
    """
    if decisions.rank_tables is None:
        raise ValueError("decisions carry no per-rank score tables")
    return rank_score_distribution(decisions.rank_tables)
