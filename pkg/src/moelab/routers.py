"""Both routing mechanisms.

Baseline token-choice gating scores every token against learned expert
embeddings, selects the top-k softmax probabilities, and uses those (un-
renormalized) probabilities as gate weights; the auxiliary balance loss
penalizes the product of assignment fractions and mean probabilities.

Domain-aware routing instead keeps k independent Gaussian-mixture sets over
the latent space. Rank j reduces its posterior over components to a best
score per expert, picks the best expert not already taken by a lower rank,
and the k retained scores are softmaxed into gate weights. Routing therefore
depends only on the latents and mixture parameters — never on task loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import rank_score_distribution
from .gmm import (
    GmmGrads,
    GmmParams,
    flag_slow_components,
    gmm_nll,
    gmm_nll_grad,
    gmm_posterior,
    reactivation_grad,
    reactivation_loss,
)
from .numerics import argtop_k_rows, softmax


@dataclass
class BaselineRouterParams:
    embeddings: np.ndarray  # (d, N), one column per expert

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be a (d, N) matrix")

    @property
    def dim(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_experts(self) -> int:
        return self.embeddings.shape[1]

    def copy(self) -> "BaselineRouterParams":
        return BaselineRouterParams(self.embeddings.copy())

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_experts": self.n_experts,
            "embeddings": self.embeddings.ravel().tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "BaselineRouterParams":
        return cls(np.asarray(d["embeddings"], dtype=np.float64).reshape(d["dim"], d["n_experts"]))


@dataclass
class IdaRouterParams:
    gmm_sets: list[GmmParams]  # one independent set per routing rank

    def __post_init__(self) -> None:
        if not self.gmm_sets:
            raise ValueError("need at least one GMM set")
        first = self.gmm_sets[0]
        for s in self.gmm_sets:
            if (s.n_experts, s.n_components, s.dim) != (
                first.n_experts,
                first.n_components,
                first.dim,
            ):
                raise ValueError("all GMM sets must share (N, M, r)")

    @property
    def top_k(self) -> int:
        return len(self.gmm_sets)

    @property
    def n_experts(self) -> int:
        return self.gmm_sets[0].n_experts

    @property
    def latent_dim(self) -> int:
        return self.gmm_sets[0].dim

    def copy(self) -> "IdaRouterParams":
        return IdaRouterParams([s.copy() for s in self.gmm_sets])

    def to_json_dict(self) -> dict:
        return {"gmm_sets": [s.to_json_dict() for s in self.gmm_sets]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "IdaRouterParams":
        return cls([GmmParams.from_json_dict(s) for s in d["gmm_sets"]])


@dataclass
class RoutingDecision:
    """Per-token routing outcome shared by both mechanisms.

    selected[t, j] is the expert chosen at rank j (distinct per token),
    gates[t, j] its mixture weight, full_probs[t] the token's probability
    vector over all experts (softmax row for the baseline, averaged
    normalized rank scores for mixture routing), and rank_scores[t, j] the
    raw score behind the choice. rank_tables keeps each rank's (T, N) score
    table for mixture routing; the baseline leaves it None.
    """

    selected: np.ndarray  # (T, k) int
    gates: np.ndarray  # (T, k)
    full_probs: np.ndarray  # (T, N)
    rank_scores: np.ndarray  # (T, k)
    rank_tables: np.ndarray | None = None  # (k, T, N) for mixture routing

    @property
    def n_tokens(self) -> int:
        return self.selected.shape[0]

    @property
    def top_k(self) -> int:
        return self.selected.shape[1]

    @property
    def n_experts(self) -> int:
        return self.full_probs.shape[1]

    def expert_counts(self) -> np.ndarray:
        return np.bincount(self.selected.ravel(), minlength=self.n_experts)


@dataclass
class AuxBalanceReport:
    f: np.ndarray  # (N,) assignment fractions, scaled so a uniform router gives 1
    p_bar: np.ndarray  # (N,) mean routing probability per expert
    loss: float


def init_baseline_router(
    dim: int, n_experts: int, rng: np.random.Generator, scale: float | None = None
) -> BaselineRouterParams:
    # small init keeps the starting distribution near uniform, like an
    # untrained gate; specialization (and imbalance) must be learned
    if scale is None:
        scale = 0.1 / np.sqrt(dim)
    return BaselineRouterParams(rng.uniform(-scale, scale, size=(dim, n_experts)))


def baseline_route(params: BaselineRouterParams, U: np.ndarray, k: int) -> RoutingDecision:
    """Token-choice gating: softmax compatibility scores, top-k selection,
    gates equal to the selected probabilities (not renormalized)."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != params.dim:
        raise ValueError(f"token batch shape {U.shape} incompatible with dim {params.dim}")
    if not 1 <= k <= params.n_experts:
        raise ValueError(f"k={k} out of range for {params.n_experts} experts")
    probs = softmax(U @ params.embeddings, axis=1)
    selected = argtop_k_rows(probs, k)
    gates = np.take_along_axis(probs, selected, axis=1)
    return RoutingDecision(selected, gates, probs, gates.copy())


def aux_balance_loss(decisions: RoutingDecision, top_k: int, alpha: float) -> AuxBalanceReport:
    """Auxiliary balance term: alpha * sum_i f_i * p_bar_i.

    f_i = (N / (K T)) * sum_t delta[t, i]   (sums to N across experts)
    p_bar_i = mean_t p[t, i]                (sums to 1)

    Perfectly uniform assignments with uniform probabilities give exactly
    alpha. Only p_bar carries gradient; f is piecewise constant in the
    parameters and is treated as a constant by :func:`aux_balance_grad`.
    """
    n = decisions.n_experts
    t = decisions.n_tokens
    counts = decisions.expert_counts()
    f = counts * (n / (top_k * t))
    p_bar = decisions.full_probs.mean(axis=0)
    loss = alpha * float(f @ p_bar)
    return AuxBalanceReport(f, p_bar, loss)


def aux_balance_grad(
    decisions: RoutingDecision,
    U: np.ndarray,
    params: BaselineRouterParams,
    top_k: int,
    alpha: float,
) -> np.ndarray:
    """Gradient of the balance loss on the expert embeddings (d, N), holding
    the assignment fractions f fixed."""
    U = np.asarray(U, dtype=np.float64)
    report = aux_balance_loss(decisions, top_k, alpha)
    p = decisions.full_probs
    s = (alpha / decisions.n_tokens) * report.f  # (N,) dL/dp per token
    d_logits = p * (s[None, :] - (p * s[None, :]).sum(axis=1, keepdims=True))
    return U.T @ d_logits


def select_experts_from_scores(score_tables: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy rank-by-rank expert selection from (k, T, N) score tables.

    Rank j takes its best-scoring expert; if a lower rank already took it for
    that token, the next-best expert under rank j's own scores is used, so the
    k selections are always distinct. Ties go to the lowest expert index.
    Returns (selected, retained_scores), both (T, k).
    """
    k, t, n = score_tables.shape
    if k > n:
        raise ValueError(f"cannot pick {k} distinct experts out of {n}")
    selected = np.empty((t, k), dtype=np.int64)
    retained = np.empty((t, k))
    used = np.zeros((t, n), dtype=bool)
    rows = np.arange(t)
    for j in range(k):
        avail = np.where(used, -np.inf, score_tables[j])
        pick = avail.argmax(axis=1)  # first max = lowest index on ties
        selected[:, j] = pick
        retained[:, j] = score_tables[j, rows, pick]
        used[rows, pick] = True
    return selected, retained


def ida_route(
    params: IdaRouterParams, Z: np.ndarray, k: int, log_scores: bool = False
) -> RoutingDecision:
    """Posterior routing: rank j scores expert i by its best component
    posterior under GMM set j, picks the best unused expert, and the retained
    scores are softmaxed into gates.

    ``log_scores`` switches the gate logits from raw posteriors to their
    logarithms (a sharper variant); selection is unaffected either way.
    """
    if k != params.top_k:
        raise ValueError(f"router holds {params.top_k} GMM sets but k={k} was requested")
    if k > params.n_experts:
        raise ValueError(f"cannot route top-{k} with only {params.n_experts} experts")
    tables = np.stack(
        [gmm_posterior(s, Z).max(axis=2) for s in params.gmm_sets]
    )  # (k, T, N) best-component posterior per expert
    selected, retained = select_experts_from_scores(tables)
    logits = np.log(np.maximum(retained, 1e-300)) if log_scores else retained
    gates = softmax(logits, axis=1)
    return RoutingDecision(
        selected, gates, rank_score_distribution(tables), retained, rank_tables=tables
    )


@dataclass
class IdaSetLosses:
    """Losses and combined gradients for one GMM set on one batch."""

    nll: float
    react: float
    grads: GmmGrads  # gradient of nll + react together
    slow: np.ndarray  # (N, M) bool flags drawn this step


def ida_losses(
    params: IdaRouterParams,
    Z: np.ndarray,
    rng: np.random.Generator,
    reactivation_on: bool,
) -> list[IdaSetLosses]:
    """Independent NLL (+ optional reactivation) losses and gradients per set.

    Latents are constants here, and set j's gradients never involve set j'.
    """
    out = []
    for s in params.gmm_sets:
        nll = gmm_nll(s, Z)
        grads = gmm_nll_grad(s, Z)
        react = 0.0
        slow = np.zeros((s.n_experts, s.n_components), dtype=bool)
        if reactivation_on:
            slow = flag_slow_components(s, rng)
            if slow.any():
                react = reactivation_loss(s, Z, slow)
                grads = grads.add(reactivation_grad(s, Z, slow))
        out.append(IdaSetLosses(nll, react, grads, slow))
    return out
