"""Diagonal-covariance Gaussian mixture over the low-dimensional routing space.

One parameter set is a joint mixture of ``n_experts * n_components`` Gaussians:
the mixing weights come from a single softmax over all logits, so the posterior
over (expert, component) pairs is a proper joint distribution. Latent batches
are always treated as constants — no gradient flows back into them; the three
parameter blocks (logits, means, log-variances) are trained with the closed
form gradients below, each verified against the finite-difference oracle.

The negative log-likelihood of a batch Z under the mixture is

    nll(Z) = -sum_t ln sum_k pi_k N(z_t | mu_k, diag(exp rho_k))

with k running over all expert-component pairs. The slow-component
reactivation loss is the same expression restricted to a flagged subset S,
which renormalizes the posterior weights inside S and thereby gives starved
components full-strength mean updates. Both losses share one masked kernel, so
reactivation over the full component set reproduces the plain NLL bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import log_softmax, softmax

LOG_2PI = math.log(2.0 * math.pi)

# Per-dimension variances are clamped to this floor after every update; it
# prevents density singularities when a component collapses onto few points.
VARIANCE_FLOOR = 1e-6
LOG_VARIANCE_FLOOR = math.log(VARIANCE_FLOOR)


@dataclass
class GmmParams:
    """Mixing logits, means, and per-dimension log-variances for ``n_experts``
    experts with ``n_components`` Gaussian components each, over a ``dim``
    dimensional latent space."""

    n_experts: int
    n_components: int
    dim: int
    mix_logits: np.ndarray  # (N, M)
    means: np.ndarray  # (N, M, r)
    log_vars: np.ndarray  # (N, M, r)

    def __post_init__(self) -> None:
        n, m, r = self.n_experts, self.n_components, self.dim
        self.mix_logits = np.asarray(self.mix_logits, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.log_vars = np.asarray(self.log_vars, dtype=np.float64)
        if self.mix_logits.shape != (n, m):
            raise ValueError(f"mix_logits shape {self.mix_logits.shape} != {(n, m)}")
        if self.means.shape != (n, m, r):
            raise ValueError(f"means shape {self.means.shape} != {(n, m, r)}")
        if self.log_vars.shape != (n, m, r):
            raise ValueError(f"log_vars shape {self.log_vars.shape} != {(n, m, r)}")

    @property
    def n_total(self) -> int:
        return self.n_experts * self.n_components

    def mixing_weights(self) -> np.ndarray:
        """pi, the (N, M) softmax over all N*M logits jointly; sums to 1."""
        return softmax(self.mix_logits.ravel()).reshape(self.mix_logits.shape)

    def clamp_variance_floor(self) -> None:
        np.maximum(self.log_vars, LOG_VARIANCE_FLOOR, out=self.log_vars)

    def copy(self) -> "GmmParams":
        return GmmParams(
            self.n_experts,
            self.n_components,
            self.dim,
            self.mix_logits.copy(),
            self.means.copy(),
            self.log_vars.copy(),
        )

    def to_json_dict(self) -> dict:
        """Flat row-major arrays under documented keys; see README for order."""
        return {
            "n_experts": self.n_experts,
            "n_components": self.n_components,
            "dim": self.dim,
            "mix_logits": self.mix_logits.ravel().tolist(),
            "means": self.means.ravel().tolist(),
            "log_vars": self.log_vars.ravel().tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GmmParams":
        n, m, r = int(d["n_experts"]), int(d["n_components"]), int(d["dim"])
        return cls(
            n,
            m,
            r,
            np.asarray(d["mix_logits"], dtype=np.float64).reshape(n, m),
            np.asarray(d["means"], dtype=np.float64).reshape(n, m, r),
            np.asarray(d["log_vars"], dtype=np.float64).reshape(n, m, r),
        )


@dataclass
class GmmGrads:
    """Gradients matching the three GmmParams blocks."""

    mix_logits: np.ndarray  # (N, M)
    means: np.ndarray  # (N, M, r)
    log_vars: np.ndarray  # (N, M, r)

    def scaled(self, c: float) -> "GmmGrads":
        return GmmGrads(c * self.mix_logits, c * self.means, c * self.log_vars)

    def add(self, other: "GmmGrads") -> "GmmGrads":
        return GmmGrads(
            self.mix_logits + other.mix_logits,
            self.means + other.means,
            self.log_vars + other.log_vars,
        )


def component_log_density(params: GmmParams, i: int, m: int, z: np.ndarray) -> float:
    """ln N(z | mu_{i,m}, diag(exp rho_{i,m})) for a single latent vector.

    = -1/2 [ r ln 2pi + sum_d rho_d + sum_d (z_d - mu_d)^2 exp(-rho_d) ]
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape != (params.dim,):
        raise ValueError(f"latent length {z.shape[0]} != dim {params.dim}")
    mu = params.means[i, m]
    rho = params.log_vars[i, m]
    diff = z - mu
    return float(-0.5 * (params.dim * LOG_2PI + rho.sum() + (diff * diff * np.exp(-rho)).sum()))


def _as_batch(params: GmmParams, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.dim:
        raise ValueError(f"latent batch shape {Z.shape} incompatible with dim {params.dim}")
    return Z


def _log_joint(params: GmmParams, Z: np.ndarray) -> np.ndarray:
    """(T, N*M) array of ln pi_k + ln N(z_t | component k)."""
    Z = _as_batch(params, Z)
    k = params.n_total
    means = params.means.reshape(k, params.dim)
    rho = params.log_vars.reshape(k, params.dim)
    inv_var = np.exp(-rho)
    diff = Z[:, None, :] - means[None, :, :]
    maha = np.einsum("tkr,kr->tk", diff * diff, inv_var)
    log_norm = -0.5 * (params.dim * LOG_2PI + rho.sum(axis=1))
    log_pi = log_softmax(params.mix_logits.ravel())
    return log_pi[None, :] + log_norm[None, :] - 0.5 * maha


def _masked_nll(params: GmmParams, Z: np.ndarray, flat_mask: np.ndarray) -> float:
    log_joint = _log_joint(params, Z)
    masked = np.where(flat_mask[None, :], log_joint, -np.inf)
    m = masked.max(axis=1)
    lse = m + np.log(np.exp(masked - m[:, None]).sum(axis=1))
    return float(-lse.sum())


def _masked_posterior(params: GmmParams, Z: np.ndarray, flat_mask: np.ndarray) -> np.ndarray:
    """(T, N*M) posterior renormalized over the masked subset; zero outside."""
    log_joint = _log_joint(params, Z)
    masked = np.where(flat_mask[None, :], log_joint, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - m)
    return e / e.sum(axis=1, keepdims=True)


def _grads_from_posterior(params: GmmParams, Z: np.ndarray, post: np.ndarray) -> GmmGrads:
    """Closed-form gradients of a (possibly masked) negative log-likelihood.

    With p_tk the (renormalized) posterior and s_k = sum_t p_tk:
        d/d mu_k      = -exp(-rho_k) * sum_t p_tk (z_t - mu_k)
        d/d rho_{k,d} = 1/2 sum_t p_tk (1 - (z_td - mu_kd)^2 exp(-rho_kd))
        d/d logit_k   = T pi_k - s_k
    The logit gradient runs through the joint softmax, so every logit moves
    even when the loss covers only a subset of components: probability mass
    taken from unmasked components is what reactivation redistributes.
    """
    Z = _as_batch(params, Z)
    k, r = params.n_total, params.dim
    shape3 = (params.n_experts, params.n_components, r)
    means = params.means.reshape(k, r)
    rho = params.log_vars.reshape(k, r)
    inv_var = np.exp(-rho)

    s = post.sum(axis=0)  # (K,)
    pz = post.T @ Z  # (K, r)
    g_means = -inv_var * (pz - s[:, None] * means)
    m2 = post.T @ (Z * Z) - 2.0 * pz * means + s[:, None] * means * means
    g_log_vars = 0.5 * (s[:, None] - inv_var * m2)
    pi = softmax(params.mix_logits.ravel())
    g_logits = Z.shape[0] * pi - s
    return GmmGrads(
        g_logits.reshape(params.mix_logits.shape),
        g_means.reshape(shape3),
        g_log_vars.reshape(shape3),
    )


def gmm_nll(params: GmmParams, Z: np.ndarray) -> float:
    """Batch negative log-likelihood; latents are constants (stop-gradient)."""
    return _masked_nll(params, Z, np.ones(params.n_total, dtype=bool))


def gmm_posterior(params: GmmParams, Z: np.ndarray) -> np.ndarray:
    """(T, N, M) table of P(i, m | z_t), rows summing to 1.

    Computed in log space and exponentiated after the row max-shift, so it
    stays normalized even with variances at the floor.
    """
    post = _masked_posterior(params, Z, np.ones(params.n_total, dtype=bool))
    return post.reshape(Z.shape[0], params.n_experts, params.n_components)


def gmm_nll_grad(params: GmmParams, Z: np.ndarray) -> GmmGrads:
    """Analytic gradient of :func:`gmm_nll` for all three parameter blocks."""
    Z = _as_batch(params, Z)
    post = _masked_posterior(params, Z, np.ones(params.n_total, dtype=bool))
    return _grads_from_posterior(params, Z, post)


def flag_slow_components(params: GmmParams, rng: np.random.Generator) -> np.ndarray:
    """(N, M) bool mask: component k flagged with probability
    ReLU(1 - N*M*pi_k), sampled independently.

    A component carrying at least the uniform share 1/(N*M) is never flagged;
    a dead component (pi ~ 0) is flagged almost surely.
    """
    pi = params.mixing_weights()
    p_flag = np.maximum(0.0, 1.0 - params.n_total * pi)
    return rng.random(pi.shape) < p_flag


def reactivation_loss(params: GmmParams, Z: np.ndarray, slow: np.ndarray) -> float:
    """NLL restricted to flagged components: -sum_t ln sum_{k in S} pi_k N_k(z_t).

    Returns 0.0 by convention when no component is flagged (the sum would be
    empty). With every component flagged this is exactly :func:`gmm_nll`.
    """
    slow = np.asarray(slow, dtype=bool)
    if not slow.any():
        return 0.0
    return _masked_nll(params, Z, slow.ravel())


def reactivation_grad(params: GmmParams, Z: np.ndarray, slow: np.ndarray) -> GmmGrads:
    """Gradient of :func:`reactivation_loss`: the NLL gradient with posteriors
    renormalized over the flagged subset.

    Means and log-variances of unflagged components get exactly zero; mixing
    logits all move through the shared softmax (see _grads_from_posterior).
    """
    slow = np.asarray(slow, dtype=bool)
    if not slow.any():
        raise ValueError("reactivation_grad requires a non-empty slow set")
    Z = _as_batch(params, Z)
    post = _masked_posterior(params, Z, slow.ravel())
    return _grads_from_posterior(params, Z, post)


def init_gmm(
    Z_sample: np.ndarray, n_experts: int, n_components: int, rng: np.random.Generator
) -> GmmParams:
    """Data-driven initialization: means are N*M distinct sample rows, logits
    are zero (uniform pi), log-variances are the per-dimension sample variance.

    Starting components on data points avoids the sparse-region stall that
    the reactivation loss exists to repair, without ruling it out later.
    """
    Z_sample = np.asarray(Z_sample, dtype=np.float64)
    if Z_sample.ndim != 2:
        raise ValueError("Z_sample must be a (T, r) batch")
    total = n_experts * n_components
    if Z_sample.shape[0] < total:
        raise ValueError(
            f"need at least {total} sample rows to place means, got {Z_sample.shape[0]}"
        )
    r = Z_sample.shape[1]
    idx = rng.choice(Z_sample.shape[0], size=total, replace=False)
    means = Z_sample[idx].reshape(n_experts, n_components, r).copy()
    var = np.maximum(Z_sample.var(axis=0), VARIANCE_FLOOR)
    log_vars = np.tile(np.log(var), (n_experts, n_components, 1))
    mix_logits = np.zeros((n_experts, n_components))
    return GmmParams(n_experts, n_components, r, mix_logits, means, log_vars)
