"""Synthetic task, training loop, and the comparative experiment runner.

The task stands in for a structured token stream: tokens are drawn from C
well-separated Gaussian clusters and the regression target is a different
affine map per cluster, so different input regions genuinely reward different
experts. The model is one mixture-of-experts layer with residual connection
and a linear head trained with mean squared error by plain gradient descent.

Desk-scale defaults keep the reference configuration's ratios (top-2 routing,
4 experts) with the latent space and component count scaled down alongside the
token dimension: d=32 with r=8, M=4 instead of r=32, M=16 at full scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import MetricsRecord, batch_cv, grad_decompose, mean_routing_entropy
from .experts import ExpertPool, init_pool, moe_backward, moe_forward
from .gmm import init_gmm, gmm_nll_grad
from .numerics import make_rng
from .projector import AutoencoderParams, encode, init_autoencoder, recon_grad, recon_loss
from .routers import (
    BaselineRouterParams,
    IdaRouterParams,
    aux_balance_grad,
    aux_balance_loss,
    baseline_route,
    ida_losses,
    ida_route,
    init_baseline_router,
)

ROUTER_KINDS = ("baseline_no_aux", "baseline_aux", "ida")

# rng substream tags (second entry of the seed sequence)
_STREAM_TASK = 0
_STREAM_DATA = 1
_STREAM_INIT = 2
_STREAM_REACT = 3
_STREAM_WARMUP = 4

# Bootstrapping stage for mixture routing: the projector and each GMM set are
# fitted on a small held-out sample before joint training starts, mirroring
# staged pretraining at full scale. Cold-started mixtures route near-randomly
# for hundreds of steps and would confound every trend comparison.
WARMUP_AE_STEPS = 200
WARMUP_GMM_STEPS = 200
WARMUP_GMM_LR = 2e-3


@dataclass
class SyntheticTaskSpec:
    """Clustered tokens with per-cluster affine regression targets."""

    n_clusters: int
    dim: int
    out_dim: int
    cluster_means: np.ndarray  # (C, d)
    cluster_scale: float
    target_maps: np.ndarray  # (C, d_out, d)
    target_biases: np.ndarray  # (C, d_out)
    noise_std: float
    seed: int

    def __post_init__(self) -> None:
        if self.cluster_scale < 0 or self.noise_std < 0:
            raise ValueError("scales must be non-negative")


def make_task_spec(
    n_clusters: int = 8,
    dim: int = 32,
    out_dim: int = 8,
    cluster_scale: float = 0.25,
    noise_std: float = 0.01,
    seed: int = 1,
) -> SyntheticTaskSpec:
    """Draw cluster geometry and target maps deterministically from the seed.

    Standard-normal cluster means in d dimensions sit ~sqrt(2d) apart, far
    beyond the within-cluster spread, so cluster identity is recoverable from
    any reasonable projection of the tokens.
    """
    rng = make_rng(seed, _STREAM_TASK)
    means = rng.standard_normal((n_clusters, dim))
    maps = rng.standard_normal((n_clusters, out_dim, dim)) / np.sqrt(dim)
    biases = rng.standard_normal((n_clusters, out_dim))
    return SyntheticTaskSpec(
        n_clusters, dim, out_dim, means, cluster_scale, maps, biases, noise_std, seed
    )


def gen_batch(
    spec: SyntheticTaskSpec, rng: np.random.Generator, n_tokens: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample (U, Y, labels): uniform cluster choice, Gaussian spread around
    the cluster mean, target = cluster's affine map of the token plus noise."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    labels = rng.integers(0, spec.n_clusters, size=n_tokens)
    U = spec.cluster_means[labels] + spec.cluster_scale * rng.standard_normal(
        (n_tokens, spec.dim)
    )
    Y = np.einsum("toi,ti->to", spec.target_maps[labels], U) + spec.target_biases[labels]
    if spec.noise_std > 0:
        Y = Y + spec.noise_std * rng.standard_normal(Y.shape)
    return U, Y, labels


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    alpha weighs the reconstruction loss, beta the mixture NLL + reactivation
    terms (both 0.01 as at full scale); aux_alpha is the baseline balance
    coefficient. Only the ida router uses alpha/beta/reactivation_on; only
    baseline_aux uses aux_alpha.
    """

    router_kind: str = "ida"
    n_experts: int = 4
    n_components: int = 4
    top_k: int = 2
    dim: int = 32
    latent_dim: int = 8
    hidden_dim: int = 32
    out_dim: int = 8
    alpha: float = 0.01
    beta: float = 0.01
    aux_alpha: float = 0.01
    reactivation_on: bool = True
    lr: float = 0.01
    steps: int = 2000
    batch_tokens: int = 256
    seed: int = 1

    def validate(self) -> None:
        if self.router_kind not in ROUTER_KINDS:
            raise ValueError(f"unknown router_kind {self.router_kind!r}")
        for name in ("n_experts", "n_components", "top_k", "dim", "latent_dim",
                     "hidden_dim", "out_dim", "batch_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.top_k > self.n_experts:
            raise ValueError("top_k cannot exceed n_experts")
        if self.latent_dim >= self.dim:
            raise ValueError("latent_dim must be smaller than dim")


@dataclass
class ModelState:
    pool: ExpertPool
    router: BaselineRouterParams | IdaRouterParams | None
    projector: AutoencoderParams | None
    head_weight: np.ndarray  # (d_out, d)
    head_bias: np.ndarray  # (d_out,)

    def copy(self) -> "ModelState":
        return ModelState(
            self.pool.copy(),
            self.router.copy() if self.router is not None else None,
            self.projector.copy() if self.projector is not None else None,
            self.head_weight.copy(),
            self.head_bias.copy(),
        )


def init_model(cfg: TrainConfig) -> ModelState:
    """Build a fresh model. Experts and head use the same substreams for every
    router kind, so comparative runs differ only in the routing mechanism.

    For ida the router is left unset here; :func:`warm_up_ida` installs the
    bootstrapped GMM sets.
    """
    cfg.validate()
    pool = init_pool(cfg.n_experts, cfg.dim, cfg.hidden_dim, cfg.seed)
    head_rng = make_rng(cfg.seed, _STREAM_INIT, 0)
    scale = 1.0 / np.sqrt(cfg.dim)
    head_w = head_rng.uniform(-scale, scale, size=(cfg.out_dim, cfg.dim))
    head_b = np.zeros(cfg.out_dim)
    router: BaselineRouterParams | IdaRouterParams | None
    projector = None
    if cfg.router_kind == "ida":
        router = None
        projector = init_autoencoder(cfg.dim, cfg.latent_dim, make_rng(cfg.seed, _STREAM_INIT, 1))
    else:
        router = init_baseline_router(cfg.dim, cfg.n_experts, make_rng(cfg.seed, _STREAM_INIT, 2))
    return ModelState(pool, router, projector, head_w, head_b)


def warm_up_ida(state: ModelState, cfg: TrainConfig, spec: SyntheticTaskSpec) -> None:
    """Bootstrap the projector and the k GMM sets on a 4*N*M-token sample.

    The autoencoder takes WARMUP_AE_STEPS descent steps on the sample, each
    GMM set is initialized from the resulting latents and fitted with
    WARMUP_GMM_STEPS plain NLL steps (no reactivation during warm-up).
    """
    rng = make_rng(cfg.seed, _STREAM_WARMUP)
    n_warm = 4 * cfg.n_experts * cfg.n_components
    U, _, _ = gen_batch(spec, rng, n_warm)
    proj = state.projector
    assert proj is not None
    for _ in range(WARMUP_AE_STEPS):
        g = recon_grad(proj, U)
        proj.enc_weight -= cfg.lr * g.enc_weight
        proj.enc_bias -= cfg.lr * g.enc_bias
        proj.dec_weight -= cfg.lr * g.dec_weight
        proj.dec_bias -= cfg.lr * g.dec_bias
    Z = encode(proj, U)
    sets = []
    for j in range(cfg.top_k):
        params = init_gmm(Z, cfg.n_experts, cfg.n_components, rng)
        for _ in range(WARMUP_GMM_STEPS):
            g = gmm_nll_grad(params, Z)
            params.mix_logits -= WARMUP_GMM_LR * g.mix_logits
            params.means -= WARMUP_GMM_LR * g.means
            params.log_vars -= WARMUP_GMM_LR * g.log_vars
            params.clamp_variance_floor()
        sets.append(params)
    state.router = IdaRouterParams(sets)


def train_step(
    state: ModelState,
    cfg: TrainConfig,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    rng: np.random.Generator,
    step: int = 0,
) -> tuple[ModelState, MetricsRecord]:
    """One forward/backward/update pass; the state is updated in place and
    returned together with the step's metrics.

    Expert and head gradients come only from the task loss: the projector and
    mixture objectives sit behind the stop-gradient boundary, and mixture
    parameters in turn receive nothing from the task loss (gate weights are
    constants to the backward pass). The baseline's embeddings do receive the
    task gradient — that coupling is the point of the comparison.
    """
    U, Y, _ = batch
    t = U.shape[0]

    Z = None
    if cfg.router_kind == "ida":
        assert state.projector is not None and isinstance(state.router, IdaRouterParams)
        Z = encode(state.projector, U)
        decisions = ida_route(state.router, Z, cfg.top_k)
    else:
        assert isinstance(state.router, BaselineRouterParams)
        decisions = baseline_route(state.router, U, cfg.top_k)

    moe = moe_forward(state.pool, decisions, U)
    resid = moe.outputs + U
    pred = resid @ state.head_weight.T + state.head_bias
    diff = pred - Y
    loss_task = float((diff * diff).sum() / t)
    if not np.isfinite(loss_task):
        raise RuntimeError(f"non-finite task loss at step {step}")

    g_pred = (2.0 / t) * diff
    g_head_w = g_pred.T @ resid
    g_head_b = g_pred.sum(axis=0)
    g_moe = g_pred @ state.head_weight  # gradient at the MoE output (T, d)
    expert_grads, _ = moe_backward(state.pool, decisions, U, g_moe)

    loss_ae = loss_gmm = loss_react = loss_aux = 0.0
    if cfg.router_kind == "ida":
        assert Z is not None and state.projector is not None
        loss_ae = recon_loss(state.projector, U)
        ae_g = recon_grad(state.projector, U)
        set_losses = ida_losses(state.router, Z, rng, cfg.reactivation_on)
        loss_gmm = sum(s.nll for s in set_losses)
        loss_react = sum(s.react for s in set_losses)
        if not np.isfinite(loss_ae + loss_gmm + loss_react):
            raise RuntimeError(f"non-finite routing loss at step {step}")

        lr = cfg.lr
        proj = state.projector
        proj.enc_weight -= lr * cfg.alpha * ae_g.enc_weight
        proj.enc_bias -= lr * cfg.alpha * ae_g.enc_bias
        proj.dec_weight -= lr * cfg.alpha * ae_g.dec_weight
        proj.dec_bias -= lr * cfg.alpha * ae_g.dec_bias
        for params, sl in zip(state.router.gmm_sets, set_losses):
            params.mix_logits -= lr * cfg.beta * sl.grads.mix_logits
            params.means -= lr * cfg.beta * sl.grads.means
            params.log_vars -= lr * cfg.beta * sl.grads.log_vars
            params.clamp_variance_floor()
    else:
        assert isinstance(state.router, BaselineRouterParams)
        decomp = grad_decompose(state.pool, decisions, U, g_moe)
        g_emb = decomp.per_expert_grad.T  # (d, N)
        if cfg.router_kind == "baseline_aux":
            report = aux_balance_loss(decisions, cfg.top_k, cfg.aux_alpha)
            loss_aux = report.loss
            g_emb = g_emb + aux_balance_grad(decisions, U, state.router, cfg.top_k, cfg.aux_alpha)
        state.router.embeddings -= cfg.lr * g_emb

    for e, g in zip(state.pool.experts, expert_grads):
        e.w1 -= cfg.lr * g.w1
        e.b1 -= cfg.lr * g.b1
        e.w2 -= cfg.lr * g.w2
        e.b2 -= cfg.lr * g.b2
    state.head_weight -= cfg.lr * g_head_w
    state.head_bias -= cfg.lr * g_head_b

    counts = decisions.expert_counts()
    record = MetricsRecord(
        step=step,
        cv_mean=batch_cv(counts),
        entropy_mean=mean_routing_entropy(decisions.full_probs),
        expert_counts=counts,
        loss_task=loss_task,
        loss_ae=loss_ae,
        loss_gmm=loss_gmm,
        loss_react=loss_react,
        loss_aux=loss_aux,
    )
    return state, record


def run_experiment(cfg: TrainConfig, spec: SyntheticTaskSpec) -> list[MetricsRecord]:
    """Train for cfg.steps on fresh batches and return the full metrics series.

    All randomness derives from cfg.seed through fixed substreams, so the data
    stream is identical across router kinds and repeated runs are bit-equal.
    """
    cfg.validate()
    data_rng = make_rng(cfg.seed, _STREAM_DATA)
    react_rng = make_rng(cfg.seed, _STREAM_REACT)
    state = init_model(cfg)
    if cfg.router_kind == "ida":
        warm_up_ida(state, cfg, spec)
    records: list[MetricsRecord] = []
    for step in range(cfg.steps):
        batch = gen_batch(spec, data_rng, cfg.batch_tokens)
        state, record = train_step(state, cfg, batch, react_rng, step)
        records.append(record)
    return records


def window_mean(records: list[MetricsRecord], window: slice) -> dict[str, float]:
    """Mean cv/entropy/task-loss over a slice of the metrics series."""
    part = records[window]
    if not part:
        raise ValueError("empty window")
    return {
        "cv_mean": float(np.mean([r.cv_mean for r in part])),
        "entropy_mean": float(np.mean([r.entropy_mean for r in part])),
        "task_loss": float(np.mean([r.loss_task for r in part])),
    }


def summarize(records: list[MetricsRecord], window: int = 200) -> dict[str, float]:
    """Final-window averages used by experiment summaries and ablations."""
    w = min(window, len(records))
    return window_mean(records, slice(len(records) - w, len(records)))


ABLATION_AXES = ("latent_dim", "centers", "reactivation")


def ablation_sweep(
    base_cfg: TrainConfig, spec: SyntheticTaskSpec, axis: str, values
) -> list[dict]:
    """Run the experiment once per axis value and aggregate final windows.

    axis: 'latent_dim' (routing-space dimensionality), 'centers' (components
    per expert), or 'reactivation' (bool toggle).
    """
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}")
    rows = []
    for v in values:
        if axis == "latent_dim":
            cfg = replace(base_cfg, latent_dim=int(v))
        elif axis == "centers":
            cfg = replace(base_cfg, n_components=int(v))
        else:
            cfg = replace(base_cfg, reactivation_on=bool(v))
        records = run_experiment(cfg, spec)
        row = {"value": v, **summarize(records)}
        rows.append(row)
    return rows
