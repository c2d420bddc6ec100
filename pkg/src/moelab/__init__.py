"""moelab: desk-scale comparison of sparse-MoE routing mechanisms.

Token-choice gating with an auxiliary balance loss versus mixture-model
posterior routing over a learned latent space, with closed-form gradients,
routing-dynamics diagnostics, and seeded trend experiments.
"""

from .diagnostics import (
    GradDecomposition,
    MetricsRecord,
    batch_cv,
    cv_mean,
    grad_decompose,
    ida_expert_distribution,
    mean_routing_entropy,
    routing_entropy,
)
from .experts import ExpertParams, ExpertPool, MoEOutput, ffn_forward, init_pool, moe_backward, moe_forward
from .gmm import (
    GmmGrads,
    GmmParams,
    component_log_density,
    flag_slow_components,
    gmm_nll,
    gmm_nll_grad,
    gmm_posterior,
    init_gmm,
    reactivation_grad,
    reactivation_loss,
)
from .harness import (
    ModelState,
    SyntheticTaskSpec,
    TrainConfig,
    ablation_sweep,
    gen_batch,
    init_model,
    make_task_spec,
    run_experiment,
    summarize,
    train_step,
)
from .numerics import argtop_k, finite_diff_grad, log_sum_exp, make_rng, softmax
from .projector import AutoencoderParams, decode, encode, init_autoencoder, recon_grad, recon_loss
from .routers import (
    AuxBalanceReport,
    BaselineRouterParams,
    IdaRouterParams,
    RoutingDecision,
    aux_balance_grad,
    aux_balance_loss,
    baseline_route,
    ida_losses,
    ida_route,
)

__version__ = "0.1.0"
