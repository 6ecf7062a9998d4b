"""Softmax-smoothed min-max optimization.

Exact and sampled Boltzmann gradient oracles for piecewise-linear min-max
objectives, error-tolerant stochastic optimizers (SGD, SubSGD, SubSGDP,
SAGA, A-SAGA, A-SubSGDP), structured-prediction objectives over Ising label
spaces, and a seeded benchmark harness with grid search.
"""
from .objective import (
    BoltzmannDistribution,
    MinMaxProblem,
    ProblemBounds,
    beta_for_epsilon,
    boltzmann,
    compute_bounds,
    eval_f,
    eval_f_beta,
    eval_piece,
    grad_f_beta,
    load_problem,
    save_problem,
    softmax,
    subgrad_f_summand,
)
from .optim import (
    AsagaParams,
    AveragedState,
    BetaSchedule,
    Projection,
    SagaState,
    StepSchedule,
    asaga_params,
    beta_schedule_step,
    lyapunov,
    polynomial_decay_weights,
    project,
    saga_init,
    saga_step,
    sgd_step,
    step_size,
    subsgdp_step,
    verify_asaga_inequalities,
)
from .sampler import (
    ArgmaxOracleConfig,
    GibbsChainState,
    NoisyGradientConfig,
    gibbs_sweep,
    mc_grad_summand,
    noisy_argmax,
    noisy_grad_summand,
    rng_stream,
    sample_boltzmann,
)
from .structpred import (
    IsingLabelModel,
    LabeledExample,
    ObjectiveKind,
    beta_eff,
    eval_score,
    feature_map,
    hamming,
    objective_grad,
    objective_value,
    predict,
)
from .bench import (
    ExperimentConfig,
    ProblemSpec,
    RunTrace,
    UtilityReport,
    generate_problem,
    grid_search,
    report,
    run_once,
    utility,
)

__version__ = "0.1.0"
