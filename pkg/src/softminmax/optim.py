"""Optimizers for the min-max objective and its smooth surrogate.

Plain stochastic (sub)gradient steps, polynomial-decay averaging (SubSGDP and
its failure-tolerant variant A-SubSGDP), cached variance-reduced steps (SAGA
and its bounded-error variant A-SAGA), the A-SAGA step-size/error-budget rule
with its four-inequality verifier, inverse-temperature schedules, and the
Lyapunov potential used to certify contraction.

Step functions mutate and return their state objects; one state is owned by
one worker at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .objective import (
    MinMaxProblem,
    ProblemBounds,
    eval_f_beta,
    eval_f_beta_summand,
    grad_f_beta,
    grad_f_beta_summand,
    hess_f_beta,
    subgrad_f_summand,
    summand_values,
)
from .sampler import ArgmaxOracleConfig, mc_grad_summand, noisy_argmax

__all__ = [
    "StepSchedule",
    "Projection",
    "UNCONSTRAINED",
    "step_size",
    "project",
    "sgd_step",
    "AveragedState",
    "subsgdp_step",
    "SagaState",
    "saga_init",
    "saga_step",
    "AsagaParams",
    "asaga_params",
    "AsagaInequalityReport",
    "verify_asaga_inequalities",
    "BetaSchedule",
    "beta_schedule_step",
    "lyapunov",
    "polynomial_decay_weights",
    "reference_smooth_minimizer",
]


@dataclass
class StepSchedule:
    """Step-size schedule gamma_t.

    kind 'decay'        : gamma_t = gamma0 / (1 + t * c_gamma)
    kind 'constant'     : gamma_t = gamma0
    kind 'strong-convex': gamma_t = eta / (mu * (t + eta))

    gamma0 = 0 is accepted as a degenerate stationary control (the iterate
    never moves); negative inputs are rejected.
    """

    kind: str = "decay"
    gamma0: float = 0.0
    c_gamma: float = 0.0
    eta: int = 1
    mu: float = 1.0

    def __post_init__(self):
        if self.kind not in ("decay", "constant", "strong-convex"):
            raise ValueError("kind must be 'decay', 'constant' or 'strong-convex'")
        if self.kind in ("decay", "constant"):
            if self.gamma0 < 0:
                raise ValueError("gamma0 must be nonnegative")
            if self.c_gamma < 0:
                raise ValueError("c_gamma must be nonnegative")
        else:
            if int(self.eta) != self.eta or self.eta < 1:
                raise ValueError("eta must be a positive integer")
            if self.mu <= 0:
                raise ValueError("mu must be positive")


def step_size(sched: StepSchedule, t: int) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    if sched.kind == "constant":
        return sched.gamma0
    if sched.kind == "decay":
        return sched.gamma0 / (1.0 + t * sched.c_gamma)
    return sched.eta / (sched.mu * (t + sched.eta))


@dataclass
class Projection:
    """Identity, or projection onto a Euclidean ball."""

    kind: str = "unconstrained"
    center: np.ndarray | None = None
    radius: float = math.inf

    def __post_init__(self):
        if self.kind not in ("unconstrained", "ball"):
            raise ValueError("kind must be 'unconstrained' or 'ball'")
        if self.kind == "ball":
            if self.center is None:
                raise ValueError("ball projection needs a center")
            self.center = np.asarray(self.center, dtype=float)
            if not (self.radius > 0 and math.isfinite(self.radius)):
                raise ValueError("ball projection needs a positive finite radius")


UNCONSTRAINED = Projection()


def project(p: Projection, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if p.kind == "unconstrained":
        return v
    d = v - p.center
    nrm = float(np.linalg.norm(d))
    if nrm <= p.radius:
        return v
    return p.center + d * (p.radius / nrm)


def sgd_step(
    problem: MinMaxProblem,
    w: np.ndarray,
    t: int,
    schedule: StepSchedule,
    proj: Projection,
    rng: np.random.Generator,
    *,
    beta: float | None = None,
    subgradient: bool = False,
    mc_samples: int | None = None,
) -> np.ndarray:
    """One stochastic step on a uniformly drawn summand.

    Smooth mode (default) uses the exact Boltzmann summand gradient at the
    given beta, or its Monte Carlo estimate when mc_samples is set.
    Subgradient mode uses the exact-argmax subgradient of the nonsmooth
    summand instead and ignores beta.
    """
    i = int(rng.integers(problem.n))
    if subgradient:
        g, _ = subgrad_f_summand(problem, i, w)
    else:
        if beta is None:
            raise ValueError("smooth mode needs beta")
        if mc_samples:
            g = mc_grad_summand(problem, i, w, beta, mc_samples, rng)
        else:
            g = grad_f_beta_summand(problem, i, w, beta)
    return project(proj, w - step_size(schedule, t) * g)


@dataclass
class AveragedState:
    """Iterate plus its polynomial-decay running average.

    The average follows
    w_bar_{t+1} = t/(t+eta+1) * w_bar_t + (eta+1)/(t+eta+1) * w_{t+1},
    so after the first step w_bar equals w exactly.
    """

    w: np.ndarray
    w_bar: np.ndarray
    t: int = 0
    eta: int = 1

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.w_bar = np.asarray(self.w_bar, dtype=float)
        if int(self.eta) != self.eta or self.eta < 1:
            raise ValueError("eta must be a positive integer")

    @classmethod
    def start(cls, w0: np.ndarray, eta: int) -> "AveragedState":
        w0 = np.asarray(w0, dtype=float)
        return cls(w0.copy(), w0.copy(), 0, eta)


def subsgdp_step(
    problem: MinMaxProblem,
    state: AveragedState,
    schedule: StepSchedule,
    argmax_cfg: ArgmaxOracleConfig,
    proj: Projection,
    rng: np.random.Generator,
) -> AveragedState:
    """One subgradient step with polynomial-decay averaging.

    Draws a summand uniformly, asks the (possibly failure-prone) argmax oracle
    for the active plane, steps, projects, and folds the new iterate into the
    running average.  An exact oracle gives SubSGDP; a failing one gives
    A-SubSGDP.
    """
    t = state.t
    i = int(rng.integers(problem.n))
    vals = summand_values(problem, i, state.w)
    y_hat = noisy_argmax(vals, argmax_cfg.failure_prob(t), rng)
    direction = problem.lam * state.w + problem.a[i, y_hat]
    w_new = project(proj, state.w - step_size(schedule, t) * direction)
    eta = state.eta
    weight = (eta + 1.0) / (t + eta + 1.0)
    state.w_bar = (t / (t + eta + 1.0)) * state.w_bar + weight * w_new
    state.w = w_new
    state.t = t + 1
    return state


def polynomial_decay_weights(T: int, eta: int) -> np.ndarray:
    """Closed-form averaging weights: after T steps the running average equals
    sum_t weight[t] * w_t for t = 0..T.

    weight[t] is proportional to t (t+1) ... (t+eta-1); computed in exact
    integer arithmetic so the weights sum to one and the final weight is
    exactly (eta+1)/(T+eta).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if int(eta) != eta or eta < 1:
        raise ValueError("eta must be a positive integer")
    prods = []
    for t in range(T + 1):
        p = 1
        for k in range(eta):
            p *= t + k
        prods.append(p)
    sigma = sum(prods)
    return np.array([float(Fraction(p, sigma)) for p in prods])


@dataclass
class SagaState:
    """Iterate plus the per-summand gradient table.

    cache[i] holds the stored (possibly error-carrying) gradient taken at
    anchor point anchors[i]; cache_avg tracks the table mean incrementally and
    is re-summed every resync_every steps to cap drift.
    """

    w: np.ndarray
    cache: np.ndarray
    cache_avg: np.ndarray
    anchors: np.ndarray
    t: int = 0
    steps_since_resync: int = 0

    @property
    def n(self) -> int:
        return self.cache.shape[0]


def saga_init(grad_fn, w0: np.ndarray, n: int) -> SagaState:
    """Fill the gradient table with one full pass at the start point."""
    w0 = np.asarray(w0, dtype=float)
    cache = np.stack([np.asarray(grad_fn(i, w0), dtype=float) for i in range(n)])
    return SagaState(
        w=w0.copy(),
        cache=cache,
        cache_avg=cache.mean(axis=0),
        anchors=np.tile(w0, (n, 1)),
        t=0,
    )


def saga_step(
    state: SagaState,
    grad_fn,
    gamma: float,
    proj: Projection,
    rng: np.random.Generator,
    resync_every: int = 10_000,
) -> SagaState:
    """One variance-reduced step.

    Draws j uniformly, refreshes its table entry with a fresh oracle gradient
    at the current iterate (oracle error, if any, rides along), and moves
    against fresh - old + table_average before projecting.  The table average
    is updated incrementally in O(D).
    """
    n = state.n
    j = int(rng.integers(n))
    fresh = np.asarray(grad_fn(j, state.w), dtype=float)
    old = state.cache[j].copy()
    direction = fresh - old + state.cache_avg
    w_new = project(proj, state.w - gamma * direction)
    state.cache_avg = state.cache_avg + (fresh - old) / n
    state.cache[j] = fresh
    state.anchors[j] = state.w
    state.w = w_new
    state.t += 1
    state.steps_since_resync += 1
    if state.steps_since_resync >= resync_every:
        state.cache_avg = state.cache.mean(axis=0)
        state.steps_since_resync = 0
    return state


@dataclass
class AsagaParams:
    """Parameter tuple for bounded-error SAGA: step size, potential weight,
    the fixed constant alpha = 8, contraction rate 1/tau, and error budget
    theta."""

    gamma: float
    c: float
    alpha: float
    inv_tau: float
    theta: float


# theta's denominator constant k/L: "default" follows the self-contained
# derivation (2/9), "conservative" the tighter published constant (5/18).
_THETA_DENOM_COEFF = {"default": 2.0 / 9.0, "conservative": 5.0 / 18.0}


def asaga_params(
    bounds: ProblemBounds,
    n: int,
    w_dist: float,
    D: int,
    theta_rule: str = "default",
) -> AsagaParams:
    """Step size and error budget for bounded-error SAGA.

    gamma = 1 / (9 (1 + theta sqrt(D)) L), c = 2/(n gamma), alpha = 8,
    1/tau = min(1/(2n), gamma mu / 2), with theta capped at 1/sqrt(D) and
    shrinking quadratically in the distance to the optimum so the noise terms
    stay inside the contraction budget.
    """
    if bounds.L <= 0:
        raise ValueError("L must be positive")
    if bounds.mu <= 0:
        raise ValueError("mu must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    if w_dist < 0:
        raise ValueError("w_dist must be nonnegative")
    coeff = _THETA_DENOM_COEFF[theta_rule]
    sqrt_d = math.sqrt(D)
    theta = min(
        1.0 / sqrt_d,
        bounds.mu * w_dist**2 / (2.0 * sqrt_d * (coeff / bounds.L + 2.0 * w_dist)),
    )
    alpha = 8.0
    gamma = 1.0 / ((1.0 + alpha) * (1.0 + theta * sqrt_d) * bounds.L)
    c = 2.0 / (n * gamma)
    inv_tau = min(1.0 / (2.0 * n), gamma * bounds.mu / 2.0)
    return AsagaParams(gamma=gamma, c=c, alpha=alpha, inv_tau=inv_tau, theta=theta)


@dataclass
class AsagaInequalityReport:
    """Left-hand sides and verdicts of the four sufficiency inequalities."""

    lhs: tuple[float, float, float, float]
    satisfied: tuple[bool, bool, bool, bool]

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied)


def verify_asaga_inequalities(
    params: AsagaParams,
    bounds: ProblemBounds,
    n: int,
    D: int,
    w_dist: float,
) -> AsagaInequalityReport:
    """Numerically check the four inequalities that make the Lyapunov potential
    contract under bounded gradient error.

    Each left-hand side must be <= 0; verdicts allow a relative roundoff slack
    since two of them evaluate to exactly zero at the recommended parameters.
    """
    gamma, c, alpha, inv_tau, theta = (
        params.gamma,
        params.c,
        params.alpha,
        params.inv_tau,
        params.theta,
    )
    L, mu = bounds.L, bounds.mu
    sqrt_d = math.sqrt(D)
    delta = 1.0 + theta * sqrt_d

    terms1 = (1.0 / n, 2.0 * c * gamma * ((L - mu) / L + gamma * mu * alpha * delta))
    lhs1 = terms1[0] - terms1[1]
    terms2 = (inv_tau, 2.0 * (1.0 + 1.0 / alpha) * delta * c * gamma**2 * L, 1.0 / n)
    lhs2 = terms2[0] + terms2[1] - terms2[2]
    terms3 = (
        (inv_tau - gamma * mu) * w_dist**2,
        2.0 * gamma**2 * theta * sqrt_d,
        gamma**2 * theta**2 * D,
        2.0 * gamma * theta * sqrt_d * w_dist,
    )
    lhs3 = sum(terms3)
    terms4 = ((1.0 + alpha) * gamma * delta, 1.0 / L)
    lhs4 = terms4[0] - terms4[1]

    def ok(lhs, terms):
        return lhs <= 1e-12 * max(1.0, *(abs(t) for t in terms))

    lhs_all = (lhs1, lhs2, lhs3, lhs4)
    verdicts = (ok(lhs1, terms1), ok(lhs2, terms2), ok(lhs3, terms3), ok(lhs4, terms4))
    return AsagaInequalityReport(lhs=lhs_all, satisfied=verdicts)


@dataclass
class BetaSchedule:
    """Inverse temperature that starts at beta0 and grows by a fixed increment
    every `period` iterations."""

    beta0: float
    increment: float = 0.0
    period: int = 1

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if self.increment < 0:
            raise ValueError("increment must be nonnegative")
        if int(self.period) != self.period or self.period < 1:
            raise ValueError("period must be a positive integer")


def beta_schedule_step(current_beta: float, t: int, cfg: BetaSchedule) -> float:
    """Bump beta by the increment when t is a positive multiple of the period."""
    if t > 0 and t % cfg.period == 0:
        return current_beta + cfg.increment
    return current_beta


def lyapunov(
    state: SagaState,
    problem: MinMaxProblem,
    beta: float,
    w_star: np.ndarray,
    c: float,
) -> float:
    """Convergence potential of the cached-gradient method.

    Mean over summands of the smooth Bregman gap at the anchor points, plus
    c * ||w - w_star||^2.  Vanishes exactly when every anchor and the iterate
    sit at the optimum.
    """
    w_star = problem.check_w(w_star)
    total = 0.0
    for i in range(problem.n):
        phi = state.anchors[i]
        gi_phi = eval_f_beta_summand(problem, i, phi, beta)
        gi_star = eval_f_beta_summand(problem, i, w_star, beta)
        gi_grad_star = grad_f_beta_summand(problem, i, w_star, beta)
        total += gi_phi - gi_star - float(gi_grad_star @ (phi - w_star))
    diff = state.w - w_star
    return total / problem.n + c * float(diff @ diff)


def reference_smooth_minimizer(
    problem: MinMaxProblem,
    beta: float,
    w0: np.ndarray | None = None,
    grad_tol: float = 1e-10,
    max_iter: int = 500,
) -> np.ndarray:
    """High-accuracy minimizer of the smooth surrogate by damped Newton steps.

    Full-batch gradients and exact Hessians; iterates until the gradient norm
    drops below grad_tol.  Serves as the reference optimum for convergence and
    potential-contraction checks.
    """
    w = np.zeros(problem.dim) if w0 is None else problem.check_w(w0).copy()
    fw = eval_f_beta(problem, w, beta)
    for _ in range(max_iter):
        g = grad_f_beta(problem, w, beta)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            return w
        H = hess_f_beta(problem, w, beta)
        try:
            d = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            d = -g
        if float(d @ g) >= 0:  # not a descent direction, fall back
            d = -g
        step = 1.0
        for _ in range(60):
            w_try = w + step * d
            f_try = eval_f_beta(problem, w_try, beta)
            if f_try <= fw + 1e-4 * step * float(g @ d):
                w, fw = w_try, f_try
                break
            step *= 0.5
        else:  # no progress possible at double precision
            return w
    raise RuntimeError(f"reference solve did not reach gradient norm {grad_tol}")
