"""Stochastic oracles: seeded streams, Boltzmann label sampling, Monte Carlo
gradients, bounded-error gradient perturbations, failure-prone argmax, and
single-spin-flip Gibbs sampling over Ising label models.

The bounded-error oracle and the failure-prone argmax are classical stand-ins
for samplers whose output is only approximately correct: the former adds a
per-coordinate perturbation no larger than theta/3, the latter returns a wrong
label with a configured probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .objective import BoltzmannDistribution, MinMaxProblem, boltzmann

if TYPE_CHECKING:  # pragma: no cover
    from .structpred import IsingLabelModel

__all__ = [
    "rng_stream",
    "NoisyGradientConfig",
    "ArgmaxOracleConfig",
    "GibbsChainState",
    "sample_boltzmann",
    "sample_boltzmann_many",
    "mc_grad_summand",
    "noisy_grad_summand",
    "noisy_argmax",
    "conditional_up_probability",
    "gibbs_sweep",
    "run_gibbs_chain",
]


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Child generator for a (seed, key...) pair.

    Stream-splitting rule used throughout the benchmark: the experiment seed is
    the root entropy and the spawn key identifies the consumer, e.g.
    ``rng_stream(seed, run)`` for a run's index draws and
    ``rng_stream(seed, run, channel, summand)`` for per-summand oracles.
    Identical (seed, key) pairs always yield identical streams, independent of
    thread count or evaluation order.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class NoisyGradientConfig:
    """Additive gradient error bounded per coordinate by theta/3.

    noise_shape 'uniform' draws each coordinate from U[-theta/3, theta/3];
    'signed-extremes' puts every coordinate at +-theta/3, the worst magnitude
    the bound allows.  theta = 0 reproduces the exact oracle.
    """

    theta: float
    noise_shape: str = "uniform"
    seed: int | None = None

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.noise_shape not in ("uniform", "signed-extremes"):
            raise ValueError("noise_shape must be 'uniform' or 'signed-extremes'")


@dataclass
class ArgmaxOracleConfig:
    """Argmax oracle that fails with a scheduled probability.

    failure_schedule: 'exact' never fails; 'constant' fails with probability
    ``failure_prob_value``; 'decay' fails with probability 1/(4 sqrt(t + eta)).
    """

    failure_schedule: str = "exact"
    failure_prob_value: float = 0.0
    eta: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.failure_schedule not in ("exact", "constant", "decay"):
            raise ValueError("failure_schedule must be 'exact', 'constant' or 'decay'")
        if not 0.0 <= self.failure_prob_value < 1.0:
            raise ValueError("constant failure probability must lie in [0, 1)")
        if self.eta < 1:
            raise ValueError("eta must be a positive integer")

    def failure_prob(self, t: int) -> float:
        if self.failure_schedule == "exact":
            return 0.0
        if self.failure_schedule == "constant":
            return self.failure_prob_value
        return 1.0 / (4.0 * math.sqrt(t + self.eta))


@dataclass
class GibbsChainState:
    """State of one single-spin-flip chain: spins in {-1, +1}, sweeps done, beta."""

    spins: np.ndarray
    sweep_count: int = 0
    beta: float = 1.0

    def __post_init__(self):
        self.spins = np.asarray(self.spins, dtype=float)
        if self.spins.ndim != 1:
            raise ValueError("spins must be a vector")
        if not np.isin(self.spins, (-1.0, 1.0)).all():
            raise ValueError("spins entries must be -1 or +1")
        if self.sweep_count < 0:
            raise ValueError("sweep_count must be nonnegative")


def sample_boltzmann(dist: BoltzmannDistribution, rng: np.random.Generator) -> int:
    """One label drawn by inverse-CDF from the exact distribution."""
    cum = np.cumsum(dist.probabilities)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, dist.label_count - 1)


def sample_boltzmann_many(dist: BoltzmannDistribution, size: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(dist.probabilities)
    idx = np.searchsorted(cum, rng.random(size), side="right")
    return np.minimum(idx, dist.label_count - 1)


def mc_grad_summand(
    problem: MinMaxProblem,
    i: int,
    w: np.ndarray,
    beta: float,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte Carlo estimate of the smooth summand gradient lam*w + E[a[i, Y]].

    Labels are drawn from the exact Boltzmann distribution, so the estimator is
    unbiased at any sample count.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    dist = boltzmann(problem, i, w, beta)
    labels = sample_boltzmann_many(dist, samples, rng)
    # empirical-frequency form of the sample mean: exact when one label absorbs
    # all draws, and O(label_count * D) regardless of the sample count
    freq = np.bincount(labels, minlength=problem.label_count) / samples
    return problem.lam * problem.check_w(w) + freq @ problem.a[i]


def noisy_grad_summand(
    exact: np.ndarray, cfg: NoisyGradientConfig, rng: np.random.Generator
) -> np.ndarray:
    """Exact gradient plus a perturbation bounded per coordinate by theta/3."""
    exact = np.asarray(exact, dtype=float)
    if cfg.theta == 0.0:
        return exact.copy()
    bound = cfg.theta / 3.0
    if cfg.noise_shape == "uniform":
        noise = rng.uniform(-bound, bound, size=exact.shape)
    else:
        noise = bound * (2.0 * rng.integers(0, 2, size=exact.shape) - 1.0)
    assert (np.abs(noise) <= bound).all()  # the contract the analysis rests on
    return exact + noise


def noisy_argmax(values, failure_prob: float, rng: np.random.Generator) -> int:
    """Argmax that fails with the given probability.

    On success returns the exact argmax (smallest index on ties); on failure
    returns a uniformly random non-argmax index.  A singleton list always
    returns 0.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("argmax of an empty value list")
    if not 0.0 <= failure_prob < 1.0:
        raise ValueError("failure_prob must lie in [0, 1)")
    best = int(np.argmax(v))
    if v.size == 1 or failure_prob == 0.0:
        return best
    if rng.random() >= failure_prob:
        return best
    wrong = int(rng.integers(0, v.size - 1))
    return wrong + 1 if wrong >= best else wrong


# --- single-spin-flip Gibbs sampling ----------------------------------------


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def conditional_up_probability(beta: float, local_field: float) -> float:
    """P(spin = +1 | rest) = logistic(2 beta h) for local field h."""
    return _sigmoid(2.0 * beta * local_field)


def _site_bias(model: "IsingLabelModel", x_features: np.ndarray, loss_anchor) -> np.ndarray:
    """Per-site linear field: feature and bias terms, plus the Hamming tilt.

    A loss anchor y tilts the density by exp(beta * Hamming(y', y)), which is
    a per-site field of -y_k/2 up to an additive constant.
    """
    bias = model.theta2 * x_features + model.theta3
    if loss_anchor is not None:
        anchor = np.asarray(loss_anchor, dtype=float)
        if anchor.shape != bias.shape:
            raise ValueError("loss_anchor length must match the model dimension")
        bias = bias - 0.5 * anchor
    return bias


def _sweep_once(spins: list, rows: list, bias: list, beta: float, uniforms) -> None:
    # systematic scan: each site resampled once, in index order
    ell = len(spins)
    for k in range(ell):
        row = rows[k]
        h = bias[k]
        for j in range(ell):
            h += row[j] * spins[j]
        spins[k] = 1.0 if uniforms[k] < _sigmoid(2.0 * beta * h) else -1.0


def gibbs_sweep(
    model: "IsingLabelModel",
    x_features: np.ndarray,
    loss_anchor,
    state: GibbsChainState,
    rng: np.random.Generator,
) -> GibbsChainState:
    """One full systematic-scan sweep of the chain.

    The stationary density is proportional to exp(beta * score) without an
    anchor and exp(beta * [Hamming(y', anchor) + score]) with one.  Each site
    is resampled from its exact conditional, so the sweep satisfies detailed
    balance site by site.
    """
    x_features = np.asarray(x_features, dtype=float)
    if state.spins.shape != (model.ell,) or x_features.shape != (model.ell,):
        raise ValueError("state and features must match the model dimension")
    spins = list(map(float, state.spins))
    rows = model.pair_matrix().tolist()
    bias = _site_bias(model, x_features, loss_anchor).tolist()
    _sweep_once(spins, rows, bias, state.beta, rng.random(model.ell))
    return GibbsChainState(np.array(spins), state.sweep_count + 1, state.beta)


def run_gibbs_chain(
    model: "IsingLabelModel",
    x_features: np.ndarray,
    loss_anchor,
    beta: float,
    burn_in: int,
    samples: int,
    rng: np.random.Generator,
    initial_spins: np.ndarray | None = None,
) -> np.ndarray:
    """Burn in, then collect one configuration per sweep.

    Returns a (samples, ell) array of +-1 spins.  Equivalent to iterating
    ``gibbs_sweep`` but kept allocation-free for long chains.
    """
    x_features = np.asarray(x_features, dtype=float)
    if x_features.shape != (model.ell,):
        raise ValueError("features must match the model dimension")
    if initial_spins is None:
        spins = list(2.0 * rng.integers(0, 2, size=model.ell) - 1.0)
    else:
        spins = list(map(float, initial_spins))
        if len(spins) != model.ell:
            raise ValueError("initial_spins must match the model dimension")
    rows = model.pair_matrix().tolist()
    bias = _site_bias(model, x_features, loss_anchor).tolist()
    for _ in range(burn_in):
        _sweep_once(spins, rows, bias, beta, rng.random(model.ell))
    out = np.empty((samples, model.ell))
    for s in range(samples):
        _sweep_once(spins, rows, bias, beta, rng.random(model.ell))
        out[s] = spins
    return out
