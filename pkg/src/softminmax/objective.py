"""Piecewise-linear min-max objective and its softmax smoothing.

The objective is

    f(w) = (lam/2) ||w||^2 + (1/n) sum_i max_y [ a[i,y] . (w - b'[i]) + b[i,y] ]

over a finite label set of size ``label_count``.  Replacing the inner max by
the softmax operator  max^beta(v) = (1/beta) log sum_y exp(beta v_y)  gives a
smooth surrogate ``f^beta`` whose gradient is a Boltzmann expectation of the
piece slopes.  This module holds the exact evaluations: objective values,
Boltzmann distributions, smooth gradients/Hessians, subgradients, and the
constants (Delta, M, L, ell, mu) that drive optimizer parameter choices.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MinMaxProblem",
    "BoltzmannDistribution",
    "ProblemBounds",
    "eval_piece",
    "piece_values",
    "summand_values",
    "eval_f",
    "eval_f_summand",
    "eval_f_beta",
    "eval_f_beta_summand",
    "softmax",
    "boltzmann",
    "grad_f_beta",
    "grad_f_beta_summand",
    "hess_f_beta",
    "subgrad_f_summand",
    "compute_bounds",
    "beta_for_epsilon",
    "problem_to_json",
    "problem_from_json",
    "save_problem",
    "load_problem",
]


@dataclass
class MinMaxProblem:
    """One min-max instance: n summands, each the max of ``label_count`` planes.

    a        : (n, label_count, D) slope vectors a[i, y]
    b        : (n, label_count) scalar offsets b[i, y]
    b_prime  : (n, D) shift points b'[i]
    lam      : L2 regularization weight (>= 0)
    """

    a: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    lam: float

    # lazily built evaluation caches, never serialized
    _flat_a: np.ndarray | None = field(default=None, repr=False, compare=False)
    _offset: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.b_prime = np.asarray(self.b_prime, dtype=float)
        self.lam = float(self.lam)
        if self.a.ndim != 3:
            raise ValueError("a must have shape (n, label_count, D)")
        n, label_count, dim = self.a.shape
        if n < 1 or label_count < 1 or dim < 1:
            raise ValueError("need n >= 1, label_count >= 1, D >= 1")
        if self.b.shape != (n, label_count):
            raise ValueError("b must have shape (n, label_count)")
        if self.b_prime.shape != (n, dim):
            raise ValueError("b_prime must have shape (n, D)")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        for name, arr in (("a", self.a), ("b", self.b), ("b_prime", self.b_prime)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} must be fully populated with finite values")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def label_count(self) -> int:
        return self.a.shape[1]

    @property
    def dim(self) -> int:
        return self.a.shape[2]

    def _caches(self):
        if self._flat_a is None:
            # b[i,y] - a[i,y].b'[i], so piece values are flat_a @ w + offset.
            # The guard field is assigned last: concurrent readers either see
            # both caches or rebuild them identically.
            offset = self.b - np.einsum("iyd,id->iy", self.a, self.b_prime)
            flat_a = np.ascontiguousarray(self.a.reshape(self.n * self.label_count, self.dim))
            self._offset = offset
            self._flat_a = flat_a
        return self._flat_a, self._offset

    def check_w(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"w must be a vector of dimension {self.dim}")
        return w


def eval_piece(problem: MinMaxProblem, i: int, y: int, w: np.ndarray) -> float:
    """Value of the single plane a[i,y].(w - b'[i]) + b[i,y]."""
    if not 0 <= i < problem.n:
        raise ValueError(f"summand index {i} out of range [0, {problem.n})")
    if not 0 <= y < problem.label_count:
        raise ValueError(f"label index {y} out of range [0, {problem.label_count})")
    w = problem.check_w(w)
    return float(problem.a[i, y] @ (w - problem.b_prime[i]) + problem.b[i, y])


def piece_values(problem: MinMaxProblem, w: np.ndarray) -> np.ndarray:
    """All plane values at w as an (n, label_count) array."""
    w = problem.check_w(w)
    flat_a, offset = problem._caches()
    return (flat_a @ w).reshape(problem.n, problem.label_count) + offset


def summand_values(problem: MinMaxProblem, i: int, w: np.ndarray) -> np.ndarray:
    """Plane values of summand i at w, a vector of length label_count."""
    if not 0 <= i < problem.n:
        raise ValueError(f"summand index {i} out of range [0, {problem.n})")
    w = problem.check_w(w)
    flat_a, offset = problem._caches()
    lo = i * problem.label_count
    return flat_a[lo:lo + problem.label_count] @ w + offset[i]


def _regularizer(problem: MinMaxProblem, w: np.ndarray) -> float:
    return 0.5 * problem.lam * float(w @ w)


def eval_f(problem: MinMaxProblem, w: np.ndarray) -> float:
    """Nonsmooth objective: regularizer plus the mean of exact per-summand maxima."""
    vals = piece_values(problem, w)
    return _regularizer(problem, problem.check_w(w)) + float(vals.max(axis=1).mean())


def eval_f_summand(problem: MinMaxProblem, i: int, w: np.ndarray) -> float:
    """Nonsmooth summand g_i(w) = (lam/2)||w||^2 + max_y piece(i, y, w)."""
    vals = summand_values(problem, i, w)
    return _regularizer(problem, problem.check_w(w)) + float(vals.max())


def softmax(values, beta: float) -> float:
    """Softmax operator (1/beta) log sum exp(beta v), computed with max shift.

    Upper-bounds max(v) by at most log(len(v))/beta and is finite for any
    finite input.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("softmax of an empty value list")
    if beta <= 0:
        raise ValueError("beta must be positive")
    m = float(v.max())
    return m + math.log(float(np.exp(beta * (v - m)).sum())) / beta


def eval_f_beta(problem: MinMaxProblem, w: np.ndarray, beta: float) -> float:
    """Smooth surrogate: regularizer plus the mean of per-summand softmaxes."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    vals = piece_values(problem, w)
    m = vals.max(axis=1)
    lse = m + np.log(np.exp(beta * (vals - m[:, None])).sum(axis=1)) / beta
    return _regularizer(problem, problem.check_w(w)) + float(lse.mean())


def eval_f_beta_summand(problem: MinMaxProblem, i: int, w: np.ndarray, beta: float) -> float:
    """Smooth summand g_i^beta(w) = (lam/2)||w||^2 + softmax of summand i's planes."""
    vals = summand_values(problem, i, w)
    return _regularizer(problem, problem.check_w(w)) + softmax(vals, beta)


@dataclass
class BoltzmannDistribution:
    """Label distribution with weights proportional to exp(beta * value)."""

    probabilities: np.ndarray
    log_partition: float
    beta: float

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.probabilities.ndim != 1 or self.probabilities.size == 0:
            raise ValueError("probabilities must be a nonempty vector")
        if (self.probabilities < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")

    @property
    def label_count(self) -> int:
        return self.probabilities.size


def boltzmann(problem: MinMaxProblem, i: int, w: np.ndarray, beta: float) -> BoltzmannDistribution:
    """Exact Boltzmann distribution of summand i's labels at inverse temperature beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    vals = summand_values(problem, i, w)
    z = beta * vals
    m = float(z.max())
    e = np.exp(z - m)
    s = float(e.sum())
    return BoltzmannDistribution(e / s, m + math.log(s), beta)


def grad_f_beta(problem: MinMaxProblem, w: np.ndarray, beta: float) -> np.ndarray:
    """Exact gradient lam*w + (1/n) sum_i E_i[a[i, Y]] with Boltzmann weights."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    w = problem.check_w(w)
    vals = piece_values(problem, w)
    z = beta * (vals - vals.max(axis=1, keepdims=True))
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return problem.lam * w + np.einsum("iy,iyd->d", p, problem.a) / problem.n


def grad_f_beta_summand(problem: MinMaxProblem, i: int, w: np.ndarray, beta: float) -> np.ndarray:
    """Exact smooth summand gradient lam*w + E[a[i, Y]]."""
    dist = boltzmann(problem, i, w, beta)
    return problem.lam * problem.check_w(w) + dist.probabilities @ problem.a[i]


def hess_f_beta(problem: MinMaxProblem, w: np.ndarray, beta: float) -> np.ndarray:
    """Exact Hessian lam*I + (beta/n) sum_i (E[a a^T] - E[a] E[a]^T)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    w = problem.check_w(w)
    vals = piece_values(problem, w)
    z = beta * (vals - vals.max(axis=1, keepdims=True))
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    second = np.einsum("iy,iyd,iye->de", p, problem.a, problem.a)
    means = np.einsum("iy,iyd->id", p, problem.a)
    second -= np.einsum("id,ie->de", means, means)
    return problem.lam * np.eye(problem.dim) + beta * second / problem.n


def subgrad_f_summand(problem: MinMaxProblem, i: int, w: np.ndarray) -> tuple[np.ndarray, int]:
    """Subgradient (lam*w + a[i, y*], y*) at the exact argmax plane.

    Ties pick the smallest label index, so the result is deterministic.
    """
    vals = summand_values(problem, i, w)
    y_star = int(np.argmax(vals))
    return problem.lam * problem.check_w(w) + problem.a[i, y_star], y_star


@dataclass
class ProblemBounds:
    """Constants used by optimizer parameter rules, taken over a given ball.

    Delta : bound on every partial derivative of the regularized planes
    M     : bound on squared (sub)gradient norms, D * Delta^2
    L     : gradient Lipschitz constant of the smooth surrogate, beta*D*Delta^2 + ell
    ell   : Lipschitz constant of the per-plane gradients (the regularizer's lam)
    mu    : strong convexity constant (lam)
    """

    Delta: float
    M: float
    L: float
    ell: float
    mu: float

    def __post_init__(self):
        for name in ("Delta", "M", "L", "ell", "mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def compute_bounds(problem: MinMaxProblem, radius: float, beta: float) -> ProblemBounds:
    """Bounds over the Euclidean ball of the given radius around the origin.

    Delta = lam * radius + max |a[i, y, j]| bounds each partial derivative of
    (lam/2)||w||^2 + piece(i, y, w) on the ball; the rest follow from it.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if beta <= 0:
        raise ValueError("beta must be positive")
    amax = float(np.abs(problem.a).max())
    delta = problem.lam * radius + amax
    dim = problem.dim
    return ProblemBounds(
        Delta=delta,
        M=dim * delta**2,
        L=beta * dim * delta**2 + problem.lam,
        ell=problem.lam,
        mu=problem.lam,
    )


def beta_for_epsilon(label_count: int, epsilon: float, min_beta: float = 1.0) -> float:
    """Inverse temperature 2 log(label_count) / epsilon that makes the smoothing
    gap at most epsilon/2.

    A single-label set makes the formula degenerate (log 1 = 0), so values
    below 2 return the configured floor.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if label_count < 1:
        raise ValueError("label_count must be at least 1")
    if label_count < 2:
        return float(min_beta)
    return 2.0 * math.log(label_count) / epsilon


# --- serialization ----------------------------------------------------------
#
# JSON document: {n, D, label_count, lambda, a, b, b_prime} with nested lists.
# Python's float repr round-trips exactly, so the encoding is lossless.


def problem_to_json(problem: MinMaxProblem) -> str:
    doc = {
        "n": problem.n,
        "D": problem.dim,
        "label_count": problem.label_count,
        "lambda": problem.lam,
        "a": problem.a.tolist(),
        "b": problem.b.tolist(),
        "b_prime": problem.b_prime.tolist(),
    }
    return json.dumps(doc)


def problem_from_json(text: str) -> MinMaxProblem:
    doc = json.loads(text)
    problem = MinMaxProblem(
        a=np.array(doc["a"], dtype=float),
        b=np.array(doc["b"], dtype=float),
        b_prime=np.array(doc["b_prime"], dtype=float),
        lam=float(doc["lambda"]),
    )
    declared = (doc.get("n"), doc.get("label_count"), doc.get("D"))
    actual = (problem.n, problem.label_count, problem.dim)
    if any(d is not None and d != a for d, a in zip(declared, actual)):
        raise ValueError(f"declared sizes {declared} do not match arrays {actual}")
    return problem


def save_problem(problem: MinMaxProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(problem_to_json(problem))


def load_problem(path) -> MinMaxProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_json(fh.read())
