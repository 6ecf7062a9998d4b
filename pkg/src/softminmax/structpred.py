"""Structured-prediction objectives over Ising label spaces.

Labels are +-1 vectors of length ell scored by

    s(x, y) = theta1 . triu(y y^T) + theta2 . (x o y) + theta3 . y,

where triu is the strict upper triangle (diagonal terms are constant for
+-1 spins) and o is the element-wise product.  The module provides the joint
feature map, Hamming loss, exact-enumeration objective values and gradients
for the max-margin (MM), softmax-margin (S3VM), conditional log-likelihood
(CL), loss-targeted CL (LCL), Risk, and Jensen risk bound (JRB) training
objectives, Gibbs-sampled Monte Carlo gradients for larger label spaces,
maximum-score prediction, and the effective inverse temperature report.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .sampler import run_gibbs_chain

__all__ = [
    "EXACT_MODE_MAX_ELL",
    "OBJECTIVE_KINDS",
    "IsingLabelModel",
    "LabeledExample",
    "ObjectiveKind",
    "feature_dim",
    "feature_map",
    "eval_score",
    "hamming",
    "objective_value",
    "objective_grad",
    "predict",
    "beta_eff",
    "loss_target_expectations",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
]

EXACT_MODE_MAX_ELL = 20
OBJECTIVE_KINDS = ("MM", "S3VM", "CL", "LCL", "Risk", "JRB")
_CHUNK = 1 << 14


@dataclass
class IsingLabelModel:
    """Quadratic label scorer with pairwise, feature-interaction, and bias weights.

    theta1 holds the strict upper triangle of the pair couplings in row-major
    (i < j) order, length ell*(ell-1)/2; theta2 and theta3 have length ell.
    beta is the model's nominal inverse temperature.
    """

    ell: int
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    beta: float = 1.0

    _pair_matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.theta1 = np.asarray(self.theta1, dtype=float)
        self.theta2 = np.asarray(self.theta2, dtype=float)
        self.theta3 = np.asarray(self.theta3, dtype=float)
        if self.ell < 1:
            raise ValueError("ell must be at least 1")
        n_pairs = self.ell * (self.ell - 1) // 2
        if self.theta1.shape != (n_pairs,):
            raise ValueError(f"theta1 must have length {n_pairs}")
        if self.theta2.shape != (self.ell,) or self.theta3.shape != (self.ell,):
            raise ValueError(f"theta2 and theta3 must have length {self.ell}")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    def pair_matrix(self) -> np.ndarray:
        """Symmetric coupling matrix with zero diagonal."""
        if self._pair_matrix is None:
            J = np.zeros((self.ell, self.ell))
            iu, ju = np.triu_indices(self.ell, k=1)
            J[iu, ju] = self.theta1
            J[ju, iu] = self.theta1
            self._pair_matrix = J
        return self._pair_matrix

    def params_vector(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2, self.theta3])

    def with_params(self, vec: np.ndarray) -> "IsingLabelModel":
        vec = np.asarray(vec, dtype=float)
        n_pairs = self.ell * (self.ell - 1) // 2
        if vec.shape != (n_pairs + 2 * self.ell,):
            raise ValueError("parameter vector has the wrong length")
        return IsingLabelModel(
            ell=self.ell,
            theta1=vec[:n_pairs].copy(),
            theta2=vec[n_pairs:n_pairs + self.ell].copy(),
            theta3=vec[n_pairs + self.ell:].copy(),
            beta=self.beta,
        )


@dataclass
class LabeledExample:
    """Feature vector (stand-in for any upstream extractor) and its +-1 label."""

    features: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.label = np.asarray(self.label, dtype=float)
        if self.features.ndim != 1 or self.features.shape != self.label.shape:
            raise ValueError("features and label must be vectors of equal length")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        if not np.isin(self.label, (-1.0, 1.0)).all():
            raise ValueError("label entries must be -1 or +1")


@dataclass
class ObjectiveKind:
    """Objective selector plus its knobs: the loss-target spread mu_spread
    (used by LCL) and the L2 weight lam (applied to every kind when
    positive)."""

    kind: str
    mu_spread: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"kind must be one of {OBJECTIVE_KINDS}")
        if self.kind == "LCL" and self.mu_spread <= 0:
            raise ValueError("LCL needs mu_spread > 0")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def feature_dim(ell: int) -> int:
    return ell * (ell - 1) // 2 + 2 * ell


def feature_map(y: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Joint feature vector (triu(y y^T); features o y; y), length
    ell*(ell-1)/2 + 2*ell, with the strict upper triangle in row-major order."""
    y = np.asarray(y, dtype=float)
    features = np.asarray(features, dtype=float)
    if y.ndim != 1 or y.shape != features.shape:
        raise ValueError("y and features must be vectors of equal length")
    iu, ju = np.triu_indices(y.size, k=1)
    return np.concatenate([y[iu] * y[ju], features * y, y])


def eval_score(model: IsingLabelModel, ex_features: np.ndarray, y: np.ndarray) -> float:
    """Score s(x, y); equals the parameter vector dotted with the feature map."""
    y = np.asarray(y, dtype=float)
    ex_features = np.asarray(ex_features, dtype=float)
    if y.shape != (model.ell,) or ex_features.shape != (model.ell,):
        raise ValueError("label and features must match the model dimension")
    iu, ju = np.triu_indices(model.ell, k=1)
    return float(
        model.theta1 @ (y[iu] * y[ju])
        + model.theta2 @ (ex_features * y)
        + model.theta3 @ y
    )


def hamming(y1: np.ndarray, y2: np.ndarray) -> int:
    y1 = np.asarray(y1)
    y2 = np.asarray(y2)
    if y1.shape != y2.shape:
        raise ValueError("labels must have equal length")
    return int((y1 != y2).sum())


# --- exact enumeration ------------------------------------------------------


def _check_exact_mode(ell: int) -> None:
    if ell > EXACT_MODE_MAX_ELL:
        raise ValueError(
            f"exact mode enumerates 2^ell states and supports ell <= "
            f"{EXACT_MODE_MAX_ELL}; use gibbs mode"
        )


def _label_chunk(ell: int, start: int, stop: int) -> np.ndarray:
    """Rows start..stop of the lexicographic (-1 before +1) label enumeration."""
    idx = np.arange(start, stop, dtype=np.int64)
    shifts = ell - 1 - np.arange(ell)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return bits * 2.0 - 1.0


@dataclass
class _ExactStats:
    log_partition: float
    max_value: float
    argmax_label: np.ndarray
    e_phi: np.ndarray | None
    e_score: float
    e_delta: float | None
    e_delta_phi: np.ndarray | None


def _exact_stats(
    model: IsingLabelModel,
    x: np.ndarray,
    coef_score: float,
    coef_delta: float,
    delta_anchor: np.ndarray | None,
    *,
    want_phi: bool = False,
    want_delta_stats: bool = False,
) -> _ExactStats:
    """Expectations under p(y') proportional to
    exp(coef_score * s(x, y') + coef_delta * Hamming(y', anchor)),
    accumulated over label chunks with running max shifting.

    Also tracks the maximizer of the same weight exponent (first hit wins, so
    ties resolve to the lexicographically smallest label).
    """
    _check_exact_mode(model.ell)
    ell = model.ell
    iu, ju = np.triu_indices(ell, k=1)
    th1, th2, th3 = model.theta1, model.theta2, model.theta3
    x = np.asarray(x, dtype=float)
    anchor = None if delta_anchor is None else np.asarray(delta_anchor, dtype=float)
    dim = feature_dim(ell)

    m = -math.inf
    s_total = 0.0
    phi_sum = np.zeros(dim) if want_phi else None
    score_sum = 0.0
    delta_sum = 0.0 if want_delta_stats else None
    delta_phi_sum = np.zeros(dim) if want_delta_stats else None
    best = -math.inf
    best_label = None

    total = 1 << ell
    for start in range(0, total, _CHUNK):
        Y = _label_chunk(ell, start, min(start + _CHUNK, total))
        pairs = Y[:, iu] * Y[:, ju]
        scores = pairs @ th1 + (Y * x) @ th2 + Y @ th3
        z = coef_score * scores
        if coef_delta != 0.0 or want_delta_stats:
            if anchor is None:
                raise ValueError("Hamming statistics need an anchor label")
            deltas = 0.5 * (ell - Y @ anchor)
        else:
            deltas = None
        if coef_delta != 0.0:
            z = z + coef_delta * deltas

        k = int(np.argmax(z))
        if z[k] > best:
            best = float(z[k])
            best_label = Y[k].copy()

        m_new = max(m, float(z.max()))
        scale = math.exp(m - m_new) if s_total > 0.0 else 0.0
        e = np.exp(z - m_new)
        e_total = float(e.sum())
        s_total = s_total * scale + e_total
        score_sum = score_sum * scale + float(e @ scores)
        if want_phi or want_delta_stats:
            phi = np.hstack([pairs, Y * x, Y])
            if want_phi:
                phi_sum = phi_sum * scale + e @ phi
            if want_delta_stats:
                delta_sum = delta_sum * scale + float(e @ deltas)
                delta_phi_sum = delta_phi_sum * scale + (e * deltas) @ phi
        m = m_new

    return _ExactStats(
        log_partition=m + math.log(s_total),
        max_value=best,
        argmax_label=best_label,
        e_phi=None if phi_sum is None else phi_sum / s_total,
        e_score=score_sum / s_total,
        e_delta=None if delta_sum is None else delta_sum / s_total,
        e_delta_phi=None if delta_phi_sum is None else delta_phi_sum / s_total,
    )


def loss_target_expectations(y: np.ndarray, x: np.ndarray, mu_spread: float):
    """Closed-form E[s-features] under the loss target q(y') ~ exp(-mu * Hamming).

    The Hamming tilt factorizes over sites: each site agrees with y with
    probability sigma(mu), so E[y'_k] = y_k tanh(mu/2) and pair expectations
    are products.  Returns (E[Phi], E[y']).
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    t = math.tanh(mu_spread / 2.0)
    ey = t * y
    iu, ju = np.triu_indices(y.size, k=1)
    e_pairs = (t * t) * y[iu] * y[ju]
    return np.concatenate([e_pairs, x * ey, ey]), ey


def _dataset_arrays(dataset):
    # empty datasets are legal: objectives reduce to the regularizer
    return [(np.asarray(ex.features, float), np.asarray(ex.label, float)) for ex in dataset]


def objective_value(kind: ObjectiveKind, model: IsingLabelModel, dataset) -> float:
    """Exact-enumeration objective value.

    MM/S3VM/CL/LCL sum per-example terms; Risk and JRB average them.  Risk is
    the expected Hamming loss under the model distribution; JRB replaces each
    per-example E[Delta] by its Jensen upper bound (1/beta) log E[exp(beta
    Delta)], so JRB >= Risk at any beta.  When kind.lam > 0 the L2 term
    lam/2 ||theta||^2 is added regardless of kind.
    """
    beta = model.beta
    pairs = _dataset_arrays(dataset)
    n = len(pairs)
    total = 0.0
    for x, y in pairs:
        s_true = eval_score(model, x, y)
        if kind.kind == "MM":
            st = _exact_stats(model, x, 1.0, 1.0, y)
            total += st.max_value - s_true
        elif kind.kind == "S3VM":
            st = _exact_stats(model, x, beta, beta, y)
            total += st.log_partition / beta - s_true
        elif kind.kind == "CL":
            st = _exact_stats(model, x, beta, 0.0, None)
            total += st.log_partition - beta * s_true
        elif kind.kind == "LCL":
            st = _exact_stats(model, x, beta, 0.0, None)
            qt = _exact_stats(model, x, 0.0, -kind.mu_spread, y)
            total += st.log_partition - beta * qt.e_score
        elif kind.kind == "Risk":
            st = _exact_stats(model, x, beta, 0.0, y, want_delta_stats=True)
            total += st.e_delta / n
        else:  # JRB
            tilted = _exact_stats(model, x, beta, beta, y)
            plain = _exact_stats(model, x, beta, 0.0, None)
            total += (tilted.log_partition - plain.log_partition) / (n * beta)
    if kind.lam > 0.0:
        theta = model.params_vector()
        total += 0.5 * kind.lam * float(theta @ theta)
    return float(total)


def _grad_exact(kind: ObjectiveKind, model: IsingLabelModel, dataset) -> np.ndarray:
    beta = model.beta
    pairs = _dataset_arrays(dataset)
    n = len(pairs)
    grad = np.zeros(feature_dim(model.ell))
    for x, y in pairs:
        phi_true = feature_map(y, x)
        if kind.kind == "MM":
            st = _exact_stats(model, x, 1.0, 1.0, y)
            grad += feature_map(st.argmax_label, x) - phi_true
        elif kind.kind == "S3VM":
            st = _exact_stats(model, x, beta, beta, y, want_phi=True)
            grad += st.e_phi - phi_true
        elif kind.kind == "CL":
            st = _exact_stats(model, x, beta, 0.0, None, want_phi=True)
            grad += beta * (st.e_phi - phi_true)
        elif kind.kind == "LCL":
            st = _exact_stats(model, x, beta, 0.0, None, want_phi=True)
            qt = _exact_stats(model, x, 0.0, -kind.mu_spread, y, want_phi=True)
            grad += beta * (st.e_phi - qt.e_phi)
        elif kind.kind == "Risk":
            st = _exact_stats(model, x, beta, 0.0, y, want_phi=True, want_delta_stats=True)
            grad += beta * (st.e_delta_phi - st.e_delta * st.e_phi) / n
        else:  # JRB
            tilted = _exact_stats(model, x, beta, beta, y, want_phi=True)
            plain = _exact_stats(model, x, beta, 0.0, None, want_phi=True)
            grad += (tilted.e_phi - plain.e_phi) / n
    if kind.lam > 0.0:
        grad += kind.lam * model.params_vector()
    return grad


def _chain_phi_mean(samples: np.ndarray, x: np.ndarray) -> np.ndarray:
    ell = samples.shape[1]
    iu, ju = np.triu_indices(ell, k=1)
    pairs = samples[:, iu] * samples[:, ju]
    phi = np.hstack([pairs, samples * x, samples])
    return phi.mean(axis=0)


def _grad_gibbs(
    kind: ObjectiveKind,
    model: IsingLabelModel,
    dataset,
    burn_in: int,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    if kind.kind == "Risk":
        raise ValueError("Risk gradients are not supported in gibbs mode")
    beta = model.beta
    pairs = _dataset_arrays(dataset)
    n = len(pairs)
    grad = np.zeros(feature_dim(model.ell))
    for x, y in pairs:
        phi_true = feature_map(y, x)
        if kind.kind == "MM":
            # hard argmax approximated by the best-scoring visited state
            chain = run_gibbs_chain(model, x, y, beta, burn_in, samples, rng)
            iu, ju = np.triu_indices(model.ell, k=1)
            scores = (chain[:, iu] * chain[:, ju]) @ model.theta1 \
                + (chain * x) @ model.theta2 + chain @ model.theta3
            deltas = 0.5 * (model.ell - chain @ y)
            best = chain[int(np.argmax(scores + deltas))]
            grad += feature_map(best, x) - phi_true
        elif kind.kind == "S3VM":
            chain = run_gibbs_chain(model, x, y, beta, burn_in, samples, rng)
            grad += _chain_phi_mean(chain, x) - phi_true
        elif kind.kind == "CL":
            chain = run_gibbs_chain(model, x, None, beta, burn_in, samples, rng)
            grad += beta * (_chain_phi_mean(chain, x) - phi_true)
        elif kind.kind == "LCL":
            chain = run_gibbs_chain(model, x, None, beta, burn_in, samples, rng)
            q_phi, _ = loss_target_expectations(y, x, kind.mu_spread)
            grad += beta * (_chain_phi_mean(chain, x) - q_phi)
        else:  # JRB
            tilted = run_gibbs_chain(model, x, y, beta, burn_in, samples, rng)
            plain = run_gibbs_chain(model, x, None, beta, burn_in, samples, rng)
            grad += (_chain_phi_mean(tilted, x) - _chain_phi_mean(plain, x)) / n
    if kind.lam > 0.0:
        grad += kind.lam * model.params_vector()
    return grad


def objective_grad(
    kind: ObjectiveKind,
    model: IsingLabelModel,
    dataset,
    mode: str = "exact",
    *,
    burn_in: int = 200,
    samples: int = 200,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Gradient with respect to the stacked parameters (theta1, theta2, theta3).

    Exact mode enumerates the label space; gibbs mode replaces the model
    expectations with single-spin-flip chain averages (burn_in sweeps, then one
    collected configuration per sweep).  Risk has no gibbs mode.
    """
    if mode == "exact":
        return _grad_exact(kind, model, dataset)
    if mode == "gibbs":
        if rng is None:
            raise ValueError("gibbs mode needs an rng")
        return _grad_gibbs(kind, model, dataset, burn_in, samples, rng)
    raise ValueError("mode must be 'exact' or 'gibbs'")


def predict(
    model: IsingLabelModel,
    ex_features: np.ndarray,
    mode: str = "exact",
    *,
    beta_ladder=(0.5, 1.0, 2.0, 4.0, 8.0),
    sweeps_per_beta: int = 50,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Maximum-score label.

    Exact mode enumerates (ties break to the lexicographically smallest label,
    -1 before +1).  Gibbs mode anneals a chain through beta_ladder and returns
    the best-scoring visited configuration.
    """
    x = np.asarray(ex_features, dtype=float)
    if x.shape != (model.ell,):
        raise ValueError("features must match the model dimension")
    if mode == "exact":
        st = _exact_stats(model, x, 1.0, 0.0, None)
        return st.argmax_label
    if mode != "gibbs":
        raise ValueError("mode must be 'exact' or 'gibbs'")
    if rng is None:
        raise ValueError("gibbs mode needs an rng")
    best_label = None
    best_score = -math.inf
    spins = 2.0 * rng.integers(0, 2, size=model.ell) - 1.0
    for beta in beta_ladder:
        chain = run_gibbs_chain(
            model, x, None, beta, 0, sweeps_per_beta, rng, initial_spins=spins
        )
        spins = chain[-1]
        iu, ju = np.triu_indices(model.ell, k=1)
        scores = (chain[:, iu] * chain[:, ju]) @ model.theta1 \
            + (chain * x) @ model.theta2 + chain @ model.theta3
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score = float(scores[k])
            best_label = chain[k].copy()
    return best_label


def beta_eff(model: IsingLabelModel, ex_features: np.ndarray) -> float:
    """Nominal beta times the magnitude of the ground-state score."""
    st = _exact_stats(model, np.asarray(ex_features, float), 1.0, 0.0, None)
    return model.beta * abs(st.max_value)


# --- file formats -----------------------------------------------------------
#
# Model file: JSON {ell, beta, theta1, theta2, theta3}.
# Dataset file: JSON lines, one {features, label} object per line.


def save_model(model: IsingLabelModel, path) -> None:
    doc = {
        "ell": model.ell,
        "beta": model.beta,
        "theta1": model.theta1.tolist(),
        "theta2": model.theta2.tolist(),
        "theta3": model.theta3.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> IsingLabelModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return IsingLabelModel(
        ell=int(doc["ell"]),
        theta1=np.array(doc["theta1"], dtype=float),
        theta2=np.array(doc["theta2"], dtype=float),
        theta3=np.array(doc["theta3"], dtype=float),
        beta=float(doc["beta"]),
    )


def save_dataset(dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps({
                "features": ex.features.tolist(),
                "label": [int(v) for v in ex.label],
            }))
            fh.write("\n")


def load_dataset(path) -> list[LabeledExample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            out.append(LabeledExample(
                features=np.array(doc["features"], dtype=float),
                label=np.array(doc["label"], dtype=float),
            ))
    return out
