import math

import numpy as np
import pytest

from softminmax.objective import (
    MinMaxProblem,
    ProblemBounds,
    compute_bounds,
    eval_f_beta_summand,
    grad_f_beta,
    grad_f_beta_summand,
)
from softminmax.optim import (
    UNCONSTRAINED,
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
    reference_smooth_minimizer,
    saga_init,
    saga_step,
    sgd_step,
    step_size,
    subsgdp_step,
    verify_asaga_inequalities,
)
from softminmax.sampler import ArgmaxOracleConfig, NoisyGradientConfig, noisy_grad_summand, rng_stream

from conftest import piecewise_instance, random_problem


# --- schedules -----------------------------------------------------------------


def test_step_size_constant_decay():
    sched = StepSchedule("decay", gamma0=0.01, c_gamma=0.0)
    assert all(step_size(sched, t) == 0.01 for t in (0, 1, 999))


def test_step_size_decay_formula():
    sched = StepSchedule("decay", gamma0=0.01, c_gamma=10.0)
    assert step_size(sched, 1) == pytest.approx(0.01 / 11.0, rel=1e-15)


def test_step_size_strong_convex():
    sched = StepSchedule("strong-convex", eta=1, mu=1.0)
    assert step_size(sched, 0) == 1.0
    sched5 = StepSchedule("strong-convex", eta=5, mu=2.0)
    assert step_size(sched5, 10) == pytest.approx(5 / (2 * 15))


def test_schedule_positive_nonincreasing():
    for sched in (
        StepSchedule("decay", gamma0=0.5, c_gamma=3.0),
        StepSchedule("strong-convex", eta=4, mu=0.7),
        StepSchedule("constant", gamma0=0.2),
    ):
        steps = [step_size(sched, t) for t in range(50)]
        assert all(s > 0 for s in steps)
        assert all(a >= b for a, b in zip(steps, steps[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        StepSchedule("decay", gamma0=-0.1)
    with pytest.raises(ValueError):
        StepSchedule("strong-convex", eta=0, mu=1.0)
    with pytest.raises(ValueError):
        StepSchedule("strong-convex", eta=2, mu=0.0)
    with pytest.raises(ValueError):
        StepSchedule("nonsense")
    StepSchedule("decay", gamma0=0.0)  # degenerate stationary control is allowed


# --- projections ----------------------------------------------------------------


def test_project_unconstrained():
    v = np.array([5.0, -2.0])
    assert np.array_equal(project(UNCONSTRAINED, v), v)


def test_project_ball_radial_scaling():
    p = Projection("ball", center=np.zeros(2), radius=1.0)
    assert np.allclose(project(p, np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-15)


def test_project_ball_interior():
    p = Projection("ball", center=np.zeros(2), radius=10.0)
    v = np.array([3.0, 4.0])
    assert np.array_equal(project(p, v), v)


def test_project_idempotent(rng):
    p = Projection("ball", center=rng.normal(size=3), radius=0.8)
    for _ in range(20):
        v = 5 * rng.normal(size=3)
        once = project(p, v)
        assert np.allclose(project(p, once), once, atol=1e-12)
        assert np.linalg.norm(once - p.center) <= 0.8 + 1e-12


def test_projection_validation():
    with pytest.raises(ValueError):
        Projection("ball", center=None, radius=1.0)
    with pytest.raises(ValueError):
        Projection("ball", center=np.zeros(2), radius=0.0)


# --- sgd ------------------------------------------------------------------------


def test_sgd_zero_gradient_keeps_iterate():
    p = MinMaxProblem(a=np.zeros((2, 3, 2)), b=np.zeros((2, 3)), b_prime=np.zeros((2, 2)), lam=0.0)
    w = np.array([1.0, -1.0])
    sched = StepSchedule("decay", gamma0=0.5)
    out = sgd_step(p, w, 0, sched, UNCONSTRAINED, rng_stream(0), beta=1.0)
    assert np.array_equal(out, w)


def test_sgd_quadratic_only_step():
    # n=1, one label, zero slopes: gradient is lam * w exactly
    p = MinMaxProblem(a=np.zeros((1, 1, 1)), b=np.zeros((1, 1)), b_prime=np.zeros((1, 1)), lam=2.0)
    sched = StepSchedule("decay", gamma0=0.25)
    out = sgd_step(p, np.array([1.0]), 0, sched, UNCONSTRAINED, rng_stream(0), beta=1.0)
    assert out == pytest.approx([0.5], abs=1e-15)


def test_sgd_deterministic_trajectory(rng):
    p = random_problem(rng, n=4, dim=3, label_count=5)
    sched = StepSchedule("decay", gamma0=0.01, c_gamma=0.1)

    def run(seed):
        w = np.ones(3)
        r = rng_stream(seed)
        for t in range(50):
            w = sgd_step(p, w, t, sched, UNCONSTRAINED, r, beta=0.5)
        return w

    assert np.array_equal(run(3), run(3))
    w_sub = np.ones(3)
    r = rng_stream(3)
    for t in range(10):
        w_sub = sgd_step(p, w_sub, t, sched, UNCONSTRAINED, r, subgradient=True)
    assert np.isfinite(w_sub).all()


# --- polynomial-decay averaging ---------------------------------------------------


def test_first_step_average_equals_iterate(rng):
    p = random_problem(rng, n=3, dim=2, label_count=4)
    for eta in (1, 4):
        state = AveragedState.start(np.ones(2), eta)
        subsgdp_step(p, state, StepSchedule("decay", gamma0=0.01),
                     ArgmaxOracleConfig("exact"), UNCONSTRAINED, rng_stream(1))
        assert np.array_equal(state.w_bar, state.w)
        assert state.t == 1


def test_large_eta_average_tracks_iterate(rng):
    p = random_problem(rng, n=3, dim=2, label_count=4)
    eta = 10**6
    state = AveragedState.start(np.ones(2), eta)
    sched = StepSchedule("decay", gamma0=0.01)
    r = rng_stream(2)
    for _ in range(20):
        subsgdp_step(p, state, sched, ArgmaxOracleConfig("exact"), UNCONSTRAINED, r)
        # averaging weight (eta+1)/(t+eta+1) is essentially 1 at fixed t
        assert np.abs(state.w_bar - state.w).max() < 1e-4


def test_polynomial_weights_normalization_and_final():
    for eta in range(1, 8):
        w = polynomial_decay_weights(200, eta)
        assert w[0] == 0.0
        assert abs(w.sum() - 1.0) <= 1e-12
        assert w[-1] == (eta + 1) / (200 + eta)


def test_recursive_average_equals_closed_form(rng):
    p = random_problem(rng, n=4, dim=3, label_count=5, lam=1.0)
    T = 200
    for eta in range(1, 8):
        state = AveragedState.start(np.zeros(3), eta)
        sched = StepSchedule("strong-convex", eta=eta, mu=p.lam)
        r = rng_stream(20, eta)
        iterates = []
        for _ in range(T):
            subsgdp_step(p, state, sched, ArgmaxOracleConfig("exact"), UNCONSTRAINED, r)
            iterates.append(state.w.copy())
        weights = polynomial_decay_weights(T, eta)
        closed = np.tensordot(weights[1:], np.array(iterates), axes=1)
        assert np.abs(closed - state.w_bar).max() <= 1e-12


# --- saga -----------------------------------------------------------------------


def test_saga_single_summand_is_full_gradient_descent(rng):
    p = random_problem(rng, n=1, dim=3, label_count=4)
    beta, gamma = 1.0, 0.01
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)
    state = saga_init(grad_fn, np.ones(3), 1)
    w_ref = np.ones(3)
    r = rng_stream(4)
    for _ in range(20):
        saga_step(state, grad_fn, gamma, UNCONSTRAINED, r)
        w_ref = w_ref - gamma * grad_f_beta(p, w_ref, beta)
        assert np.allclose(state.w, w_ref, atol=1e-13)


def test_saga_zero_problem_fixed_point():
    p = MinMaxProblem(a=np.zeros((3, 2, 2)), b=np.zeros((3, 2)), b_prime=np.zeros((3, 2)), lam=0.0)
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, 1.0)
    w0 = np.array([2.0, -1.0])
    state = saga_init(grad_fn, w0, 3)
    r = rng_stream(5)
    for _ in range(10):
        saga_step(state, grad_fn, 0.1, UNCONSTRAINED, r)
    assert np.array_equal(state.w, w0)
    assert np.array_equal(state.cache, np.zeros((3, 2)))


def test_saga_matches_straight_line_reference(rng):
    # literal transcription of the cached update, kept independent of SagaState
    p = random_problem(rng, n=3, dim=2, label_count=4)
    beta, gamma, seed = 0.8, 0.05, 123
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)
    w0 = rng.normal(size=2)

    w_ref = w0.copy()
    cache = [grad_fn(i, w0) for i in range(3)]
    r = rng_stream(seed)
    for _ in range(5):
        j = int(r.integers(3))
        fresh = grad_fn(j, w_ref)
        avg = (cache[0] + cache[1] + cache[2]) / 3
        w_ref = w_ref - gamma * (fresh - cache[j] + avg)
        cache[j] = fresh

    state = saga_init(grad_fn, w0, 3)
    r2 = rng_stream(seed)
    for _ in range(5):
        saga_step(state, grad_fn, gamma, UNCONSTRAINED, r2)
    assert np.allclose(state.w, w_ref, atol=1e-14)


def test_saga_cache_average_consistency(rng):
    p = random_problem(rng, n=6, dim=3, label_count=4)
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, 1.0)
    state = saga_init(grad_fn, np.ones(3), 6)
    r = rng_stream(6)
    for k in range(500):
        saga_step(state, grad_fn, 0.01, UNCONSTRAINED, r, resync_every=200)
        if k % 50 == 0:
            assert np.abs(state.cache_avg - state.cache.mean(axis=0)).max() <= 1e-10
    assert np.abs(state.cache_avg - state.cache.mean(axis=0)).max() <= 1e-10


def test_saga_update_direction_unbiased(rng):
    # mean over j of (fresh_j - cache_j + cache_avg) equals the full gradient
    p = random_problem(rng, n=12, dim=3, label_count=5, lam=1.0)
    beta = 1.0
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)
    state = saga_init(grad_fn, np.ones(3), 12)
    r = rng_stream(7)
    for _ in range(25):
        saga_step(state, grad_fn, 0.01, UNCONSTRAINED, r)
    directions = np.array([
        grad_fn(j, state.w) - state.cache[j] + state.cache_avg for j in range(12)
    ])
    assert np.allclose(directions.mean(axis=0), grad_f_beta(p, state.w, beta), atol=1e-12)


# --- A-SAGA parameter rule ---------------------------------------------------------


def bounds_from(L, mu):
    return ProblemBounds(Delta=1.0, M=1.0, L=L, ell=0.0, mu=mu)


def test_asaga_params_zero_distance():
    b = bounds_from(50.0, 2.0)
    p = asaga_params(b, 10, 0.0, 4)
    assert p.theta == 0.0
    assert p.alpha == 8.0
    assert p.gamma == pytest.approx(1 / (9 * 50.0), rel=1e-14)
    assert p.c == pytest.approx(2 / (10 * p.gamma), rel=1e-14)
    assert p.inv_tau == pytest.approx(min(1 / 20, p.gamma * 2.0 / 2), rel=1e-14)


def test_asaga_params_c_formula():
    b = bounds_from(7.0, 1.0)
    p = asaga_params(b, 10, 0.0, 4)  # theta = 0, so gamma = 1/(9L)
    assert p.c == pytest.approx(1.8 * b.L, rel=1e-14)


def test_asaga_params_theta_cap():
    b = bounds_from(1.0, 100.0)
    p = asaga_params(b, 2, 1e6, 9)
    assert p.theta == pytest.approx(1 / 3)  # capped at 1/sqrt(D)


def test_asaga_params_variants_differ():
    b = bounds_from(50.0, 2.0)
    pa = asaga_params(b, 10, 0.3, 4, theta_rule="default")
    pb = asaga_params(b, 10, 0.3, 4, theta_rule="conservative")
    assert pa.theta > pb.theta  # 2/(9L) denominator is the more permissive one


def test_asaga_params_validation():
    with pytest.raises(ValueError):
        asaga_params(bounds_from(0.0, 1.0), 5, 0.1, 2)
    with pytest.raises(ValueError):
        asaga_params(ProblemBounds(1, 1, 1.0, 0, 0.0), 5, 0.1, 2)  # mu = 0


def test_inequalities_hold_at_recommended_parameters(rng):
    for _ in range(200):
        mu = float(rng.uniform(0.01, 5.0))
        L = mu * float(rng.uniform(1.0, 1e3))
        n = int(rng.integers(1, 200))
        D = int(rng.integers(1, 30))
        w_dist = float(rng.uniform(0, 20))
        b = bounds_from(L, mu)
        for rule in ("default", "conservative"):
            rep = verify_asaga_inequalities(asaga_params(b, n, w_dist, D, rule), b, n, D, w_dist)
            assert rep.all_satisfied, (mu, L, n, D, w_dist, rule, rep.lhs)


def test_inequality_alpha_two_detected():
    b = bounds_from(50.0, 2.0)
    n, D, w_dist = 20, 5, 0.5
    theta = asaga_params(b, n, w_dist, D).theta
    alpha = 2.0
    gamma = 1 / ((1 + alpha) * (1 + theta * math.sqrt(D)) * b.L)
    bad = AsagaParams(gamma=gamma, c=2 / (n * gamma), alpha=alpha,
                      inv_tau=min(1 / (2 * n), gamma * b.mu / 2), theta=theta)
    rep = verify_asaga_inequalities(bad, b, n, D, w_dist)
    assert not rep.satisfied[1]
    assert not rep.all_satisfied


def test_inequalities_hold_for_error_free_parameterization(rng):
    # classical step size 1/(2(mu n + L)) with theta = 0
    for _ in range(200):
        mu = float(rng.uniform(0.01, 5.0))
        L = mu * float(rng.uniform(1.0, 1e3))
        n = int(rng.integers(1, 200))
        gamma = 1 / (2 * (mu * n + L))
        params = AsagaParams(
            gamma=gamma,
            c=1 / (2 * gamma * (1 - gamma * mu) * n),
            alpha=(2 * mu * n + L) / L,
            inv_tau=gamma * mu,
            theta=0.0,
        )
        rep = verify_asaga_inequalities(params, bounds_from(L, mu), n, int(rng.integers(1, 20)),
                                        float(rng.uniform(0, 10)))
        assert rep.all_satisfied, (mu, L, n, rep.lhs)


# --- beta schedule ------------------------------------------------------------------


def test_beta_schedule_single_bump():
    cfg = BetaSchedule(beta0=1e-7, increment=1e-8, period=10)
    assert beta_schedule_step(1e-7, 10, cfg) == pytest.approx(1.1e-7, rel=1e-14)
    assert beta_schedule_step(1e-7, 9, cfg) == 1e-7


def test_beta_schedule_accumulates_to_final_value():
    cfg = BetaSchedule(beta0=1e-7, increment=1e-8, period=10)
    beta = cfg.beta0
    for t in range(1, 1001):
        beta = beta_schedule_step(beta, t, cfg)
    assert beta == pytest.approx(1.1e-6, rel=1e-12)


def test_beta_schedule_constant():
    cfg = BetaSchedule(beta0=0.5, increment=0.0, period=3)
    beta = cfg.beta0
    for t in range(1, 100):
        beta = beta_schedule_step(beta, t, cfg)
    assert beta == 0.5
    with pytest.raises(ValueError):
        BetaSchedule(beta0=0.0)
    with pytest.raises(ValueError):
        BetaSchedule(beta0=1.0, period=0)


# --- Lyapunov potential ----------------------------------------------------------------


def test_lyapunov_zero_at_optimum(rng):
    p = random_problem(rng, n=4, dim=3, label_count=4, lam=1.5)
    beta = 1.0
    w_star = reference_smooth_minimizer(p, beta)
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)
    state = saga_init(grad_fn, w_star, 4)
    assert abs(lyapunov(state, p, beta, w_star, 0.7)) <= 1e-10


def test_lyapunov_quadratic_term_only(rng):
    p = random_problem(rng, n=4, dim=3, label_count=4, lam=1.5)
    beta = 1.0
    w_star = reference_smooth_minimizer(p, beta)
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)
    state = saga_init(grad_fn, w_star, 4)
    state.w = w_star + np.array([0.3, -0.2, 0.1])
    d2 = float((state.w - w_star) @ (state.w - w_star))
    assert lyapunov(state, p, beta, w_star, 0.7) == pytest.approx(0.7 * d2, rel=1e-10)


def test_lyapunov_matches_straight_line_evaluation(rng):
    p = random_problem(rng, n=5, dim=2, label_count=3, lam=1.0)
    beta = 1.0
    w_star = reference_smooth_minimizer(p, beta)
    grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)
    state = saga_init(grad_fn, np.ones(2), 5)
    r = rng_stream(8)
    for _ in range(7):
        saga_step(state, grad_fn, 0.02, UNCONSTRAINED, r)
    c = 0.9
    total = 0.0
    for i in range(5):
        phi = state.anchors[i]
        total += (
            eval_f_beta_summand(p, i, phi, beta)
            - eval_f_beta_summand(p, i, w_star, beta)
            - float(grad_f_beta_summand(p, i, w_star, beta) @ (phi - w_star))
        )
    expected = total / 5 + c * float((state.w - w_star) @ (state.w - w_star))
    assert lyapunov(state, p, beta, w_star, c) == pytest.approx(expected, rel=1e-12)


# --- A-SAGA contraction on a small instance -----------------------------------------------


def test_asaga_lyapunov_contraction_small_instance():
    # every visited state of a 50-step error-injected run contracts in
    # conditional expectation (exhaustive j, Monte Carlo over fresh noise)
    p = piecewise_instance(scale=2.0, seed=31, dim=3, n=6, label_count=5, lam=2.0)
    beta = 1.0
    w_star = reference_smooth_minimizer(p, beta)
    bounds = compute_bounds(p, 2.0, beta)
    n, D = p.n, p.dim
    exact_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, beta)

    def bregman(i, point):
        return (
            eval_f_beta_summand(p, i, point, beta)
            - eval_f_beta_summand(p, i, w_star, beta)
            - float(grad_f_beta_summand(p, i, w_star, beta) @ (point - w_star))
        )

    r0 = rng_stream(32)
    direction = r0.normal(size=D)
    w0 = w_star + 0.8 * direction / np.linalg.norm(direction)
    idx_rng = rng_stream(33, 0)
    noise_rng = rng_stream(33, 1)
    params0 = asaga_params(bounds, n, float(np.linalg.norm(w0 - w_star)), D)
    cfg0 = NoisyGradientConfig(theta=params0.theta)
    state = saga_init(lambda i, wv: noisy_grad_summand(exact_fn(i, wv), cfg0, noise_rng), w0, n)

    probe_rng = rng_stream(34)
    draws = 100
    for _ in range(50):
        dist = float(np.linalg.norm(state.w - w_star))
        params = asaga_params(bounds, n, dist, D)
        T_now = lyapunov(state, p, beta, w_star, params.c)
        breg_phi = np.array([bregman(i, state.anchors[i]) for i in range(n)])
        breg_w = np.array([bregman(i, state.w) for i in range(n)])
        fresh = np.stack([exact_fn(j, state.w) for j in range(n)])
        bound = params.theta / 3.0
        samples = np.empty(draws)
        for d in range(draws):
            acc = 0.0
            for j in range(n):
                noise = probe_rng.uniform(-bound, bound, size=D) if params.theta > 0 else 0.0
                w_next = state.w - params.gamma * (fresh[j] + noise - state.cache[j] + state.cache_avg)
                diff = w_next - w_star
                acc += breg_phi.mean() + (breg_w[j] - breg_phi[j]) / n + params.c * float(diff @ diff)
            samples[d] = acc / n
        se = samples.std(ddof=1) / math.sqrt(draws)
        assert samples.mean() <= (1 - params.inv_tau) * T_now + 3 * se

        cfg = NoisyGradientConfig(theta=params.theta)
        saga_step(state, lambda i, wv: noisy_grad_summand(exact_fn(i, wv), cfg, noise_rng),
                  params.gamma, UNCONSTRAINED, idx_rng)


# --- A-SubSGDP envelope, small version --------------------------------------------------


def test_asubsgdp_envelope_small():
    import scipy.optimize as sopt

    p = piecewise_instance(scale=2.0, seed=41, dim=3, n=8, label_count=6, lam=2.0)
    n, D = p.n, p.dim
    offs = p.b - np.einsum("iyd,id->iy", p.a, p.b_prime)
    cons = [
        {
            "type": "ineq",
            "fun": lambda z, ai=p.a[i, y], oi=offs[i, y], i=i: z[D + i] - (ai @ z[:D] + oi),
            "jac": lambda z, ai=p.a[i, y], i=i: np.concatenate([-ai, np.eye(n)[i]]),
        }
        for i in range(n)
        for y in range(p.label_count)
    ]
    z0 = np.zeros(D + n)
    from softminmax.objective import piece_values

    z0[D:] = piece_values(p, np.zeros(D)).max(axis=1)
    res = sopt.minimize(
        lambda z: 0.5 * p.lam * z[:D] @ z[:D] + z[D:].mean(),
        z0,
        jac=lambda z: np.concatenate([p.lam * z[:D], np.full(n, 1.0 / n)]),
        constraints=cons,
        method="SLSQP",
        options={"maxiter": 300, "ftol": 1e-14},
    )
    assert res.success
    w_star = res.x[:D]

    radius = 2.0
    bounds = compute_bounds(p, radius, 1.0)
    proj = Projection("ball", center=np.zeros(D), radius=radius)
    w0 = np.full(D, 0.7)
    eta = 2
    sched = StepSchedule("strong-convex", eta=eta, mu=bounds.mu)
    cfg = ArgmaxOracleConfig("decay", eta=eta)
    T, seeds = 300, 30
    sq = np.zeros(T + 1)
    for s in range(seeds):
        state = AveragedState.start(w0, eta)
        r = rng_stream(s, 0)
        for _ in range(T):
            subsgdp_step(p, state, sched, cfg, proj, r)
            d = state.w - w_star
            sq[state.t] += float(d @ d)
    sq /= seeds
    ts = np.arange(1, T + 1)
    envelope = 4 * eta**2 * bounds.M / (bounds.mu**2 * (ts + eta))
    assert (sq[1:] <= envelope).all()


# --- determinism across optimizers -----------------------------------------------------


def test_identical_seeds_identical_trajectories(rng):
    p = random_problem(rng, n=5, dim=3, label_count=4, lam=1.0)

    def run_all(seed):
        out = []
        sched = StepSchedule("decay", gamma0=0.01)
        w = np.ones(3)
        r = rng_stream(seed)
        for t in range(20):
            w = sgd_step(p, w, t, sched, UNCONSTRAINED, r, beta=1.0)
        out.append(w)
        state = AveragedState.start(np.ones(3), 3)
        r = rng_stream(seed)
        for _ in range(20):
            subsgdp_step(p, state, StepSchedule("strong-convex", eta=3, mu=1.0),
                         ArgmaxOracleConfig("decay", eta=3), UNCONSTRAINED, r)
        out.append(state.w_bar)
        grad_fn = lambda i, wv: grad_f_beta_summand(p, i, wv, 1.0)
        st = saga_init(grad_fn, np.ones(3), 5)
        r = rng_stream(seed)
        for _ in range(20):
            saga_step(st, grad_fn, 0.01, UNCONSTRAINED, r)
        out.append(st.w)
        return out

    for a, b in zip(run_all(9), run_all(9)):
        assert np.array_equal(a, b)
