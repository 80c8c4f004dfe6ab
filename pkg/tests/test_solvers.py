import numpy as np
import pytest

from proxnls import (
    GaussNewtonModel,
    Regularizer,
    SolverOptions,
    TrustRegion,
    lm_solve,
    lmtr_solve,
    r2_minimize,
    r2_solve,
    spectral_norm,
)
from proxnls.solvers import update_radius, update_sigma
from helpers import dense_problem


def make_model(A, b, x, reg, sigma=0.0):
    p = dense_problem(A, b)
    F = p.residual(x)
    return p, GaussNewtonModel(p, reg, x, F, sigma=sigma,
                               jnorm=spectral_norm(p, x, tol=1e-8))


# ------------------------------------------------------------ update ladders

def test_sigma_ladder_scripted_rho_sequence():
    opts = SolverOptions(eta1=0.1, eta2=0.75, gamma1=3.0, gamma2=10.0,
                         gamma3=0.5, sigma_min=1e-8)
    sigma = 1.0
    script = [(0.9, 0.5), (0.5, 0.5), (0.05, 1.5), (-2.0, 4.5), (0.8, 2.25),
              (0.75, 1.125), (0.1, 1.125), (0.0999, 3.375)]
    for rho, expected in script:
        sigma = update_sigma(sigma, rho, opts)
        assert sigma == pytest.approx(expected)
        # the new value lies in the interval prescribed by the update rule
        prev = expected / (opts.gamma3 if rho >= opts.eta2 else
                           1.0 if rho >= opts.eta1 else opts.gamma1)
        if rho >= opts.eta2:
            assert opts.gamma3 * prev <= sigma <= prev
        elif rho >= opts.eta1:
            assert prev <= sigma <= opts.gamma1 * prev
        else:
            assert opts.gamma1 * prev <= sigma <= opts.gamma2 * prev


def test_sigma_ladder_floor():
    opts = SolverOptions(sigma_min=0.25, gamma3=1e-3)
    assert update_sigma(1.0, 0.9, opts) == 0.25


def test_radius_ladder_scripted_rho_sequence():
    opts = SolverOptions(eta1=0.1, eta2=0.75, gamma1=2.0, gamma2=2.0,
                         gamma_shrink=0.25, delta_max=3.0)
    delta = 1.0
    script = [(0.9, 2.0), (0.9, 3.0), (0.5, 3.0), (0.01, 0.75), (-1.0, 0.1875)]
    for rho, expected in script:
        delta = update_radius(delta, rho, opts)
        assert delta == pytest.approx(expected)


# ---------------------------------------------------------------- inner loop

def test_r2_solve_already_optimal():
    reg = Regularizer("zero")
    p, model = make_model(np.eye(2), np.zeros(2), np.zeros(2), reg)
    res = r2_solve(model, reg, stop=1e-10, max_inner=50)
    assert np.all(res.step == 0.0)
    assert res.stationarity == 0.0
    assert res.iterations == 1
    assert not res.stalled


def test_r2_solve_scalar_quadratic():
    # model phi(s) = 0.5*(s+1)^2: minimizer s = -1
    reg = Regularizer("zero")
    p, model = make_model(np.eye(1), np.array([-1.0]), np.zeros(1), reg)
    res = r2_solve(model, reg, stop=1e-14, max_inner=100)
    assert res.step[0] == pytest.approx(-1.0, abs=1e-6)


def test_r2_solve_orthonormal_l1_closed_form(rng):
    # with orthogonal J the damped model separates: the exact minimizer is a
    # soft threshold of -J^T F / (1 + sigma)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    b = rng.standard_normal(5)
    lam = 0.3
    sigma = 0.2
    reg = Regularizer("l1", lam)
    x = np.zeros(5)
    p, model = make_model(Q, b, x, reg, sigma=sigma)
    res = r2_solve(model, reg, stop=1e-12, max_inner=500)
    g = Q.T @ (Q @ x - b)
    exact = np.sign(-g / (1 + sigma)) * np.maximum(
        np.abs(g / (1 + sigma)) - lam / (1 + sigma), 0.0)
    m_exact = (0.5 * np.linalg.norm(Q @ exact + (Q @ x - b)) ** 2
               + 0.5 * sigma * exact @ exact + lam * np.sum(np.abs(exact)))
    m_got = (0.5 * np.linalg.norm(Q @ res.step + (Q @ x - b)) ** 2
             + 0.5 * sigma * res.step @ res.step
             + lam * np.sum(np.abs(res.step)))
    assert m_got <= m_exact + 1e-4


def test_r2_solve_never_increases_model(rng):
    A = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    reg = Regularizer("l1", 0.5)
    x = rng.standard_normal(4)
    p, model = make_model(A, b, x, reg, sigma=0.1)
    res = r2_solve(model, reg, stop=1e-9, max_inner=7)  # tiny cap: stalls
    m0 = model.f + reg.value(x)
    s = res.step
    m_s = (0.5 * np.linalg.norm(A @ s + (A @ x - b)) ** 2
           + 0.05 * s @ s + reg.value(x + s))
    assert m_s <= m0 + 1e-10
    # simple decrease implies the sufficient-decrease bound
    assert res.decrease >= 0.5 * 0.1 * float(s @ s) - 1e-10


def test_r2_solve_stalled_flag():
    reg = Regularizer("l1", 0.1)
    p, model = make_model(np.diag([5.0, 1.0]), np.array([4.0, -2.0]),
                          np.zeros(2), reg, sigma=0.0)
    res = r2_solve(model, reg, stop=1e-16, max_inner=2)
    assert res.stalled
    res = r2_solve(model, reg, stop=1e-10, max_inner=10000)
    assert not res.stalled


def test_r2_solve_trust_region_feasible(rng):
    A = rng.standard_normal((5, 3))
    b = rng.standard_normal(5)
    reg = Regularizer("l1", 0.2)
    x = rng.standard_normal(3)
    p, model = make_model(A, b, x, reg, sigma=0.0)
    reg.trust = TrustRegion(x, 0.05)
    res = r2_solve(model, reg, stop=1e-10, max_inner=100)
    assert np.max(np.abs(res.step)) <= 0.05 + 1e-12
    reg.trust = None


# --------------------------------------------------------------- lm / lmtr

def linear_l1_setup(rng, m=8, n=5, lam=0.3):
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    return dense_problem(A, b), Regularizer("l1", lam), A, b


def test_lm_immediate_exit_at_stationary_point():
    # F(x) = x and h = 0: the origin is stationary
    p = dense_problem(np.eye(3))
    reg = Regularizer("zero")
    st = lm_solve(p, reg, np.zeros(3), SolverOptions())
    assert st.status == "first-order"
    assert st.outer_iters == 0
    assert st.neval_f == 1


def test_lm_requires_finite_h_at_start():
    p = dense_problem(np.eye(2))

    class BadReg(Regularizer):
        def value(self, x):
            return np.inf

    with pytest.raises(ValueError):
        lm_solve(p, BadReg("l1", 1.0), np.zeros(2))


def test_lm_monotone_accepted_objective(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = lm_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-6))
    assert st.status == "first-order"
    vals = [t["f"] + t["h"] for t in st.trace if t["accepted"]]
    assert all(v1 >= v2 - 1e-12 for v1, v2 in zip(vals, vals[1:]))
    # acceptance enforces (f+h) drop of at least eta1 * model decrease
    for t in st.trace:
        if t["accepted"]:
            assert t["rho"] >= SolverOptions().eta1


def test_lm_denominator_bound(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = lm_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-6))
    for t in st.trace:
        assert t["decrease"] >= 0.5 * t["sigma"] * t["step2"] ** 2 - 1e-9


def exp_residual_problem():
    # strongly nonlinear residual: Gauss-Newton steps overshoot from x0 = -3
    from proxnls.core import NLSProblem

    def F(x):
        return np.array([x[0] - 1.0, np.exp(3.0 * x[0]) - 1.0])

    def J(x):
        return np.array([[1.0], [3.0 * np.exp(3.0 * x[0])]])

    return NLSProblem(1, 2, F, lambda x, v: J(x) @ v, lambda x, w: J(x).T @ w)


def test_lm_sigma_increases_on_rejection():
    p = exp_residual_problem()
    reg = Regularizer("zero")
    st = lm_solve(p, reg, np.array([-3.0]), SolverOptions(atol=1e-5, max_outer=200))
    assert st.status == "first-order"
    rejected = [t for t in st.trace if not t["accepted"]]
    assert rejected, "expected at least one rejection"
    opts = SolverOptions()
    for i, t in enumerate(st.trace[:-1]):
        if not t["accepted"]:
            assert st.trace[i + 1]["sigma"] == pytest.approx(t["sigma"] * opts.gamma1)


def test_lm_history_per_residual_evaluation(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = lm_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-6))
    assert len(st.history) == st.neval_f
    evals = [row[0] for row in st.history]
    assert evals == sorted(evals)
    assert st.neval_grad == p.neval_jtprod
    assert st.neval_prox == reg.nprox


def test_lm_stop_threshold_honored(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = lm_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-6))
    assert st.status == "first-order"
    assert np.sqrt(st.stationarity) < st.stop_threshold


def test_lm_relative_stop_option(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st_abs = lm_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-6))
    p2 = dense_problem(A, b)
    reg2 = Regularizer("l1", 0.3)
    st_rel = lm_solve(p2, reg2, np.zeros(5),
                      SolverOptions(atol=1e-6, rtol=1e-2, relative_stop=True))
    assert st_rel.stop_threshold > st_abs.stop_threshold
    assert st_rel.neval_f <= st_abs.neval_f


def test_lmtr_feasibility_and_descent(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = lmtr_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-6))
    assert st.status == "first-order"
    for t in st.trace:
        assert t["step_inf"] <= t["radius"] + 1e-10
        assert t["radius"] <= t["delta"] + 1e-15
    vals = [t["f"] + t["h"] for t in st.trace if t["accepted"]]
    assert all(v1 >= v2 - 1e-12 for v1, v2 in zip(vals, vals[1:]))


def test_lmtr_delta_shrinks_on_rejection():
    p = exp_residual_problem()
    reg = Regularizer("zero")
    opts = SolverOptions(atol=1e-5, max_outer=200)
    st = lmtr_solve(p, reg, np.array([-3.0]), opts)
    rejected = [i for i, t in enumerate(st.trace) if not t["accepted"]]
    assert rejected
    for i in rejected:
        if i + 1 < len(st.trace):
            assert st.trace[i + 1]["delta"] == pytest.approx(
                st.trace[i]["delta"] * opts.gamma_shrink)


def test_lm_max_iter_status(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = lm_solve(p, reg, np.zeros(5), SolverOptions(atol=1e-12, max_outer=2))
    assert st.status == "max-iter"
    assert st.outer_iters == 2


def test_lm_divergence_is_rejected():
    # residual blows up away from a small neighborhood: trial points diverge
    from proxnls.core import DivergenceError, NLSProblem

    def F(x):
        if abs(x[0]) > 0.4:
            raise DivergenceError("boom")
        return np.array([x[0] - 1.0])

    p = NLSProblem(1, 1, F, lambda x, v: v, lambda x, w: w)
    reg = Regularizer("zero")
    st = lm_solve(p, reg, np.zeros(1), SolverOptions(max_outer=30))
    # the solver survives, rejecting diverged trials (rho = 0)
    assert any(not t["accepted"] and t["rho"] == 0.0 for t in st.trace)
    assert abs(st.x[0]) <= 0.4


# ------------------------------------------------------------ standalone r2

def test_r2_minimize_linear_l1(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = r2_minimize(p, reg, np.zeros(5), SolverOptions(atol=1e-6, max_outer=50000))
    assert st.status == "first-order"
    vals = [t["f"] + t["h"] for t in st.trace if t["accepted"]]
    assert all(v1 >= v2 - 1e-12 for v1, v2 in zip(vals, vals[1:]))
    # compare against LM on a fresh copy: same minimum
    p2 = dense_problem(A, b)
    reg2 = Regularizer("l1", 0.3)
    st_lm = lm_solve(p2, reg2, np.zeros(5), SolverOptions(atol=1e-6))
    assert st.objective_value == pytest.approx(st_lm.objective_value, abs=1e-5)


def test_r2_minimize_history_and_counts(rng):
    p, reg, A, b = linear_l1_setup(rng)
    st = r2_minimize(p, reg, np.zeros(5), SolverOptions(atol=1e-5, max_outer=50000))
    assert len(st.history) == st.neval_f
    assert st.neval_grad == p.neval_jtprod
    assert st.neval_grad <= st.neval_f  # gradient reused on rejections


# --------------------------------------------------------- descent lemma

def test_descent_lemma_prox_gradient(rng):
    # proximal gradient on 0.5*||Ax-b||^2 + lam*||x||_1 with nu = 0.9/L:
    # (f+h)(x+) <= (f+h)(x) - 0.5*(1/nu - L)*||x+ - x||^2 at every iteration
    A = rng.standard_normal((10, 6))
    b = rng.standard_normal(10)
    lam = 0.25
    L = np.linalg.norm(A, 2) ** 2
    nu = 0.9 / L
    reg = Regularizer("l1", lam)

    def fh(x):
        return 0.5 * np.linalg.norm(A @ x - b) ** 2 + reg.value(x)

    x = rng.standard_normal(6)
    for _ in range(60):
        g = A.T @ (A @ x - b)
        xn, _ = reg.prox(x - nu * g, nu)
        lhs = fh(xn)
        rhs = fh(x) - 0.5 * (1.0 / nu - L) * np.linalg.norm(xn - x) ** 2
        assert lhs <= rhs + 1e-10 * (1.0 + abs(rhs))
        x = xn


# -------------------------------------------------------------- stall paths

def always_diverging_problem():
    from proxnls.core import DivergenceError, NLSProblem

    def F(x):
        if np.any(x != 0.0):
            raise DivergenceError("only the start is evaluable")
        return np.array([1.0, 2.0])

    return NLSProblem(2, 2, F, lambda x, v: np.ones(2) * v.sum(),
                      lambda x, w: np.ones(2) * w.sum())


def test_lm_stalls_when_sigma_caps():
    p = always_diverging_problem()
    reg = Regularizer("zero")
    st = lm_solve(p, reg, np.zeros(2),
                  SolverOptions(max_outer=10000, sigma_cap=1e6))
    assert st.status == "stalled"
    assert np.all(st.x == 0.0)  # never moved


def test_lmtr_stalls_when_radius_collapses():
    p = always_diverging_problem()
    reg = Regularizer("zero")
    st = lmtr_solve(p, reg, np.zeros(2),
                    SolverOptions(max_outer=10000, delta_min=1e-6))
    assert st.status == "stalled"
    assert np.all(st.x == 0.0)
