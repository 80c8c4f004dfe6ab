"""Outer solvers for min 0.5*||F(x)||^2 + h(x).

``lm_solve`` damps the Gauss-Newton model with an adaptive quadratic term,
``lmtr_solve`` constrains steps to an ell-infinity trust region, and
``r2_minimize`` is the plain adaptive proximal-gradient baseline that ignores
the least-squares structure.  All three compute subproblem steps (or raw
steps) through proximal iterations; ``r2_solve`` is the shared inner loop on
a frozen Gauss-Newton model.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    DivergenceError,
    GaussNewtonModel,
    Regularizer,
    SolverOptions,
    SolverStats,
    TrustRegion,
    first_prox_step,
    spectral_norm,
)

__all__ = [
    "InnerResult",
    "r2_solve",
    "lm_solve",
    "lmtr_solve",
    "r2_minimize",
    "update_sigma",
    "update_radius",
]

log = logging.getLogger(__name__)


def update_sigma(sigma, rho, opts: SolverOptions):
    """Regularization ladder: shrink when very successful, keep when merely
    successful, grow otherwise (never below the configured floor)."""
    if rho >= opts.eta2:
        return max(opts.sigma_min, opts.gamma3 * sigma)
    if rho >= opts.eta1:
        return sigma
    return opts.gamma1 * sigma


def update_radius(delta, rho, opts: SolverOptions):
    """Trust-radius ladder: grow (capped) when very successful, keep when
    merely successful, shrink on rejection."""
    if rho >= opts.eta2:
        return min(opts.gamma2 * delta, opts.delta_max)
    if rho >= opts.eta1:
        return delta
    return opts.gamma_shrink * delta


@dataclass
class InnerResult:
    """Outcome of the inner solve on a frozen model.

    ``decrease`` is (phi+psi)(0) - (phi+psi)(step): the quadratic damping
    term is deliberately excluded, matching the outer ratio test.
    """

    step: np.ndarray
    decrease: float
    stationarity: float
    iterations: int
    nprox: int
    stalled: bool


def r2_solve(model: GaussNewtonModel, reg: Regularizer, stop, max_inner,
             warm_start=None, opts: SolverOptions | None = None):
    """Adaptive proximal-gradient iterations on the frozen model.

    Iterates s_{j+1} in prox of the shifted nonsmooth term at
    s_j - nu_j * grad, with nu_j = theta / (||J||^2 + sigma + sigma_hat_j)
    and sigma_hat adapted by a ratio test.  Terminates once the prox-step
    decrease of the local linear model falls to ``stop``, or after
    ``max_inner`` rounds (flagged stalled).  The returned step never
    increases the model.
    """
    opts = opts or SolverOptions()
    x = model.x
    sigma = model.sigma
    if warm_start is None:
        s = np.zeros(x.size)
        r = model.F.copy()
    else:
        s = np.asarray(warm_start, dtype=float).copy()
        r = model.lin_residual(s)
    phi_s = 0.5 * float(r @ r)
    psi0 = reg.value(x)
    psi_s = reg.value(x + s)
    m_s = phi_s + 0.5 * sigma * float(s @ s) + psi_s
    m0 = model.f + psi0
    assert m_s <= m0 + 1e-8 * (1.0 + abs(m0)), "warm start must not increase the model"

    base = model.jnorm ** 2 + sigma
    sig_hat = opts.sigma0
    g = None
    xi_hat = np.inf
    stalled = True
    iters = 0
    prox_before = reg.nprox
    for _ in range(max_inner):
        iters += 1
        if g is None:
            g = model.grad_lin(r)
            if sigma != 0.0:
                g = g + sigma * s
        nu = opts.theta / (base + sig_hat)
        v, psi_v = reg.prox((x + s) - nu * g, nu)
        t = v - x - s
        lin_dec = psi_s - psi_v - float(g @ t)
        xi_hat = lin_dec - 0.5 / nu * float(t @ t)
        if xi_hat <= stop:
            stalled = False
            break
        s_new = v - x
        r_new = model.lin_residual(s_new)
        phi_new = 0.5 * float(r_new @ r_new)
        m_new = phi_new + 0.5 * sigma * float(s_new @ s_new) + psi_v
        rho = (m_s - m_new) / lin_dec if lin_dec > 0 else -np.inf
        if rho >= opts.eta1 and m_new <= m_s:
            s, r, phi_s, psi_s, m_s = s_new, r_new, phi_new, psi_v, m_new
            g = None
        sig_hat = update_sigma(sig_hat, rho, opts)

    return InnerResult(
        step=s,
        decrease=(model.f + psi0) - (phi_s + psi_s),
        stationarity=max(xi_hat, 0.0),
        iterations=iters,
        nprox=reg.nprox - prox_before,
        stalled=stalled,
    )


class _Run:
    """Shared state of one outer solve: counters, history, trace."""

    def __init__(self, problem, reg):
        self.problem = problem
        self.reg = reg
        self.nf0 = problem.neval_f
        self.njt0 = problem.neval_jtprod
        self.nprox0 = reg.nprox
        self.history = []
        self.t0 = time.perf_counter()

    def eval_trial(self, x, h):
        """Residual evaluation with a history record; returns (f, F)."""
        try:
            F = self.problem.residual(x)
        except DivergenceError:
            self.history.append((self.problem.neval_f - self.nf0, float("inf"), h))
            raise
        f = 0.5 * float(F @ F)
        self.history.append((self.problem.neval_f - self.nf0, f, h))
        return f, F

    def stats(self, status, x, f, h, xi, threshold, outer, trace):
        return SolverStats(
            status=status, x=x, f=f, h=h,
            stationarity=xi, stop_threshold=threshold, outer_iters=outer,
            neval_f=self.problem.neval_f - self.nf0,
            neval_grad=self.problem.neval_jtprod - self.njt0,
            neval_prox=self.reg.nprox - self.nprox0,
            elapsed=time.perf_counter() - self.t0,
            history=self.history, trace=trace,
        )


def _inner_stop(k, xi, threshold):
    """Schedule for the inner tolerance: loose on the first iteration, then a
    fraction of the current stationarity, floored at the outer tolerance.

    The outer test compares sqrt(xi) against the threshold, so the floor here
    is the squared threshold (both sides on the xi scale)."""
    if k == 0:
        return 1e-1
    return max(threshold ** 2, min(1e-1, xi / 10.0))


def lm_solve(problem, reg: Regularizer, x0, opts: SolverOptions | None = None,
             callback=None):
    """Quadratic-regularization variant on the Gauss-Newton model.

    Stops once sqrt(xi) falls below the configured threshold where xi is the
    decrease of a single proximal-gradient step on the linearized model.
    The step quality ratio excludes the damping term from its denominator,
    and a non-finite trial value forces rho = 0 (rejection).
    """
    opts = opts or SolverOptions()
    run = _Run(problem, reg)
    reg.trust = None
    x = np.asarray(x0, dtype=float).copy()
    h = reg.value(x)
    if not np.isfinite(h):
        raise ValueError("the regularizer must be finite at the initial point")
    f, F = run.eval_trial(x, h)
    sigma = opts.sigma0
    jnorm = spectral_norm(problem, x, opts.spectral_tol, opts.spectral_max_iter)
    relative = bool(opts.relative_stop) if opts.relative_stop is not None else False
    threshold = opts.atol
    status = "max-iter"
    xi = np.inf
    outer = 0
    trace = []
    for k in range(opts.max_outer):
        nu = opts.theta / (jnorm ** 2 + sigma)
        model = GaussNewtonModel(problem, reg, x, F, sigma=sigma, jnorm=jnorm)
        s1, xi = first_prox_step(model, reg, nu)
        if k == 0 and relative:
            threshold = opts.atol + opts.rtol * np.sqrt(xi)
        if np.sqrt(xi) < threshold:
            status = "first-order"
            if callback:
                callback(k, f, h, xi, sigma, 0)
            break
        inner = r2_solve(model, reg, _inner_stop(k, xi, threshold),
                         opts.max_inner, warm_start=s1, opts=opts)
        s = inner.step
        sn2 = float(s @ s)
        # simple model decrease implies sufficient decrease
        assert inner.decrease >= 0.5 * sigma * sn2 - 1e-8 * (1.0 + abs(inner.decrease))
        h_trial = reg.value(x + s)
        diverged = False
        f_trial = np.inf
        F_trial = None
        try:
            f_trial, F_trial = run.eval_trial(x + s, h_trial)
        except DivergenceError:
            diverged = True
        denom = inner.decrease
        guard = 1e-15 * (1.0 + abs(f + h))
        if diverged or not np.isfinite(h_trial) or denom < guard:
            rho = 0.0
        else:
            rho = ((f + h) - (f_trial + h_trial)) / denom
        accepted = rho >= opts.eta1
        trace.append(dict(k=k, f=f, h=h, xi=xi, sigma=sigma,
                          inner=inner.iterations, rho=rho, accepted=accepted,
                          step2=np.sqrt(sn2),
                          step_inf=float(np.max(np.abs(s))) if s.size else 0.0,
                          decrease=denom))
        if callback:
            callback(k, f, h, xi, sigma, inner.iterations)
        if accepted:
            x = x + s
            F, f, h = F_trial, f_trial, h_trial
            jnorm = spectral_norm(problem, x, opts.spectral_tol,
                                  opts.spectral_max_iter)
        sigma = update_sigma(sigma, rho, opts)
        outer = k + 1
        if sigma > opts.sigma_cap:
            status = "stalled"
            break
    log.debug("lm: %s after %d iterations, f+h=%.6g", status, outer, f + h)
    return run.stats(status, x, f, h, xi, threshold, outer, trace)


def lmtr_solve(problem, reg: Regularizer, x0, opts: SolverOptions | None = None,
               callback=None):
    """Trust-region variant: undamped Gauss-Newton model, steps restricted to
    an ell-infinity ball whose radius adapts with the ratio test.

    The first prox step is computed inside the full radius; the inner solve
    then runs inside min(beta*|s1|_inf, radius).
    """
    opts = opts or SolverOptions()
    run = _Run(problem, reg)
    x = np.asarray(x0, dtype=float).copy()
    h = reg.value(x)
    if not np.isfinite(h):
        raise ValueError("the regularizer must be finite at the initial point")
    f, F = run.eval_trial(x, h)
    delta = opts.delta0
    jnorm = spectral_norm(problem, x, opts.spectral_tol, opts.spectral_max_iter)
    relative = bool(opts.relative_stop) if opts.relative_stop is not None else True
    threshold = opts.atol
    status = "max-iter"
    xi = np.inf
    outer = 0
    trace = []
    try:
        for k in range(opts.max_outer):
            nu = opts.theta / (jnorm ** 2 + 1.0 / (opts.alpha * delta))
            model = GaussNewtonModel(problem, reg, x, F, sigma=0.0, jnorm=jnorm)
            reg.trust = TrustRegion(x, delta)
            s1, xi = first_prox_step(model, reg, nu)
            if k == 0 and relative:
                threshold = opts.atol + opts.rtol * np.sqrt(xi)
            if np.sqrt(xi) < threshold:
                status = "first-order"
                if callback:
                    callback(k, f, h, xi, delta, 0)
                break
            radius = min(opts.beta * float(np.max(np.abs(s1))), delta)
            reg.trust = TrustRegion(x, radius)
            inner = r2_solve(model, reg, _inner_stop(k, xi, threshold),
                             opts.max_inner, warm_start=s1, opts=opts)
            s = inner.step
            step_inf = float(np.max(np.abs(s))) if s.size else 0.0
            assert step_inf <= radius + 1e-12 * (1.0 + radius), \
                "inner step violates the trust region"
            h_trial = reg.value(x + s)
            diverged = False
            f_trial = np.inf
            F_trial = None
            try:
                f_trial, F_trial = run.eval_trial(x + s, h_trial)
            except DivergenceError:
                diverged = True
            denom = inner.decrease
            guard = 1e-15 * (1.0 + abs(f + h))
            if diverged or not np.isfinite(h_trial) or denom < guard:
                rho = 0.0
            else:
                rho = ((f + h) - (f_trial + h_trial)) / denom
            accepted = rho >= opts.eta1
            trace.append(dict(k=k, f=f, h=h, xi=xi, delta=delta, radius=radius,
                              inner=inner.iterations, rho=rho, accepted=accepted,
                              step2=float(np.linalg.norm(s)), step_inf=step_inf,
                              decrease=denom))
            if callback:
                callback(k, f, h, xi, delta, inner.iterations)
            if accepted:
                x = x + s
                F, f, h = F_trial, f_trial, h_trial
                jnorm = spectral_norm(problem, x, opts.spectral_tol,
                                      opts.spectral_max_iter)
            delta = update_radius(delta, rho, opts)
            outer = k + 1
            if delta < opts.delta_min:
                status = "stalled"
                break
    finally:
        reg.trust = None
    log.debug("lmtr: %s after %d iterations, f+h=%.6g", status, outer, f + h)
    return run.stats(status, x, f, h, xi, threshold, outer, trace)


def r2_minimize(problem, reg: Regularizer, x0, opts: SolverOptions | None = None,
                callback=None):
    """Adaptive proximal-gradient method on f + h itself.

    Baseline that exploits no least-squares structure: one gradient per
    accepted point, one prox and one residual evaluation per iteration, with
    the steplength 1/sigma_hat adapted by the same ratio ladder.
    """
    opts = opts or SolverOptions()
    run = _Run(problem, reg)
    reg.trust = None
    x = np.asarray(x0, dtype=float).copy()
    h = reg.value(x)
    if not np.isfinite(h):
        raise ValueError("the regularizer must be finite at the initial point")
    f, F = run.eval_trial(x, h)
    sig_hat = opts.sigma0
    relative = bool(opts.relative_stop) if opts.relative_stop is not None else True
    threshold = opts.atol
    status = "max-iter"
    xi = np.inf
    outer = 0
    trace = []
    g = None
    for k in range(opts.max_outer):
        if g is None:
            g = problem.jtprod(x, F)
        nu = 1.0 / sig_hat
        v, h_trial = reg.prox(x - nu * g, nu)
        s = v - x
        lin_dec = h - h_trial - float(g @ s)
        xi = max(lin_dec - 0.5 / nu * float(s @ s), 0.0)
        if k == 0 and relative:
            threshold = opts.atol + opts.rtol * np.sqrt(xi)
        if np.sqrt(xi) < threshold:
            status = "first-order"
            if callback:
                callback(k, f, h, xi, sig_hat, 0)
            break
        diverged = False
        f_trial = np.inf
        F_trial = None
        try:
            f_trial, F_trial = run.eval_trial(v, h_trial)
        except DivergenceError:
            diverged = True
        rho = 0.0 if diverged or lin_dec <= 0 else ((f + h) - (f_trial + h_trial)) / lin_dec
        accepted = rho >= opts.eta1
        trace.append(dict(k=k, f=f, h=h, xi=xi, sigma=sig_hat, inner=1,
                          rho=rho, accepted=accepted,
                          step2=float(np.linalg.norm(s)),
                          step_inf=float(np.max(np.abs(s))) if s.size else 0.0,
                          decrease=lin_dec))
        if callback:
            callback(k, f, h, xi, sig_hat, 1)
        if accepted:
            x, F, f, h = v, F_trial, f_trial, h_trial
            g = None
        sig_hat = update_sigma(sig_hat, rho, opts)
        outer = k + 1
        if sig_hat > opts.sigma_cap:
            status = "stalled"
            break
    log.debug("r2: %s after %d iterations, f+h=%.6g", status, outer, f + h)
    return run.stats(status, x, f, h, xi, threshold, outer, trace)
