"""Problem, regularizer and model abstractions for regularized least squares.

The residual map is matrix free: problems expose F(x) together with
Jacobian-vector and transposed-Jacobian-vector products, and every evaluator
carries its own call counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import prox as _prox

__all__ = [
    "DivergenceError",
    "ProxFailureError",
    "NLSProblem",
    "TrustRegion",
    "Regularizer",
    "GaussNewtonModel",
    "SolverOptions",
    "SolverStats",
    "objective",
    "spectral_norm",
    "first_prox_step",
    "model_objective",
    "adjoint_error",
    "jacobian_fd_error",
]


class DivergenceError(RuntimeError):
    """A residual or model evaluation produced non-finite values."""


class ProxFailureError(RuntimeError):
    """The proximal subproblem has no minimizer.

    Raised when the shifted prox of the nonsmooth model is unbounded below for
    the requested steplength; the caller should increase the quadratic
    regularization (equivalently, shrink the steplength) and retry.
    """


class NLSProblem:
    """Nonlinear least-squares problem 0.5*||F(x)||^2 with operator access.

    Parameters
    ----------
    n, m : int
        Number of variables and residuals.
    eval_F : callable
        x -> F(x), length m.
    jprod : callable
        (x, v) -> J(x) v, maps R^n to R^m.
    jtprod : callable
        (x, w) -> J(x)^T w, maps R^m to R^n.
    """

    def __init__(self, n, m, eval_F, jprod, jtprod, name=""):
        self.n = int(n)
        self.m = int(m)
        self._eval_F = eval_F
        self._jprod = jprod
        self._jtprod = jtprod
        self.name = name
        self.neval_f = 0
        self.neval_jprod = 0
        self.neval_jtprod = 0

    def residual(self, x):
        """Evaluate F(x); raises DivergenceError on non-finite entries."""
        self.neval_f += 1
        F = np.asarray(self._eval_F(x), dtype=float)
        if F.shape != (self.m,):
            raise ValueError(f"residual has shape {F.shape}, expected ({self.m},)")
        if not np.all(np.isfinite(F)):
            raise DivergenceError("residual evaluation produced non-finite entries")
        return F

    def jprod(self, x, v):
        self.neval_jprod += 1
        return np.asarray(self._jprod(x, v), dtype=float)

    def jtprod(self, x, w):
        self.neval_jtprod += 1
        return np.asarray(self._jtprod(x, w), dtype=float)


def objective(problem: NLSProblem, x):
    """Return (0.5*||F(x)||^2, F(x)); one residual evaluation."""
    F = problem.residual(x)
    return 0.5 * float(F @ F), F


def spectral_norm(problem: NLSProblem, x, tol=1e-4, max_iter=100):
    """Estimate ||J(x)|| by power iteration on J^T J.

    Deterministic: starts from the normalized all-ones vector and stops when
    the successive estimates change by less than ``tol`` relatively, or after
    ``max_iter`` rounds.  Returns 0 for a vanishing Jacobian.
    """
    v = np.ones(problem.n) / np.sqrt(problem.n)
    est = 0.0
    for _ in range(max_iter):
        u = problem.jprod(x, v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            return 0.0
        w = problem.jtprod(x, u)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return new
        if abs(new - est) <= tol * new:
            return new
        est = new
        v = w / nw
    return est


@dataclass
class TrustRegion:
    """Box constraint |v - center|_inf <= radius on the prox variable."""

    center: np.ndarray
    radius: float


class Regularizer:
    """Nonsmooth term h(x) = weight * r(x) with shifted-prox capability.

    Supported kinds: "zero", "l1" (sum |x_i|), "lhalf" (sum sqrt|x_i|),
    "l2" (||x||_2) and "group_lasso" (sum of group ell-2 norms over a
    disjoint partition).  An optional trust region restricts every prox to a
    box; prox calls are counted in ``nprox``.
    """

    KINDS = ("zero", "l1", "lhalf", "l2", "group_lasso")

    def __init__(self, kind, weight=1.0, groups=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown regularizer kind {kind!r}")
        if not (np.isfinite(weight) and weight >= 0):
            raise ValueError("weight must be nonnegative and finite")
        if kind == "group_lasso":
            if not groups:
                raise ValueError("group_lasso requires a group partition")
            groups = [np.asarray(g, dtype=int) for g in groups]
            flat = np.sort(np.concatenate(groups))
            if not np.array_equal(flat, np.arange(flat.size)):
                raise ValueError("groups must partition the index range disjointly")
        self.kind = kind
        self.weight = float(weight)
        self.groups = groups
        self.trust: TrustRegion | None = None
        self.nprox = 0

    def value(self, x):
        """h(x)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero" or self.weight == 0.0:
            return 0.0
        if self.kind == "l1":
            return self.weight * float(np.sum(np.abs(x)))
        if self.kind == "lhalf":
            return self.weight * float(np.sum(np.sqrt(np.abs(x))))
        if self.kind == "l2":
            return self.weight * float(np.linalg.norm(x))
        return self.weight * float(sum(np.linalg.norm(x[g]) for g in self.groups))

    def prox(self, qbar, nu):
        """Minimize 0.5/nu*||v - qbar||^2 + h(v) over the trust region.

        Returns (v, h(v)) so callers never re-evaluate the nonsmooth term.
        """
        self.nprox += 1
        qbar = np.asarray(qbar, dtype=float)
        tr = self.trust
        ctx = None
        if tr is not None:
            ctx = _prox.ShiftContext(center=tr.center, radius=tr.radius)

        if self.kind == "zero" or self.weight == 0.0:
            v = qbar if ctx is None else np.clip(qbar, *ctx.box())
        elif self.kind == "l1":
            v = _prox.prox_l1_box(qbar, nu * self.weight, ctx)
        elif self.kind == "lhalf":
            v = _prox.prox_lhalf_box(qbar, nu * self.weight, ctx)
        elif self.kind == "l2":
            if tr is None:
                v = _prox.prox_l2(qbar, nu * self.weight)
            else:
                query = _prox.TRProxQuery(qbar, nu, self.weight, tr.center, tr.radius)
                v = _prox.tr_prox_l2(query)
        else:
            v = _prox.tr_prox_group_lasso(
                qbar, nu, self.weight, self.groups,
                center=None if tr is None else tr.center,
                radius=None if tr is None else tr.radius)

        hv = self.value(v)
        if not np.isfinite(hv):
            raise ProxFailureError(
                "prox produced a non-finite regularizer value; "
                "increase the quadratic regularization")
        return v, hv


class GaussNewtonModel:
    """Model of 0.5*||F||^2 + h frozen at a base point x.

    objective(s) = phi(s) + 0.5*sigma*||s||^2 + psi(s), with
    phi(s) = 0.5*||J(x)s + F(x)||^2 and psi(s) = h(x + s).  ``jnorm`` is the
    solver's current estimate of ||J(x)||, used by steplength rules.
    """

    def __init__(self, problem: NLSProblem, reg: Regularizer, x, F,
                 sigma=0.0, jnorm=0.0):
        self.problem = problem
        self.reg = reg
        self.x = np.asarray(x, dtype=float).copy()
        self.F = np.asarray(F, dtype=float).copy()
        self.f = 0.5 * float(self.F @ self.F)
        self.sigma = float(sigma)
        self.jnorm = float(jnorm)
        self._g0 = None

    def lin_residual(self, s):
        """J(x) s + F(x); one Jacobian-vector product."""
        return self.problem.jprod(self.x, s) + self.F

    def phi(self, s):
        r = self.lin_residual(s)
        return 0.5 * float(r @ r)

    def psi(self, s):
        return self.reg.value(self.x + s)

    def grad_lin(self, r):
        """Gradient of phi given a precomputed linearized residual r."""
        return self.problem.jtprod(self.x, r)

    def grad_at_base(self):
        """J(x)^T F(x), cached."""
        if self._g0 is None:
            self._g0 = self.problem.jtprod(self.x, self.F)
        return self._g0


def model_objective(model: GaussNewtonModel, s):
    """Return (phi(s), psi(s)) without any fresh residual evaluation."""
    return model.phi(s), model.psi(s)


def first_prox_step(model: GaussNewtonModel, reg: Regularizer, nu):
    """One proximal-gradient step on the linearized model, and its decrease.

    Returns (s1, xi) where s1 minimizes g^T s + 0.5/nu*||s||^2 + psi(s)
    (restricted to the regularizer's trust region when present) and
    xi = (f+h)(x) - m1(s1) >= 0 vanishes exactly at first-order stationary
    points.
    """
    g = model.grad_at_base()
    v, hv = reg.prox(model.x - nu * g, nu)
    s1 = v - model.x
    hx = reg.value(model.x)
    quad = 0.5 / nu * float(s1 @ s1)
    xi = hx - hv - float(g @ s1) - quad
    if not np.isfinite(xi):
        raise ProxFailureError(
            "first prox step produced a non-finite decrease; "
            "increase the quadratic regularization")
    # optimality of the exact prox step: the linear-model decrease
    # xi + quad dominates the prox quadratic
    assert xi >= -1e-8 * (1.0 + abs(xi) + quad)
    return s1, max(xi, 0.0)


@dataclass
class SolverOptions:
    """Tolerances, acceptance thresholds and update factors shared by solvers.

    ``relative_stop`` selects between the absolute test sqrt(xi) < atol and
    the mixed test sqrt(xi) < atol + rtol*sqrt(xi_0); None keeps each
    solver's default (absolute for the quadratic-regularization variant,
    mixed for the trust-region variant and the first-order method).
    """

    atol: float = 1e-4
    rtol: float = 1e-4
    relative_stop: bool | None = None
    theta: float = 0.99
    eta1: float = 1e-3
    eta2: float = 0.75
    gamma1: float = 3.0
    gamma2: float = 10.0
    gamma3: float = 1.0 / 3.0
    gamma_shrink: float = 0.25
    beta: float = 10.0
    alpha: float = 1e8
    sigma0: float = 0.01
    sigma_min: float = 1e-8
    sigma_cap: float = 1e15
    delta0: float = 1.0
    delta_max: float = 1e10
    delta_min: float = 1e-15
    max_outer: int = 500
    max_inner: int = 100
    spectral_tol: float = 1e-4
    spectral_max_iter: int = 100

    def __post_init__(self):
        if not (0 < self.eta1 <= self.eta2 < 1):
            raise ValueError("require 0 < eta1 <= eta2 < 1")
        if not (0 < self.gamma3 <= 1 < self.gamma1 <= self.gamma2):
            raise ValueError("require 0 < gamma3 <= 1 < gamma1 <= gamma2")
        if not (0 < self.theta < 1):
            raise ValueError("require theta in (0, 1)")
        if not (0 < self.gamma_shrink < 1):
            raise ValueError("require gamma_shrink in (0, 1)")
        if self.beta < 1:
            raise ValueError("require beta >= 1")
        if self.alpha <= 0:
            raise ValueError("require alpha > 0")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.atol <= 0 or self.rtol < 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolverStats:
    """Outcome of a solve: final point, measures, counters and history.

    ``history`` holds one (residual-evaluation index, f, h) triple per
    residual evaluation; ``trace`` holds one record per outer iteration for
    diagnostics and is not serialized.
    """

    status: str
    x: np.ndarray
    f: float
    h: float
    stationarity: float
    stop_threshold: float = 0.0
    outer_iters: int = 0
    neval_f: int = 0
    neval_grad: int = 0
    neval_prox: int = 0
    elapsed: float = 0.0
    history: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def objective_value(self):
        return self.f + self.h


def adjoint_error(problem: NLSProblem, x, rng, trials=20):
    """Largest relative gap |<Jv, w> - <v, J^T w>| over random probe pairs."""
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(problem.n)
        w = rng.standard_normal(problem.m)
        a = float(problem.jprod(x, v) @ w)
        b = float(v @ problem.jtprod(x, w))
        worst = max(worst, abs(a - b) / (1.0 + abs(a)))
    return worst


def jacobian_fd_error(problem: NLSProblem, x, rng, trials=5, eps=1e-6):
    """Largest relative error of J(x)v against forward differences of F."""
    x = np.asarray(x, dtype=float)
    F0 = problem.residual(x)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(problem.n)
        v /= np.linalg.norm(v)
        fd = (problem.residual(x + eps * v) - F0) / eps
        jv = problem.jprod(x, v)
        worst = max(worst, float(np.linalg.norm(fd - jv) / (1.0 + np.linalg.norm(jv))))
    return worst
