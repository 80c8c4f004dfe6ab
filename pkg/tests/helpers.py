"""Shared test oracles: brute-force grid minimizers and objective builders.

The grid minimizer is deliberately independent of the library code: it only
evaluates objective functions on meshes, refining around the incumbent while
never leaving the original box.
"""

import numpy as np

from proxnls.core import NLSProblem


def grid_minimize(obj, lo, hi, rounds=3, points=201):
    """Brute-force minimizer of a vectorized objective over a box.

    obj maps an (N, d) array of candidates to N values.  Each round zooms
    into a neighborhood of the incumbent (clipped to the original box), so
    the final resolution is roughly (hi-lo)/points**rounds per axis.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
    hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
    lo0, hi0 = lo.copy(), hi.copy()
    d = lo.size
    best_x, best_v = None, np.inf
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], points) for i in range(d)]
        if d == 1:
            mesh = axes[0][:, None]
        else:
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        vals = obj(mesh)
        i = int(np.argmin(vals))
        if vals[i] < best_v:
            best_v, best_x = float(vals[i]), mesh[i].copy()
        span = (hi - lo) / (points - 1)
        lo = np.maximum(lo0, best_x - 2.0 * span)
        hi = np.minimum(hi0, best_x + 2.0 * span)
    return best_x, best_v


def grid_minimize_1d(obj, lo, hi, rounds=3, points=2001):
    x, v = grid_minimize(lambda V: obj(V[:, 0]), [lo], [hi],
                         rounds=rounds, points=points)
    return float(x[0]), v


def prox_objective(qbar, nu, hfun):
    """0.5/nu*||v - qbar||^2 + h(v) over rows of a candidate array."""
    qbar = np.atleast_1d(qbar)

    def obj(V):
        return 0.5 / nu * np.sum((V - qbar) ** 2, axis=1) + hfun(V)

    return obj


def h_l2(lam):
    return lambda V: lam * np.linalg.norm(V, axis=1)


def h_l1(lam):
    return lambda V: lam * np.sum(np.abs(V), axis=1)


def h_lhalf(lam):
    return lambda V: lam * np.sum(np.sqrt(np.abs(V)), axis=1)


def dense_problem(A, b=None):
    """NLSProblem for F(x) = A x - b with explicit matrices."""
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float)
    return NLSProblem(n, m,
                      eval_F=lambda x: A @ x - b,
                      jprod=lambda x, v: A @ v,
                      jtprod=lambda x, w: A.T @ w)


def exact_linear_model_min(g, sigma, lam, x):
    """Exact minimum of f + g^T s + 0.5*sigma*||s||^2 + lam*||x+s||_1 over s,
    by the coordinatewise substitution u = x + s (soft threshold)."""
    u = np.sign(x - g / sigma) * np.maximum(np.abs(x - g / sigma) - lam / sigma, 0.0)
    s = u - x
    return float(g @ s + 0.5 * sigma * s @ s + lam * np.sum(np.abs(u))), s
