"""Shifted proximal operators, with optional box (ell-infinity) trust regions.

All operators solve instances of

    min_v  0.5/nu * ||v - qbar||^2 + h(v) + chi(v - center | radius * B_inf)

for various nonsmooth terms h.  Separable terms (ell-1, ell-1/2) reduce to
independent scalar problems; the ell-2 norm and the group lasso under a box
constraint reduce to a scalar root-finding problem solved by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShiftContext",
    "TRProxQuery",
    "soft_threshold",
    "prox_l1_box",
    "prox_lhalf_box",
    "prox_l2",
    "tr_prox_l2",
    "tr_prox_group_lasso",
]


@dataclass
class ShiftContext:
    """Book-keeping for a shifted prox call.

    ``shift`` is the quantity subtracted from the minimizer to recover the
    step in the inner solver's variable (typically the outer iterate plus the
    current inner iterate).  When ``shift`` is None, operators return the
    minimizer itself.  ``center``/``radius`` describe an optional box
    constraint ``|v - center|_inf <= radius``.
    """

    shift: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    @property
    def constrained(self) -> bool:
        return self.radius is not None

    def box(self):
        lo = self.center - self.radius
        hi = self.center + self.radius
        return lo, hi


@dataclass
class TRProxQuery:
    """Inputs and root-finder state of the box-constrained ell-2 prox.

    The solver fills in ``case`` (the branch of the sign analysis that was
    taken), ``resolution`` ("A" when the minimizer is the origin, "B" when it
    comes from a root of ``g``), the final root ``zeta`` and the bisection
    ``bracket`` with the values of ``g`` at its ends.
    """

    qbar: np.ndarray
    nu: float
    lam: float
    x: np.ndarray
    radius: float
    case: str | None = None
    resolution: str | None = None
    zeta: float | None = None
    bracket: tuple | None = None
    g_bracket: tuple | None = None

    def __post_init__(self):
        self.qbar = np.atleast_1d(np.asarray(self.qbar, dtype=float))
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ValueError("nu must be positive and finite")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be positive and finite")
        if not (np.isfinite(self.radius) and self.radius >= 0):
            raise ValueError("radius must be nonnegative and finite")

    def g(self, zeta):
        """Root function g(zeta) = zeta - |qbar - nu*z(zeta)|_2."""
        return _g_scalar(self.qbar, self.nu * self.lam, self.x, self.radius, zeta)

    def solution(self, zeta):
        """Feasible minimizer candidate associated with a root of g."""
        a = (zeta - self.nu * self.lam) / zeta
        return self.x + _project_box(a * self.qbar - self.x, self.radius)


def soft_threshold(y, t):
    """Proximal operator of t*|.|_1: shrink y toward zero by t."""
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def _apply_ctx(v, ctx: ShiftContext | None):
    if ctx is not None and ctx.shift is not None:
        return v - ctx.shift
    return v


def prox_l1_box(qbar, nulam, ctx: ShiftContext | None = None):
    """Shifted ell-1 prox, optionally restricted to a box.

    The ell-1 term is convex, so the constrained minimizer is the projection
    of the unconstrained soft-threshold solution onto the box.
    """
    qbar = np.asarray(qbar, dtype=float)
    v = soft_threshold(qbar, nulam)
    if ctx is not None and ctx.constrained:
        lo, hi = ctx.box()
        v = np.clip(v, lo, hi)
    return _apply_ctx(v, ctx)


def _lhalf_threshold(mu):
    # zero/nonzero switch point of min_v 0.5*(v-q)^2 + mu*sqrt(|v|)
    return (54.0 ** (1.0 / 3.0) / 4.0) * (2.0 * mu) ** (2.0 / 3.0)


def _lhalf_stationary(q, mu):
    """Largest stationary point of 0.5*(v-q)^2 + mu*sqrt(|v|) on sign(q)'s side.

    Returns NaN where no stationary point exists.  The arccos argument is
    clamped to [-1, 1] to guard against rounding near the threshold.
    """
    q = np.asarray(q, dtype=float)
    aq = np.abs(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (mu / 4.0) * (aq / 3.0) ** (-1.5)
    valid = np.isfinite(arg) & (arg <= 1.0)
    ang = np.arccos(np.clip(arg, -1.0, 1.0))
    v = (2.0 / 3.0) * aq * (1.0 + np.cos(2.0 * np.pi / 3.0 - 2.0 / 3.0 * ang))
    return np.where(valid, np.sign(q) * v, np.nan)


def _lhalf_value(v, q, mu):
    return 0.5 * (v - q) ** 2 + mu * np.sqrt(np.abs(v))


def prox_lhalf_box(qbar, nulam, ctx: ShiftContext | None = None):
    """Shifted prox of the ell-1/2 pseudonorm, optionally restricted to a box.

    Unconstrained components use the closed form: zero iff the magnitude is
    at most the threshold p(nulam), otherwise the cosine formula.  Components
    with an active box evaluate the objective at the feasible stationary
    point, at zero when feasible and at both bounds, and keep the smallest;
    ties resolve toward the candidate of least magnitude.
    """
    qbar = np.asarray(qbar, dtype=float)
    if nulam == 0.0:
        v = qbar.copy()
        if ctx is not None and ctx.constrained:
            lo, hi = ctx.box()
            v = np.clip(v, lo, hi)
        return _apply_ctx(v, ctx)

    station = _lhalf_stationary(qbar, nulam)
    if ctx is None or not ctx.constrained:
        v = np.where(np.abs(qbar) > _lhalf_threshold(nulam), station, 0.0)
        return _apply_ctx(v, ctx)

    lo, hi = ctx.box()
    lo = np.broadcast_to(np.asarray(lo, dtype=float), qbar.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), qbar.shape)
    zeros = np.zeros_like(qbar)
    cands = np.stack([zeros, station, lo, hi])
    feasible = np.stack([
        (lo <= 0.0) & (0.0 <= hi),
        np.isfinite(station) & (lo <= station) & (station <= hi),
        np.ones_like(qbar, dtype=bool),
        np.ones_like(qbar, dtype=bool),
    ])
    # candidates in order of increasing magnitude so argmin ties pick the
    # smallest-norm solution
    order = np.argsort(np.where(feasible, np.abs(cands), np.inf), axis=0, kind="stable")
    cands = np.take_along_axis(cands, order, axis=0)
    feasible = np.take_along_axis(feasible, order, axis=0)
    vals = np.where(feasible, _lhalf_value(cands, qbar, nulam), np.inf)
    pick = np.argmin(vals, axis=0)
    v = np.take_along_axis(cands, pick[None, ...], axis=0)[0]
    return _apply_ctx(v, ctx)


def prox_l2(y, nulam):
    """Prox of nulam*|.|_2: zero inside the dead zone, radial shrink outside."""
    y = np.asarray(y, dtype=float)
    ny = float(np.linalg.norm(y))
    if ny <= nulam:
        return np.zeros_like(y)
    return (1.0 - nulam / ny) * y


def _project_box(y, radius):
    return np.clip(y, -radius, radius)


def _g_scalar(qbar, nl, x, radius, zeta):
    """g(zeta) = zeta - |qbar - nu*z(zeta)|_2 for a single zeta."""
    if zeta <= nl:
        return -np.inf
    a = (zeta - nl) / zeta
    inner = x + _project_box(a * qbar - x, radius)
    nrm = float(np.linalg.norm(inner))
    if nrm == 0.0:
        return zeta
    return zeta - (zeta / (zeta - nl)) * nrm


def _g_batch(qbar, nl, x, radius, zetas):
    zetas = np.asarray(zetas, dtype=float)
    a = (zetas - nl) / zetas
    pts = a[:, None] * qbar[None, :] - x[None, :]
    inner = x[None, :] + np.clip(pts, -radius, radius)
    nrm = np.linalg.norm(inner, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = (zetas / (zetas - nl)) * nrm
    return np.where(nrm == 0.0, zetas, zetas - scaled)


def _bisect(gfun, lo, hi, max_iter=200):
    """Bisection on a bracket with g(lo) < 0 < g(hi)."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm = gfun(mid)
        if abs(gm) <= 1e-10 * (1.0 + mid) or (hi - lo) <= 1e-12:
            return mid
        if gm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _expand_upper(gfun, start, max_doublings=120):
    hi = start
    ghi = gfun(hi)
    for _ in range(max_doublings):
        if ghi > 0.0:
            return hi, ghi
        hi *= 2.0
        ghi = gfun(hi)
    raise RuntimeError("root function failed to become positive; non-finite data?")


def _shrink_lower(gfun, nl, hi, max_halvings=200):
    """Probe g on a geometric sequence approaching nl; return a negative point."""
    off = hi - nl
    for _ in range(max_halvings):
        off *= 0.5
        z = nl + off
        if z <= nl:
            break
        gz = gfun(z)
        if gz < 0.0:
            return z, gz
    return None, None


def tr_prox_l2(query: TRProxQuery):
    """Box-constrained shifted prox of lam*|.|_2 via scalar root finding.

    Classifies the query against the sign analysis of the root function g and
    either returns the origin (Case A) or bisects g on a bracket and maps the
    root back to the minimizer (Case B).  The query is annotated with the
    branch taken and the root-finder state.
    """
    qbar, nu, lam = query.qbar, query.nu, query.lam
    x, radius = query.x, query.radius
    d = qbar.size
    nl = nu * lam

    if radius == 0.0:
        # degenerate ball: the center is the only feasible point
        query.case, query.resolution = "degenerate", "B"
        return x.copy()

    def g(zeta):
        return _g_scalar(qbar, nl, x, radius, zeta)

    def case_a():
        query.resolution = "A"
        return np.zeros(d)

    def case_b(lo, hi, glo, ghi):
        query.bracket = (lo, hi)
        query.g_bracket = (glo, ghi)
        root = _bisect(g, lo, hi)
        query.zeta = root
        query.resolution = "B"
        return query.solution(root)

    btol = 1e-12 * (1.0 + radius)
    xinf = float(np.max(np.abs(x)))
    x2 = float(np.linalg.norm(x))
    q2 = float(np.linalg.norm(qbar))
    upper0 = x2 + np.sqrt(d) * radius + nl + 1.0

    if xinf > radius + btol:
        query.case = "1"
    elif xinf < radius - btol:
        query.case = "2a" if q2 > nl else "2b"
    else:
        proj = _project_box(qbar - x, radius)
        if np.all(np.abs(proj + x) <= btol):
            query.case = "3"
        else:
            active = np.abs(x) >= radius - btol
            enters = bool(np.all(qbar[active] * x[active] > 0.0))
            if enters:
                query.case = "2a" if q2 > nl else "2b"
            else:
                query.case = "4a" if q2 > nl else "4b"

    if query.case in ("2b", "3", "4b"):
        return case_a()

    if query.case in ("1", "2a"):
        if query.case == "2a":
            # the unconstrained root zeta = |qbar| is common; test it first
            gq = g(q2)
            if abs(gq) <= 1e-10 * (1.0 + q2):
                query.zeta = q2
                query.resolution = "B"
                query.bracket = (q2, q2)
                return query.solution(q2)
        hi, ghi = _expand_upper(g, upper0)
        lo, glo = _shrink_lower(g, nl, hi)
        if lo is None:
            # theory guarantees a sign change here; fall back to a scan
            root = _scan_for_root(query, g, nl, hi)
            return case_a() if root is None else case_b(root[0], root[1], root[2], root[3])
        return case_b(lo, hi, glo, ghi)

    # case 4a: a root may or may not exist in (nl, zmax]
    zmax = min(nl + x2 + np.sqrt(d) * radius, q2)
    if zmax <= nl:
        return case_a()
    found = _scan_for_root(query, g, nl, zmax)
    if found is None:
        return case_a()
    return case_b(*found)


def _scan_for_root(query, g, nl, zmax, coarse=1024):
    """Look for a sign change of g in (nl, zmax]; fine scan before giving up."""
    qbar, x, radius = query.qbar, query.x, query.radius
    for npts in (coarse, _fine_points(nl, zmax)):
        zs = nl + (zmax - nl) * np.linspace(1e-9, 1.0, npts)
        gs = _g_batch(qbar, nl, x, radius, zs)
        if not np.all(np.isfinite(gs) | np.isneginf(gs)):
            raise RuntimeError("non-finite root function during scan")
        sign_change = np.nonzero((gs[:-1] < 0.0) & (gs[1:] >= 0.0))[0]
        if sign_change.size:
            i = sign_change[0]
            return zs[i], zs[i + 1], gs[i], gs[i + 1]
        if gs[-1] < 0.0:
            hi, ghi = _expand_upper(g, zmax * 2.0)
            return zs[-1], hi, gs[-1], ghi
    return None


def _fine_points(nl, zmax, resolution_factor=1e-4, cap=5_000_000):
    res = resolution_factor * nl
    return int(min(cap, max(2, np.ceil((zmax - nl) / res))))


def tr_prox_group_lasso(qbar, nu, lam, groups, center=None, radius=None):
    """Groupwise ell-2 prox: plain shrinkage per group, or the box-constrained
    operator when a trust region is present."""
    qbar = np.asarray(qbar, dtype=float)
    v = np.empty_like(qbar)
    for idx in groups:
        if radius is None:
            v[idx] = prox_l2(qbar[idx], nu * lam)
        else:
            q = TRProxQuery(qbar[idx], nu, lam, center[idx], radius)
            v[idx] = tr_prox_l2(q)
    return v
