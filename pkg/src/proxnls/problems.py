"""Benchmark problem families: group-lasso denoising, a nonlinear support
vector machine, and parameter estimation in the FitzHugh-Nagumo neuron model.

Instance construction is pure given a seed; instances are immutable after
construction.  Problems are returned as (NLSProblem, Regularizer, instance)
triples ready for the solvers.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .core import DivergenceError, NLSProblem, Regularizer

__all__ = [
    "GroupLassoInstance",
    "SVMInstance",
    "FHInstance",
    "make_group_lasso",
    "make_svm",
    "synthetic_svm_data",
    "svm_accuracy",
    "fh_forward",
    "fh_forward_sensitivity",
    "make_fh",
    "read_idx",
    "load_mnist_idx",
    "find_mnist_files",
    "save_instance",
    "load_instance",
]


# --------------------------------------------------------------------------
# group LASSO
# --------------------------------------------------------------------------

@dataclass
class GroupLassoInstance:
    A: np.ndarray
    b: np.ndarray
    x_true: np.ndarray
    groups: list
    noise_std: float
    seed: int


def make_group_lasso(seed, m=448, n=512, g_total=16, g_active=5, lam=1e-2,
                     noise_std=0.01):
    """Noisy linear observations of a group-sparse signal.

    A has orthonormal rows (QR of a seeded Gaussian matrix), the true signal
    holds g_active groups set to a constant +-1 and zeros elsewhere, and
    b = A x_true + noise.  F(x) = A x - b, so the Jacobian is the constant A.
    """
    if n % g_total != 0:
        raise ValueError("signal length must be divisible by the group count")
    if m > n:
        raise ValueError("row-orthonormal A requires m <= n")
    if not 0 <= g_active <= g_total:
        raise ValueError("invalid number of active groups")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    A = Q.T.copy()
    size = n // g_total
    groups = [np.arange(i * size, (i + 1) * size) for i in range(g_total)]
    active = np.sort(rng.choice(g_total, size=g_active, replace=False))
    x_true = np.zeros(n)
    for i in active:
        x_true[groups[i]] = rng.choice([-1.0, 1.0])
    b = A @ x_true + noise_std * rng.standard_normal(m)

    problem = NLSProblem(
        n, m,
        eval_F=lambda x: A @ x - b,
        jprod=lambda x, v: A @ v,
        jtprod=lambda x, w: A.T @ w,
        name="group_lasso",
    )
    reg = Regularizer("group_lasso", lam, groups=groups)
    inst = GroupLassoInstance(A=A, b=b, x_true=x_true, groups=groups,
                              noise_std=noise_std, seed=seed)
    return problem, reg, inst


# --------------------------------------------------------------------------
# nonlinear SVM
# --------------------------------------------------------------------------

@dataclass
class SVMInstance:
    A: np.ndarray
    b: np.ndarray
    A_test: np.ndarray | None
    b_test: np.ndarray | None
    seed: int | None = None


def _sech2(u):
    # 4 e^{-2|u|} / (1 + e^{-2|u|})^2, stable for large |u|
    e = np.exp(-2.0 * np.abs(u))
    return 4.0 * e / (1.0 + e) ** 2


def make_svm(features, labels, lam=0.1, test_features=None, test_labels=None,
             seed=None):
    """Nonlinear SVM residual F(x) = 1 - tanh(b * (A x)) with sparsity prior.

    Labels must be exactly +-1.  The regularizer is the ell-1/2 pseudonorm.
    """
    A = np.asarray(features, dtype=float)
    b = np.asarray(labels, dtype=float)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise ValueError("features must be (m, n) with one label per row")
    if not np.all(np.isin(b, (-1.0, 1.0))):
        raise ValueError("labels must be +-1")
    m, n = A.shape

    cache = {"key": None}

    def _at(x):
        key = x.tobytes()
        if cache["key"] != key:
            u = b * (A @ x)
            cache.update(key=key, u=u, s2=_sech2(u))
        return cache["u"], cache["s2"]

    def eval_F(x):
        u, _ = _at(np.asarray(x, dtype=float))
        return 1.0 - np.tanh(u)

    def jprod(x, v):
        _, s2 = _at(np.asarray(x, dtype=float))
        return -(b * s2) * (A @ v)

    def jtprod(x, w):
        _, s2 = _at(np.asarray(x, dtype=float))
        return -(A.T @ (b * s2 * w))

    problem = NLSProblem(n, m, eval_F, jprod, jtprod, name="svm")
    reg = Regularizer("lhalf", lam)
    inst = SVMInstance(A=A, b=b, A_test=None, b_test=None, seed=seed)
    if test_features is not None:
        inst.A_test = np.asarray(test_features, dtype=float)
        inst.b_test = np.asarray(test_labels, dtype=float)
    return problem, reg, inst


def synthetic_svm_data(seed, n_features=50, n_informative=10, n_train=400,
                       n_test=100, bright=1.0, dim=0.2, base=0.5, spread=0.35):
    """Two-class image-like data: nonnegative features, two informative blocks.

    Class +1 is bright on the first half of the informative block and dim on
    the second half; class -1 is flipped.  All remaining features share a
    common baseline, so the all-ones weight vector classifies everything
    as +1 (roughly half the data is misclassified at the usual start).
    """
    rng = np.random.default_rng(seed)
    total = n_train + n_test
    labels = np.where(np.arange(total) % 2 == 0, 1.0, -1.0)
    labels = labels[rng.permutation(total)]
    half = n_informative // 2
    means = np.full((total, n_features), base)
    pos = labels > 0
    means[pos, :half] = bright
    means[pos, half:n_informative] = dim
    means[~pos, :half] = dim
    means[~pos, half:n_informative] = bright
    A = np.clip(means + spread * rng.standard_normal((total, n_features)), 0.0, None)
    return (A[:n_train], labels[:n_train], A[n_train:], labels[n_train:])


def svm_accuracy(features, labels, x):
    """Classification accuracy, in percent, of sign(A x) against labels."""
    pred = np.where(np.asarray(features) @ np.asarray(x) >= 0.0, 1.0, -1.0)
    return 100.0 * float(np.mean(pred == np.asarray(labels)))


# --------------------------------------------------------------------------
# FitzHugh-Nagumo
# --------------------------------------------------------------------------

@dataclass
class FHInstance:
    x_true: np.ndarray
    t_grid: np.ndarray
    ic: tuple
    v_data: np.ndarray
    w_data: np.ndarray
    substeps: int


_FH_IC = (2.0, 0.0)
_STATE_BOUND = 1e8


def _fh_check_params(p):
    if abs(p[1]) < 1e-8:
        raise DivergenceError("time-scale parameter is too close to zero")


def fh_forward(params, t_grid, ic=_FH_IC, substeps=20):
    """Fixed-step RK4 trajectory of the neuron model sampled on t_grid.

    dV/dt = (V - V^3/3 - W + x1)/x2,  dW/dt = x2*(x3 V - x4 W + x5).
    Raises DivergenceError when the state blows up or x2 is nearly zero.
    """
    p = tuple(float(c) for c in params)
    _fh_check_params(p)
    x1, x2, x3, x4, x5 = p
    V, W = float(ic[0]), float(ic[1])
    npts = len(t_grid)
    v = np.empty(npts)
    w = np.empty(npts)
    v[0], w[0] = V, W
    for i in range(npts - 1):
        dt = (t_grid[i + 1] - t_grid[i]) / substeps
        for _ in range(substeps):
            k1v = (V - V * V * V / 3.0 - W + x1) / x2
            k1w = x2 * (x3 * V - x4 * W + x5)
            V2, W2 = V + 0.5 * dt * k1v, W + 0.5 * dt * k1w
            k2v = (V2 - V2 * V2 * V2 / 3.0 - W2 + x1) / x2
            k2w = x2 * (x3 * V2 - x4 * W2 + x5)
            V3, W3 = V + 0.5 * dt * k2v, W + 0.5 * dt * k2w
            k3v = (V3 - V3 * V3 * V3 / 3.0 - W3 + x1) / x2
            k3w = x2 * (x3 * V3 - x4 * W3 + x5)
            V4, W4 = V + dt * k3v, W + dt * k3w
            k4v = (V4 - V4 * V4 * V4 / 3.0 - W4 + x1) / x2
            k4w = x2 * (x3 * V4 - x4 * W4 + x5)
            V += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            W += dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
            if not (abs(V) < _STATE_BOUND and abs(W) < _STATE_BOUND):
                raise DivergenceError(f"trajectory diverged near t={t_grid[i]:.4g}")
        v[i + 1], w[i + 1] = V, W
    return v, w


def _fh_aug_rhs(V, W, SV, SW, p):
    x1, x2, x3, x4, x5 = p
    fV = (V - V * V * V / 3.0 - W + x1) / x2
    fW = x2 * (x3 * V - x4 * W + x5)
    gV = ((1.0 - V * V) / x2) * SV + (-1.0 / x2) * SW
    gV[0] += 1.0 / x2
    gV[1] -= fV / x2
    gW = (x2 * x3) * SV + (-x2 * x4) * SW
    gW[1] += x3 * V - x4 * W + x5
    gW[2] += x2 * V
    gW[3] -= x2 * W
    gW[4] += x2
    return fV, fW, gV, gW


def fh_forward_sensitivity(params, t_grid, ic=_FH_IC, substeps=20):
    """Trajectory plus the forward sensitivities d(V, W)/d(params).

    Integrates the augmented system with the same RK4 scheme, so the returned
    Jacobian is the exact derivative of the discretized forward map.  Rows
    stack all V samples, then all W samples (matching the residual layout).
    """
    p = tuple(float(c) for c in params)
    _fh_check_params(p)
    V, W = float(ic[0]), float(ic[1])
    SV = np.zeros(5)
    SW = np.zeros(5)
    npts = len(t_grid)
    v = np.empty(npts)
    w = np.empty(npts)
    JV = np.zeros((npts, 5))
    JW = np.zeros((npts, 5))
    v[0], w[0] = V, W
    for i in range(npts - 1):
        dt = (t_grid[i + 1] - t_grid[i]) / substeps
        for _ in range(substeps):
            k1v, k1w, K1V, K1W = _fh_aug_rhs(V, W, SV, SW, p)
            k2v, k2w, K2V, K2W = _fh_aug_rhs(
                V + 0.5 * dt * k1v, W + 0.5 * dt * k1w,
                SV + 0.5 * dt * K1V, SW + 0.5 * dt * K1W, p)
            k3v, k3w, K3V, K3W = _fh_aug_rhs(
                V + 0.5 * dt * k2v, W + 0.5 * dt * k2w,
                SV + 0.5 * dt * K2V, SW + 0.5 * dt * K2W, p)
            k4v, k4w, K4V, K4W = _fh_aug_rhs(
                V + dt * k3v, W + dt * k3w,
                SV + dt * K3V, SW + dt * K3W, p)
            V += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            W += dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
            SV = SV + dt / 6.0 * (K1V + 2.0 * K2V + 2.0 * K3V + K4V)
            SW = SW + dt / 6.0 * (K1W + 2.0 * K2W + 2.0 * K3W + K4W)
            if not (abs(V) < _STATE_BOUND and abs(W) < _STATE_BOUND):
                raise DivergenceError(f"trajectory diverged near t={t_grid[i]:.4g}")
        v[i + 1], w[i + 1] = V, W
        JV[i + 1] = SV
        JW[i + 1] = SW
    return v, w, np.vstack([JV, JW])


def make_fh(n=100, substeps=20, lam=10.0, t_final=20.0):
    """Parameter-estimation problem for the neuron model.

    Data is generated at the true parameters (0, 0.2, 1, 0, 0) with the same
    integrator and grid, so the residual vanishes identically there.  The
    Jacobian comes from forward sensitivities; both trajectory and Jacobian
    are cached per evaluation point.
    """
    t_grid = np.linspace(0.0, t_final, n + 1)
    x_true = np.array([0.0, 0.2, 1.0, 0.0, 0.0])
    v_data, w_data = fh_forward(x_true, t_grid, substeps=substeps)
    data = np.concatenate([v_data, w_data])
    m = 2 * (n + 1)

    cache = {"fx": None, "vw": None, "jx": None, "J": None}

    def _traj(x):
        if cache["fx"] is not None and np.array_equal(cache["fx"], x):
            return cache["vw"]
        if cache["jx"] is not None and np.array_equal(cache["jx"], x):
            return cache["jvw"]
        v, w = fh_forward(x, t_grid, substeps=substeps)
        cache["fx"] = x.copy()
        cache["vw"] = (v, w)
        return v, w

    def _jac(x):
        if cache["jx"] is not None and np.array_equal(cache["jx"], x):
            return cache["J"]
        v, w, J = fh_forward_sensitivity(x, t_grid, substeps=substeps)
        cache["jx"] = x.copy()
        cache["J"] = J
        cache["jvw"] = (v, w)
        return J

    def eval_F(x):
        v, w = _traj(np.asarray(x, dtype=float))
        return np.concatenate([v, w]) - data

    def jprod(x, v):
        return _jac(np.asarray(x, dtype=float)) @ v

    def jtprod(x, w):
        return _jac(np.asarray(x, dtype=float)).T @ w

    problem = NLSProblem(5, m, eval_F, jprod, jtprod, name="fh")
    reg = Regularizer("l1", lam)
    inst = FHInstance(x_true=x_true, t_grid=t_grid, ic=_FH_IC,
                      v_data=v_data, w_data=w_data, substeps=substeps)
    return problem, reg, inst


# --------------------------------------------------------------------------
# MNIST IDX ingestion (optional)
# --------------------------------------------------------------------------

_IDX_DTYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path):
    """Parse one big-endian IDX file into an ndarray (gzip transparently)."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header at offset 0")
    if raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: bad magic number at offset 0: {raw[:4].hex()}")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unsupported type code 0x{code:02x} at offset 2")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated dimensions at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _IDX_DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise ValueError(
            f"{path}: truncated data at offset {len(raw)} "
            f"(expected {expected} bytes after the header, got {len(raw) - header_end})")
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def load_mnist_idx(images_path, labels_path, digits=(1, 7)):
    """Load one (images, labels) IDX pair, filter to two digits, map to +-1.

    Pixels are scaled to [0, 1] and flattened; the first digit maps to +1 and
    the second to -1.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: expected a rank-3 image file")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ValueError("image and label counts differ")
    keep = np.isin(labels, digits)
    images = images[keep].reshape(int(np.sum(keep)), -1).astype(float) / 255.0
    mapped = np.where(labels[keep] == digits[0], 1.0, -1.0)
    return images, mapped


_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist_files(directory, split="train"):
    """Locate the standard IDX pair (plain or gzipped) under a directory."""
    from pathlib import Path

    base = Path(directory)
    images, labels = _MNIST_NAMES[split]
    out = []
    for name in (images, labels):
        for cand in (base / name, base / (name + ".gz")):
            if cand.exists():
                out.append(cand)
                break
        else:
            raise FileNotFoundError(f"{name}[.gz] not found under {directory}")
    return tuple(out)


# --------------------------------------------------------------------------
# instance serialization
# --------------------------------------------------------------------------

_INSTANCE_KINDS = {
    "GroupLassoInstance": GroupLassoInstance,
    "SVMInstance": SVMInstance,
    "FHInstance": FHInstance,
}


def save_instance(path, instance):
    """Write an instance to a self-describing npz container."""
    kind = type(instance).__name__
    if kind not in _INSTANCE_KINDS:
        raise TypeError(f"cannot serialize {kind}")
    payload = {}
    meta = {"kind": kind}
    for key, val in asdict(instance).items():
        if isinstance(val, np.ndarray):
            payload[key] = val
        elif isinstance(val, list):  # group partition
            payload[key] = np.concatenate(val)
            meta[key + "_sizes"] = [len(g) for g in val]
        else:
            meta[key] = val if not isinstance(val, tuple) else list(val)
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **payload)


def load_instance(path):
    """Read an instance written by save_instance."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        kind = _INSTANCE_KINDS[meta.pop("kind")]
        kwargs = {}
        sizes = {k[:-len("_sizes")]: v for k, v in meta.items() if k.endswith("_sizes")}
        for k in sizes:
            meta.pop(k + "_sizes")
        for key in data.files:
            if key == "__meta__":
                continue
            if key in sizes:
                offsets = np.cumsum([0] + sizes[key])
                kwargs[key] = [data[key][offsets[i]:offsets[i + 1]]
                               for i in range(len(sizes[key]))]
            else:
                kwargs[key] = data[key]
        for key, val in meta.items():
            kwargs[key] = tuple(val) if isinstance(val, list) else val
    return kind(**kwargs)
