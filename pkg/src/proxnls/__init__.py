"""Solvers for nonsmooth regularized nonlinear least squares.

Minimize 0.5*||F(x)||^2 + h(x) with nonsmooth, possibly nonconvex h, by
Levenberg-Marquardt methods whose subproblems are handled with proximal
iterations.  Ships shifted proximal operators, three benchmark problem
families and a benchmark harness with a CLI (``proxnls``).
"""

from .core import (
    DivergenceError,
    GaussNewtonModel,
    NLSProblem,
    ProxFailureError,
    Regularizer,
    SolverOptions,
    SolverStats,
    TrustRegion,
    adjoint_error,
    first_prox_step,
    jacobian_fd_error,
    model_objective,
    objective,
    spectral_norm,
)
from .prox import (
    ShiftContext,
    TRProxQuery,
    prox_l1_box,
    prox_l2,
    prox_lhalf_box,
    soft_threshold,
    tr_prox_group_lasso,
    tr_prox_l2,
)
from .solvers import (
    InnerResult,
    lm_solve,
    lmtr_solve,
    r2_minimize,
    r2_solve,
    update_radius,
    update_sigma,
)
from .problems import (
    FHInstance,
    GroupLassoInstance,
    SVMInstance,
    fh_forward,
    fh_forward_sensitivity,
    load_instance,
    load_mnist_idx,
    make_fh,
    make_group_lasso,
    make_svm,
    read_idx,
    save_instance,
    svm_accuracy,
    synthetic_svm_data,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
