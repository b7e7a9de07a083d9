"""Shared numerical helpers: rank decisions, quadrature, divergence guard."""
import os

import numpy as np

#: norm threshold above which backward integrations are declared divergent
DIVERGENCE_GUARD = 1e12

#: default relative factor entering the numerical-rank tolerance
DEFAULT_RANK_TOL_FACTOR = 1e-10


class Divergence(RuntimeError):
    """A backward integration exceeded the divergence guard.

    Attributes
    ----------
    time : float or None
        Sample time at which the norm threshold was first crossed
        (largest such time, since the sweep runs backward from t_f).
    max_norm : float
        Largest finite norm reached before the guard tripped.
    """

    def __init__(self, message, time=None, max_norm=None):
        super().__init__(message)
        self.time = time
        self.max_norm = max_norm


def rank_tol_factor(override=None):
    """Relative singular-value factor for rank tests.

    The environment variable ``IOC_RANK_TOL`` overrides the default
    (1e-10); an explicit ``override`` argument wins over both.
    """
    if override is not None:
        return float(override)
    env = os.environ.get("IOC_RANK_TOL")
    if env is not None:
        return float(env)
    return DEFAULT_RANK_TOL_FACTOR


def rank_cutoff(shape, sigma_max, factor=None):
    """Singular-value cutoff max(shape) * sigma_max * factor."""
    return max(shape) * sigma_max * rank_tol_factor(factor)


def numerical_rank(a, factor=None):
    """(rank, singular values, cutoff) of a 2-d array.

    A singular value counts toward the rank when it exceeds
    ``max(a.shape) * sv.max() * factor``.
    """
    a = np.asarray(a, dtype=float)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, sv, 0.0
    cut = rank_cutoff(a.shape, sv[0], factor)
    return int(np.count_nonzero(sv > cut)), sv, cut


def simpson_weights(count, h):
    """Composite-Simpson weights for ``count`` uniform samples, spacing h.

    ``count`` must be odd (even number of panels).
    """
    if count < 3 or count % 2 == 0:
        raise ValueError("Simpson quadrature needs an odd sample count >= 3, got %d" % count)
    w = np.ones(count)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def rk4_linear_propagator(A, h):
    """One-step map of classical RK4 applied to xdot = A x with step h.

    For a linear autonomous system the four-stage update collapses to the
    degree-4 Taylor polynomial of exp(h A); iterating this matrix is
    bit-identical to running the stages.
    """
    n = A.shape[0]
    hA = h * np.asarray(A, dtype=float)
    P = np.eye(n) + hA
    T = hA
    for fac in (2.0, 3.0, 4.0):
        T = T @ hA / fac
        P = P + T
    return P


def format_float(x):
    """Render a float with 17 significant digits (lossless round-trip)."""
    return format(float(x), ".17g")
