"""Hard-constrained weight recovery via the stationarity Gram matrix.

The costate is eliminated exactly: the costate equation is integrated
backward,

    Ldot = -grad_x_phi' - grad_x_f' L,   L(tf) = 0,

so that p(t) = L(t) c, and the stationarity condition becomes W1(t) c = 0
with W1 = grad_u_phi' + grad_u_f' L.  The weights then minimize c' W c,
W = integral of W1'W1, subject to one known weight.

The backward integration realizes the state-transition-matrix form
L(t) = int_t^tf psi(t, tau) grad_x_phi'(tau) dtau without forming psi;
when the open loop has strongly unstable modes the integral itself grows
with the horizon and the norm guard reports the divergence (this is the
failure mode the case analysis in `solvability` predicts).
"""
from dataclasses import dataclass

import numpy as np

from .numerics import DIVERGENCE_GUARD, Divergence, numerical_rank, simpson_weights
from .soft_ioc import _constrained_quadratic_min


@dataclass
class HardAssembly:
    """L(t) and W1(t) samples plus the Gram matrix W.

    `diverged` flags a tripped norm guard; `first_divergence_time` is the
    largest sample time at which the backward sweep crossed it (samples at
    earlier times are left NaN).  `L_norms` tracks ||L|| per grid sample
    for growth reporting.  W is None while only L has been integrated or
    when the assembly diverged.
    """

    L: np.ndarray
    diverged: bool
    first_divergence_time: float = None
    max_norm_L: float = 0.0
    L_norms: np.ndarray = None
    W1: np.ndarray = None
    W: np.ndarray = None
    _L_dense: np.ndarray = None


def integrate_L(table, grid, guard=DIVERGENCE_GUARD):
    """Backward RK4 of the costate-elimination equation from L(tf) = 0.

    Returns a HardAssembly carrying the L samples (W is assembled
    separately).  Crossing the norm guard sets `diverged` and records the
    first blow-up time instead of raising: a divergent L is an expected,
    reportable outcome for open loops with strongly unstable modes.
    """
    if table.midpoints is None:
        raise ValueError("Jacobian table lacks midpoint samples")
    n, k = table.n, table.k
    count = grid.count
    hh = grid.h / 2.0
    # dense forcing/dynamics series: -grad_x_phi' and grad_x_f' interleaved
    gxT = np.empty((2 * count - 1, n, k))
    gxT[0::2] = np.transpose(table.grad_x_phi, (0, 2, 1))
    gxT[1::2] = np.transpose(table.midpoints.grad_x_phi, (0, 2, 1))
    fxT = np.empty((2 * count - 1, n, n))
    fxT[0::2] = np.transpose(table.grad_x_f, (0, 2, 1))
    fxT[1::2] = np.transpose(table.midpoints.grad_x_f, (0, 2, 1))

    def rhs(i, L):
        return -(gxT[i] + fxT[i] @ L)

    L = np.zeros((n, k))
    out = np.full((count, n, k), np.nan)
    dense = np.full((2 * count - 1, n, k), np.nan)
    norms = np.full(count, np.nan)
    out[-1] = L
    dense[-1] = L
    norms[-1] = 0.0
    diverged = False
    first_time = None
    max_norm = 0.0
    for s in range(count - 1, 0, -1):
        i1, im, i0 = 2 * s, 2 * s - 1, 2 * s - 2
        k1 = rhs(i1, L)
        k2 = rhs(im, L - hh * k1)
        k3 = rhs(im, L - hh * k2)
        k4 = rhs(i0, L - 2.0 * hh * k3)
        Lnew = L - (hh / 3.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = np.linalg.norm(Lnew)
        if not np.isfinite(nrm) or nrm > guard:
            diverged = True
            first_time = grid.t0 + (s - 1) * grid.h
            break
        dense[i0] = Lnew
        dense[im] = 0.5 * (L + Lnew) + (hh / 4.0) * (k4 - k1)
        out[s - 1] = Lnew
        norms[s - 1] = nrm
        max_norm = max(max_norm, nrm)
        L = Lnew
    return HardAssembly(L=out, diverged=diverged, first_divergence_time=first_time,
                        max_norm_L=max_norm, L_norms=norms, _L_dense=dense)


def assemble_W(table, lint, grid):
    """Gram matrix W = Simpson integral of W1'W1 along the trajectory.

    `lint` is the integrate_L result.  A diverged integration is passed
    through unchanged (W stays None); recovery is then refused downstream.
    """
    if lint.diverged:
        return lint
    n, k = table.n, table.k
    count = grid.count
    guT = np.empty((2 * count - 1, table.m, k))
    guT[0::2] = np.transpose(table.grad_u_phi, (0, 2, 1))
    guT[1::2] = np.transpose(table.midpoints.grad_u_phi, (0, 2, 1))
    fuT = np.empty((2 * count - 1, table.m, n))
    fuT[0::2] = np.transpose(table.grad_u_f, (0, 2, 1))
    fuT[1::2] = np.transpose(table.midpoints.grad_u_f, (0, 2, 1))
    W1_dense = guT + np.einsum("tmn,tnk->tmk", fuT, lint._L_dense)
    w = simpson_weights(2 * count - 1, grid.h / 2.0)
    W = np.einsum("t,tmi,tmj->ij", w, W1_dense, W1_dense)
    W = 0.5 * (W + W.T)
    return HardAssembly(L=lint.L, diverged=False,
                        first_divergence_time=None,
                        max_norm_L=lint.max_norm_L, L_norms=lint.L_norms,
                        W1=W1_dense[0::2], W=W, _L_dense=lint._L_dense)


@dataclass
class HardRecovery:
    """Constrained minimizer of c' W c with one weight pinned."""

    c: np.ndarray
    objective: float
    reduced_rank: int
    unique: bool
    cond_reduced: float
    known_index: int
    known_value: float


def recover_weights_hard(W, known_index, known_value, rank_tol=None):
    """Minimize c'Wc subject to c[known_index] = known_value.

    Accepts either the HardAssembly or the bare Gram matrix.  Raises
    Divergence when the assembly diverged (there is no W to minimize);
    a rank-deficient reduced Gram returns the minimum-norm minimizer
    flagged non-unique.
    """
    if isinstance(W, HardAssembly):
        if W.diverged:
            raise Divergence(
                "Gram assembly diverged at t=%s; no recovery attempted"
                % W.first_divergence_time,
                time=W.first_divergence_time, max_norm=W.max_norm_L)
        W = W.W
    W = np.asarray(W, dtype=float)
    k = W.shape[0]
    if not (0 <= known_index < k):
        raise ValueError("known_index out of range")
    if known_value == 0:
        raise ValueError("known weight value must be nonzero")
    c, rank, cond, unique = _constrained_quadratic_min(W, known_index, known_value, rank_tol)
    return HardRecovery(c=c, objective=float(c @ W @ c),
                        reduced_rank=rank, unique=unique, cond_reduced=cond,
                        known_index=known_index, known_value=known_value)
