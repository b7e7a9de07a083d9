"""Soft-constrained weight recovery via a residual LQR.

Stationarity and costate conditions of the minimum principle are collected
into a linear residual r = F(t) z + G v with z = [c; p] and v = pdot:

    F(t) = [[grad_x_phi', grad_x_f'], [grad_u_phi', grad_u_f']],  G = [I; 0].

Minimizing the integral of ||r||^2 is a linear-quadratic problem in (z, v)
with state matrix A1 = 0 and input matrix B = [0; I].  Completing the
square gives the equivalent pure-state-cost form with

    A = -B G' F,   Q = C'C,   C = [grad_u_phi', grad_u_f'],

and the achievable minimum from z0 is z0' P(t0) z0 where P solves the
backward Riccati differential equation with P(tf) = 0.  On exactly optimal
data z_true = [c_true; p(t0)] lies in the (near-)null space of P(t0), so
constrained minimization of the quadratic form recovers the weights.
"""
from dataclasses import dataclass

import numpy as np

from .numerics import (DIVERGENCE_GUARD, Divergence, numerical_rank,
                       rank_tol_factor, simpson_weights)


@dataclass
class ResidualMatrices:
    """Sampled matrices of the residual LQR.

    Per-sample shapes: F (n+m, k+n); A, Qmat (k+n, k+n); C (m, k+n);
    S (k+n, n); R (n, n).  B and G are constant.  `midpoints` carries the
    same matrices at interval midpoints for the RK4 integrator.
    """

    F: np.ndarray
    G: np.ndarray
    A: np.ndarray
    Qmat: np.ndarray
    C: np.ndarray
    B: np.ndarray
    R: np.ndarray
    S: np.ndarray
    k: int
    n: int
    m: int
    midpoints: "ResidualMatrices" = None

    @property
    def count(self):
        return self.F.shape[0]

    @property
    def dim(self):
        return self.k + self.n


def _assemble_samples(gxp, gup, gxf, guf):
    count, k, n = gxp.shape
    m = gup.shape[2]
    dim = k + n
    F = np.empty((count, n + m, dim))
    F[:, :n, :k] = np.transpose(gxp, (0, 2, 1))
    F[:, :n, k:] = np.transpose(gxf, (0, 2, 1))
    F[:, n:, :k] = np.transpose(gup, (0, 2, 1))
    F[:, n:, k:] = np.transpose(guf, (0, 2, 1))
    G = np.zeros((n + m, n))
    G[:n, :] = np.eye(n)
    B = np.zeros((dim, n))
    B[k:, :] = np.eye(n)
    # S = F'G selects the first n rows of F; A = -B R^{-1} S' with R = G'G = I
    S = np.transpose(F[:, :n, :], (0, 2, 1))
    A = np.zeros((count, dim, dim))
    A[:, k:, :] = -F[:, :n, :]
    C = F[:, n:, :]
    Q = np.einsum("tmi,tmj->tij", C, C)
    R = np.broadcast_to(np.eye(n), (count, n, n))
    return F, G, A, Q, C, B, R, S


def assemble_residual(table):
    """Build the residual-LQR matrices from a Jacobian table.

    Verifies per sample that completing the square is consistent:
    F'F - S R^{-1} S' must equal C'C to 1e-12 (relative).
    """
    k, n, m = table.k, table.n, table.m
    F, G, A, Q, C, B, R, S = _assemble_samples(
        table.grad_x_phi, table.grad_u_phi, table.grad_x_f, table.grad_u_f)
    Q1 = np.einsum("tri,trj->tij", F, F)
    gap = Q1 - np.einsum("tiu,tju->tij", S, S) - Q
    scale = 1.0 + np.abs(Q).max()
    if np.abs(gap).max() > 1e-12 * scale:
        raise ValueError("square-completion consistency check failed: %.3e"
                         % (np.abs(gap).max() / scale))
    mid = None
    if table.midpoints is not None:
        mid = assemble_residual(table.midpoints)
    return ResidualMatrices(F=F, G=G, A=A, Qmat=Q, C=C, B=B, R=R, S=S,
                            k=k, n=n, m=m, midpoints=mid)


@dataclass
class RiccatiSolution:
    """Backward solution P(t) with P(tf) = 0; P0 = P(t0).

    P holds the grid samples; the dense (half-step) samples are kept for
    the residual-norm evaluator.
    """

    P: np.ndarray
    P0: np.ndarray
    form: str
    _P_dense: np.ndarray = None


def _dense_series(res):
    """Interleave grid and midpoint samples of the fields the integrator needs."""
    mid = res.midpoints
    if mid is None:
        raise ValueError("residual matrices lack midpoint samples")

    def weave(a, b):
        out = np.empty((a.shape[0] + b.shape[0],) + a.shape[1:])
        out[0::2] = a
        out[1::2] = b
        return out

    return (weave(res.A, mid.A), weave(res.Qmat, mid.Qmat),
            weave(res.S, mid.S), weave(res.F, mid.F))


def integrate_riccati(res, grid, form="reduced", guard=DIVERGENCE_GUARD):
    """Backward RK4 for the Riccati differential equation, P(tf) = 0.

    form="reduced" integrates  Pdot = -A'P - PA - Q + P B R^{-1} B' P;
    form="expanded" integrates the pre-square-completion right-hand side
    Pdot = -Q1 + (PB + S) R^{-1} (B'P + S') (the state matrix there is
    zero).  The two agree to integration accuracy; both are exposed so the
    agreement is testable.  P is symmetrized after every step.  Exceeding
    `guard` in Frobenius norm raises Divergence.
    """
    if form not in ("reduced", "expanded"):
        raise ValueError("unknown Riccati form %r" % form)
    A_d, Q_d, S_d, F_d = _dense_series(res)
    if form == "expanded":
        Q1_d = np.einsum("tri,trj->tij", F_d, F_d)
    B = res.B
    dim = res.dim
    count = grid.count
    hh = grid.h / 2.0
    AT_d = np.transpose(A_d, (0, 2, 1))

    if form == "reduced":
        def rhs(i, P):
            PB = P @ B
            return -(AT_d[i] @ P) - P @ A_d[i] - Q_d[i] + PB @ PB.T
    else:
        def rhs(i, P):
            PBS = P @ B + S_d[i]
            return -Q1_d[i] + PBS @ PBS.T

    P = np.zeros((dim, dim))
    out = np.empty((count, dim, dim))
    dense = np.empty((2 * count - 1, dim, dim))
    out[-1] = P
    dense[-1] = P
    for s in range(count - 1, 0, -1):
        i1, im, i0 = 2 * s, 2 * s - 1, 2 * s - 2
        k1 = rhs(i1, P)
        k2 = rhs(im, P - hh * k1)
        k3 = rhs(im, P - hh * k2)
        k4 = rhs(i0, P - 2.0 * hh * k3)
        P = P - (hh / 3.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
        nrm = np.linalg.norm(P)
        if nrm > guard:
            raise Divergence("Riccati solution exceeded %.1e at t=%.6g" %
                             (guard, grid.t0 + (s - 1) * grid.h),
                             time=grid.t0 + (s - 1) * grid.h, max_norm=nrm)
        out[s - 1] = P
        dense[i0] = P
        # cubic-Hermite midpoint from endpoint values and slopes (k4 at the
        # earlier endpoint, k1 at the later one)
        dense[im] = 0.5 * (dense[i1] + P) + (hh / 4.0) * (k4 - k1)
    return RiccatiSolution(P=out, P0=out[0], form=form, _P_dense=dense)


@dataclass
class SoftRecovery:
    """Constrained minimizer of z0' P0 z0 with one weight pinned."""

    z0: np.ndarray
    c: np.ndarray
    p0: np.ndarray
    objective: float
    cond_P0_reduced: float
    reduced_rank: int
    unique: bool
    known_index: int
    known_value: float


def _constrained_quadratic_min(Amat, known_index, known_value, rank_tol=None):
    """Minimize y'Ay with y[known_index] fixed, by null-space elimination.

    Returns (y, reduced rank, cond, unique).  The reduced
    system is solved with an SVD pseudo-inverse truncated at the numerical
    rank, so rank-deficient problems yield the minimum-norm minimizer.
    """
    dim = Amat.shape[0]
    free = [i for i in range(dim) if i != known_index]
    red = Amat[np.ix_(free, free)]
    rhs = -known_value * Amat[free, known_index]
    rank, sv, _ = numerical_rank(red, rank_tol)
    rcond = max(red.shape) * rank_tol_factor(rank_tol)
    y_free = np.linalg.pinv(red, rcond=rcond) @ rhs
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    unique = rank == len(free)
    y = np.empty(dim)
    y[free] = y_free
    y[known_index] = known_value
    return y, rank, cond, unique


def recover_weights_soft(P0, known_index, known_value, k, rank_tol=None):
    """Recover z0 = [c; p(t0)] minimizing z0' P0 z0 with c[known_index] pinned.

    `k` is the basis count (first k coordinates of z are the weights).
    A rank-deficient reduced system still returns the minimum-norm
    minimizer but is flagged non-unique.
    """
    P0 = np.asarray(P0, dtype=float)
    dim = P0.shape[0]
    if not (0 <= known_index < k <= dim):
        raise ValueError("known_index must address a weight coordinate")
    if known_value == 0:
        raise ValueError("known weight value must be nonzero")
    z0, rank, cond, unique = _constrained_quadratic_min(P0, known_index, known_value, rank_tol)
    return SoftRecovery(z0=z0, c=z0[:k], p0=z0[k:],
                        objective=float(z0 @ P0 @ z0),
                        cond_P0_reduced=cond, reduced_rank=rank, unique=unique,
                        known_index=known_index, known_value=known_value)


def soft_residual_norm(res, z0, grid, ricc):
    """Achieved integral of ||r||^2 from z0 under the optimal residual policy.

    The costate part of z is propagated through zdot = B v with
    v = -R^{-1} (B'P(t) + S'(t)) z(t) from the stored Riccati solution,
    and the residual r = F z + G v is accumulated with Simpson weights.
    """
    A_d, Q_d, S_d, F_d = _dense_series(res)
    P_d = ricc._P_dense
    B, G = res.B, res.G
    hh = grid.h / 2.0
    count2 = 2 * grid.count - 1
    # v(t) = lam(t) z(t) with lam = -R^{-1}(B'P + S') and R = I
    lam = -(np.einsum("ij,tjk->tik", B.T, P_d) + np.transpose(S_d, (0, 2, 1)))

    def zdot(i, z):
        return B @ (lam[i] @ z)

    zs = np.empty((count2, res.dim))
    z = np.asarray(z0, dtype=float).copy()
    zs[0] = z
    for s in range(grid.count - 1):
        i0, im, i1 = 2 * s, 2 * s + 1, 2 * s + 2
        k1 = zdot(i0, z)
        k2 = zdot(im, z + hh * k1)
        k3 = zdot(im, z + hh * k2)
        k4 = zdot(i1, z + 2.0 * hh * k3)
        znew = z + (hh / 3.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        zs[i1] = znew
        zs[im] = 0.5 * (z + znew) + (hh / 4.0) * (k1 - zdot(i1, znew))
        z = znew
    v = np.einsum("tij,tj->ti", lam, zs)
    r = np.einsum("tij,tj->ti", F_d, zs) + v @ G.T
    w = simpson_weights(count2, hh)
    return float(np.einsum("t,ti,ti->", w, r, r))
