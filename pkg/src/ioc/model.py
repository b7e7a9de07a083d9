"""Primary LTI-quadratic optimal control problem and its forward solution.

The plant is xdot = Mx + Nu with scalar input; the cost is the integral of
x'Dx + u'Eu with D diagonal nonnegative and E > 0.  The stabilizing
solution Pi of

    M'Pi + Pi M + D - Pi N E^{-1} N' Pi = 0

gives the feedback u = Theta x, Theta = -E^{-1} N' Pi, and the closed loop
Mbar = M + N Theta.  Forward simulation of the closed loop produces the
exact trajectories that the inverse methods consume, together with the
ground-truth costate p(t) = 2 Pi x(t) (scaled so the stationarity residual
of the Hamiltonian c'phi + p'f vanishes identically on optimal data;
Pi x is the same ray and corresponds to half-weighted costs).
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .numerics import rk4_linear_propagator
from .trajectory import TimeGrid, Trajectory

#: horizon shrink factor: e^{sigma*T} <= 1e-8 at the default horizon
_HORIZON_DECAY = -np.log(1e-8)
_HORIZON_CAP = 200.0

#: eigenvalue tolerance separating repeated real roots from complex pairs
EIG_TOL = 1e-8


class NotStabilizable(ValueError):
    pass


class NoStabilizingSolution(RuntimeError):
    pass


class GridTooCoarse(ValueError):
    pass


class NotRealMode(ValueError):
    pass


def _pbh_uncontrollable_modes(M, N):
    """Eigenvalues of M with Re >= 0 failing the rank test [lam*I - M, N]."""
    n = M.shape[0]
    bad = []
    for lam in np.linalg.eigvals(M):
        if lam.real >= 0:
            pencil = np.hstack([lam * np.eye(n) - M, N.astype(complex)])
            sv = np.linalg.svd(pencil, compute_uv=False)
            if sv[-1] <= n * sv[0] * 1e-12:
                bad.append(lam)
    return bad


@dataclass(frozen=True)
class LtiProblem:
    """Plant matrices, quadratic weights, and the initial state.

    D may be given as a full diagonal matrix or as the vector of its
    diagonal.  Construction validates shapes, the sign constraints on the
    weights, and stabilizability of (M, N) by the PBH test.
    """

    M: np.ndarray
    N: np.ndarray
    D: np.ndarray
    E: float
    x0: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        n = M.shape[0]
        if M.shape != (n, n):
            raise ValueError("M must be square")
        N = np.asarray(self.N, dtype=float).reshape(n, 1)
        D = np.asarray(self.D, dtype=float)
        if D.ndim == 1:
            D = np.diag(D)
        if D.shape != (n, n) or np.any(D - np.diag(np.diag(D)) != 0.0):
            raise ValueError("D must be diagonal n x n (or its diagonal vector)")
        if np.any(np.diag(D) < 0):
            raise ValueError("D diagonal must be nonnegative")
        E = float(self.E)
        if E <= 0:
            raise ValueError("E must be positive")
        x0 = np.asarray(self.x0, dtype=float).reshape(n)
        bad = _pbh_uncontrollable_modes(M, N)
        if bad:
            raise NotStabilizable(
                "unstable uncontrollable mode(s) at %s" % ", ".join("%g%+gj" % (l.real, l.imag) for l in bad))
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "x0", x0)

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def k(self):
        """Size of the quadratic basis (x_1^2, ..., x_n^2, u^2)."""
        return self.n + 1

    @property
    def weights(self):
        """True weight vector c = (diag D, E)."""
        return np.concatenate([np.diag(self.D), [self.E]])

    @classmethod
    def from_dict(cls, doc):
        """Build from the problem-file schema {"M", "N", "D_diag", "E", "x0"}."""
        return cls(M=np.array(doc["M"], dtype=float),
                   N=np.array(doc["N"], dtype=float),
                   D=np.array(doc["D_diag"], dtype=float),
                   E=float(doc["E"]),
                   x0=np.array(doc["x0"], dtype=float))


@dataclass(frozen=True)
class LqrSolution:
    """Stabilizing Riccati solution Pi, gain Theta, closed loop Mbar."""

    Pi: np.ndarray
    Theta: np.ndarray
    Mbar: np.ndarray
    eigenvalues: np.ndarray

    @property
    def sigma_max(self):
        """Largest real part of the closed-loop spectrum (negative)."""
        return float(self.eigenvalues.real.max())


def are_residual(prob, Pi):
    """Residual matrix of the algebraic Riccati equation at Pi."""
    M, N, D, E = prob.M, prob.N, prob.D, prob.E
    return M.T @ Pi + Pi @ M + D - Pi @ N @ N.T @ Pi / E


def solve_are(prob, tol=1e-10):
    """Stabilizing ARE solution via the 2n x 2n Hamiltonian eigenproblem.

    The stable invariant subspace [U1; U2] of

        H = [[M, -N N'/E], [-D, -M']]

    yields Pi = U2 U1^{-1}.  The result is validated (symmetry, closed-loop
    stability, residual <= tol*(1 + ||Pi||)) before it is returned.
    """
    M, N, D, E = prob.M, prob.N, prob.D, prob.E
    n = prob.n
    H = np.block([[M, -N @ N.T / E], [-D, -M.T]])
    lam, V = np.linalg.eig(H)
    stable = np.where(lam.real < 0)[0]
    if len(stable) != n:
        raise NoStabilizingSolution(
            "Hamiltonian has %d stable eigenvalues, expected %d" % (len(stable), n))
    U = V[:, stable]
    U1, U2 = U[:n, :], U[n:, :]
    if np.linalg.cond(U1) > 1e12:
        raise NoStabilizingSolution("stable subspace is not a graph over the state space")
    Pi = np.real(U2 @ np.linalg.inv(U1))
    Pi = 0.5 * (Pi + Pi.T)
    Theta = -(N.T @ Pi) / E
    Mbar = M + N @ Theta
    eig = np.linalg.eigvals(Mbar)
    res = np.linalg.norm(are_residual(prob, Pi))
    if res > tol * (1.0 + np.linalg.norm(Pi)):
        raise NoStabilizingSolution("ARE residual %.3e exceeds tolerance" % res)
    if eig.real.max() >= 0:
        raise NoStabilizingSolution("computed gain does not stabilize the plant")
    if np.linalg.eigvalsh(Pi).min() < -1e-9 * max(1.0, np.linalg.norm(Pi)):
        raise NoStabilizingSolution("Riccati solution is not positive semidefinite")
    return LqrSolution(Pi=Pi, Theta=Theta, Mbar=Mbar, eigenvalues=eig)


def kleinman_iteration(prob, gain0, iters=60, tol=1e-14):
    """Newton/Lyapunov iteration for the ARE from a stabilizing initial gain.

    Independent cross-check for solve_are: each step solves the Lyapunov
    equation of the current closed loop and refreshes the gain; convergence
    is quadratic from any stabilizing start.
    """
    M, N, D, E = prob.M, prob.N, prob.D, prob.E
    K = np.asarray(gain0, dtype=float).reshape(1, prob.n)
    if np.linalg.eigvals(M + N @ K).real.max() >= 0:
        raise ValueError("initial gain is not stabilizing")
    Pi_prev = None
    for _ in range(iters):
        Acl = M + N @ K
        Pi = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(D + K.T @ K * E))
        Pi = 0.5 * (Pi + Pi.T)
        K = -(N.T @ Pi) / E
        if Pi_prev is not None and np.abs(Pi - Pi_prev).max() <= tol * (1.0 + np.abs(Pi).max()):
            break
        Pi_prev = Pi
    return Pi


@dataclass(frozen=True)
class DampingClass:
    """Eigenstructure summary of the closed loop.

    kind is one of "under_damped", "over_damped", "critically_damped",
    judged on the two dominant eigenvalues (largest real part).  Under-
    damped carries sigma (real part, negative) and omega (> 0); the real
    kinds carry the sorted real eigenvalues and unit right eigenvectors.
    """

    kind: str
    sigma: float = None
    omega: float = None
    lambdas: np.ndarray = None
    vectors: np.ndarray = None

    @property
    def under_damped(self):
        return self.kind == "under_damped"

    @property
    def over_damped(self):
        return self.kind == "over_damped"

    @property
    def critically_damped(self):
        return self.kind == "critically_damped"


def classify_damping(sol, eig_tol=EIG_TOL):
    """Classify the closed loop by its two dominant eigenvalues."""
    lam, V = np.linalg.eig(sol.Mbar)
    order = np.argsort(-lam.real)
    lam, V = lam[order], V[:, order]
    dom = lam[:2] if lam.size >= 2 else lam
    if dom.size == 2 and np.abs(dom.imag).max() > eig_tol:
        i = int(np.argmax(dom.imag))
        return DampingClass(kind="under_damped",
                            sigma=float(dom[i].real), omega=float(abs(dom[i].imag)))
    real_lam = lam.real
    vecs = np.real(V)
    norms = np.linalg.norm(vecs, axis=0)
    norms[norms == 0] = 1.0
    vecs = vecs / norms
    kind = "over_damped"
    if dom.size == 2 and abs(real_lam[0] - real_lam[1]) <= eig_tol * max(1.0, abs(real_lam[0])):
        kind = "critically_damped"
    return DampingClass(kind=kind, lambdas=real_lam, vectors=vecs)


def default_horizon(sol, cap=_HORIZON_CAP):
    """Horizon making e^{sigma_max * T} <= 1e-8, capped at `cap` seconds."""
    return float(min(cap, _HORIZON_DECAY / abs(sol.sigma_max)))


def default_step(sol):
    """Step resolving the fastest closed-loop mode: min(1e-3, 0.05/max|lambda|)."""
    speed = np.abs(sol.eigenvalues).max()
    return float(min(1e-3, 0.05 / speed)) if speed > 0 else 1e-3


def default_grid(sol, horizon=None, step=None, t0=0.0):
    h = step if step is not None else default_step(sol)
    tf = horizon if horizon is not None else default_horizon(sol)
    return TimeGrid.from_span(t0, t0 + tf, h)


def simulate_closed_loop(prob, sol, grid):
    """Sample the closed loop by fixed-step RK4, half step internally.

    Returns a Trajectory with exact half-step samples (so downstream RK4
    integrations have true midpoint data) and the ground-truth costate
    p = 2 Pi x attached.
    """
    speed = np.abs(sol.eigenvalues).max()
    if grid.h * speed > 0.1:
        raise GridTooCoarse(
            "step %.3g too coarse for closed-loop speed %.3g (h*|lambda| = %.3g > 0.1)"
            % (grid.h, speed, grid.h * speed))
    Phi = rk4_linear_propagator(sol.Mbar, grid.h / 2.0)
    dense = np.empty((2 * grid.count - 1, prob.n))
    dense[0] = prob.x0
    for i in range(1, dense.shape[0]):
        dense[i] = Phi @ dense[i - 1]
    x = dense[0::2]
    x_mid = dense[1::2]
    u = x @ sol.Theta.T
    u_mid = x_mid @ sol.Theta.T
    p = 2.0 * x @ sol.Pi.T
    return Trajectory(grid=grid, x=x, u=u, p_true=p, x_mid=x_mid, u_mid=u_mid)


def eigenmode_initial_state(sol, mode_index=0, eig_tol=EIG_TOL):
    """Unit right eigenvector of Mbar for a real mode (dominant first).

    With x0 along this vector the trajectory stays on the single mode:
    x(t) = V1 e^{lambda_1 t}.
    """
    lam, V = np.linalg.eig(sol.Mbar)
    order = np.argsort(-lam.real)
    lam, V = lam[order], V[:, order]
    if abs(lam[mode_index].imag) > eig_tol:
        raise NotRealMode("eigenvalue %s is not real" % lam[mode_index])
    v = np.real(V[:, mode_index])
    return v / np.linalg.norm(v)
