"""Shared oracles and fixtures for the test suite.

Everything here is computed by an independent route from the library code it
checks: closed-form solutions, matrix-exponential quadrature, Lyapunov/Sylvester
solves, and brute-force sampling.  Tests freeze these oracles against the
package implementations.
"""

import numpy as np
import scipy.linalg

from ioc.model import LtiProblem, simulate_closed_loop, solve_are
from ioc.numerics import numerical_rank, simpson_weights
from ioc.trajectory import TimeGrid, tabulate_lti_quadratic
from ioc.soft_ioc import ResidualMatrices


# ---------------------------------------------------------------------------
# Canonical small problems
# ---------------------------------------------------------------------------

def scalar_problem():
    """1-D problem with a rational closed loop: M=-1, N=1, D=3, E=1.

    ARE: -2*pi + 3 - pi^2 = 0 -> pi = 1, theta = -1, closed loop -2.
    """
    return LtiProblem(
        M=np.array([[-1.0]]),
        N=np.array([[1.0]]),
        D=np.array([3.0]),
        E=1.0,
        x0=np.array([1.0]),
    )


def sqrt2_problem():
    """1-D problem whose ARE root is irrational: M=-1, N=1, D=1, E=1.

    ARE: -2*pi + 1 - pi^2 = 0 -> pi = sqrt(2) - 1, closed loop -sqrt(2).
    """
    return LtiProblem(
        M=np.array([[-1.0]]),
        N=np.array([[1.0]]),
        D=np.array([1.0]),
        E=1.0,
        x0=np.array([1.0]),
    )


def zero_input_problem():
    """2-D problem with N = 0-column unused: stable M, D = 0 -> Pi = 0."""
    return LtiProblem(
        M=np.diag([-1.0, -2.0]),
        N=np.array([[0.0], [1.0]]),
        D=np.array([0.0, 0.0]),
        E=1.0,
        x0=np.array([0.0, 0.0]),
    )


def random_problem(rng):
    """Random stabilizable 2-D problem (same family as the sweep sampler)."""
    while True:
        M = rng.uniform(-3.0, 3.0, (2, 2))
        N = rng.uniform(-3.0, 3.0, (2, 1))
        d = 50.0 - rng.uniform(0.0, 50.0, 2)
        x0 = rng.standard_normal(2)
        x0 /= np.linalg.norm(x0)
        try:
            prob = LtiProblem(M=M, N=N, D=d, E=1.0, x0=x0)
            sol = solve_are(prob)
        except Exception:
            continue
        return prob, sol


# ---------------------------------------------------------------------------
# Scalar backward-Riccati closed form
# ---------------------------------------------------------------------------

def scalar_riccati_closed_form(a, b, q, tf, t):
    """Closed form of dP/dt = -2aP - q + b^2 P^2, P(tf) = 0.

    With gamma = sqrt(a^2 + b^2 q) and tau = tf - t:
        P(t) = q sinh(gamma tau) / (gamma cosh(gamma tau) - a sinh(gamma tau)).
    Reduces to tanh(tau) for a = 0, b = q = 1.
    """
    tau = np.asarray(tf, dtype=float) - np.asarray(t, dtype=float)
    gamma = np.sqrt(a * a + b * b * q)
    sh, ch = np.sinh(gamma * tau), np.cosh(gamma * tau)
    return q * sh / (gamma * ch - a * sh)


def constant_residual(a, b, q, grid):
    """Hand-built constant-coefficient ResidualMatrices for the scalar form.

    Both backward forms then integrate dP/dt = -2aP - q + b^2 P^2:
      reduced   with A = a, Q = q, B = [b];
      expanded  with F = [-a/b; sqrt(q)], S = -a/b (so Q1 = a^2/b^2 + q and
                (PB + S)^2 reproduces the same right-hand side).
    The layout mimics an assembled problem with k = 0 features and a 1-d
    state, which is all the integrator touches.
    """
    if b == 0.0:
        raise ValueError("b must be nonzero")

    def block(count):
        F = np.empty((count, 2, 1))
        F[:, 0, 0] = -a / b
        F[:, 1, 0] = np.sqrt(q)
        return ResidualMatrices(
            F=F,
            G=np.array([[1.0], [0.0]]),
            A=np.full((count, 1, 1), a),
            Qmat=np.full((count, 1, 1), q),
            C=F[:, 1:, :],
            B=np.array([[b]]),
            R=np.ones((1, 1)),
            S=np.full((count, 1, 1), -a / b),
            k=0, n=1, m=1,
        )

    main = block(grid.count)
    main.midpoints = block(grid.count - 1)
    return main


def dense_series(table, field):
    """Interleave a Jacobian field with its midpoint samples (dense order)."""
    if table.midpoints is None:
        raise ValueError("dense table required")
    pub = getattr(table, field)
    mid = getattr(table.midpoints, field)
    out = np.empty((pub.shape[0] + mid.shape[0],) + pub.shape[1:])
    out[0::2] = pub
    out[1::2] = mid
    return out


# ---------------------------------------------------------------------------
# Costate-kernel quadrature oracle: L(t) = int_t^tf expm(M'(s-t)) gx(s) ds
# ---------------------------------------------------------------------------

def psi_quadrature_L(prob, table, grid, sample_index):
    """Evaluate the costate kernel at one public sample by direct quadrature.

    Integrates expm(M' (s - t_i)) @ grad_x_phi(s)' over [t_i, tf] with
    Simpson weights on the half-step dense grid.  Independent of the
    backward-ODE integrator: uses scipy's expm at every dense node.
    """
    MT = prob.M.T
    t_i = grid.t0 + sample_index * grid.h
    dense_times = grid.times_dense()
    lo = 2 * sample_index
    times = dense_times[lo:]
    gxT = np.transpose(dense_series(table, "grad_x_phi")[lo:], (0, 2, 1))
    vals = np.empty_like(gxT)
    for j, s in enumerate(times):
        vals[j] = scipy.linalg.expm(MT * (s - t_i)) @ gxT[j]
    w = simpson_weights(len(times), grid.h / 2.0)
    return np.einsum("t,tij->ij", w, vals)


# ---------------------------------------------------------------------------
# Four-term Gram expansion oracle
# ---------------------------------------------------------------------------

def four_term_gram(table, assembly, grid):
    """Assemble W as four separately-integrated terms and sum.

    W1 = a + b with a = grad_u_phi' and b = grad_u_f' L; then
    W = int a'a + int a'b + int b'a + int b'b, each with its own Simpson
    pass.  Agreement with the single-pass assembly is a pure quadrature
    identity and should hold to roundoff amplified by cancellation.
    """
    L = assembly._L_dense
    a = np.transpose(dense_series(table, "grad_u_phi"), (0, 2, 1))
    fu = dense_series(table, "grad_u_f")
    b = np.einsum("tnm,tnk->tmk", fu, L)
    w = simpson_weights(a.shape[0], grid.h / 2.0)

    def gram(p, r):
        return np.einsum("t,tmi,tmj->ij", w, p, r)

    return gram(a, a) + gram(a, b) + gram(b, a) + gram(b, b)


# ---------------------------------------------------------------------------
# Asymptotic Gram via Sylvester/Lyapunov solves (convergent cases only)
# ---------------------------------------------------------------------------

def sylvester_gram_infinity(prob, sol):
    """Infinite-horizon Gram for exact LQR data, by algebraic solves.

    For data on the optimal closed loop x' = Mbar x, the costate kernel is
    linear in the state: column j of L(t) is 2 G_j x(t) where
        M' G_j + G_j Mbar + e_j e_j' = 0,
    and the last column pairs with the input feature as 2 Theta x(t).  Stack
    Xi = [G_1'N, ..., G_n'N, Theta'] (n-by-k); then W1(t) = 2 x(t)' Xi and
        W_inf = 4 Xi' X Xi,   Mbar X + X Mbar' + x0 x0' = 0.
    Requires every eig(M') + eig(Mbar) to have negative real part.
    """
    n = prob.n
    cols = []
    for j in range(n):
        ej = np.zeros((n, n))
        ej[j, j] = 1.0
        Gj = scipy.linalg.solve_sylvester(prob.M.T, sol.Mbar, -ej)
        cols.append(Gj.T @ prob.N)
    Xi = np.hstack(cols + [sol.Theta.T])
    X = scipy.linalg.solve_lyapunov(sol.Mbar, -np.outer(prob.x0, prob.x0))
    return 4.0 * Xi.T @ X @ Xi


# ---------------------------------------------------------------------------
# Point-sampled factor rank (cross-check for the integrated Gram's rank)
# ---------------------------------------------------------------------------

def stacked_factor_rank(assembly, count, spread=None, factor=None):
    """Rank of W1 rows stacked at `count` spread sample times.

    The integrated Gram and the stacked point samples must expose the same
    column space; comparing their numerical ranks guards the quadrature
    against rank inflation/deflation.  The default spread stays in the
    first third of the record: near tf the terminal condition L(tf) = 0
    bends W1 away from its invariant direction while the integrand mass
    (which scales with the decayed state) no longer registers in the Gram.
    """
    W1 = assembly.W1
    if spread is None:
        spread = np.linspace(0, (W1.shape[0] - 1) // 3, count).round().astype(int)
    stacked = np.vstack([W1[i] for i in spread])
    if factor is None:
        # Point samples carry the terminal boundary layer (L(tf) = 0 bends
        # W1 off its invariant subspace by ~|x(tf)| in absolute terms); the
        # Gram suppresses that leak quadratically, a single sample only
        # linearly.  A 1e-5 relative cutoff sits safely above the leak and
        # below any genuine direction.
        factor = 1e-5
    rank, _, _ = numerical_rank(stacked, factor=factor)
    return rank


# ---------------------------------------------------------------------------
# Deterministic search for a convergent under-damped scenario
# ---------------------------------------------------------------------------

def find_convergent_underdamped(seed, max_tries=200):
    """First sampled problem that is under-damped, predicted SOLVABLE,
    and has a decaying hard-method growth rate (so the Gram converges)."""
    from ioc.model import classify_damping
    from ioc.solvability import hard_case_analysis
    from ioc.harness import sample_problem, hard_horizon
    from ioc.model import default_horizon

    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        prob, sol = sample_problem(rng)
        damping = classify_damping(sol)
        if not damping.under_damped:
            continue
        verdict = hard_case_analysis(sol, prob)
        if verdict.hard_predicted != "SOLVABLE" or verdict.borderline:
            continue
        tf_hard, g = hard_horizon(prob, sol, default_horizon(sol))
        if g >= 0 or abs(g) * tf_hard < 16.0:
            continue
        return prob, sol, tf_hard, g
    raise RuntimeError("no convergent under-damped case found")


def make_grid_and_table(prob, sol, tf, h):
    grid = TimeGrid.from_span(0.0, tf, h)
    traj = simulate_closed_loop(prob, sol, grid)
    return grid, traj, tabulate_lti_quadratic(traj, prob)
