"""Solvability diagnostics for minimum-principle weight recovery.

Two complementary layers:

* **Rank tests** — the residual system's time-varying observability matrix
  Q_o(t), built by repeated application of the operator A'(t) + d/dt to
  C'(t).  Projecting out the known-weight coordinates with the kernel
  selector N_s gives Q_p = N_s' Q_o Q_o' N_s, whose rank at (almost) every
  sample certifies local identifiability of the unknown weights.

* **Eigenstructure case analysis** (second-order closed loops) — closed-form
  predictions of each method's outcome from the spectra of the open and
  closed loops: over-damped single-mode data defeats the residual method
  and leaves the Gram method rank-1 or divergent, while for under-damped
  data the sign of the product delta1*mu2*delta2*mu1 (and, when it is
  non-positive, the dependence of two initial-state-weighted vectors)
  decides Gram solvability.

All sign tests carry a borderline band: margins within 1e-6 of zero are
numerically undecidable and flagged rather than trusted.
"""
from dataclasses import dataclass, field

import numpy as np

from .model import EIG_TOL, classify_damping
from .numerics import numerical_rank, rank_cutoff, rank_tol_factor
from .trajectory import derivative_series

#: half-width of the undecidable band around zero for strict sign tests
BORDERLINE_BAND = 1e-6

#: max angle (radians) between x0 and an eigenvector to call it a single mode
SINGLE_MODE_ANGLE_TOL = 1e-8


class AllKnown(ValueError):
    """Every weight is pinned; nothing remains to estimate."""


class NotSecondOrder(ValueError):
    """The eigenstructure case analysis covers second-order systems only."""


class NotApplicable(RuntimeError):
    """Preconditions of the requested case analysis do not hold."""


@dataclass(frozen=True)
class KernelSelectors:
    """Selectors removing known-weight coordinates from the rank tests.

    Ns ((k+n) x (k+n-known)) keeps the unknown weights and all costates;
    Nh (k x (k-known)) keeps the unknown weights only.  Columns are
    distinct standard basis vectors in ascending coordinate order, so
    Ns'Ns = I and Nh'Nh = I.
    """

    Ns: np.ndarray
    Nh: np.ndarray


def kernel_selectors(k, n, known_indices):
    """Build the soft/hard kernel selectors for the given known weights."""
    known = sorted(set(int(i) for i in known_indices))
    if not known:
        raise ValueError("known_indices must be nonempty")
    if known[0] < 0 or known[-1] >= k:
        raise ValueError("known_indices must lie in 0..k-1")
    unknown = [i for i in range(k) if i not in known]
    if not unknown:
        raise AllKnown("all %d weights are known" % k)
    eye_k = np.eye(k)
    eye_d = np.eye(k + n)
    Nh = eye_k[:, unknown]
    Ns = eye_d[:, unknown + list(range(k, k + n))]
    return KernelSelectors(Ns=Ns, Nh=Nh)


@dataclass
class ObservabilitySeries:
    """Per-sample Q_o blocks and the projected rank/condition series.

    full_rank_fraction is taken over samples in [t0, window_T] only: the
    trajectory decays, so late samples sit at noise level and rank there
    reflects roundoff, not identifiability.
    """

    Qo: np.ndarray
    Qp_rank: np.ndarray
    Qp_cond: np.ndarray
    full_rank_fraction: float
    expected_rank: int
    window_T: float
    times: np.ndarray


def _qo_blocks_lti(table, traj, sol, levels):
    """Analytic Q_o blocks for the LTI quadratic-feature case.

    Each block i is [B_i x(t); (-M)^(i-1) N] with B_1 = [0; 2*Theta] and
    B_i = [-2 diag((-M)^(i-2) N); 0] + B_{i-1} (M+N*Theta): the top rows
    follow the closed-loop flow, the bottom rows are the constant
    alternating-sign controllability columns.
    """
    M, N = table.M, table.N
    n, k = table.n, table.k
    Nvec = N[:, 0]
    Theta = np.atleast_2d(sol.Theta)
    powers = [Nvec.copy()]
    for _ in range(levels - 1):
        powers.append(-M @ powers[-1])
    Bs = [np.vstack([np.zeros((n, n)), 2.0 * Theta])]
    for i in range(2, levels + 1):
        top = np.vstack([-2.0 * np.diag(powers[i - 2]), np.zeros((1, n))])
        Bs.append(top + Bs[-1] @ sol.Mbar)
    count = traj.grid.count
    Qo = np.empty((count, k + n, levels))
    x = traj.x
    for i in range(levels):
        Qo[:, :k, i] = x @ Bs[i].T
        Qo[:, k:, i] = powers[i]
    return Qo


def _qo_blocks_fd(res, grid, levels):
    """Generic Q_o blocks: recursion Q_{o,i} = A'Q_{o,i-1} + d/dt Q_{o,i-1}.

    Time derivatives use 4th-order finite differences on the sample grid,
    so deep blocks accumulate differentiation noise; the LTI analytic
    route is preferred when available.
    """
    AT = np.transpose(res.A, (0, 2, 1))
    blocks = [np.transpose(res.C, (0, 2, 1))]
    for _ in range(levels - 1):
        prev = blocks[-1]
        blocks.append(np.einsum("tij,tjm->tim", AT, prev)
                      + derivative_series(prev, grid))
    return np.concatenate(blocks, axis=2)


def observability_series(res, table, grid, selectors=None, sol=None,
                         traj=None, window_T=None, rank_tol=None):
    """Rank/condition series of the projected observability Gram Q_p.

    When the table is LTI (quadratic features, single input) and `sol` and
    `traj` are given, Q_o is built analytically; otherwise by the
    finite-difference recursion on the assembled residual matrices.  The
    full-rank fraction is evaluated over [t0, window_T], defaulting to
    five dominant time constants (the trajectory beyond that is decayed
    and its rank is dominated by roundoff).
    """
    k, n = table.k, table.n
    dim = k + n
    if selectors is None:
        selectors = kernel_selectors(k, n, (k - 1,))
    levels = dim
    analytic = table.lti and table.m == 1 and sol is not None and traj is not None
    if analytic:
        Qo = _qo_blocks_lti(table, traj, sol, levels)
    else:
        Qo = _qo_blocks_fd(res, grid, levels)
    Ns = selectors.Ns
    count = Qo.shape[0]
    ranks = np.empty(count, dtype=int)
    conds = np.empty(count)
    for t in range(count):
        proj = Ns.T @ Qo[t]
        Qp = proj @ proj.T
        rank, sv, _ = numerical_rank(Qp, factor=rank_tol)
        ranks[t] = rank
        conds[t] = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    times = grid.times()
    if window_T is None:
        if sol is not None:
            window_T = float(min(grid.tf, grid.t0 + 5.0 / abs(sol.sigma_max)))
        else:
            window_T = float(grid.tf)
    in_window = times <= window_T + 1e-12
    expected = Ns.shape[1]
    frac = float(np.mean(ranks[in_window] == expected)) if in_window.any() else 0.0
    return ObservabilitySeries(Qo=Qo, Qp_rank=ranks, Qp_cond=conds,
                               full_rank_fraction=frac, expected_rank=expected,
                               window_T=window_T, times=times)


@dataclass
class CaseVerdict:
    """Predicted solvability of each method with the evidence that drove it.

    soft_predicted: SOLVABLE | NOT_SOLVABLE | UNKNOWN.
    hard_predicted: SOLVABLE | NON_UNIQUE | DIVERGED | INITIAL_STATE_DEPENDENT
    | UNKNOWN.  `margins` holds the signed quantities behind each strict
    sign test; `borderline` is set when any decisive margin lies within
    BORDERLINE_BAND of zero.
    """

    damping: object
    soft_predicted: str = "UNKNOWN"
    hard_predicted: str = "UNKNOWN"
    evidence: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    borderline: bool = False


def _single_mode_index(damping, x0, angle_tol=SINGLE_MODE_ANGLE_TOL):
    """Index of the real closed-loop mode x0 lies on, or None."""
    if damping.vectors is None:
        return None
    x0 = np.asarray(x0, dtype=float)
    nrm = np.linalg.norm(x0)
    if nrm == 0:
        return None
    xu = x0 / nrm
    for idx in range(damping.vectors.shape[1]):
        v = damping.vectors[:, idx]
        resid = np.linalg.norm(xu - (v @ xu) * v)
        if resid <= angle_tol:
            return idx
    return None


def soft_case_overdamped(sol, prob, x0=None, angle_tol=SINGLE_MODE_ANGLE_TOL):
    """Residual-method verdict for over-damped single-real-mode data.

    A trajectory that lives on one real eigenmode of the closed loop makes
    the projected observability matrix rank-deficient at every time (two
    zero columns survive the projection), so the residual method cannot
    identify the unknown weights: soft_predicted = NOT_SOLVABLE.  The
    evidence records the mode and the nonzero-component checks the
    argument relies on.  Raises NotApplicable for under-damped loops or
    mixed-mode initial states (the analysis is silent there).
    """
    damping = classify_damping(sol)
    if damping.under_damped:
        raise NotApplicable("closed loop is under-damped")
    if x0 is None:
        x0 = prob.x0
    idx = _single_mode_index(damping, x0, angle_tol)
    if idx is None:
        raise NotApplicable("initial state mixes eigenmodes")
    lam1 = float(damping.lambdas[idx])
    V1 = damping.vectors[:, idx]
    theta_v1 = float((np.atleast_2d(sol.Theta) @ V1)[0])
    evidence = {
        "lambda1": lam1,
        "V1": V1,
        "v11": float(V1[0]),
        "v12": float(V1[1]) if V1.shape[0] > 1 else 0.0,
        "theta_V1": theta_v1,
        "v11_nonzero": bool(abs(V1[0]) > 0),
        "v12_nonzero": bool(V1.shape[0] > 1 and abs(V1[1]) > 0),
        "theta_V1_nonzero": bool(abs(theta_v1) > 0),
    }
    return CaseVerdict(damping=damping, soft_predicted="NOT_SOLVABLE",
                       evidence=evidence)


def hard_case_analysis(sol, prob, x0=None, rank_tol=None, eig_tol=EIG_TOL,
                       angle_tol=SINGLE_MODE_ANGLE_TOL):
    """Gram-method verdict for a second-order problem, with soft prediction.

    Dispatch on the closed-loop damping class:

    * over-/critically damped, x0 on a single real mode with eigenvalue
      lambda1: the Gram integrand decays iff lambda1*I + M is stable —
      all Re < 0 gives a rank-1 Gram (NON_UNIQUE), any Re > 0 gives
      DIVERGED.  Mixed-mode over-damped data is outside the analysis:
      both predictions stay UNKNOWN.
    * under-damped (sigma +/- j*omega): any open-loop eigenvalue with
      Re(lambda_hat) + sigma > 0 makes the Gram integral unbounded
      (DIVERGED).  Otherwise compute
          delta = ((1/omega)(M + sigma I)^2 + omega I)^{-1} N,
          mu    = (1/omega)(M + sigma I) delta;
      delta1*mu2*delta2*mu1 > 0 means the Gram is full-rank for every
      nonzero x0 (SOLVABLE); a non-positive product makes the verdict
      INITIAL_STATE_DEPENDENT, refined for the given x0 by the rank of
      [diag(x10, x20) mu | diag(-x20, x10) delta]: linearly dependent
      columns give NON_UNIQUE, independent give SOLVABLE.

    The soft prediction rides along: NOT_SOLVABLE on the single-mode real
    branch, SOLVABLE (numerically supported, flagged as a conjecture in
    the evidence) on the under-damped branch.
    """
    if prob.n != 2:
        raise NotSecondOrder("case analysis covers second-order systems only")
    damping = classify_damping(sol, eig_tol)
    if x0 is None:
        x0 = prob.x0
    x0 = np.asarray(x0, dtype=float)
    M = prob.M
    lam_hat = np.linalg.eigvals(M)
    verdict = CaseVerdict(damping=damping)
    verdict.evidence["lambda_hat"] = lam_hat

    if damping.under_damped:
        sigma, omega = damping.sigma, damping.omega
        verdict.evidence["sigma"] = sigma
        verdict.evidence["omega"] = omega
        verdict.soft_predicted = "SOLVABLE"
        verdict.evidence["soft_conjecture"] = True
        shifted = lam_hat.real + sigma
        stab_margin = float(shifted.max())
        verdict.margins["gram_decay"] = stab_margin
        verdict.evidence["lambda_hat_plus_sigma"] = shifted
        if stab_margin > 0:
            verdict.hard_predicted = "DIVERGED"
            verdict.borderline = abs(stab_margin) <= BORDERLINE_BAND
            return verdict
        shift = M + sigma * np.eye(2)
        delta = np.linalg.solve(shift @ shift / omega + omega * np.eye(2),
                                prob.N[:, 0])
        mu = shift @ delta / omega
        product = float(delta[0] * mu[1] * delta[1] * mu[0])
        verdict.evidence["delta"] = delta
        verdict.evidence["mu"] = mu
        verdict.evidence["product"] = product
        verdict.margins["lemma_product"] = product
        verdict.borderline = (abs(stab_margin) <= BORDERLINE_BAND
                              or abs(product) <= BORDERLINE_BAND)
        if product > 0:
            verdict.hard_predicted = "SOLVABLE"
            return verdict
        verdict.hard_predicted = "INITIAL_STATE_DEPENDENT"
        HrN = np.array([x0[0] * mu[0], x0[1] * mu[1]])
        HcN = np.array([-x0[1] * delta[0], x0[0] * delta[1]])
        pair = np.column_stack([HrN, HcN])
        sv = np.linalg.svd(pair, compute_uv=False)
        cutoff = rank_cutoff(pair.shape, sv[0], rank_tol_factor(rank_tol))
        verdict.evidence["H_rN"] = HrN
        verdict.evidence["H_cN"] = HcN
        verdict.evidence["dependence_residual"] = float(sv[-1])
        verdict.evidence["dependence_cutoff"] = float(cutoff)
        verdict.evidence["pair_det"] = float(np.linalg.det(pair))
        if sv[-1] < cutoff:
            verdict.hard_predicted = "NON_UNIQUE"
        else:
            verdict.hard_predicted = "SOLVABLE"
        return verdict

    # real dominant modes: the analysis needs single-mode data
    idx = _single_mode_index(damping, x0, angle_tol)
    if idx is None:
        verdict.evidence["note"] = "mixed-mode real data: outside the case analysis"
        return verdict
    lam1 = float(damping.lambdas[idx])
    lam_bar = np.linalg.eigvals(lam1 * np.eye(2) + M)
    margin = float(lam_bar.real.max())
    verdict.evidence["lambda1"] = lam1
    verdict.evidence["lambda_bar"] = lam_bar
    verdict.margins["case1_decay"] = margin
    verdict.borderline = abs(margin) <= BORDERLINE_BAND
    verdict.soft_predicted = "NOT_SOLVABLE"
    verdict.evidence["V1"] = damping.vectors[:, idx]
    verdict.hard_predicted = "DIVERGED" if margin > 0 else "NON_UNIQUE"
    return verdict


@dataclass
class ComparisonReport:
    """Predicted vs observed outcome per method for one scenario."""

    soft_predicted: str
    soft_observed: str
    soft_error: float
    soft_agree: object
    hard_predicted: str
    hard_observed: str
    hard_error: float
    hard_agree: object
    error_threshold: float = 0.01

    def as_dict(self):
        return {
            "soft": {"predicted": self.soft_predicted,
                     "observed": self.soft_observed,
                     "max_rel_error": self.soft_error,
                     "agree": self.soft_agree},
            "hard": {"predicted": self.hard_predicted,
                     "observed": self.hard_observed,
                     "max_rel_error": self.hard_error,
                     "agree": self.hard_agree},
            "error_threshold": self.error_threshold,
        }


def _max_rel_error(c, truth):
    truth = np.asarray(truth, dtype=float)
    return float(np.max(np.abs(np.asarray(c) - truth) / np.abs(truth)))


def predict_vs_empirical(verdict, soft, hard, truth, error_threshold=0.01):
    """Compare a CaseVerdict against the empirical recovery results.

    `soft` is the SoftRecovery; `hard` is the HardRecovery, or the
    diverged HardAssembly when no recovery was possible.  Observed labels:
    soft 'recovered'/'failed' at the error threshold; hard 'diverged',
    'non_unique' (rank-deficient or inaccurate), or 'solved'.  Agreement
    is None where the prediction is UNKNOWN.
    """
    soft_err = _max_rel_error(soft.c, truth) if soft is not None else np.inf
    soft_obs = "recovered" if (soft is not None and soft.unique
                               and soft_err <= error_threshold) else "failed"
    if verdict.soft_predicted == "UNKNOWN":
        soft_agree = None
    elif verdict.soft_predicted == "SOLVABLE":
        soft_agree = soft_obs == "recovered"
    else:
        soft_agree = soft_obs == "failed"

    diverged = hard is None or getattr(hard, "diverged", False)
    if diverged:
        hard_obs, hard_err = "diverged", np.nan
    else:
        hard_err = _max_rel_error(hard.c, truth)
        if hard.unique and hard_err <= error_threshold:
            hard_obs = "solved"
        else:
            hard_obs = "non_unique"
    expected = {"DIVERGED": "diverged", "SOLVABLE": "solved",
                "NON_UNIQUE": "non_unique"}.get(verdict.hard_predicted)
    hard_agree = None if expected is None else (hard_obs == expected)
    return ComparisonReport(
        soft_predicted=verdict.soft_predicted, soft_observed=soft_obs,
        soft_error=soft_err, soft_agree=soft_agree,
        hard_predicted=verdict.hard_predicted, hard_observed=hard_obs,
        hard_error=hard_err, hard_agree=hard_agree,
        error_threshold=error_threshold)
