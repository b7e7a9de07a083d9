import numpy as np
import pytest

from helpers import find_convergent_underdamped, make_grid_and_table, random_problem
from ioc.harness import example_problem
from ioc.hard_ioc import HardAssembly
from ioc.model import LqrSolution, classify_damping, simulate_closed_loop, solve_are
from ioc.soft_ioc import SoftRecovery, assemble_residual
from ioc.hard_ioc import HardRecovery
from ioc.solvability import (
    AllKnown,
    NotApplicable,
    NotSecondOrder,
    hard_case_analysis,
    kernel_selectors,
    observability_series,
    predict_vs_empirical,
    soft_case_overdamped,
)
from ioc.model import LtiProblem
from ioc.trajectory import TimeGrid, tabulate_lti_quadratic


def fabricated_solution(Mbar, eigenvalues, Theta=None):
    Theta = np.zeros((1, Mbar.shape[0])) if Theta is None else np.atleast_2d(Theta)
    return LqrSolution(Pi=np.eye(Mbar.shape[0]), Theta=Theta,
                       Mbar=np.asarray(Mbar, dtype=float),
                       eigenvalues=np.asarray(eigenvalues, dtype=complex))


class TestKernelSelectors:
    def test_single_known_weight(self):
        sel = kernel_selectors(3, 2, (2,))
        assert sel.Ns.shape == (5, 4)
        assert np.array_equal(sel.Ns, np.eye(5)[:, [0, 1, 3, 4]])
        assert sel.Nh.shape == (3, 2)
        assert np.array_equal(sel.Nh, np.eye(3)[:, [0, 1]])

    def test_duplicates_collapse(self):
        sel = kernel_selectors(3, 2, (1, 1))
        assert np.array_equal(sel.Nh, np.eye(3)[:, [0, 2]])

    def test_all_known_raises(self):
        with pytest.raises(AllKnown):
            kernel_selectors(3, 2, (0, 1, 2))

    def test_empty_or_out_of_range(self):
        with pytest.raises(ValueError):
            kernel_selectors(3, 2, ())
        with pytest.raises(ValueError):
            kernel_selectors(3, 2, (3,))
        with pytest.raises(ValueError):
            kernel_selectors(3, 2, (-1,))


class TestObservabilityStructure:
    def test_bottom_rows_alternating_controllability(self, bundles):
        # exact identity in LTI mode: rows n.. of level i hold (-M)^i N
        for index in (1, 2, 3):
            bundle = bundles[index]
            prob = bundle["problem"]
            Qo = bundle["obs"].Qo
            expect = prob.N.copy()
            for level in range(Qo.shape[2]):
                assert np.array_equal(
                    Qo[:, prob.k:, level],
                    np.broadcast_to(expect[:, 0], (Qo.shape[0], prob.n))), \
                    "level %d of benchmark %d" % (level, index)
                expect = -prob.M @ expect

    def test_bottom_rows_on_random_problem(self):
        rng = np.random.default_rng(2024)
        prob, sol = random_problem(rng)
        h = min(0.01, 0.05 / np.abs(sol.eigenvalues).max())
        grid, traj, table = make_grid_and_table(prob, sol, 1.0, h)
        res = assemble_residual(table)
        obs = observability_series(res, table, grid, sol=sol, traj=traj)
        expect = prob.N.copy()
        for level in range(obs.Qo.shape[2]):
            assert np.array_equal(obs.Qo[0, prob.k:, level], expect[:, 0])
            expect = -prob.M @ expect

    def test_finite_difference_path_agrees(self):
        prob = example_problem(1)
        sol = solve_are(prob)
        grid, traj, table = make_grid_and_table(prob, sol, 2.0, 1e-3)
        res = assemble_residual(table)
        analytic = observability_series(res, table, grid, sol=sol, traj=traj)
        fd = observability_series(res, table, grid)  # no sol/traj: FD recursion
        sl = slice(4, -4)  # one-sided stencils at the edges are noisier
        gap = np.abs(analytic.Qo[sl] - fd.Qo[sl]).max()
        assert gap <= 1e-3 * np.abs(analytic.Qo[sl]).max()

    def test_rotating_frame_identity(self):
        # canonical under-damped loop: the upper block of every level must be
        # e^{sigma t} (cos(omega t) B_i x0 + sin(omega t) B_i w0)
        sigma, omega = -0.4, 1.3
        Mbar = np.array([[sigma, omega], [-omega, sigma]])
        Theta = np.array([[0.7, -1.1]])
        N = np.array([[0.0], [1.0]])
        M = Mbar - N @ Theta
        prob = LtiProblem(M=M, N=N, D=[1.0, 1.0], E=1.0, x0=[0.8, -0.5])
        sol = fabricated_solution(Mbar, [sigma + 1j * omega, sigma - 1j * omega],
                                  Theta)
        grid = TimeGrid.from_span(0.0, 3.0, 0.01)
        traj = simulate_closed_loop(prob, sol, grid)
        table = tabulate_lti_quadratic(traj, prob)
        res = assemble_residual(table)
        obs = observability_series(res, table, grid, sol=sol, traj=traj)

        # independent reconstruction of the state-dependent blocks
        k, n = prob.k, prob.n
        Bs = [np.vstack([np.zeros((n, n)), 2.0 * Theta])]
        power = N.copy()  # (-M)^{i-2} N for i >= 2
        for _ in range(1, obs.Qo.shape[2]):
            block = np.vstack([-2.0 * np.diag(power[:, 0]), np.zeros((1, n))])
            Bs.append(block + Bs[-1] @ Mbar)
            power = -M @ power
        t = grid.times()
        x0 = prob.x0
        w0 = np.array([x0[1], -x0[0]])
        envelope = np.exp(sigma * t)
        for level, B in enumerate(Bs):
            expect = (envelope[:, None] * (np.cos(omega * t)[:, None] * (B @ x0)
                                           + np.sin(omega * t)[:, None] * (B @ w0)))
            gap = np.abs(obs.Qo[:, :k, level] - expect).max()
            assert gap <= 1e-9 * (1.0 + np.abs(expect).max()), "level %d" % level

    def test_benchmark1_full_rank_in_window(self, bundles):
        obs = bundles[1]["obs"]
        assert obs.expected_rank == 4
        assert obs.full_rank_fraction >= 0.99
        sol = bundles[1]["sol"]
        grid = bundles[1]["grid"]
        assert obs.window_T == pytest.approx(min(grid.tf, 5.0 / abs(sol.sigma_max)))

    def test_benchmark2_rank_deficient_everywhere(self, bundles):
        obs = bundles[2]["obs"]
        assert obs.full_rank_fraction == 0.0
        assert np.all(obs.Qp_rank <= 3)
        in_window = obs.times <= obs.window_T + 1e-12
        assert np.all(obs.Qp_rank[in_window] == 3)


class TestSoftCaseAnalysis:
    def test_benchmark2_not_solvable(self, bundles):
        sol, prob = bundles[2]["sol"], bundles[2]["problem"]
        verdict = soft_case_overdamped(sol, prob)
        assert verdict.soft_predicted == "NOT_SOLVABLE"
        ev = verdict.evidence
        assert ev["lambda1"] == pytest.approx(classify_damping(sol).lambdas[0])
        assert ev["v11_nonzero"] and ev["v12_nonzero"] and ev["theta_V1_nonzero"]

    def test_under_damped_not_applicable(self, bundles):
        with pytest.raises(NotApplicable):
            soft_case_overdamped(bundles[1]["sol"], bundles[1]["problem"])

    def test_mixed_mode_not_applicable(self, bundles):
        sol, prob = bundles[2]["sol"], bundles[2]["problem"]
        with pytest.raises(NotApplicable):
            soft_case_overdamped(sol, prob, x0=np.array([1.0, 0.5]))

    def test_critically_damped_single_mode(self):
        prob = LtiProblem(M=np.diag([-0.5, -0.5]), N=[[0.0], [1.0]],
                          D=[1.0, 1.0], E=1.0, x0=[1.0, 0.0])
        sol = fabricated_solution(-np.eye(2), [-1.0 + 0j, -1.0 + 0j])
        verdict = soft_case_overdamped(sol, prob)
        assert verdict.soft_predicted == "NOT_SOLVABLE"
        assert verdict.damping.critically_damped


class TestHardCaseAnalysis:
    def test_benchmark1_diverges(self, bundles):
        verdict = bundles[1]["verdict"]
        assert verdict.hard_predicted == "DIVERGED"
        assert verdict.soft_predicted == "SOLVABLE"
        assert verdict.evidence["soft_conjecture"] is True
        assert verdict.margins["gram_decay"] > 0
        assert not verdict.borderline

    def test_benchmark2_non_unique(self, bundles):
        verdict = bundles[2]["verdict"]
        assert verdict.hard_predicted == "NON_UNIQUE"
        assert verdict.soft_predicted == "NOT_SOLVABLE"
        assert verdict.margins["case1_decay"] < 0
        assert np.all(verdict.evidence["lambda_bar"].real < 0)

    def test_benchmark3_initial_state_dependent(self, bundles):
        verdict = bundles[3]["verdict"]
        ev = verdict.evidence
        assert verdict.hard_predicted == "NON_UNIQUE"
        assert verdict.margins["lemma_product"] < 0
        assert ev["dependence_residual"] < ev["dependence_cutoff"]

    def test_benchmark3_generic_state_solvable(self, bundles):
        sol, prob = bundles[3]["sol"], bundles[3]["problem"]
        verdict = hard_case_analysis(sol, prob, x0=np.array([1.0, 0.0]))
        assert verdict.hard_predicted == "SOLVABLE"
        assert verdict.evidence["dependence_residual"] >= verdict.evidence["dependence_cutoff"]

    def test_positive_product_solvable(self):
        prob, sol, tf_hard, g = find_convergent_underdamped(9)
        verdict = hard_case_analysis(sol, prob)
        assert verdict.hard_predicted == "SOLVABLE"
        assert verdict.margins["lemma_product"] > 0

    def test_negative_product_rescued_by_dependence(self):
        # product < 0 only opens the door to non-uniqueness; it takes an
        # initial state aligned with the dependence pair to actually lose rank
        prob, sol, tf_hard, g = find_convergent_underdamped(42)
        verdict = hard_case_analysis(sol, prob)
        assert verdict.hard_predicted == "SOLVABLE"
        assert verdict.evidence["product"] < 0
        assert verdict.evidence["dependence_residual"] >= verdict.evidence["dependence_cutoff"]

    def test_mixed_mode_real_unknown(self, bundles):
        sol, prob = bundles[2]["sol"], bundles[2]["problem"]
        verdict = hard_case_analysis(sol, prob, x0=np.array([1.0, 0.5]))
        assert verdict.hard_predicted == "UNKNOWN"
        assert verdict.soft_predicted == "UNKNOWN"
        assert "note" in verdict.evidence

    def test_not_second_order(self):
        prob = LtiProblem(M=-np.eye(3), N=[[1.0], [0.0], [0.0]],
                          D=[1.0, 1.0, 1.0], E=1.0, x0=[1.0, 0.0, 0.0])
        sol = fabricated_solution(-np.eye(3), [-1.0, -1.0, -1.0],
                                  Theta=np.zeros((1, 3)))
        with pytest.raises(NotSecondOrder):
            hard_case_analysis(sol, prob)

    def test_borderline_flagged(self):
        # open-loop growth exactly cancels the closed-loop decay to 1e-8
        sigma = -3.0 + 1e-8
        prob = LtiProblem(M=np.diag([3.0, -1.0]), N=[[1.0], [1.0]],
                          D=[1.0, 1.0], E=1.0, x0=[1.0, 0.0])
        sol = fabricated_solution(np.array([[sigma, 1.0], [-1.0, sigma]]),
                                  [sigma + 1j, sigma - 1j])
        verdict = hard_case_analysis(sol, prob)
        assert verdict.hard_predicted == "DIVERGED"
        assert verdict.borderline
        assert verdict.margins["gram_decay"] == pytest.approx(1e-8, rel=1e-3)


class TestComplexModeIdentities:
    @staticmethod
    def _delta_mu(M, sigma, omega, N):
        shift = M + sigma * np.eye(2)
        delta = np.linalg.solve(shift @ shift / omega + omega * np.eye(2), N[:, 0])
        mu = shift @ delta / omega
        return delta, mu

    def test_resolvent_splits_into_delta_mu(self):
        # (M + (sigma + j omega) I)^{-1} N  ==  mu - j delta
        rng = np.random.default_rng(7)
        cases = [example_problem(1), example_problem(3)]
        for prob in cases:
            sol = solve_are(prob)
            d = classify_damping(sol)
            delta, mu = self._delta_mu(prob.M, d.sigma, d.omega, prob.N)
            K = np.linalg.solve(prob.M + (d.sigma + 1j * d.omega) * np.eye(2),
                                prob.N[:, 0])
            assert np.abs(K - (mu - 1j * delta)).max() <= 1e-12 * (1 + np.abs(K).max())
        for _ in range(10):
            M = rng.uniform(-3, 3, (2, 2))
            sigma, omega = -abs(rng.uniform(0.1, 2)), abs(rng.uniform(0.1, 2))
            N = rng.uniform(-3, 3, (2, 1))
            if abs(np.linalg.det(M + (sigma + 1j * omega) * np.eye(2))) < 1e-3:
                continue
            delta, mu = self._delta_mu(M, sigma, omega, N)
            K = np.linalg.solve(M + (sigma + 1j * omega) * np.eye(2), N[:, 0])
            assert np.abs(K - (mu - 1j * delta)).max() <= 1e-10 * (1 + np.abs(K).max())

    def test_dependence_pair_is_complex_projection(self, bundles):
        # H_rN + H_cN must equal Re(x_a * K) componentwise, where
        # x_a = (x10 - j x20, x20 + j x10)
        verdict = bundles[3]["verdict"]
        prob = bundles[3]["problem"]
        ev = verdict.evidence
        delta, mu = ev["delta"], ev["mu"]
        K = mu - 1j * delta
        x0 = prob.x0
        xa = np.array([x0[0] - 1j * x0[1], x0[1] + 1j * x0[0]])
        combined = ev["H_rN"] + ev["H_cN"]
        assert np.abs(np.real(xa * K) - combined).max() <= 1e-12 * (1 + np.abs(combined).max())


class TestPredictVsEmpirical:
    @staticmethod
    def _soft(c, unique=True):
        return SoftRecovery(z0=np.asarray(c, dtype=float), c=np.asarray(c, dtype=float),
                            p0=np.zeros(2), objective=0.0, cond_P0_reduced=1.0,
                            reduced_rank=4 if unique else 3, unique=unique,
                            known_index=2, known_value=1.0)

    @staticmethod
    def _hard(c, unique=True):
        return HardRecovery(c=np.asarray(c, dtype=float), objective=0.0,
                            reduced_rank=2 if unique else 1, unique=unique,
                            cond_reduced=1.0, known_index=2, known_value=1.0)

    @staticmethod
    def _verdict(soft, hard):
        from ioc.solvability import CaseVerdict

        return CaseVerdict(damping=None, soft_predicted=soft, hard_predicted=hard)

    def test_solved_branch(self):
        truth = np.array([2.0, 3.0, 1.0])
        report = predict_vs_empirical(self._verdict("SOLVABLE", "SOLVABLE"),
                                      self._soft(truth), self._hard(truth), truth)
        assert report.soft_agree and report.hard_agree
        assert report.soft_observed == "recovered" and report.hard_observed == "solved"

    def test_diverged_branch(self):
        truth = np.array([2.0, 3.0, 1.0])
        asm = HardAssembly(L=None, diverged=True, first_divergence_time=1.0)
        report = predict_vs_empirical(self._verdict("SOLVABLE", "DIVERGED"),
                                      self._soft(truth), asm, truth)
        assert report.hard_observed == "diverged" and report.hard_agree
        report2 = predict_vs_empirical(self._verdict("SOLVABLE", "DIVERGED"),
                                       self._soft(truth), None, truth)
        assert report2.hard_agree

    def test_non_unique_branch(self):
        truth = np.array([2.0, 3.0, 1.0])
        far = np.array([0.1, 9.0, 1.0])
        report = predict_vs_empirical(self._verdict("NOT_SOLVABLE", "NON_UNIQUE"),
                                      self._soft(far, unique=False),
                                      self._hard(far, unique=False), truth)
        assert report.soft_observed == "failed" and report.soft_agree
        assert report.hard_observed == "non_unique" and report.hard_agree

    def test_accurate_but_non_unique_counts_as_failure(self):
        truth = np.array([2.0, 3.0, 1.0])
        report = predict_vs_empirical(self._verdict("SOLVABLE", "SOLVABLE"),
                                      self._soft(truth, unique=False),
                                      self._hard(truth, unique=False), truth)
        assert report.soft_agree is False
        assert report.hard_observed == "non_unique" and report.hard_agree is False

    def test_unknown_prediction_gives_none(self):
        truth = np.array([2.0, 3.0, 1.0])
        report = predict_vs_empirical(self._verdict("UNKNOWN", "UNKNOWN"),
                                      self._soft(truth), self._hard(truth), truth)
        assert report.soft_agree is None and report.hard_agree is None

    def test_as_dict_shape(self):
        truth = np.array([2.0, 3.0, 1.0])
        doc = predict_vs_empirical(self._verdict("SOLVABLE", "SOLVABLE"),
                                   self._soft(truth), self._hard(truth),
                                   truth).as_dict()
        assert set(doc) == {"soft", "hard", "error_threshold"}
        assert doc["soft"]["agree"] is True

    @pytest.mark.parametrize("index", [1, 2, 3])
    def test_benchmarks_agree(self, bundles, index):
        bundle = bundles[index]
        hard = bundle["hard"] if bundle["hard"] is not None else bundle["assembly"]
        report = predict_vs_empirical(bundle["verdict"], bundle["soft"], hard,
                                      bundle["truth"])
        assert report.soft_agree is True
        assert report.hard_agree is True
