"""BVP engine tests on synthetic problems with closed-form answers."""

import numpy as np
import pytest

from ratetip import bvp


def linear_segment(n_nodes=10):
    flow = bvp.make_flow(lambda y, p: y)
    return bvp.Segment(flow=flow, dim=1, n_nodes=n_nodes)


class TestConstruction:
    def test_square_check_reports_counts(self):
        seg = linear_segment()
        with pytest.raises(ValueError, match="10 equations vs 11 unknowns"):
            bvp.BvpProblem([seg], 1, lambda e, p: np.zeros(1), 1)

    def test_underdetermined_rejected(self):
        seg = linear_segment()
        with pytest.raises(ValueError, match="underdetermined"):
            bvp.BvpProblem([seg], 3, lambda e, p: np.zeros(1), 1,
                           allow_singular=True)

    def test_pack_unpack_roundtrip(self):
        seg = linear_segment(4)
        prob = bvp.BvpProblem([seg], 0, lambda e, p: np.zeros(1), 1)
        nodes = [np.arange(4.0).reshape(4, 1)]
        u = prob.pack(nodes, [])
        back, params = prob.unpack(u)
        np.testing.assert_array_equal(back[0], nodes[0])
        assert params.size == 0


class TestSolve:
    def test_linear_problem_one_step(self):
        # y' = y, y(0) + y(1) = 1 + e  =>  y(0) = 1, one Newton iteration
        seg = linear_segment()
        prob = bvp.BvpProblem(
            [seg], 0,
            lambda ends, p: np.array([ends[0][0][0] + ends[0][1][0] - (1 + np.e)]),
            1)
        guess = prob.guess_from_samples([lambda s: np.array([0.5])], [])
        sol = bvp.solve(prob, guess, tol=1e-8)
        assert sol.converged
        assert sol.iterations == 1
        assert sol.nodes(0)[0, 0] == pytest.approx(1.0, abs=1e-9)
        # mesh follows e^s
        np.testing.assert_allclose(sol.nodes(0)[:, 0],
                                   np.exp(np.linspace(0, 0.9, 10)), atol=1e-8)

    def test_reintegration_residual_stable(self):
        # tighter integration moves the residual by less than 10x solver tol
        seg = linear_segment()
        prob = bvp.BvpProblem(
            [seg], 0,
            lambda ends, p: np.array([ends[0][0][0] + ends[0][1][0] - (1 + np.e)]),
            1)
        guess = prob.guess_from_samples([lambda s: np.array([1.0])], [])
        sol = bvp.solve(prob, guess, tol=1e-9)
        tight = bvp.Segment(flow=bvp.make_flow(lambda y, p: y, rel_tol=1e-12,
                                               abs_tol=1e-14), dim=1, n_nodes=10)
        prob_t = bvp.BvpProblem([tight], 0, prob.boundary, 1)
        assert np.linalg.norm(prob_t.residual(sol.u), np.inf) < 1e-8

    def test_nonconvergence_carries_best(self):
        seg = linear_segment(2)
        prob = bvp.BvpProblem(
            [seg], 0,
            lambda ends, p: np.array([ends[0][0][0] ** 2 + 1.0]),  # no real root
            1)
        guess = prob.guess_from_samples([lambda s: np.array([1.0])], [])
        with pytest.raises(bvp.NonConvergenceError) as err:
            bvp.solve(prob, guess, tol=1e-10, max_iter=12)
        best = err.value.best
        assert best is not None and not best.converged
        assert best.residual_norm >= 1.0  # x^2 + 1 cannot drop below 1

    def test_rank_deficiency_reports_null_direction(self):
        # duplicated linear condition: Jacobian exactly singular
        seg = bvp.Segment(flow=lambda y, p, ds: y.copy(), dim=1, n_nodes=1)
        prob = bvp.BvpProblem(
            [seg], 1,
            lambda ends, p: np.array([ends[0][0][0] - p[0] - 0.5,
                                      ends[0][0][0] - p[0] - 0.5]),
            2)
        with pytest.raises(bvp.RankDeficiencyError) as err:
            bvp.solve(prob, np.array([0.7, 0.1]), tol=1e-12)
        null = err.value.null_direction
        assert null is not None
        # null direction is (1, 1)/sqrt(2): moving x and p together
        np.testing.assert_allclose(np.abs(null), [1 / np.sqrt(2)] * 2, atol=1e-6)

    def test_singular_family_minimum_norm(self):
        # circle family x^2 + p^2 = 1 declared singular: solve lands on it
        seg = bvp.Segment(flow=lambda y, p, ds: y.copy(), dim=1, n_nodes=1)
        prob = bvp.BvpProblem(
            [seg], 1, lambda ends, p: np.array([ends[0][0][0] ** 2 + p[0] ** 2 - 1]),
            1, allow_singular=True)
        sol = bvp.solve(prob, np.array([0.9, 0.5]), tol=1e-12)
        assert sol.u[0] ** 2 + sol.u[1] ** 2 == pytest.approx(1.0, abs=1e-10)


def circle_problem():
    seg = bvp.Segment(flow=lambda y, p, ds: y.copy(), dim=1, n_nodes=1)
    return bvp.BvpProblem(
        [seg], 1, lambda ends, p: np.array([ends[0][0][0] ** 2 + p[0] ** 2 - 1]),
        1, allow_singular=True)


class TestContinuation:
    def test_circle_folds_and_closure(self):
        prob = circle_problem()
        start = bvp.solve(prob, np.array([0.8, 0.6]), tol=1e-12)
        branch = bvp.continue_solution(prob, start, param_index=0, step=0.08,
                                       max_points=200, tol=1e-11)
        assert branch.reason == "closed"
        ps = branch.param_values(0)
        xs = np.array([pt.u[0] for pt in branch.points])
        np.testing.assert_allclose(np.sqrt(ps ** 2 + xs ** 2), 1.0, atol=1e-8)
        assert len(branch.folds) == 2
        fold_ps = sorted(f.param_value for f in branch.folds)
        assert fold_ps[0] == pytest.approx(-1.0, abs=0.05)
        assert fold_ps[1] == pytest.approx(1.0, abs=0.05)

    def test_linear_family_exact(self):
        # y' = y with y(0) + y(1) = p (1 + e): branch is y(0) = p exactly
        seg = linear_segment()
        prob = bvp.BvpProblem(
            [seg], 1,
            lambda ends, p: np.array([ends[0][0][0] + ends[0][1][0]
                                      - p[0] * (1 + np.e)]),
            1, allow_singular=True)
        guess = prob.guess_from_samples([lambda s: np.array([np.exp(s)])], [1.0])
        start = bvp.solve(prob, guess, tol=1e-10)
        branch = bvp.continue_solution(prob, start, param_index=0, step=0.1,
                                       window=(0.5, 2.0), max_points=100,
                                       tol=1e-10)
        assert branch.reason == "window"
        for pt in branch.points:
            assert pt.nodes(0)[0, 0] == pytest.approx(pt.params[0], abs=1e-8)

    def test_reversed_retrace(self):
        # run down a fold-free arc of the circle and back up again
        prob = circle_problem()
        start = bvp.solve(prob, np.array([0.6, 0.8]), tol=1e-12)
        fwd = bvp.continue_solution(prob, start, param_index=0, direction=-1.0,
                                    step=0.1, max_step=0.1, max_points=10,
                                    tol=1e-11)
        assert not fwd.folds
        back = bvp.continue_solution(prob, fwd.points[-1], param_index=0,
                                     direction=1.0, step=0.1, max_step=0.1,
                                     max_points=12, tol=1e-11)
        d = np.min([np.hypot(pt.u[0] - start.u[0], pt.u[1] - start.u[1])
                    for pt in back.points])
        assert d < 0.1
        radii = [np.hypot(pt.u[0], pt.u[1]) for pt in back.points]
        np.testing.assert_allclose(radii, 1.0, atol=1e-8)

    def test_step_halving_consistency(self):
        # halving steps keeps the curve within 1e-4 in (p, x) space (both are
        # on the exact circle, so compare against the circle)
        prob = circle_problem()
        start = bvp.solve(prob, np.array([0.6, 0.8]), tol=1e-12)
        for step in (0.1, 0.05):
            br = bvp.continue_solution(prob, start, param_index=0, step=step,
                                       max_points=300, tol=1e-11)
            radii = np.array([np.hypot(pt.u[0], pt.u[1]) for pt in br.points])
            np.testing.assert_allclose(radii, 1.0, atol=1e-4)

    def test_stall_returns_partial_branch(self):
        calls = {"n": 0}

        def wall_flow(y, p, ds):
            if y[0] > 1.5:
                raise RuntimeError("wall")
            return y.copy()

        seg = bvp.Segment(flow=wall_flow, dim=1, n_nodes=1)
        prob = bvp.BvpProblem(
            [seg], 1, lambda ends, p: np.array([ends[0][0][0] - p[0]]),
            1, allow_singular=True)
        start = bvp.solve(prob, np.array([1.0, 1.0]), tol=1e-12)
        with pytest.raises(bvp.ContinuationStallError) as err:
            bvp.continue_solution(prob, start, param_index=0, direction=1.0,
                                  step=0.2, min_step=1e-6, max_points=50,
                                  tol=1e-11)
        partial = err.value.branch
        assert partial is not None and len(partial) >= 1
        assert all(pt.u[0] <= 1.5 + 1e-9 for pt in partial.points)
