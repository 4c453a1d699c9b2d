"""Adaptive integrator tests: accuracy, events, escape, failure modes."""

import numpy as np
import pytest

from ratetip.integrator import (
    IntegrationFailure,
    IntegratorConfig,
    Trajectory,
    event_crossing,
    integrate,
)
from ratetip.model import SystemParams, extended_field


@pytest.fixture
def params():
    return SystemParams()


def ext_rhs(params):
    return lambda w: extended_field(w, params)


class TestBasicIntegration:
    def test_zero_field_constant(self):
        w0 = np.array([1.0, -2.0, 0.5])
        traj = integrate(lambda w: np.zeros(3), w0, 0.0, 5.0, IntegratorConfig())
        np.testing.assert_allclose(traj.final_state, w0, atol=1e-14)
        assert traj.reason == "time"

    def test_periodic_return(self, params):
        # point on the stable past orbit returns after 2 pi / omega
        rho = np.sqrt((1 - np.sqrt(1 - 4 * params.a)) / 2)
        w0 = np.array([rho, 0.0, 0.0])
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)
        traj = integrate(ext_rhs(params), w0, 0.0, 2 * np.pi / 3, cfg)
        np.testing.assert_allclose(traj.final_state, w0, atol=1e-9)

    def test_linear_oracle(self):
        # block system: rotation in (x, y), exponential in the third component
        mat = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.5]])
        w0 = np.array([1.0, 0.0, 1.0])
        t = 2.3
        traj = integrate(lambda w: mat @ w, w0, 0.0, t,
                         IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
        expect = np.array([np.cos(t), -np.sin(t), np.exp(0.5 * t)])
        np.testing.assert_allclose(traj.final_state, expect, atol=1e-9)

    def test_backward_forward_roundtrip(self, params):
        cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)
        rho = np.sqrt((1 - np.sqrt(1 - 4 * params.a)) / 2)
        w0 = np.array([rho, 0.0, 0.0])
        back = integrate(ext_rhs(params), w0, 0.0, -7.0, cfg)
        forth = integrate(ext_rhs(params), back.final_state, -7.0, 0.0, cfg)
        np.testing.assert_allclose(forth.final_state, w0, atol=100 * cfg.rel_tol)

    def test_tolerance_halving_sanity(self, params):
        w0 = np.array([0.5, -0.3, 1.0])
        loose = integrate(ext_rhs(params), w0, 0.0, 15.0,
                          IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10))
        tight = integrate(ext_rhs(params), w0, 0.0, 15.0,
                          IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14))
        err = np.max(np.abs(loose.final_state - tight.final_state))
        assert err < 1e-6

    def test_dense_output(self):
        # dense interpolation matches the closed-form solution between steps
        mat = np.array([[0.0, 1.0], [-1.0, 0.0]])
        traj = integrate(lambda w: mat @ w, np.array([1.0, 0.0]), 0.0, 10.0,
                         IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12))
        for t in np.linspace(0.3, 9.7, 31):
            np.testing.assert_allclose(traj(t), [np.cos(t), -np.sin(t)],
                                       atol=1e-7)

    def test_monotone_time_and_reason(self, params):
        traj = integrate(ext_rhs(params), np.array([0.35, 0.0, 0.01]), 0.0, 3.0,
                         IntegratorConfig())
        assert np.all(np.diff(traj.ts) > 0)
        assert traj.reason == "time"
        assert traj.t_final == pytest.approx(3.0)


class TestEscape:
    def test_escape_detected(self, params):
        # start far outside the unstable orbit; quintic term blows up
        w0 = np.array([3.5, 0.0, 0.0])
        traj = integrate(ext_rhs(params), w0, 0.0, 10.0, IntegratorConfig(),
                         escape=True)
        assert traj.reason == "escape"
        x, y, lam = traj.final_state
        assert (x - lam) ** 2 + y ** 2 >= 4.0 - 1e-9
        assert traj.t_final < 10.0

    def test_bounded_run_not_flagged(self, params):
        # a tracking trajectory (low rate, near the stable orbit) never trips
        # the escape test
        rho = np.sqrt((1 - np.sqrt(1 - 4 * params.a)) / 2)
        w0 = np.array([rho + 0.01, 0.0, 0.01])
        traj = integrate(ext_rhs(params), w0, 0.0, 5.0, IntegratorConfig(),
                         escape=True)
        assert traj.reason == "time"


class TestFailure:
    def test_blowup_raises_with_partial_trajectory(self):
        # y' = y^2 from y=1 blows up at t=1
        with pytest.raises(IntegrationFailure) as err:
            integrate(lambda w: w * w, np.array([1.0]), 0.0, 2.0,
                      IntegratorConfig())
        partial = err.value.trajectory
        assert isinstance(partial, Trajectory)
        assert partial.t_final < 2.0
        assert partial.final_state[0] > 1e3


class TestEventCrossing:
    def test_shift_crossing_oracle(self, params):
        # Lambda rises from 0.01 through lambda_max/2 at t = ln(799)/(r lmax)
        w0 = np.array([0.2, 0.0, 0.01])
        cfg = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13)
        traj = integrate(ext_rhs(params), w0, 0.0, 20.0, cfg)
        hit = event_crossing(traj, np.array([0.0, 0.0, 1.0]), 4.0)
        assert hit is not None
        t_cross, w_cross = hit
        assert t_cross == pytest.approx(np.log(799.0) / 0.8, abs=1e-8)
        assert w_cross[2] == pytest.approx(4.0, abs=1e-9)

    def test_single_crossing(self, params):
        w0 = np.array([0.2, 0.0, 0.01])
        traj = integrate(ext_rhs(params), w0, 0.0, 60.0, IntegratorConfig())
        # Lambda is monotone so there is exactly one crossing; the finder
        # returns the first
        hit = event_crossing(traj, np.array([0.0, 0.0, 1.0]), 4.0)
        t2 = event_crossing(traj, np.array([0.0, 0.0, 1.0]), 7.99)
        assert hit is not None and t2 is not None
        assert hit[0] < t2[0]

    def test_none_when_plane_unreached(self, params):
        # Lambda = 0 is invariant: the plane Lambda = 4 is never crossed
        w0 = np.array([0.4, 0.0, 0.0])
        traj = integrate(ext_rhs(params), w0, 0.0, 10.0, IntegratorConfig())
        assert event_crossing(traj, np.array([0.0, 0.0, 1.0]), 4.0) is None

    def test_backward_crossing(self, params):
        w0 = np.array([0.2, 0.0, 4.0])
        traj = integrate(ext_rhs(params), w0, 0.0, -15.0,
                         IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
        hit = event_crossing(traj, np.array([0.0, 0.0, 1.0]), 1.0)
        assert hit is not None
        t_cross, w_cross = hit
        assert w_cross[2] == pytest.approx(1.0, abs=1e-9)
        assert t_cross == pytest.approx(-np.log(7.0) / 0.8, abs=1e-7)


class TestConfigValidation:
    def test_positive_tolerances(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(abs_tol=-1e-9)
