"""ILC update law, acceptance/stopping logic, and the tracking controller,
checked against closed-form oracles and synthetic logs."""

import numpy as np
import pytest

from pronk import dynamics as dyn
from pronk.bezier import MotionPrimitive
from pronk.control import (
    GainSet,
    LearningState,
    TrackingController,
    accept_iteration,
    acceptance_threshold,
    avg_rmse,
    feedback_torque,
    ilc_update,
    phase_grid,
    resample_stride,
    rmse_joint,
    should_stop,
    total_torque,
    wbc_torque,
)
from pronk.model import HybridState, Mode, RobotModel
from pronk.simulate import TrajectoryLog


class TestGains:
    def test_negative_gain_rejected(self):
        with pytest.raises(ValueError):
            GainSet(kp_b=[-1.0, 1.0], kd_b=[1.0, 1.0],
                    kp_f=[1.0, 1.0], kd_f=[1.0, 1.0])

    def test_phase_lead_range_enforced(self):
        with pytest.raises(ValueError):
            GainSet(kp_b=[1.0], kd_b=[1.0], kp_f=[1.0], kd_f=[1.0], ds=0.5)

    def test_default_shapes(self):
        g = GainSet.default(2)
        assert g.kp_b.shape == (2,) and g.ds == 0.02


class TestTorqueLaws:
    def test_feedback_is_pd_law(self):
        g = GainSet(kp_b=[10.0, 20.0], kd_b=[1.0, 2.0],
                    kp_f=[1.0, 1.0], kd_f=[1.0, 1.0])
        e, ed = np.array([0.1, -0.2]), np.array([1.0, 0.5])
        tau, sat = feedback_torque(g, e, ed)
        np.testing.assert_allclose(tau, [10.0 * 0.1 + 1.0, 20.0 * -0.2 + 1.0])
        assert not sat

    def test_feedback_saturation_flagged(self):
        g = GainSet(kp_b=[100.0], kd_b=[0.0], kp_f=[1.0], kd_f=[1.0])
        tau, sat = feedback_torque(g, np.array([10.0]), np.array([0.0]),
                                   tau_max=[33.5])
        assert tau[0] == pytest.approx(33.5) and sat

    def test_grid_feedback_matches_columnwise(self):
        g = GainSet.default(2)
        rng = np.random.default_rng(0)
        E, Ed = rng.normal(size=(2, 7)), rng.normal(size=(2, 7))
        T, _ = feedback_torque(g, E, Ed)
        for i in range(7):
            col, _ = feedback_torque(g, E[:, i], Ed[:, i])
            np.testing.assert_allclose(T[:, i], col, atol=1e-14)

    def test_total_torque_clips(self):
        out = total_torque([30.0, -30.0], [10.0, -10.0], (33.5, 33.5))
        np.testing.assert_allclose(out, [33.5, -33.5])

    def test_wbc_matches_inverse_dynamics(self):
        m = RobotModel()
        rng = np.random.default_rng(1)
        q = np.array([0.0, 0.3, 0.1, 0.8, -1.5])
        qd, qdd = rng.normal(size=5), rng.normal(size=5)
        lam = np.array([1.0, 50.0])
        np.testing.assert_allclose(
            wbc_torque(m, q, qd, qdd, lam),
            np.asarray(dyn.inverse_dynamics(m.params(), q, qd, qdd, lam)),
            atol=1e-10)

    def test_wbc_dimension_mismatch(self):
        m = RobotModel()
        with pytest.raises(ValueError):
            wbc_torque(m, np.zeros(4), np.zeros(5), np.zeros(5), np.zeros(2))


class TestErrorMetrics:
    def test_rmse_matches_numpy_oracle(self):
        rng = np.random.default_rng(2)
        a, d = rng.normal(size=100), rng.normal(size=100)
        assert rmse_joint(a, d) == pytest.approx(np.sqrt(np.mean((a - d) ** 2)))

    def test_rmse_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse_joint(np.zeros(3), np.zeros(4))

    def test_avg_rmse_is_mean(self):
        assert avg_rmse([0.1, 0.3]) == pytest.approx(0.2)


class TestAcceptance:
    def test_threshold_endpoints(self):
        # k = 0: threshold equals the baseline; k -> inf: approaches delta_e
        assert acceptance_threshold(0.5, 0.03, 1.0, 0) == pytest.approx(0.5)
        assert acceptance_threshold(0.5, 0.03, 1.0, 10**6) == pytest.approx(0.03, abs=1e-5)

    def test_threshold_monotone_decreasing(self):
        th = [acceptance_threshold(0.5, 0.03, 1.0, k) for k in range(30)]
        assert all(a > b for a, b in zip(th, th[1:]))

    def test_accept_is_strict_comparison(self):
        th = acceptance_threshold(0.5, 0.03, 1.0, 4)
        assert accept_iteration(th - 1e-12, 0.5, 0.03, 1.0, 4)
        assert not accept_iteration(th, 0.5, 0.03, 1.0, 4)


class TestStopLogic:
    def test_randomized_histories_match_brute_force(self):
        """100 random learning histories against a counting oracle."""
        rng = np.random.default_rng(3)
        delta_e, kappa = 0.03, 1.2
        for _ in range(100):
            n_e = int(rng.integers(1, 5))
            ks = rng.choice(np.arange(1, 30), size=rng.integers(1, 20),
                            replace=False)
            hist = {int(k): float(rng.uniform(0.0, 0.1)) for k in ks}
            oracle = sum(1 for k, d in hist.items()
                         if k >= 3 and d < kappa * delta_e) >= n_e
            assert should_stop(hist, delta_e, kappa, n_e) == oracle

    def test_early_iterations_never_count(self):
        hist = {1: 0.0, 2: 0.0}
        assert not should_stop(hist, 0.03, 1.2, 1)
        hist[3] = 0.0
        assert should_stop(hist, 0.03, 1.2, 1)


class TestIlcUpdate:
    def _state(self, tau, e, ed):
        st = LearningState()
        st.tau_prev, st.e_prev, st.ed_prev = tau, e, ed
        return st

    def test_zero_error_is_fixed_point(self):
        """Perfect tracking leaves the feedforward unchanged (100 profiles)."""
        g = GainSet.default(2)
        s = phase_grid(101)
        rng = np.random.default_rng(4)
        for _ in range(100):
            tau = rng.normal(size=(2, s.size))
            st = self._state(tau, np.zeros_like(tau), np.zeros_like(tau))
            np.testing.assert_array_equal(ilc_update(st, g, s), tau)

    def test_update_is_shifted_pd_of_error(self):
        g = GainSet(kp_b=[1.0, 1.0], kd_b=[0.0, 0.0],
                    kp_f=[2.0, 3.0], kd_f=[0.5, 0.25], ds=0.05)
        s = phase_grid(201)
        e = np.stack([s, s**2])          # known smooth errors
        ed = np.stack([np.cos(s), np.sin(s)])
        tau = np.zeros_like(e)
        out = ilc_update(self._state(tau, e, ed), g, s)
        s_shift = np.minimum(s + 0.05, 1.0)
        expected = np.stack([
            2.0 * s_shift + 0.5 * np.cos(np.minimum(s + 0.05, s[-1])),
            3.0 * s_shift**2 + 0.25 * np.sin(np.minimum(s + 0.05, s[-1])),
        ])
        np.testing.assert_allclose(out, expected, atol=1e-3)

    def test_requires_bootstrap(self):
        with pytest.raises(ValueError):
            ilc_update(LearningState(), GainSet.default(2), phase_grid(101))

    def test_linear_in_error(self):
        """The update minus tau_prev is linear in (e, ed)."""
        g = GainSet.default(2)
        s = phase_grid(101)
        rng = np.random.default_rng(5)
        tau = rng.normal(size=(2, s.size))
        e1, ed1 = rng.normal(size=(2, s.size)), rng.normal(size=(2, s.size))
        e2, ed2 = rng.normal(size=(2, s.size)), rng.normal(size=(2, s.size))
        u1 = ilc_update(self._state(tau, e1, ed1), g, s) - tau
        u2 = ilc_update(self._state(tau, e2, ed2), g, s) - tau
        u12 = ilc_update(self._state(tau, e1 + e2, ed1 + ed2), g, s) - tau
        np.testing.assert_allclose(u12, u1 + u2, atol=1e-12)


def constant_primitive(c=(0.8, -1.6), T=0.4):
    B = np.tile(np.asarray(c, dtype=float)[:, None], (1, 7))
    meta = {"q0": [0.0, 0.3, 0.0, c[0], c[1]], "qd0": [0.0] * 5}
    return MotionPrimitive(B, 0.0, T, "pronk", meta)


def zero_ff(n=101):
    return np.zeros((2, n))


class TestTrackingController:
    def test_zero_error_gives_zero_feedback(self):
        prim = constant_primitive()
        ctrl = TrackingController(RobotModel(), prim, GainSet.default(2),
                                  phase_grid(101), tau_f=zero_ff())
        st = HybridState(np.array([0.0, 0.3, 0.0, 0.8, -1.6]), np.zeros(5),
                         Mode.STANCE, 0.0, 0.3)
        np.testing.assert_allclose(ctrl(st), 0.0, atol=1e-12)

    def test_bootstrap_adds_gravity_compensation_in_stance(self):
        from pronk.model import gravity_compensation

        m = RobotModel()
        prim = constant_primitive()
        ctrl = TrackingController(m, prim, GainSet.default(2), phase_grid(101))
        q = np.array([0.0, 0.3, 0.0, 0.8, -1.6])
        st = HybridState(q, np.zeros(5), Mode.STANCE, 0.0, 0.3)
        np.testing.assert_allclose(ctrl(st), gravity_compensation(m, q)[0],
                                   atol=1e-12)
        flight = HybridState(q, np.zeros(5), Mode.FLIGHT, 0.0, 0.3)
        np.testing.assert_allclose(ctrl(flight), 0.0, atol=1e-12)

    def test_feedforward_added(self):
        prim = constant_primitive()
        s = phase_grid(101)
        tau_f = np.stack([np.full(s.size, 2.0), np.full(s.size, -1.0)])
        ctrl = TrackingController(RobotModel(), prim, GainSet.default(2), s,
                                  tau_f=tau_f)
        st = HybridState(np.array([0.0, 0.3, 0.0, 0.8, -1.6]), np.zeros(5),
                         Mode.STANCE, 0.0, 0.5)
        np.testing.assert_allclose(ctrl(st), [2.0, -1.0], atol=1e-12)

    def test_pd_error_response(self):
        prim = constant_primitive()
        g = GainSet.default(2)
        ctrl = TrackingController(RobotModel(), prim, g, phase_grid(101),
                                  tau_f=zero_ff())
        q = np.array([0.0, 0.3, 0.0, 0.7, -1.6])  # thigh off by -0.1
        st = HybridState(q, np.zeros(5), Mode.STANCE, 0.0, 0.5)
        tau = ctrl(st)
        assert tau[0] == pytest.approx(g.kp_b[0] * 0.1)
        assert tau[1] == pytest.approx(0.0, abs=1e-12)

    def test_attitude_correction_applied_in_stance_only(self):
        from pronk.stabilizers import AttitudeGrid, AttitudePolicy

        grid = AttitudeGrid(n_pitch=5, n_rate=5, actions=(0.0,))
        pol = AttitudePolicy(grid, np.zeros(grid.n_states),
                             np.full(grid.n_states, 3.0))
        prim = constant_primitive()
        ctrl = TrackingController(RobotModel(), prim, GainSet.default(2),
                                  phase_grid(101), tau_f=zero_ff(),
                                  attitude=pol)
        q = np.array([0.0, 0.3, 0.0, 0.8, -1.6])
        stance = HybridState(q, np.zeros(5), Mode.STANCE, 0.0, 0.2)
        assert ctrl(stance)[0] == pytest.approx(3.0)
        flight = HybridState(q, np.zeros(5), Mode.FLIGHT, 0.0, 0.2)
        assert ctrl(flight)[0] == pytest.approx(0.0, abs=1e-12)

    def test_speed_regulation_shifts_thigh_target_in_flight(self):
        from pronk.stabilizers import SpeedRegulator

        prim = constant_primitive()
        g = GainSet.default(2)
        reg = SpeedRegulator(k_theta=0.1, qd_x_des=0.0)
        ctrl = TrackingController(RobotModel(), prim, g, phase_grid(101),
                                  speed_reg=reg)
        q = np.array([0.0, 0.3, 0.0, 0.8, -1.6])
        qd = np.array([0.5, 0.0, 0.0, 0.0, 0.0])  # flying 0.5 m/s too fast
        tau = ctrl(HybridState(q, qd, Mode.FLIGHT, 0.0, 0.8))
        # target thigh shifted by k_theta * speed error
        assert tau[0] == pytest.approx(g.kp_b[0] * 0.1 * 0.5)

    def test_measurement_noise_is_reproducible(self):
        prim = constant_primitive()
        outs = []
        for _ in range(2):
            ctrl = TrackingController(RobotModel(), prim, GainSet.default(2),
                                      phase_grid(101), meas_noise_std=0.01,
                                      rng=np.random.default_rng(7))
            st = HybridState(np.array([0.0, 0.3, 0.0, 0.8, -1.6]), np.zeros(5),
                             Mode.STANCE, 0.0, 0.3)
            outs.append(ctrl(st))
        np.testing.assert_array_equal(outs[0], outs[1])
        assert np.any(outs[0] != 0.0)


class TestResample:
    def test_perfect_tracking_has_zero_error(self):
        prim = constant_primitive()
        log = TrajectoryLog()
        for i, s in enumerate(np.linspace(0.0, 1.0, 60)):
            st = HybridState(np.array([0.0, 0.3, 0.0, 0.8, -1.6]), np.zeros(5),
                             Mode.STANCE, t=i * 1e-3, s=float(s))
            log.append(st, np.array([1.0, -1.0]))
        e, ed, tau_g = resample_stride(log, prim, phase_grid(101))
        np.testing.assert_allclose(e, 0.0, atol=1e-12)
        np.testing.assert_allclose(tau_g[0], 1.0, atol=1e-12)

    def test_known_error_recovered(self):
        prim = constant_primitive()
        log = TrajectoryLog()
        for i, s in enumerate(np.linspace(0.0, 1.0, 400)):
            q = np.array([0.0, 0.3, 0.0, 0.8 + 0.1 * np.sin(np.pi * s), -1.6])
            st = HybridState(q, np.zeros(5), Mode.STANCE, t=i * 1e-3, s=float(s))
            log.append(st, np.zeros(2))
        s_grid = phase_grid(101)
        e, ed, _ = resample_stride(log, prim, s_grid)
        np.testing.assert_allclose(e[0], -0.1 * np.sin(np.pi * s_grid), atol=1e-4)
        np.testing.assert_allclose(e[1], 0.0, atol=1e-12)
