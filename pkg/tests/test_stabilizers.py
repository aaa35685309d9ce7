"""Speed regulation and the value-iteration attitude policy, checked
against a brute-force dynamic-programming oracle on a small MDP and
direct Bellman-residual evaluation."""

import numpy as np
import pytest

from pronk.model import RobotModel
from pronk.stabilizers import (
    AttitudeGrid,
    AttitudePolicy,
    SpeedRegulator,
    ValueIterationDivergence,
    pitch_step,
    touchdown_angle,
    touchdown_joints,
    train_attitude_policy,
    value_iterate_core,
)


class TestSpeedRegulator:
    def test_touchdown_angle_is_proportional_correction(self):
        reg = SpeedRegulator(k_theta=0.05, qd_x_des=0.3)
        assert touchdown_angle(reg, 0.1, 0.3) == pytest.approx(0.1)
        assert touchdown_angle(reg, 0.1, 0.5) == pytest.approx(0.1 + 0.05 * 0.2)
        assert touchdown_angle(reg, 0.1, 0.0) == pytest.approx(0.1 - 0.05 * 0.3)

    def test_nonpositive_gain_rejected(self):
        with pytest.raises(ValueError):
            SpeedRegulator(k_theta=0.0, qd_x_des=0.0)

    def test_touchdown_joints_clamp_flag(self):
        m = RobotModel()
        reg = SpeedRegulator(k_theta=1.0, qd_x_des=0.0)
        q_th, q_ca, clamped = touchdown_joints(m, reg, 0.8, 0.0, -1.6)
        assert not clamped
        assert q_th == pytest.approx(0.8 - 0.5 * -1.6)
        # a huge speed error pushes the thigh outside its limits
        _, _, clamped = touchdown_joints(m, reg, 0.8, 50.0, -1.6)
        assert clamped


class TestGrid:
    def test_bilinear_weights_partition_of_unity(self):
        grid = AttitudeGrid(n_pitch=11, n_rate=9)
        rng = np.random.default_rng(0)
        z = np.column_stack([rng.uniform(-0.4, 0.4, 100),
                             rng.uniform(-3.0, 3.0, 100)])
        idx, w = grid.bilinear_weights(z)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(w >= -1e-12)

    def test_bilinear_interpolation_exact_on_linear_functions(self):
        grid = AttitudeGrid(n_pitch=11, n_rate=9)
        Z = grid.states()
        f = 2.0 * Z[:, 0] - 0.7 * Z[:, 1] + 0.3
        rng = np.random.default_rng(1)
        z = np.column_stack([rng.uniform(-0.4, 0.4, 50),
                             rng.uniform(-3.0, 3.0, 50)])
        idx, w = grid.bilinear_weights(z)
        got = (w * f[idx]).sum(axis=1)
        np.testing.assert_allclose(got, 2.0 * z[:, 0] - 0.7 * z[:, 1] + 0.3,
                                   atol=1e-12)

    def test_out_of_range_points_clamp(self):
        grid = AttitudeGrid()
        z = np.array([[10.0, -10.0]])
        c = grid.clamp(z)
        assert c[0, 0] == grid.pitch_max and c[0, 1] == grid.rate_min

    def test_pitch_step_matches_closed_form(self):
        z = np.array([[0.1, -0.5]])
        out = pitch_step(I_pitch=0.04, dt=0.02, z=z, a=1.0)
        acc = 1.0 / 0.04
        assert out[0, 0] == pytest.approx(0.1 + 0.02 * -0.5 + 0.5 * 0.02**2 * acc)
        assert out[0, 1] == pytest.approx(-0.5 + 0.02 * acc)


class TestValueIterationCore:
    def _random_mdp(self, n, a, k, seed):
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, (n, a, k))
        w = rng.uniform(0.1, 1.0, (n, a, k))
        w /= w.sum(axis=2, keepdims=True)
        cost = rng.uniform(0.0, 1.0, (n, a))
        return idx, w, cost

    def test_matches_brute_force_fixed_point(self):
        """Oracle: plain nested-loop Bellman iteration on a random MDP."""
        n, a, k = 12, 4, 3
        idx, w, cost = self._random_mdp(n, a, k, seed=2)
        gamma = 0.9
        V, pi, res = value_iterate_core(idx, w, cost, gamma,
                                        np.arange(a), tol=1e-12)
        V_ref = np.zeros(n)
        for _ in range(3000):
            V_new = np.empty(n)
            for s in range(n):
                q = [cost[s, j] + gamma * sum(
                        w[s, j, m] * V_ref[idx[s, j, m]] for m in range(k))
                     for j in range(a)]
                V_new[s] = min(q)
            if np.max(np.abs(V_new - V_ref)) < 1e-13:
                V_ref = V_new
                break
            V_ref = V_new
        np.testing.assert_allclose(V, V_ref, atol=1e-10)
        # greedy policy agrees with the brute-force argmin
        for s in range(n):
            q = [cost[s, j] + gamma * w[s, j] @ V_ref[idx[s, j]]
                 for j in range(a)]
            assert q[pi[s]] == pytest.approx(min(q), abs=1e-10)

    def test_bellman_residual_below_tolerance(self):
        n, a, k = 30, 5, 4
        idx, w, cost = self._random_mdp(n, a, k, seed=3)
        V, _, res = value_iterate_core(idx, w, cost, 0.95, np.arange(a),
                                       tol=1e-8)
        backup = (cost + 0.95 * np.einsum("sak,sak->sa", w, V[idx])).min(axis=1)
        assert np.max(np.abs(backup - V)) <= 1e-8

    def test_divergence_detected(self):
        # discount > 1 breaks the contraction
        n, a, k = 10, 2, 2
        idx, w, cost = self._random_mdp(n, a, k, seed=4)
        with pytest.raises(ValueIterationDivergence):
            value_iterate_core(idx, w, cost, 1.2, np.arange(a), max_iter=4000)

    def test_tie_break_follows_action_order(self):
        # two identical actions: the preferred order must pick the first
        n, k = 6, 2
        rng = np.random.default_rng(5)
        idx1 = rng.integers(0, n, (n, 1, k))
        w1 = np.full((n, 1, k), 0.5)
        idx = np.concatenate([idx1, idx1], axis=1)
        w = np.concatenate([w1, w1], axis=1)
        cost = np.tile(rng.uniform(0, 1, (n, 1)), (1, 2))
        _, pi, _ = value_iterate_core(idx, w, cost, 0.9, np.array([1, 0]))
        assert np.all(pi == 1)


SMALL_GRID = AttitudeGrid(n_pitch=31, n_rate=31,
                          actions=tuple(np.linspace(-5.0, 5.0, 11)))


@pytest.fixture(scope="module")
def policy():
    return train_attitude_policy(tol=1e-6)


class TestAttitudePolicy:
    def test_bellman_residual_of_trained_policy(self, policy):
        """Recompute one Bellman backup from scratch and compare."""
        grid = policy.grid
        Z = grid.states()
        actions = np.asarray(grid.actions)
        Q = np.diag([10.0, 1.0])
        dz = Z
        state_cost = np.einsum("si,ij,sj->s", dz, Q, dz)
        qvals = np.empty((grid.n_states, actions.size))
        for j, a in enumerate(actions):
            z_next = pitch_step(policy.meta["I_pitch"], policy.meta["dt"],
                                Z, float(a))
            idx, w = grid.bilinear_weights(z_next)
            v_next = (w * policy.V[idx]).sum(axis=1)
            qvals[:, j] = state_cost + 0.01 * a**2 + 0.98 * v_next
        backup = qvals.min(axis=1)
        assert np.max(np.abs(backup - policy.V)) <= 1e-6

    def test_correction_is_stabilizing(self, policy):
        """Positive pitch at rest gets a negative (restoring) torque."""
        tau, clamped = policy.correction([0.2, 0.0])
        assert tau < 0.0 and not clamped
        tau, _ = policy.correction([-0.2, 0.0])
        assert tau > 0.0

    def test_correction_flags_out_of_grid(self, policy):
        _, clamped = policy.correction([1.0, 0.0])
        assert clamped

    def test_closed_loop_pitch_decays(self, policy):
        """Rolling the policy out drives the pitch error toward zero."""
        I, dt = policy.meta["I_pitch"], policy.meta["dt"]
        z = np.array([[0.3, 0.0]])
        for _ in range(400):
            a, _ = policy.correction(z[0])
            z = pitch_step(I, dt, z, a)
        # the residual offset is bounded by one grid cell in pitch
        cell = (policy.grid.pitch_max - policy.grid.pitch_min) / (policy.grid.n_pitch - 1)
        assert abs(z[0, 0]) <= cell + 1e-6 and abs(z[0, 1]) < 0.2

    def test_value_is_nonnegative_and_zero_at_goal(self, policy):
        assert policy.value([0.0, 0.0]) == pytest.approx(0.0, abs=1e-3)
        assert policy.value([0.3, 1.0]) > 0.0

    def test_save_load_roundtrip(self, policy, tmp_path):
        path = tmp_path / "policy.json"
        policy.save(path)
        loaded = AttitudePolicy.load(path)
        np.testing.assert_array_equal(loaded.V, policy.V)
        np.testing.assert_array_equal(loaded.pi, policy.pi)
        assert loaded.grid == policy.grid
        z = [0.13, -0.7]
        assert loaded.correction(z) == policy.correction(z)

    def test_indefinite_state_cost_rejected(self):
        with pytest.raises(ValueError):
            train_attitude_policy(Q=np.diag([1.0, -1.0]), grid=SMALL_GRID)
