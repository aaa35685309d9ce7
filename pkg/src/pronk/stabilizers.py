"""Speed and attitude stabilization around the tracked reference.

Forward speed is regulated by shifting the leg touchdown angle in
proportion to the speed error (Raibert-style foot placement).  Torso pitch
is regulated by a feedback policy computed offline with value iteration on
a discretized (pitch, pitch-rate) grid; the resulting torque correction is
applied at the thigh joint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import RobotModel


@dataclass(frozen=True)
class SpeedRegulator:
    """Touchdown-angle correction: d_theta = K_theta * (speed - target)."""

    k_theta: float
    qd_x_des: float

    def __post_init__(self):
        if self.k_theta <= 0.0:
            raise ValueError("K_theta must be positive")


def touchdown_angle(reg: SpeedRegulator, theta_nominal: float, qd_x: float) -> float:
    """Corrected desired leg angle just before touchdown."""
    return theta_nominal + reg.k_theta * (qd_x - reg.qd_x_des)


def touchdown_joints(model: RobotModel, reg: SpeedRegulator, theta_nominal: float,
                     qd_x: float, q_calf: float) -> tuple[float, float, bool]:
    """Corrected (q_thigh, q_calf) holding leg length; clamped flag on IK limits."""
    theta_d = touchdown_angle(reg, theta_nominal, qd_x)
    return model.leg_joints_for_angle(theta_d, q_calf)


# --- value-iteration attitude policy -----------------------------------------


@dataclass(frozen=True)
class AttitudeGrid:
    """Regular (pitch, pitch-rate) grid with a finite torque-correction set."""

    pitch_min: float = -0.4
    pitch_max: float = 0.4
    rate_min: float = -3.0
    rate_max: float = 3.0
    n_pitch: int = 81
    n_rate: int = 81
    actions: tuple = tuple(np.linspace(-5.0, 5.0, 21))

    @property
    def pitch_axis(self) -> np.ndarray:
        return np.linspace(self.pitch_min, self.pitch_max, self.n_pitch)

    @property
    def rate_axis(self) -> np.ndarray:
        return np.linspace(self.rate_min, self.rate_max, self.n_rate)

    @property
    def n_states(self) -> int:
        return self.n_pitch * self.n_rate

    def states(self) -> np.ndarray:
        """All grid nodes, shape (n_states, 2), pitch-major ordering."""
        P, R = np.meshgrid(self.pitch_axis, self.rate_axis, indexing="ij")
        return np.stack([P.ravel(), R.ravel()], axis=1)

    def clamp(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = z.copy()
        out[:, 0] = np.clip(out[:, 0], self.pitch_min, self.pitch_max)
        out[:, 1] = np.clip(out[:, 1], self.rate_min, self.rate_max)
        return out

    def bilinear_weights(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation stencil: node indices (N, 4) and weights (N, 4)."""
        z = self.clamp(z)
        pa, ra = self.pitch_axis, self.rate_axis
        dp = pa[1] - pa[0]
        dr = ra[1] - ra[0]
        ip = np.clip(((z[:, 0] - pa[0]) / dp).astype(int), 0, self.n_pitch - 2)
        ir = np.clip(((z[:, 1] - ra[0]) / dr).astype(int), 0, self.n_rate - 2)
        fp = (z[:, 0] - pa[ip]) / dp
        fr = (z[:, 1] - ra[ir]) / dr
        base = ip * self.n_rate + ir
        idx = np.stack([base, base + 1, base + self.n_rate, base + self.n_rate + 1], axis=1)
        w = np.stack(
            [(1 - fp) * (1 - fr), (1 - fp) * fr, fp * (1 - fr), fp * fr], axis=1
        )
        return idx, w


class ValueIterationDivergence(RuntimeError):
    """Bellman residual failed to decrease; discretization/discount misconfigured."""


def value_iterate_core(
    trans_idx: np.ndarray,
    trans_w: np.ndarray,
    stage_cost: np.ndarray,
    discount: float,
    action_order: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 20000,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Tabular value iteration over interpolated transitions.

    trans_idx/trans_w: (N, A, k) successor stencils; stage_cost: (N, A).
    `action_order` lists action columns in tie-break preference order (ties
    in the minimization resolve toward earlier entries).  Returns the value
    table, the greedy action index per state, and the residual history.
    """
    n_states, n_actions = stage_cost.shape
    V = np.zeros(n_states)
    residuals: list[float] = []
    ordered_cost = stage_cost[:, action_order]
    ordered_idx = trans_idx[:, action_order, :]
    ordered_w = trans_w[:, action_order, :]
    for it in range(max_iter):
        v_next = np.einsum("sak,sak->sa", ordered_w, V[ordered_idx])
        qvals = ordered_cost + discount * v_next
        V_new = qvals.min(axis=1)
        res = float(np.max(np.abs(V_new - V)))
        residuals.append(res)
        V = V_new
        if res <= tol:
            break
        if it > 50 and res > 10.0 * residuals[it - 50]:
            raise ValueIterationDivergence(
                f"residual rising: {residuals[it - 50]:.3e} -> {res:.3e}"
            )
    else:
        raise ValueIterationDivergence(f"no convergence in {max_iter} sweeps (res={res:.3e})")
    qvals = ordered_cost + discount * np.einsum("sak,sak->sa", ordered_w, V[ordered_idx])
    pi_ordered = qvals.argmin(axis=1)
    pi_idx = action_order[pi_ordered]
    return V, pi_idx, residuals


def pitch_step(I_pitch: float, dt: float, z: np.ndarray, a: float) -> np.ndarray:
    """Double-integrator pitch dynamics under a constant torque over dt."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    acc = a / I_pitch
    return np.stack(
        [z[:, 0] + dt * z[:, 1] + 0.5 * dt**2 * acc, z[:, 1] + dt * acc], axis=1
    )


@dataclass
class AttitudePolicy:
    """Converged value/policy tables with bilinear runtime lookup."""

    grid: AttitudeGrid
    V: np.ndarray
    pi: np.ndarray  # torque correction per node, flattened pitch-major
    z_des: tuple[float, float] = (0.0, 0.0)
    meta: dict = field(default_factory=dict)

    def correction(self, z) -> tuple[float, bool]:
        """Interpolated torque correction at z; flags out-of-grid clamping."""
        z = np.asarray(z, dtype=float).reshape(1, 2)
        clamped = bool(
            z[0, 0] < self.grid.pitch_min or z[0, 0] > self.grid.pitch_max
            or z[0, 1] < self.grid.rate_min or z[0, 1] > self.grid.rate_max
        )
        idx, w = self.grid.bilinear_weights(z)
        return float((w[0] * self.pi[idx[0]]).sum()), clamped

    def value(self, z) -> float:
        idx, w = self.grid.bilinear_weights(np.asarray(z, dtype=float).reshape(1, 2))
        return float((w[0] * self.V[idx[0]]).sum())

    def save(self, path) -> None:
        doc = {
            "grid": {
                "pitch_min": self.grid.pitch_min, "pitch_max": self.grid.pitch_max,
                "rate_min": self.grid.rate_min, "rate_max": self.grid.rate_max,
                "n_pitch": self.grid.n_pitch, "n_rate": self.grid.n_rate,
                "actions": list(self.grid.actions),
            },
            "z_des": list(self.z_des),
            "V": self.V.tolist(),
            "pi": self.pi.tolist(),
            "meta": self.meta,
        }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "AttitudePolicy":
        with open(path) as f:
            doc = json.load(f)
        g = doc["grid"]
        grid = AttitudeGrid(
            pitch_min=g["pitch_min"], pitch_max=g["pitch_max"],
            rate_min=g["rate_min"], rate_max=g["rate_max"],
            n_pitch=int(g["n_pitch"]), n_rate=int(g["n_rate"]),
            actions=tuple(g["actions"]),
        )
        return cls(grid, np.array(doc["V"]), np.array(doc["pi"]),
                   tuple(doc["z_des"]), doc.get("meta", {}))


def train_attitude_policy(
    I_pitch: float = 0.038,
    dt: float = 0.01,
    grid: AttitudeGrid | None = None,
    Q: np.ndarray | None = None,
    effort_weight: float = 0.01,
    discount: float = 0.98,
    z_des: tuple[float, float] = (0.0, 0.0),
    tol: float = 1e-6,
) -> AttitudePolicy:
    """Offline value iteration for the pitch-regulation policy.

    Stage cost is (z - z_des)^T Q (z - z_des) + effort_weight * a^2; the
    undiscounted infinite-horizon sum need not converge on a lossy
    discretization, so a discount < 1 enforces contraction.
    """
    grid = grid or AttitudeGrid()
    Q = np.asarray(Q) if Q is not None else np.diag([10.0, 1.0])
    if np.any(np.linalg.eigvalsh(Q) <= 0.0):
        raise ValueError("Q must be positive definite")
    Z = grid.states()
    actions = np.asarray(grid.actions)
    n, a_n = Z.shape[0], actions.size

    dz = Z - np.asarray(z_des)
    state_cost = np.einsum("si,ij,sj->s", dz, Q, dz)
    stage_cost = state_cost[:, None] + effort_weight * actions[None, :] ** 2

    trans_idx = np.empty((n, a_n, 4), dtype=int)
    trans_w = np.empty((n, a_n, 4))
    for j, a in enumerate(actions):
        z_next = pitch_step(I_pitch, dt, Z, float(a))
        trans_idx[:, j], trans_w[:, j] = grid.bilinear_weights(z_next)

    # tie-break toward smaller |a|
    action_order = np.array(sorted(range(a_n), key=lambda j: (abs(actions[j]), actions[j])))
    V, pi_idx, residuals = value_iterate_core(
        trans_idx, trans_w, stage_cost, discount, action_order, tol=tol
    )
    return AttitudePolicy(
        grid, V, actions[pi_idx], z_des,
        meta={"I_pitch": I_pitch, "dt": dt, "discount": discount,
              "effort_weight": effort_weight, "sweeps": len(residuals),
              "final_residual": residuals[-1]},
    )
