"""Robot model definition, hybrid state, and the mode-level dynamics API.

The plant is a desk-scale planar monoped: torso (x, z, pitch) plus thigh and
calf joints, total mass ~12 kg with 0.2 m leg links.  Pronking moves all
legs in phase, so one sagittal leg captures the hybrid structure of the
full quadruped at a fifth of the state dimension.
"""

from __future__ import annotations

import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import dynamics as dyn

G_EARTH = 9.81


class Mode(Enum):
    STANCE = "stance"
    FLIGHT = "flight"


class SingularContactError(RuntimeError):
    """Contact KKT system is numerically singular (degenerate configuration)."""


class DegenerateImpactError(RuntimeError):
    """J M^-1 J^T is singular at the impact configuration."""


@dataclass(frozen=True)
class RobotModel:
    """Physical parameters of the planar monoped.

    `slope_deg` tilts gravity into the slope-aligned frame (ground stays at
    z = 0).  `b_visc` adds joint viscous friction and models plant-side
    mismatch; it is zero on the nominal model.
    """

    m_torso: float = 10.5
    I_pitch: float = 0.038
    m_thigh: float = 1.0
    I_thigh: float = 0.0033
    l_thigh: float = 0.2
    m_calf: float = 0.5
    I_calf: float = 0.0017
    l_calf: float = 0.2
    g: float = G_EARTH
    slope_deg: float = 0.0
    mu: float = 0.6
    tau_max: tuple[float, float] = (33.5, 33.5)
    q_joint_min: tuple[float, float] = (-1.2, -2.7)
    q_joint_max: tuple[float, float] = (2.1, -0.3)
    qd_joint_max: tuple[float, float] = (21.0, 21.0)
    b_visc: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("m_torso", "I_pitch", "m_thigh", "I_thigh", "l_thigh",
                     "m_calf", "I_calf", "l_calf", "g"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.mu <= 0.0:
            raise ValueError("friction coefficient must be positive")

    @property
    def n_joints(self) -> int:
        return dyn.N_U

    @property
    def total_mass(self) -> float:
        return self.m_torso + self.m_thigh + self.m_calf

    @property
    def S(self) -> np.ndarray:
        return np.asarray(dyn.S_MAT)

    def params(self) -> dict:
        """Flat parameter dict consumed by the jitted dynamics functions."""
        slope = np.deg2rad(self.slope_deg)
        g_x, g_z = -self.g * np.sin(slope), -self.g * np.cos(slope)
        return {
            "m_torso": self.m_torso, "I_pitch": self.I_pitch,
            "m_thigh": self.m_thigh, "I_thigh": self.I_thigh, "l_thigh": self.l_thigh,
            "m_calf": self.m_calf, "I_calf": self.I_calf, "l_calf": self.l_calf,
            "g_x": float(g_x), "g_z": float(g_z),
            "b_visc_thigh": self.b_visc[0], "b_visc_calf": self.b_visc[1],
        }

    @property
    def model_hash(self) -> str:
        doc = json.dumps(
            {k: repr(getattr(self, k)) for k in (
                "m_torso", "I_pitch", "m_thigh", "I_thigh", "l_thigh",
                "m_calf", "I_calf", "l_calf", "tau_max", "mu")},
            sort_keys=True,
        )
        return hashlib.sha256(doc.encode()).hexdigest()[:16]

    def perturbed(self, mass_scale: float = 1.0, b_visc: float = 0.0) -> "RobotModel":
        """Plant-side variant with scaled torso mass and joint friction."""
        return replace(self, m_torso=self.m_torso * mass_scale,
                       b_visc=(b_visc, b_visc))

    def with_environment(self, g: float | None = None,
                         slope_deg: float | None = None) -> "RobotModel":
        kw = {}
        if g is not None:
            kw["g"] = g
        if slope_deg is not None:
            kw["slope_deg"] = slope_deg
        return replace(self, **kw) if kw else self

    @classmethod
    def from_file(cls, path) -> "RobotModel":
        path = Path(path)
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                doc = tomllib.load(f)
        else:
            with open(path) as f:
                doc = json.load(f)
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**doc)

    # --- kinematic helpers ---------------------------------------------------

    def foot_position(self, q) -> np.ndarray:
        return np.asarray(dyn.foot_position(self.params(), np.asarray(q, float)))

    def foot_velocity(self, q, qd) -> np.ndarray:
        p = self.params()
        return np.asarray(dyn.foot_velocity(p, np.asarray(q, float), np.asarray(qd, float)))

    def leg_angle(self, q) -> float:
        """Sagittal leg angle theta = q_thigh + q_calf / 2 (torso frame)."""
        return float(q[3] + 0.5 * q[4])

    def leg_joints_for_angle(self, theta: float, q_calf: float) -> tuple[float, float, bool]:
        """Thigh/calf angles realizing leg angle `theta` at fixed knee bend.

        Holding q_calf holds the leg length, so only the thigh moves.
        Returns (q_thigh, q_calf, clamped).
        """
        q_thigh = theta - 0.5 * q_calf
        lo, hi = self.q_joint_min[0], self.q_joint_max[0]
        clamped = not (lo <= q_thigh <= hi)
        return float(np.clip(q_thigh, lo, hi)), q_calf, clamped


@dataclass
class HybridState:
    """Full simulation state: coordinates, velocities, contact mode, clocks."""

    q: np.ndarray
    qd: np.ndarray
    mode: Mode
    t: float = 0.0
    s: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qd = np.asarray(self.qd, dtype=float).copy()
        if self.q.shape != (dyn.N_Q,) or self.qd.shape != (dyn.N_Q,):
            raise ValueError(f"state vectors must have shape ({dyn.N_Q},)")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("phase s must lie in [0, 1]")

    def copy(self) -> "HybridState":
        return HybridState(self.q, self.qd, self.mode, self.t, self.s)


@dataclass(frozen=True)
class ContactWrench:
    """Planar ground wrench; lam_n is normal (z), lam_t tangential (x)."""

    lam_n: float
    lam_t: float

    def in_friction_cone(self, mu: float) -> bool:
        return self.lam_n >= 0.0 and abs(self.lam_t) <= mu * self.lam_n


_KKT_COND_LIMIT = 1e12


def _check_contact_regular(model: RobotModel, q, exc_type):
    p = model.params()
    M = np.asarray(dyn.mass_matrix(p, np.asarray(q, float)))
    Jc = np.asarray(dyn.foot_jacobian(p, np.asarray(q, float)))
    schur = Jc @ np.linalg.solve(M, Jc.T)
    if np.linalg.cond(schur) > _KKT_COND_LIMIT:
        raise exc_type(f"degenerate contact configuration at q={q}")


def stance_dynamics(model: RobotModel, state: HybridState, tau) -> tuple[np.ndarray, ContactWrench]:
    """Accelerations and contact wrench from the stance-phase DAE."""
    if state.mode is not Mode.STANCE:
        raise ValueError("stance_dynamics requires a stance-mode state")
    tau = np.asarray(tau, dtype=float)
    if np.any(np.abs(tau) > np.asarray(model.tau_max) + 1e-9):
        raise ValueError(f"torque {tau} exceeds limits {model.tau_max}")
    _check_contact_regular(model, state.q, SingularContactError)
    qdd, lam = dyn.stance_accel_jit(model.params(), state.q, state.qd, tau)
    return np.asarray(qdd), ContactWrench(lam_n=float(lam[1]), lam_t=float(lam[0]))


def flight_dynamics(model: RobotModel, state: HybridState, tau) -> np.ndarray:
    """Unconstrained accelerations during flight."""
    if state.mode is not Mode.FLIGHT:
        raise ValueError("flight_dynamics requires a flight-mode state")
    tau = np.asarray(tau, dtype=float)
    if np.any(np.abs(tau) > np.asarray(model.tau_max) + 1e-9):
        raise ValueError(f"torque {tau} exceeds limits {model.tau_max}")
    return np.asarray(dyn.flight_accel_jit(model.params(), state.q, state.qd, tau))


def impact_map(model: RobotModel, pre_state: HybridState) -> tuple[HybridState, np.ndarray]:
    """Touchdown reset: positions unchanged, velocities from impulse-momentum."""
    if pre_state.mode is not Mode.FLIGHT:
        raise ValueError("impact_map requires a flight-mode pre-impact state")
    _check_contact_regular(model, pre_state.q, DegenerateImpactError)
    qd_plus, impulse = dyn.impact_jit(model.params(), pre_state.q, pre_state.qd)
    post = HybridState(pre_state.q, np.asarray(qd_plus), Mode.STANCE, pre_state.t, 0.0)
    return post, np.asarray(impulse)


def lift_off(state: HybridState) -> HybridState:
    """Stance-to-flight transition; positions and velocities are continuous."""
    if state.mode is not Mode.STANCE:
        raise ValueError("lift_off requires a stance-mode state")
    return HybridState(state.q, state.qd, Mode.FLIGHT, state.t, state.s)


def gravity_compensation(model: RobotModel, q) -> tuple[np.ndarray, ContactWrench, float]:
    """Static torques/wrench balancing gravity at configuration q.

    Solves [S  J_c^T] [tau; lam] = G(q) in the least-squares sense; the
    returned residual is zero only at statically balanced postures (foot
    under the total COM).
    """
    p = model.params()
    q = np.asarray(q, dtype=float)
    G = np.asarray(dyn.gravity_force(p, q))
    Jc = np.asarray(dyn.foot_jacobian(p, q))
    A = np.hstack([model.S, Jc.T])
    sol, *_ = np.linalg.lstsq(A, G, rcond=None)
    resid = float(np.linalg.norm(A @ sol - G))
    return sol[:2], ContactWrench(lam_n=float(sol[3]), lam_t=float(sol[2])), resid


def com_position(model: RobotModel, q) -> np.ndarray:
    """Total center of mass in the working frame."""
    p = model.params()
    hip, thigh, calf, _ = dyn._com_positions(p, np.asarray(q, float))
    total = model.total_mass
    return np.asarray(
        (p["m_torso"] * hip + p["m_thigh"] * thigh + p["m_calf"] * calf) / total
    )


def balanced_stand_q(model: RobotModel, q_thigh: float = 0.6) -> np.ndarray:
    """Standing configuration with the foot directly below the total COM.

    Rotates the whole leg about the hip until the horizontal offset between
    foot and COM vanishes, which is the static-equilibrium condition for
    the pitch-underactuated plant.
    """
    from scipy.optimize import brentq

    q_calf = -2.0 * q_thigh

    def offset(delta):
        q = np.array([0.0, 0.5, 0.0, q_thigh + delta, q_calf])
        return model.foot_position(q)[0] - com_position(model, q)[0]

    delta = brentq(offset, -0.5, 0.5, xtol=1e-12)
    q = np.array([0.0, 0.0, 0.0, q_thigh + delta, q_calf])
    q[:2] -= model.foot_position(q)  # foot to the origin
    return q


def default_stand_q(model: RobotModel, q_thigh: float = 0.6, x: float = 0.0) -> np.ndarray:
    """Configuration standing on the foot with a symmetric knee bend.

    The calf mirrors the thigh (q_calf = -2 q_thigh) so the foot sits
    directly below the hip.
    """
    q_calf = -2.0 * q_thigh
    q = np.array([x, 0.0, 0.0, q_thigh, q_calf])
    foot_z = model.foot_position(q)[1]
    q[1] = -foot_z
    return q


