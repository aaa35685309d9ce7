"""Rigid-body dynamics of the planar sagittal monoped.

Configuration q = [q_x, q_z, q_pitch, q_thigh, q_calf]: torso position and
pitch plus two actuated leg joints (thigh relative to torso, calf relative
to thigh).  The hip coincides with the torso center of mass and both links
carry their mass at mid-length.

All terms of the equations of motion (mass matrix, Coriolis vector, gravity
vector, contact Jacobian and its velocity bias) are obtained by automatic
differentiation of the kinetic and potential energy, so the simulator and
the trajectory optimizer share one consistent derivation.  Gravity is
expressed as a 2-vector so sloped ground reduces to tilting it; the ground
plane is always z = 0 in the working frame.

Functions take a flat parameter dict (see `pronk.model.RobotModel.params`)
as their first argument and are jit-compiled once per call signature.
"""

from __future__ import annotations



import jax
import jax.numpy as jnp

N_Q = 5
N_U = 2

# Selection matrix: thigh and calf joints are actuated.
S_MAT = jnp.zeros((N_Q, N_U)).at[3, 0].set(1.0).at[4, 1].set(1.0)


def gravity_vector_2d(g: float, slope_rad: float) -> tuple[float, float]:
    """World-frame gravity expressed in the slope-aligned working frame."""
    return (-g * jnp.sin(slope_rad), -g * jnp.cos(slope_rad))


def _com_positions(p, q):
    """Torso, thigh and calf COM positions plus the foot point."""
    x, z, pitch, th, cf = q
    a_t = pitch + th
    a_c = a_t + cf
    hip = jnp.array([x, z])
    d_t = jnp.array([jnp.sin(a_t), -jnp.cos(a_t)])
    d_c = jnp.array([jnp.sin(a_c), -jnp.cos(a_c)])
    knee = hip + p["l_thigh"] * d_t
    foot = knee + p["l_calf"] * d_c
    com_thigh = hip + 0.5 * p["l_thigh"] * d_t
    com_calf = knee + 0.5 * p["l_calf"] * d_c
    return hip, com_thigh, com_calf, foot


def foot_position(p, q):
    return _com_positions(p, q)[3]


def foot_jacobian(p, q):
    return jax.jacfwd(lambda qq: foot_position(p, qq))(q)


def foot_velocity(p, q, qd):
    return foot_jacobian(p, q) @ qd


def contact_bias(p, q, qd):
    """sigma = Jdot_c qdot, via a directional derivative of J_c along qdot."""
    return jax.jvp(lambda qq: foot_jacobian(p, qq) @ qd, (q,), (qd,))[1]


def kinetic_energy(p, q, qd):
    vels = jax.jvp(lambda qq: jnp.concatenate(_com_positions(p, qq)[:3]), (q,), (qd,))[1]
    v_torso, v_thigh, v_calf = vels[0:2], vels[2:4], vels[4:6]
    w_torso = qd[2]
    w_thigh = qd[2] + qd[3]
    w_calf = qd[2] + qd[3] + qd[4]
    return (
        0.5 * p["m_torso"] * v_torso @ v_torso
        + 0.5 * p["I_pitch"] * w_torso**2
        + 0.5 * p["m_thigh"] * v_thigh @ v_thigh
        + 0.5 * p["I_thigh"] * w_thigh**2
        + 0.5 * p["m_calf"] * v_calf @ v_calf
        + 0.5 * p["I_calf"] * w_calf**2
    )


def potential_energy(p, q):
    g_vec = jnp.array([p["g_x"], p["g_z"]])
    torso, thigh, calf, _ = _com_positions(p, q)
    return -(
        p["m_torso"] * g_vec @ torso
        + p["m_thigh"] * g_vec @ thigh
        + p["m_calf"] * g_vec @ calf
    )


def total_energy(p, q, qd):
    return kinetic_energy(p, q, qd) + potential_energy(p, q)


def mass_matrix(p, q):
    """M(q): Hessian of the kinetic energy in the velocities."""
    return jax.hessian(lambda v: kinetic_energy(p, q, v))(jnp.zeros(N_Q))


def coriolis_vector(p, q, qd):
    """H(q, qd) qd: velocity-product forces from Lagrange's equations."""
    m_qd_dot = jax.jvp(lambda qq: mass_matrix(p, qq) @ qd, (q,), (qd,))[1]
    dT_dq = jax.grad(lambda qq: kinetic_energy(p, qq, qd))(q)
    return m_qd_dot - dT_dq


def gravity_force(p, q):
    return jax.grad(lambda qq: potential_energy(p, qq))(q)


def _applied_force(p, q, qd, tau):
    """S tau minus joint viscous friction (zero friction on the nominal model)."""
    fric = jnp.array([p["b_visc_thigh"], p["b_visc_calf"]]) * qd[3:5]
    return S_MAT @ (tau - fric)


def flight_accel(p, q, qd, tau):
    rhs = _applied_force(p, q, qd, tau) - coriolis_vector(p, q, qd) - gravity_force(p, q)
    return jnp.linalg.solve(mass_matrix(p, q), rhs)


def stance_accel(p, q, qd, tau):
    """Solve the stance KKT system; returns (qdd, contact wrench [lam_t, lam_n])."""
    M = mass_matrix(p, q)
    Jc = foot_jacobian(p, q)
    rhs = _applied_force(p, q, qd, tau) - coriolis_vector(p, q, qd) - gravity_force(p, q)
    sigma = contact_bias(p, q, qd)
    K = jnp.block([[M, -Jc.T], [Jc, jnp.zeros((2, 2))]])
    sol = jnp.linalg.solve(K, jnp.concatenate([rhs, -sigma]))
    return sol[:N_Q], sol[N_Q:]


def impact_velocity(p, q, qd_minus):
    """Impulse-momentum reset: post-impact velocities with a pinned foot."""
    M = mass_matrix(p, q)
    Jc = foot_jacobian(p, q)
    K = jnp.block([[M, -Jc.T], [Jc, jnp.zeros((2, 2))]])
    sol = jnp.linalg.solve(K, jnp.concatenate([M @ qd_minus, jnp.zeros(2)]))
    return sol[:N_Q], sol[N_Q:]


def inverse_dynamics(p, q, qd, qdd_d, lam_d):
    """Actuated-joint torques from full inverse dynamics (WBC baseline)."""
    M = mass_matrix(p, q)
    Jc = foot_jacobian(p, q)
    full = M @ qdd_d + coriolis_vector(p, q, qd) + gravity_force(p, q) - Jc.T @ lam_d
    return S_MAT.T @ full


# --- fixed-step RK4 integration, one mode per step ---------------------------


@jax.jit
def flight_step(p, q, qd, tau, dt):
    def f(state):
        qq, vv = state
        return vv, flight_accel(p, qq, vv, tau)

    return _rk4(f, q, qd, dt)


@jax.jit
def stance_step(p, q, qd, tau, dt):
    def f(state):
        qq, vv = state
        return vv, stance_accel(p, qq, vv, tau)[0]

    return _rk4(f, q, qd, dt)


def _rk4(f, q, qd, dt):
    k1q, k1v = f((q, qd))
    k2q, k2v = f((q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v))
    k3q, k3v = f((q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v))
    k4q, k4v = f((q + dt * k3q, qd + dt * k3v))
    q_new = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd_new = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_new, qd_new


# Jitted observables used by the event-detection loop.
foot_height = jax.jit(lambda p, q: foot_position(p, q)[1])
foot_vel = jax.jit(foot_velocity)
stance_wrench = jax.jit(lambda p, q, qd, tau: stance_accel(p, q, qd, tau)[1])
impact_jit = jax.jit(impact_velocity)
stance_accel_jit = jax.jit(stance_accel)
flight_accel_jit = jax.jit(flight_accel)
total_energy_jit = jax.jit(total_energy)
inverse_dynamics_jit = jax.jit(inverse_dynamics)
