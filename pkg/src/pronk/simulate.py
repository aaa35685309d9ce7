"""Hybrid integration of strides and episodes with event detection.

Fixed-step RK4 at the control rate (1 kHz default).  Mode transitions are
located by bisection inside the step where the event function changes sign:
lift-off when the normal contact force crosses zero from above, touchdown
when the foot height crosses zero while descending.  Touchdown applies the
impulse-momentum reset; lift-off is continuous.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .model import HybridState, Mode, RobotModel, impact_map, lift_off

CONTROL_DT = 1e-3

# Friction-cone checks are suspended below this normal force (a few percent
# of body weight): lift-off is triggered at lam_n = 0, and in that boundary
# layer the tangential/normal ratio is dominated by contact transients that
# a physical foot resolves by harmless micro-slip.
_CONE_CHECK_MIN_NORMAL = 5.0

# Slip is declared only when the cone is violated for this many consecutive
# control steps.  Single-sample spikes at the touchdown and lift-off edges
# are impact transients of the rigid contact model, not sustained sliding.
_CONE_PERSIST_STEPS = 5


class _ConeMonitor:
    """Raises FrictionConeError on sustained (not transient) cone violation."""

    def __init__(self, mu: float):
        self.mu = mu
        self._run = 0

    def check(self, lam, t: float):
        if lam[1] > _CONE_CHECK_MIN_NORMAL and abs(lam[0]) > self.mu * lam[1]:
            self._run += 1
            if self._run >= _CONE_PERSIST_STEPS:
                raise FrictionConeError(
                    f"slip at t={t:.3f}: |lam_t|={abs(lam[0]):.2f} > "
                    f"mu*lam_n={self.mu * lam[1]:.2f} for "
                    f"{self._run} consecutive steps"
                )
        else:
            self._run = 0


class SimulationError(RuntimeError):
    pass


class FallError(SimulationError):
    """Torso dropped below the floor or pitched over."""


class SimTimeoutError(SimulationError):
    """Integration exceeded the wall-step guard without finishing."""


class FrictionConeError(SimulationError):
    """Required contact force left the friction cone (foot would slip)."""


CSV_HEADER = (
    "t,s,mode,q_x,q_z,q_pitch,q_thigh,q_calf,"
    "qd_x,qd_z,qd_pitch,qd_thigh,qd_calf,tau_thigh,tau_calf,lambda_n,lambda_t"
)


@dataclass
class TrajectoryLog:
    """Per-control-step record of one simulation run."""

    t: list = field(default_factory=list)
    s: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    q: list = field(default_factory=list)
    qd: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    lam: list = field(default_factory=list)

    def append(self, state: HybridState, tau, lam=(0.0, 0.0)):
        self.t.append(state.t)
        self.s.append(state.s)
        self.mode.append(state.mode.value)
        self.q.append(np.asarray(state.q).copy())
        self.qd.append(np.asarray(state.qd).copy())
        self.tau.append(np.asarray(tau, dtype=float).copy())
        self.lam.append(np.asarray(lam, dtype=float).copy())

    def arrays(self) -> dict:
        return {
            "t": np.array(self.t),
            "s": np.array(self.s),
            "mode": np.array(self.mode),
            "q": np.array(self.q),
            "qd": np.array(self.qd),
            "tau": np.array(self.tau),
            "lam": np.array(self.lam),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER.split(","))
            for i in range(len(self.t)):
                row = [f"{self.t[i]:.6f}", f"{self.s[i]:.6f}", self.mode[i]]
                row += [repr(float(v)) for v in self.q[i]]
                row += [repr(float(v)) for v in self.qd[i]]
                row += [repr(float(v)) for v in self.tau[i]]
                # stored as [lam_t, lam_n]; CSV schema is lambda_n first
                row += [repr(float(self.lam[i][1])), repr(float(self.lam[i][0]))]
                w.writerow(row)


@dataclass(frozen=True)
class Event:
    name: str  # "liftoff" | "touchdown"
    t: float


class DelayLine:
    """Zero-order-hold actuation delay of a whole number of control steps."""

    def __init__(self, steps: int, n_u: int = dyn.N_U):
        self.steps = int(steps)
        self._buf = deque([np.zeros(n_u)] * self.steps, maxlen=self.steps + 1)

    def __call__(self, tau):
        if self.steps == 0:
            return tau
        self._buf.append(np.asarray(tau, dtype=float).copy())
        return self._buf[0]


def saturate(tau, tau_max) -> np.ndarray:
    lim = np.asarray(tau_max, dtype=float)
    return np.clip(np.asarray(tau, dtype=float), -lim, lim)


def _check_fall(state: HybridState, min_height: float, max_pitch: float):
    if state.q[1] < min_height or abs(state.q[2]) > max_pitch:
        raise FallError(
            f"fall at t={state.t:.3f}: q_z={state.q[1]:.3f}, pitch={state.q[2]:.3f}"
        )


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    """Root of the scalar sign change of f on [lo, hi] (f(lo) and f(hi) differ)."""
    f_lo = f(lo)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f(mid)
        else:
            hi = mid
    return hi


def simulate_stride(
    model: RobotModel,
    state: HybridState,
    controller,
    stride_T: float,
    dt: float = CONTROL_DT,
    max_steps: int = 20000,
    delay: DelayLine | None = None,
    min_height: float = 0.1,
    max_pitch: float = 1.2,
    check_cone: bool = True,
    min_stride_frac: float = 0.5,
    resync_phase: float | None = None,
) -> tuple[TrajectoryLog, list[Event], HybridState]:
    """Integrate one full stride: stance from touchdown, flight, next impact.

    `state` must be a post-touchdown stance state; `controller(state)` is
    queried at every control step and its output saturated to the actuator
    limits.  Returns the log, the located events, and the post-impact state
    that starts the next stride.

    Contact chattering near the stride start (a momentary lift-off followed
    by an immediate re-impact) does not terminate the stride: touchdowns
    earlier than `min_stride_frac * stride_T` are treated as intra-stride
    impacts and integration continues in stance.

    When `resync_phase` is given (the reference motion's stance fraction),
    the phase variable is re-anchored to that value at the lift-off event,
    keeping the swing reference synchronized with the actual gait event even
    when the executed stance duration differs from the nominal one.
    """
    if state.mode is not Mode.STANCE:
        raise ValueError("simulate_stride starts from a stance state")
    p = model.params()
    log = TrajectoryLog()
    events: list[Event] = []
    state = state.copy()
    t0 = state.t
    event_tol = dt * 1e-3
    cone = _ConeMonitor(model.mu)
    anchor = [t0, 0.0]  # (time, phase) of the last phase anchor

    def phase(t):
        return min(anchor[1] + (t - anchor[0]) / stride_T, 1.0)

    def _maybe_resync(t):
        # re-anchor the swing phase at a genuine lift-off; chatter lift-offs
        # right after touchdown (phase far below the stance fraction) keep
        # the running clock
        if resync_phase is not None and phase(t) >= 0.5 * resync_phase:
            anchor[0] = t
            anchor[1] = resync_phase

    for step in range(max_steps):
        if step == max_steps - 1:
            raise SimTimeoutError(f"stride did not finish within {max_steps} steps")
        state.s = phase(state.t)
        tau_cmd = saturate(controller(state), model.tau_max)
        tau = tau_cmd if delay is None else delay(tau_cmd)

        if state.mode is Mode.STANCE:
            lam = np.asarray(dyn.stance_wrench(p, state.q, state.qd, tau))
            if lam[1] <= 0.0:
                # torque step pushed the required normal force non-positive:
                # the contact cannot pull, so lift-off is immediate
                state = lift_off(state)
                events.append(Event("liftoff", state.t))
                _maybe_resync(state.t)
                continue
            if check_cone:
                cone.check(lam, state.t)
            log.append(state, tau, lam)
            q_new, qd_new = dyn.stance_step(p, state.q, state.qd, tau, dt)
            lam_new = float(dyn.stance_wrench(p, np.asarray(q_new), np.asarray(qd_new), tau)[1])
            if lam_new <= 0.0 and lam[1] > 0.0:
                # lift-off inside this step: bisect on the normal force
                def lam_at(h):
                    qq, vv = dyn.stance_step(p, state.q, state.qd, tau, h)
                    return float(dyn.stance_wrench(p, np.asarray(qq), np.asarray(vv), tau)[1])

                h_star = _bisect(lam_at, 0.0, dt, event_tol)
                q_new, qd_new = dyn.stance_step(p, state.q, state.qd, tau, h_star)
                state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
                state.t += h_star
                state.s = phase(state.t)
                state = lift_off(state)
                events.append(Event("liftoff", state.t))
                _maybe_resync(state.t)
            else:
                state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
                state.t += dt
        else:
            log.append(state, tau)
            q_new, qd_new = dyn.flight_step(p, state.q, state.qd, tau, dt)
            h_new = float(dyn.foot_height(p, np.asarray(q_new)))
            vz_new = float(dyn.foot_vel(p, np.asarray(q_new), np.asarray(qd_new))[1])
            if h_new <= 0.0 and vz_new < 0.0:
                def height_at(h):
                    qq, _ = dyn.flight_step(p, state.q, state.qd, tau, h)
                    return float(dyn.foot_height(p, np.asarray(qq)))

                h_star = _bisect(height_at, 0.0, dt, event_tol)
                q_new, qd_new = dyn.flight_step(p, state.q, state.qd, tau, h_star)
                state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
                state.t += h_star
                state.s = phase(state.t)
                events.append(Event("touchdown", state.t))
                post, _ = impact_map(model, state)
                if state.t - t0 < min_stride_frac * stride_T:
                    # contact chatter: re-impact before the stride had time to
                    # develop, keep integrating in stance
                    state = post
                    continue
                return log, events, post
            state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
            state.t += dt
        _check_fall(state, min_height, max_pitch)
    raise SimTimeoutError("unreachable")


def simulate_flight_to_touchdown(
    model: RobotModel,
    state: HybridState,
    controller=None,
    dt: float = CONTROL_DT,
    max_steps: int = 100000,
) -> tuple[TrajectoryLog, HybridState, float]:
    """Ballistic/flight integration until the foot reaches the ground.

    Returns (log, pre-impact state at the located touchdown, touchdown time).
    """
    if state.mode is not Mode.FLIGHT:
        raise ValueError("requires a flight-mode state")
    p = model.params()
    log = TrajectoryLog()
    state = state.copy()
    zero_tau = np.zeros(dyn.N_U)
    event_tol = dt * 1e-3
    for _ in range(max_steps):
        tau = saturate(controller(state), model.tau_max) if controller else zero_tau
        log.append(state, tau)
        q_new, qd_new = dyn.flight_step(p, state.q, state.qd, tau, dt)
        h_new = float(dyn.foot_height(p, np.asarray(q_new)))
        vz_new = float(dyn.foot_vel(p, np.asarray(q_new), np.asarray(qd_new))[1])
        if h_new <= 0.0 and vz_new < 0.0:
            def height_at(h):
                qq, _ = dyn.flight_step(p, state.q, state.qd, tau, h)
                return float(dyn.foot_height(p, np.asarray(qq)))

            h_star = _bisect(height_at, 0.0, dt, event_tol)
            q_new, qd_new = dyn.flight_step(p, state.q, state.qd, tau, h_star)
            state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
            state.t += h_star
            return log, state, state.t
        state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
        state.t += dt
    raise SimTimeoutError("no touchdown found")


def simulate_episode(
    model: RobotModel,
    state: HybridState,
    controller,
    duration: float,
    dt: float = CONTROL_DT,
    delay: DelayLine | None = None,
    min_height: float = 0.05,
    max_pitch: float = 1.2,
    check_cone: bool = True,
) -> tuple[TrajectoryLog, list[Event], HybridState]:
    """Integrate a nonperiodic task episode for a fixed duration.

    Handles any number of lift-off/touchdown transitions; the phase variable
    runs over the whole episode (s = t / duration).
    """
    p = model.params()
    log = TrajectoryLog()
    events: list[Event] = []
    state = state.copy()
    t0 = state.t
    event_tol = dt * 1e-3
    cone = _ConeMonitor(model.mu)
    max_steps = int(duration / dt * 4) + 100

    for _ in range(max_steps):
        if state.t - t0 >= duration:
            return log, events, state
        state.s = min((state.t - t0) / duration, 1.0)
        tau_cmd = saturate(controller(state), model.tau_max)
        tau = tau_cmd if delay is None else delay(tau_cmd)

        if state.mode is Mode.STANCE:
            lam = np.asarray(dyn.stance_wrench(p, state.q, state.qd, tau))
            if lam[1] <= 0.0:
                state = lift_off(state)
                events.append(Event("liftoff", state.t))
                continue
            if check_cone:
                cone.check(lam, state.t)
            log.append(state, tau, lam)
            q_new, qd_new = dyn.stance_step(p, state.q, state.qd, tau, dt)
            lam_new = float(dyn.stance_wrench(p, np.asarray(q_new), np.asarray(qd_new), tau)[1])
            if lam_new <= 0.0 and lam[1] > 0.0:
                def lam_at(h):
                    qq, vv = dyn.stance_step(p, state.q, state.qd, tau, h)
                    return float(dyn.stance_wrench(p, np.asarray(qq), np.asarray(vv), tau)[1])

                h_star = _bisect(lam_at, 0.0, dt, event_tol)
                q_new, qd_new = dyn.stance_step(p, state.q, state.qd, tau, h_star)
                state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
                state.t += h_star
                state = lift_off(state)
                events.append(Event("liftoff", state.t))
                continue
            state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
            state.t += dt
        else:
            log.append(state, tau)
            q_new, qd_new = dyn.flight_step(p, state.q, state.qd, tau, dt)
            h_new = float(dyn.foot_height(p, np.asarray(q_new)))
            vz_new = float(dyn.foot_vel(p, np.asarray(q_new), np.asarray(qd_new))[1])
            if h_new <= 0.0 and vz_new < 0.0:
                def height_at(h):
                    qq, _ = dyn.flight_step(p, state.q, state.qd, tau, h)
                    return float(dyn.foot_height(p, np.asarray(qq)))

                h_star = _bisect(height_at, 0.0, dt, event_tol)
                q_new, qd_new = dyn.flight_step(p, state.q, state.qd, tau, h_star)
                state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
                state.t += h_star
                events.append(Event("touchdown", state.t))
                state, _ = impact_map(model, state)
                state.s = min((state.t - t0) / duration, 1.0)
                continue
            state.q, state.qd = np.asarray(q_new), np.asarray(qd_new)
            state.t += dt
        _check_fall(state, min_height, max_pitch)
    raise SimTimeoutError(f"episode did not finish within {max_steps} steps")
