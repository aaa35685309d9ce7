"""Trajectory-tracking control: PD feedback, ILC feedforward, WBC baseline.

A reference motion (Bezier primitive) is tracked with a fixed-gain PD loop
plus a feedforward torque profile that is refined between executions from
the previous run's tracking error, looked up with a small phase lead.
Iterations are accepted against a shrinking arctan threshold and learning
stops once enough iterations land below the terminal tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .bezier import MotionPrimitive
from .filters import IIRFilter, design_lowpass, zero_phase_filter
from .model import HybridState, Mode, RobotModel, gravity_compensation
from .simulate import (
    DelayLine,
    SimulationError,
    TrajectoryLog,
    saturate,
    simulate_episode,
    simulate_stride,
)
from .stabilizers import AttitudePolicy, SpeedRegulator, touchdown_angle

N_S_DEFAULT = 201


def phase_grid(n: int = N_S_DEFAULT) -> np.ndarray:
    if n < 50:
        raise ValueError("phase grid needs at least 50 points")
    return np.linspace(0.0, 1.0, n)


@dataclass(frozen=True)
class GainSet:
    """Feedback gains (fixed) and ILC gains (with phase lead ds)."""

    kp_b: np.ndarray
    kd_b: np.ndarray
    kp_f: np.ndarray
    kd_f: np.ndarray
    ds: float = 0.02

    def __post_init__(self):
        for name in ("kp_b", "kd_b", "kp_f", "kd_f"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(v < 0.0):
                raise ValueError(f"{name} entries must be non-negative")
            object.__setattr__(self, name, v)
        if not 0.0 <= self.ds <= 0.2:
            raise ValueError("phase lead ds must lie in [0, 0.2]")

    @classmethod
    def default(cls, n_joints: int = 2) -> "GainSet":
        kp = np.full(n_joints, 100.0)
        kd = np.full(n_joints, 3.0)
        return cls(kp_b=kp, kd_b=kd, kp_f=0.5 * kp, kd_f=0.5 * kd, ds=0.05)


def feedback_torque(gains: GainSet, e, ed, tau_max=None) -> tuple[np.ndarray, bool]:
    """PD law Kp e + Kd ed; returns (torque, saturation flag).

    Works elementwise on (n_joints,) vectors or (n_joints, N_s) grids.
    """
    e = np.asarray(e, dtype=float)
    ed = np.asarray(ed, dtype=float)
    kp = gains.kp_b if e.ndim == 1 else gains.kp_b[:, None]
    kd = gains.kd_b if e.ndim == 1 else gains.kd_b[:, None]
    tau = kp * e + kd * ed
    if tau_max is None:
        return tau, False
    clipped = saturate(tau, np.broadcast_to(np.asarray(tau_max, float).reshape(-1, *([1] * (tau.ndim - 1))), tau.shape))
    return clipped, bool(np.any(clipped != tau))


def total_torque(tau_b, tau_f, tau_max) -> np.ndarray:
    tau = np.asarray(tau_b, dtype=float) + np.asarray(tau_f, dtype=float)
    lim = np.asarray(tau_max, dtype=float)
    if tau.ndim > 1:
        lim = lim.reshape(-1, *([1] * (tau.ndim - 1)))
    return np.clip(tau, -lim, lim)


def wbc_torque(model: RobotModel, q, qd, qdd_d, lam_d) -> np.ndarray:
    """Inverse-dynamics feedforward baseline (whole-body control style)."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd_d = np.asarray(qdd_d, dtype=float)
    lam_d = np.asarray(lam_d, dtype=float)
    if q.shape != (dyn.N_Q,) or qdd_d.shape != (dyn.N_Q,) or lam_d.shape != (2,):
        raise ValueError("dimension mismatch in wbc_torque inputs")
    return np.asarray(dyn.inverse_dynamics_jit(model.params(), q, qd, qdd_d, lam_d))


def rmse_joint(actual, desired) -> float:
    actual = np.asarray(actual, dtype=float)
    desired = np.asarray(desired, dtype=float)
    if actual.shape != desired.shape:
        raise ValueError("length mismatch between actual and desired samples")
    return float(np.sqrt(np.mean((actual - desired) ** 2)))


def avg_rmse(per_joint) -> float:
    return float(np.mean(np.asarray(per_joint, dtype=float)))


def accept_iteration(delta_k: float, delta_0: float, delta_e: float,
                     mu_e: float, k: int) -> bool:
    """Strict arctan-shaped improvement threshold."""
    threshold = delta_0 + (delta_e - delta_0) * (2.0 / np.pi) * np.arctan(mu_e * k)
    return delta_k < threshold


def acceptance_threshold(delta_0: float, delta_e: float, mu_e: float, k: int) -> float:
    return delta_0 + (delta_e - delta_0) * (2.0 / np.pi) * np.arctan(mu_e * k)


def should_stop(history: dict[int, float], delta_e: float, kappa: float, n_e: int) -> bool:
    """Stop once n_e iterations (counted from k = 3) fell below kappa*delta_e."""
    count = sum(1 for k, d in history.items() if k >= 3 and d < kappa * delta_e)
    return count >= n_e


@dataclass
class StopParams:
    delta_e: float = 0.03
    mu_e: float = 1.0
    kappa: float = 1.2
    n_e: int = 3
    n_p: int = 12
    max_iters: int = 60


@dataclass
class LearningState:
    """Carry-over between iterations: previous applied torque and error grids."""

    k: int = 0
    delta_0: float = 0.0
    history: dict[int, float] = field(default_factory=dict)
    tau_prev: np.ndarray | None = None  # applied torque of last accepted iteration
    e_prev: np.ndarray | None = None
    ed_prev: np.ndarray | None = None
    accepted_count: int = 0
    step: float = 1.0  # backtracking scale on the learning-gain correction


def ilc_update(state: LearningState, gains: GainSet, s_grid: np.ndarray) -> np.ndarray:
    """Feedforward profile for the next iteration.

    tau_f(s) = tau_prev(s) + step·(Kp_f e_prev(s + ds) + Kd_f ed_prev(s + ds));
    phase lookups past s = 1 clamp to the final sample.  The step scale is
    1 after an accepted iteration and is halved after each rejection, so a
    rejected update is retried with a smaller correction instead of being
    replayed verbatim.
    """
    if state.tau_prev is None or state.e_prev is None:
        raise ValueError("no stored previous iteration; run the feedback bootstrap first")
    s_shift = s_grid + gains.ds
    e_s = np.stack([np.interp(s_shift, s_grid, row) for row in state.e_prev])
    ed_s = np.stack([np.interp(s_shift, s_grid, row) for row in state.ed_prev])
    corr = gains.kp_f[:, None] * e_s + gains.kd_f[:, None] * ed_s
    return state.tau_prev + state.step * corr


# --- closed-loop tracking ----------------------------------------------------


class TrackingController:
    """Phase-indexed PD + feedforward controller for one stride/episode.

    Samples the reference primitive at the state's phase, adds the current
    feedforward profile, an optional thigh-torque attitude correction
    during stance, and retargets the touchdown leg angle during flight when
    speed regulation is enabled.  Measurement noise (if any) is applied to
    the joint states the controller sees, never to the plant.
    """

    def __init__(
        self,
        model: RobotModel,
        primitive: MotionPrimitive,
        gains: GainSet,
        s_grid: np.ndarray,
        tau_f: np.ndarray | None = None,
        speed_reg: SpeedRegulator | None = None,
        attitude: AttitudePolicy | None = None,
        meas_noise_std: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        self.model = model
        self.primitive = primitive
        self.gains = gains
        self.s_grid = s_grid
        self.tau_f = tau_f
        self.speed_reg = speed_reg
        self.attitude = attitude
        self.meas_noise_std = meas_noise_std
        self.rng = rng
        self._dtheta = 0.0
        self._was_stance = True
        h_end = primitive.eval(1.0)
        self.theta_nominal = float(h_end[0] + 0.5 * h_end[1])

    def __call__(self, state: HybridState) -> np.ndarray:
        s = state.s
        q = state.q
        qd = state.qd
        if self.meas_noise_std > 0.0 and self.rng is not None:
            q = q + self.rng.normal(0.0, self.meas_noise_std, q.shape)
            qd = qd + self.rng.normal(0.0, self.meas_noise_std, qd.shape)

        hd = self.primitive.eval(s)
        hd_dot = self.primitive.derivative(s) / self.primitive.T

        if state.mode is Mode.FLIGHT:
            if self._was_stance:
                # freeze the touchdown-angle correction at lift-off
                self._was_stance = False
                if self.speed_reg is not None:
                    theta_d = touchdown_angle(self.speed_reg, self.theta_nominal, float(qd[0]))
                    self._dtheta = theta_d - self.theta_nominal
            if self.speed_reg is not None:
                hd = hd.copy()
                hd[0] += self._dtheta
        else:
            self._was_stance = True

        e = hd - q[3:5]
        ed = hd_dot - qd[3:5]
        tau_b, _ = feedback_torque(self.gains, e, ed)
        tau = tau_b
        if self.tau_f is not None:
            ff = np.array([np.interp(s, self.s_grid, row) for row in self.tau_f])
            tau = tau + ff
        elif state.mode is Mode.STANCE:
            # feedback-only bootstrap: hold the weight statically, otherwise
            # the zero-error stride start carries no torque and the contact
            # unloads immediately.  Learned feedforward profiles embed this
            # term (they store the full applied torque), so it is only added
            # while no profile is installed.
            tau = tau + gravity_compensation(self.model, state.q)[0]
        if self.attitude is not None and state.mode is Mode.STANCE:
            a, _ = self.attitude.correction((q[2], qd[2]))
            tau = tau + np.array([a, 0.0])
        return tau


def resample_stride(log: TrajectoryLog, primitive: MotionPrimitive,
                    s_grid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tracking error, error rate and applied torque on the uniform phase grid."""
    arrs = log.arrays()
    s = arrs["s"]
    qL = arrs["q"][:, 3:5]
    tau = arrs["tau"]
    n_j = primitive.n_joints
    e = np.empty((n_j, s_grid.size))
    tau_g = np.empty((n_j, s_grid.size))
    for j in range(n_j):
        actual = np.interp(s_grid, s, qL[:, j])
        desired = primitive.B[j] @ _basis_cache(primitive.order, s_grid)
        e[j] = desired - actual
        tau_g[j] = np.interp(s_grid, s, tau[:, j])
    ed = np.gradient(e, s_grid, axis=1) / primitive.T
    return e, ed, tau_g


_BASIS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _basis_cache(order: int, s_grid: np.ndarray) -> np.ndarray:
    key = (order, s_grid.size)
    if key not in _BASIS_CACHE:
        from .bezier import bernstein_basis

        _BASIS_CACHE[key] = bernstein_basis(order, s_grid).T
    return _BASIS_CACHE[key]


@dataclass
class IterationRecord:
    k: int
    delta: float
    accepted: bool
    rmse: np.ndarray
    feedback_only: bool = False
    failed: bool = False
    note: str = ""
    extras: dict = field(default_factory=dict)


@dataclass
class LearningReport:
    records: list[IterationRecord]
    delta_0: float
    s_grid: np.ndarray
    tau_f_final: np.ndarray | None
    accepted_traces: list[np.ndarray]
    converged: bool
    stop_k: int | None
    logs: list[TrajectoryLog] = field(default_factory=list)

    @property
    def deltas(self) -> dict[int, float]:
        return {r.k: r.delta for r in self.records if not r.failed}

    def reduction_percent(self) -> float:
        """Error reduction of the best converged-phase iteration vs baseline."""
        accepted = [r.delta for r in self.records if r.accepted and not r.feedback_only]
        if not accepted or self.delta_0 == 0.0:
            return 0.0
        return 100.0 * (self.delta_0 - min(accepted)) / self.delta_0

    def joint_reduction_percent(self, joint: int) -> float:
        base = [r.rmse[joint] for r in self.records if r.feedback_only]
        accepted = [r.rmse[joint] for r in self.records if r.accepted and not r.feedback_only]
        if not base or not accepted:
            return 0.0
        b = float(np.mean(base))
        return 100.0 * (b - min(accepted)) / b if b else 0.0


class LearningRunError(SimulationError):
    """Simulation failure during a learning run, annotated with the iteration."""

    def __init__(self, iteration: int, cause: SimulationError):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


def run_learning(
    plant: RobotModel,
    primitive: MotionPrimitive,
    gains: GainSet | None = None,
    stop: StopParams | None = None,
    n_s: int = N_S_DEFAULT,
    n_baseline: int = 3,
    cutoff: float = 0.05,
    filt: IIRFilter | None = None,
    tau_f_init: np.ndarray | None = None,
    speed_reg: SpeedRegulator | None = None,
    attitude: AttitudePolicy | None = None,
    delay_steps: int = 0,
    meas_noise_std: float = 0.0,
    seed: int = 0,
    reset_each_stride: bool = False,
    keep_logs: bool = False,
    fail_tolerant: bool = False,
) -> LearningReport:
    """Execute a full learning run on the given plant.

    Iteration 0 runs feedback-only strides to measure the baseline error;
    the feedforward starts from the filtered feedback torque of the last
    baseline stride (or `tau_f_init` when warm-starting from the torque
    library).  Each later iteration runs one stride (pronk) or one episode
    (jump, reset to the identical initial state), and only iterations that
    pass the acceptance threshold update the stored feedforward.
    """
    gains = gains or GainSet.default(primitive.n_joints)
    stop = stop or StopParams()
    s_grid = phase_grid(n_s)
    filt = filt or design_lowpass(cutoff)
    rng = np.random.default_rng(seed)
    is_jump = primitive.gait == "jump"

    q0 = np.asarray(primitive.meta["q0"], dtype=float)
    qd0 = np.asarray(primitive.meta["qd0"], dtype=float)

    def initial_state() -> HybridState:
        return HybridState(q0.copy(), qd0.copy(), Mode.STANCE, 0.0, 0.0)

    def run_one(tau_f: np.ndarray | None, state: HybridState):
        ctrl = TrackingController(
            plant, primitive, gains, s_grid, tau_f=tau_f,
            speed_reg=speed_reg, attitude=attitude,
            meas_noise_std=meas_noise_std, rng=rng,
        )
        delay = DelayLine(delay_steps) if delay_steps else None
        if is_jump:
            log, events, end = simulate_episode(
                plant, state, ctrl, primitive.T, delay=delay)
        else:
            log, events, end = simulate_stride(
                plant, state, ctrl, primitive.T, delay=delay)
        return log, events, end

    records: list[IterationRecord] = []
    logs: list[TrajectoryLog] = []
    lstate = LearningState()

    # --- iteration 0: feedback-only baseline ---------------------------------
    state = initial_state()
    base_deltas = []
    base_rmse = []
    last_base = None
    for b in range(n_baseline):
        try:
            log, events, state_next = run_one(None, state)
        except SimulationError as exc:
            raise LearningRunError(0, exc) from exc
        e, ed, tau_g = resample_stride(log, primitive, s_grid)
        per_joint = np.sqrt(np.mean(e**2, axis=1))
        base_deltas.append(avg_rmse(per_joint))
        base_rmse.append(per_joint)
        last_base = (e, ed, tau_g, log)
        state = initial_state() if (reset_each_stride or is_jump) else state_next
    delta_0 = float(np.mean(base_deltas))
    lstate.delta_0 = delta_0
    records.append(IterationRecord(0, delta_0, False, np.mean(base_rmse, axis=0),
                                   feedback_only=True,
                                   extras=_episode_extras(last_base[3], plant, is_jump)))
    if keep_logs:
        logs.append(last_base[3])

    e0, ed0, tau0 = last_base[:3]
    lstate.e_prev = zero_phase_filter(filt, e0)
    lstate.ed_prev = zero_phase_filter(filt, ed0)
    lstate.tau_prev = zero_phase_filter(filt, tau0)

    # bootstrap: feedforward starts from the baseline feedback torque,
    # unless a warm-start profile was supplied
    tau_f = tau_f_init.copy() if tau_f_init is not None else lstate.tau_prev.copy()

    accepted_traces: list[np.ndarray] = []
    converged = False
    stop_k = None

    for k in range(1, stop.max_iters + 1):
        lstate.k = k
        try:
            log, events, state_next = run_one(tau_f, state)
        except SimulationError as exc:
            if not fail_tolerant:
                raise LearningRunError(k, exc) from exc
            records.append(IterationRecord(k, np.nan, False, np.full(primitive.n_joints, np.nan),
                                           failed=True, note=str(exc)))
            lstate.step *= 0.5
            tau_f = ilc_update(lstate, gains, s_grid)
            state = initial_state()
            continue
        e, ed, tau_g = resample_stride(log, primitive, s_grid)
        per_joint = np.sqrt(np.mean(e**2, axis=1))
        delta_k = avg_rmse(per_joint)
        accepted = accept_iteration(delta_k, delta_0, stop.delta_e, stop.mu_e, k)
        lstate.history[k] = delta_k
        records.append(IterationRecord(k, delta_k, accepted, per_joint,
                                       extras=_episode_extras(log, plant, is_jump)))
        if keep_logs:
            logs.append(log)
        if accepted:
            lstate.e_prev = zero_phase_filter(filt, e)
            lstate.ed_prev = zero_phase_filter(filt, ed)
            lstate.tau_prev = zero_phase_filter(filt, tau_g)
            lstate.accepted_count += 1
            lstate.step = 1.0
            accepted_traces.append(lstate.tau_prev.copy())
            if len(accepted_traces) > stop.n_p:
                accepted_traces.pop(0)
        else:
            lstate.step *= 0.5
        if should_stop(lstate.history, stop.delta_e, stop.kappa, stop.n_e):
            converged = True
            stop_k = k
            break
        tau_f = ilc_update(lstate, gains, s_grid)
        state = initial_state() if (reset_each_stride or is_jump) else state_next

    return LearningReport(
        records=records, delta_0=delta_0, s_grid=s_grid,
        tau_f_final=lstate.tau_prev, accepted_traces=accepted_traces,
        converged=converged, stop_k=stop_k, logs=logs,
    )


def _episode_extras(log: TrajectoryLog, model: RobotModel, is_jump: bool) -> dict:
    if not is_jump or not log.t:
        return {}
    q_end = log.q[-1]
    return {"landing_distance": float(model.foot_position(q_end)[0])}
