"""Direct-collocation trajectory optimization for pronk and jump references.

Hermite-Simpson transcription over the hybrid phases (stance DAE / flight
ODE, linked by the impact map), solved by sequential quadratic programming
with exact constraint Jacobians from forward-mode AD over the
transcription.  Simple bounds (joint, velocity, torque limits, phase
durations, torso height, fixed endpoint configurations) are handled
directly as variable bounds; contact-force and clearance conditions remain
as nonlinear inequalities.  A final Gauss-Newton restoration polishes the
equality constraints to collocation tolerance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy.optimize import minimize

from . import dynamics as dyn
from .bezier import FitError, MotionPrimitive, bezier_fit_matrix
from .model import (HybridState, Mode, RobotModel, balanced_stand_q,
                    gravity_compensation)

N_X = 2 * dyn.N_Q  # (q, qd)


class TranscriptionError(ValueError):
    """Ill-formed phase sequence or problem data."""


class SolveFailure(RuntimeError):
    """Solver hit its iteration cap without reaching feasibility."""


class OrderTooLowError(FitError):
    """Bezier export residual exceeded tolerance at the requested order."""


@dataclass(frozen=True)
class PhaseSpec:
    mode: Mode
    n_nodes: int

    def __post_init__(self):
        if self.n_nodes < 3:
            raise TranscriptionError("Hermite-Simpson needs at least 3 nodes per phase")


@dataclass
class OptProblem:
    """Hybrid collocation problem for one task.

    `param` is the mean forward speed (pronk) or the jump distance (jump).
    Fixed endpoint states (jump) enter as equal lower/upper variable
    bounds, not as constraint rows.
    """

    model: RobotModel
    phases: list[PhaseSpec]
    gait: str
    param: float
    w_tau: np.ndarray = field(default_factory=lambda: np.ones(dyn.N_U))
    w_q: np.ndarray = field(default_factory=lambda: 0.1 * np.ones(dyn.N_U))
    q_z_max: float = 0.34
    t_bounds: tuple[float, float] = (0.05, 1.0)
    t_flight_min: float = 0.10  # lower bound on flight durations
    qd_touchdown_max: float = 8.0  # joint-rate cap at touchdown nodes
    u_margin: float = 0.75  # planned-torque fraction of the actuator limit,
    # leaving feedback/learning authority for model mismatch at execution time
    stride_time: float | None = None  # pronk: fixed cycle period (None = free)
    q0_fixed: np.ndarray | None = None  # jump: initial rest configuration
    qf_fixed: np.ndarray | None = None  # jump: final rest configuration

    def __post_init__(self):
        self.w_tau = np.asarray(self.w_tau, dtype=float)
        self.w_q = np.asarray(self.w_q, dtype=float)
        if np.any(self.w_tau <= 0.0) or np.any(self.w_q <= 0.0):
            raise TranscriptionError("cost weights must be positive")
        if self.gait not in ("pronk", "jump"):
            raise TranscriptionError(f"unknown gait {self.gait!r}")
        modes = [ph.mode for ph in self.phases]
        for a, b in zip(modes, modes[1:]):
            if a == b:
                raise TranscriptionError("adjacent phases must alternate stance/flight")
        if self.gait == "pronk" and modes != [Mode.STANCE, Mode.FLIGHT]:
            raise TranscriptionError("pronk expects phases [stance, flight]")
        if self.gait == "jump" and modes != [Mode.STANCE, Mode.FLIGHT, Mode.STANCE]:
            raise TranscriptionError("jump expects phases [stance, flight, stance]")


@dataclass
class OptSolution:
    """Converged (or diagnosed) collocation solution."""

    problem: OptProblem
    states: list[np.ndarray]      # per phase, (N, 10)
    inputs: list[np.ndarray]      # per phase, (N, 2)
    durations: np.ndarray         # per phase
    objective: float
    max_violation: float
    stationarity: float
    converged: bool
    trace: list[dict] = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return float(np.sum(self.durations))


def _phase_offsets(phases: list[PhaseSpec]) -> tuple[list[int], list[int], int, int]:
    """Flat-vector layout: all states, then all inputs, then durations."""
    x_off, u_off = [], []
    pos = 0
    for ph in phases:
        x_off.append(pos)
        pos += ph.n_nodes * N_X
    for ph in phases:
        u_off.append(pos)
        pos += ph.n_nodes * dyn.N_U
    t_off = pos
    pos += len(phases)
    return x_off, u_off, t_off, pos


class Transcription:
    """Builds jitted objective / constraint callbacks over a flat vector."""

    def __init__(self, problem: OptProblem):
        self.problem = problem
        self.phases = problem.phases
        self.x_off, self.u_off, self.t_off, self.n_dec = _phase_offsets(self.phases)
        self.p = problem.model.params()
        self.f_scale = problem.model.total_mass * 9.81  # normalizes force rows
        self.objective = jax.jit(self._objective)
        self.eq_constraints = jax.jit(self._eq_constraints)
        self.ineq_constraints = jax.jit(self._ineq_constraints)
        self.eq_jac = jax.jit(jax.jacfwd(self._eq_constraints))
        self.ineq_jac = jax.jit(jax.jacfwd(self._ineq_constraints))
        guess = jnp.asarray(self.initial_guess())
        self.n_eq = int(jax.eval_shape(self._eq_constraints, guess).shape[0])
        self.n_ineq = int(jax.eval_shape(self._ineq_constraints, guess).shape[0])

    # --- layout --------------------------------------------------------------

    def unpack(self, theta):
        X, U = [], []
        for i, ph in enumerate(self.phases):
            X.append(theta[self.x_off[i]:self.x_off[i] + ph.n_nodes * N_X]
                     .reshape(ph.n_nodes, N_X))
            U.append(theta[self.u_off[i]:self.u_off[i] + ph.n_nodes * dyn.N_U]
                     .reshape(ph.n_nodes, dyn.N_U))
        T = theta[self.t_off:self.t_off + len(self.phases)]
        return X, U, T

    def pack(self, X, U, T) -> np.ndarray:
        theta = np.empty(self.n_dec)
        for i, ph in enumerate(self.phases):
            theta[self.x_off[i]:self.x_off[i] + ph.n_nodes * N_X] = np.asarray(X[i]).ravel()
            theta[self.u_off[i]:self.u_off[i] + ph.n_nodes * dyn.N_U] = np.asarray(U[i]).ravel()
        theta[self.t_off:self.t_off + len(self.phases)] = np.asarray(T)
        return theta

    # --- dynamics ------------------------------------------------------------

    def _f(self, mode: Mode, x, u):
        q, qd = x[:dyn.N_Q], x[dyn.N_Q:]
        if mode is Mode.STANCE:
            qdd, _ = dyn.stance_accel(self.p, q, qd, u)
        else:
            qdd = dyn.flight_accel(self.p, q, qd, u)
        return jnp.concatenate([qd, qdd])

    def _lam(self, x, u):
        q, qd = x[:dyn.N_Q], x[dyn.N_Q:]
        _, lam = dyn.stance_accel(self.p, q, qd, u)
        return lam  # [lam_t, lam_n]

    def _phase_defects(self, i: int, X, U, T):
        mode = self.phases[i].mode
        f = jax.vmap(lambda x, u: self._f(mode, x, u))
        F = f(X, U)
        h = T / (self.phases[i].n_nodes - 1)
        x0, x1 = X[:-1], X[1:]
        f0, f1 = F[:-1], F[1:]
        xm = 0.5 * (x0 + x1) + h / 8.0 * (f0 - f1)
        um = 0.5 * (U[:-1] + U[1:])
        fm = f(xm, um)
        return x1 - x0 - h / 6.0 * (f0 + 4.0 * fm + f1)

    # --- objective -----------------------------------------------------------

    def _running_cost(self, x, u):
        qd_l = x[dyn.N_Q + 3:dyn.N_Q + 5]
        wt = jnp.asarray(self.problem.w_tau)
        wq = jnp.asarray(self.problem.w_q)
        return jnp.dot(u, wt * u) + jnp.dot(qd_l, wq * qd_l)

    def _objective(self, theta):
        X, U, T = self.unpack(theta)
        total = 0.0
        for i, ph in enumerate(self.phases):
            c = jax.vmap(self._running_cost)(X[i], U[i])
            h = T[i] / (ph.n_nodes - 1)
            mode = ph.mode
            f = jax.vmap(lambda x, u: self._f(mode, x, u))
            F = f(X[i], U[i])
            xm = 0.5 * (X[i][:-1] + X[i][1:]) + h / 8.0 * (F[:-1] - F[1:])
            um = 0.5 * (U[i][:-1] + U[i][1:])
            cm = jax.vmap(self._running_cost)(xm, um)
            total = total + jnp.sum(h / 6.0 * (c[:-1] + 4.0 * cm + c[1:]))
        return total

    # --- constraints ---------------------------------------------------------

    def _eq_constraints(self, theta):
        prob = self.problem
        X, U, T = self.unpack(theta)
        rows = []
        for i in range(len(self.phases)):
            rows.append(self._phase_defects(i, X[i], U[i], T[i]).ravel())

        # foot anchoring.  Velocity rows are omitted where an impact-map or
        # fixed-endpoint row already implies them (keeps the constraint
        # Jacobian full-rank).
        for i, ph in enumerate(self.phases):
            if ph.mode is not Mode.STANCE:
                continue
            q0 = X[i][0, :dyn.N_Q]
            if i == 0 and prob.gait == "pronk":
                # gauge-fix the contact point at the origin; stance-start
                # velocity is pinned by the cycle-closure impact row
                rows.append(dyn.foot_position(self.p, q0))
            elif i > 0:
                # landing stance (jump): contact point at the jump distance;
                # ground height comes from the touchdown link row
                rows.append(dyn.foot_position(self.p, q0)[:1] - prob.param)
            # continuous lift-off: the whole contact force vanishes
            if i + 1 < len(self.phases):
                rows.append(self._lam(X[i][-1], U[i][-1]) / self.f_scale)

        # phase links
        for i in range(len(self.phases) - 1):
            xa, xb = X[i][-1], X[i + 1][0]
            if self.phases[i].mode is Mode.STANCE:
                rows.append(xb - xa)  # lift-off is continuous
            else:
                qa, qda = xa[:dyn.N_Q], xa[dyn.N_Q:]
                rows.append(xb[:dyn.N_Q] - qa)
                qd_plus, _ = dyn.impact_velocity(self.p, qa, qda)
                rows.append(xb[dyn.N_Q:] - qd_plus)
                rows.append(dyn.foot_position(self.p, qa)[1:])  # touchdown height

        if prob.gait == "pronk":
            x_start = X[0][0]
            x_end = X[-1][-1]
            total_t = jnp.sum(T)
            q_s, qd_s = x_start[:dyn.N_Q], x_start[dyn.N_Q:]
            q_e, qd_e = x_end[:dyn.N_Q], x_end[dyn.N_Q:]
            # cycle closure through the impact map, q_x advancing by q̄_x T
            shift = jnp.array([prob.param * total_t, 0.0, 0.0, 0.0, 0.0])
            rows.append(q_e - q_s - shift)
            qd_plus, _ = dyn.impact_velocity(self.p, q_e, qd_e)
            rows.append(qd_s - qd_plus)
            # (touchdown height at q_e is implied by the stance-start foot
            # anchor plus the position-closure rows: height is q_x-invariant)
            if prob.stride_time is not None:
                rows.append((jnp.sum(T) - prob.stride_time)[None])
        return jnp.concatenate(rows)

    def _ineq_constraints(self, theta):
        """Stacked g(theta) >= 0."""
        prob = self.problem
        X, U, T = self.unpack(theta)
        mu = prob.model.mu
        rows = []
        for i, ph in enumerate(self.phases):
            if ph.mode is Mode.STANCE:
                # drop the lift-off end node: its force is pinned to zero by
                # an equality, so these rows would be degenerately active
                nodes = slice(None) if i + 1 == len(self.phases) else slice(None, -1)
                lam = jax.vmap(self._lam)(X[i][nodes], U[i][nodes]) / self.f_scale
                lam_t, lam_n = lam[:, 0], lam[:, 1]
                rows.append(lam_n)
                rows.append(mu * lam_n - lam_t)
                rows.append(mu * lam_n + lam_t)
            else:
                # clearance at interior nodes (endpoints pinned to the ground)
                q_mid = X[i][1:-1, :dyn.N_Q]
                heights = jax.vmap(lambda q: dyn.foot_position(self.p, q)[1])(q_mid)
                rows.append(heights)
                # descending foot at touchdown
                xe = X[i][-1]
                vz = dyn.foot_velocity(self.p, xe[:dyn.N_Q], xe[dyn.N_Q:])[1]
                rows.append(-vz[None])
        return jnp.concatenate(rows)

    # --- bounds & initial guess ----------------------------------------------

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        prob = self.problem
        m = prob.model
        lb = np.full(self.n_dec, -np.inf)
        ub = np.full(self.n_dec, np.inf)
        q_lo = np.array([-5.0, 0.05, -0.8, m.q_joint_min[0], m.q_joint_min[1]])
        q_hi = np.array([5.0, prob.q_z_max if prob.gait == "pronk" else 1.0, 0.8,
                         m.q_joint_max[0], m.q_joint_max[1]])
        qd_lim = np.array([6.0, 6.0, 10.0, m.qd_joint_max[0], m.qd_joint_max[1]])
        x_lo = np.concatenate([q_lo, -qd_lim])
        x_hi = np.concatenate([q_hi, qd_lim])
        for i, ph in enumerate(self.phases):
            sl = slice(self.x_off[i], self.x_off[i] + ph.n_nodes * N_X)
            lb[sl] = np.tile(x_lo, ph.n_nodes)
            ub[sl] = np.tile(x_hi, ph.n_nodes)
            su = slice(self.u_off[i], self.u_off[i] + ph.n_nodes * dyn.N_U)
            lb[su] = np.tile(-self.problem.u_margin * np.asarray(m.tau_max), ph.n_nodes)
            ub[su] = np.tile(self.problem.u_margin * np.asarray(m.tau_max), ph.n_nodes)
        lb[self.t_off:self.t_off + len(self.phases)] = prob.t_bounds[0]
        ub[self.t_off:self.t_off + len(self.phases)] = prob.t_bounds[1]
        # floor on flight duration: rules out degenerate micro-flight optima
        for i, ph in enumerate(self.phases):
            if ph.mode is Mode.FLIGHT:
                lb[self.t_off + i] = max(lb[self.t_off + i], prob.t_flight_min)
                # cap joint rates at the touchdown node: without it the
                # optimizer parks an impact-velocity spike in the final
                # interval, which no reasonable reference should track
                last = self.x_off[i] + (ph.n_nodes - 1) * N_X
                for j in (N_X - dyn.N_U, N_X - dyn.N_U + 1):
                    lb[last + j] = max(lb[last + j], -prob.qd_touchdown_max)
                    ub[last + j] = min(ub[last + j], prob.qd_touchdown_max)

        # jump endpoints are fixed states (rest-to-rest)
        if prob.q0_fixed is not None:
            x0 = np.concatenate([prob.q0_fixed, np.zeros(dyn.N_Q)])
            lb[self.x_off[0]:self.x_off[0] + N_X] = x0
            ub[self.x_off[0]:self.x_off[0] + N_X] = x0
        if prob.qf_fixed is not None:
            xf = np.concatenate([prob.qf_fixed, np.zeros(dyn.N_Q)])
            last = len(self.phases) - 1
            o = self.x_off[last] + (self.phases[last].n_nodes - 1) * N_X
            lb[o:o + N_X] = xf
            ub[o:o + N_X] = xf
        return lb, ub

    def initial_guess(self) -> np.ndarray:
        prob = self.problem
        m = prob.model
        q_stand = balanced_stand_q(m, q_thigh=0.8)
        tau_g, _, _ = gravity_compensation(m, q_stand)
        g_mag = m.g
        v_to = 0.7  # lift-off vertical speed guess
        t_fl = 2.0 * v_to / g_mag
        t_fl = float(np.clip(t_fl, *prob.t_bounds))
        t_st = 0.25

        X, U, T = [], [], []
        x_base = np.concatenate([q_stand, np.zeros(dyn.N_Q)])
        for i, ph in enumerate(self.phases):
            n = ph.n_nodes
            Xi = np.tile(x_base, (n, 1))
            tt = np.linspace(0.0, 1.0, n)
            if ph.mode is Mode.STANCE:
                # compress then extend: vertical speed sweeps -v_to .. +v_to
                Xi[:, dyn.N_Q + 1] = -v_to + 2.0 * v_to * tt
                Ui = np.tile(tau_g, (n, 1))
                T.append(t_st)
            else:
                ts = tt * t_fl
                Xi[:, 1] = q_stand[1] + v_to * ts - 0.5 * g_mag * ts**2
                Xi[:, dyn.N_Q + 1] = v_to - g_mag * ts
                Ui = np.zeros((n, dyn.N_U))
                T.append(t_fl)
            if prob.gait == "pronk":
                Xi[:, dyn.N_Q] = prob.param
                Xi[:, 0] += prob.param * (sum(T[:-1]) + tt * T[-1])
            elif prob.gait == "jump" and prob.param != 0.0:
                frac = (i + tt) / len(self.phases)
                Xi[:, 0] += prob.param * frac
            X.append(Xi)
            U.append(Ui)
        if prob.gait == "jump":
            if prob.q0_fixed is not None:
                X[0][0] = np.concatenate([prob.q0_fixed, np.zeros(dyn.N_Q)])
            if prob.qf_fixed is not None:
                X[-1][-1] = np.concatenate([prob.qf_fixed, np.zeros(dyn.N_Q)])
        return self.pack(X, U, np.array(T))


# --- NLP solver ---------------------------------------------------------------


@dataclass
class SolverOptions:
    maxiter: int = 500
    ftol: float = 1e-10
    feas_tol: float = 1e-6
    stat_tol: float = 1e-4
    restore_iters: int = 20


def solve(trans: Transcription, theta0: np.ndarray | None = None,
          options: SolverOptions | None = None, verbose: bool = False) -> OptSolution:
    """Solve the transcribed NLP by sequential quadratic programming.

    Equality/inequality Jacobians come from forward-mode AD over the
    transcription; simple limits stay as variable bounds.  A damped
    Gauss-Newton restoration afterwards polishes the equality constraints
    to collocation tolerance, and stationarity is measured as the residual
    of a least-squares KKT multiplier fit.
    """
    opts = options or SolverOptions()
    lb, ub = trans.bounds()
    theta = np.clip(np.asarray(theta0 if theta0 is not None else
                               trans.initial_guess(), float), lb, ub)
    obj_grad = jax.jit(jax.grad(trans._objective))
    trace: list[dict] = []

    def cb(th):
        h = np.asarray(trans.eq_constraints(th))
        g = np.asarray(trans.ineq_constraints(th))
        trace.append({
            "iteration": len(trace),
            "objective": float(trans.objective(th)),
            "feasibility": float(max(np.max(np.abs(h), initial=0.0),
                                     np.max(-g, initial=0.0))),
        })
        if verbose:
            r = trace[-1]
            print(f"  it {r['iteration']:3d}: obj={r['objective']:10.4f} "
                  f"viol={r['feasibility']:.3e}")

    res = minimize(
        lambda th: float(trans.objective(th)), theta,
        jac=lambda th: np.array(obj_grad(th)),
        method="SLSQP", bounds=list(zip(lb, ub)),
        constraints=[
            {"type": "eq", "fun": lambda th: np.array(trans.eq_constraints(th)),
             "jac": lambda th: np.array(trans.eq_jac(th))},
            {"type": "ineq", "fun": lambda th: np.array(trans.ineq_constraints(th)),
             "jac": lambda th: np.array(trans.ineq_jac(th))},
        ],
        callback=cb,
        options={"maxiter": opts.maxiter, "ftol": opts.ftol},
    )
    theta = np.clip(res.x, lb, ub)
    theta = _restore(trans, theta, lb, ub, opts)

    h = np.asarray(trans.eq_constraints(theta))
    g = np.asarray(trans.ineq_constraints(theta))
    viol = max(np.max(np.abs(h), initial=0.0), np.max(-g, initial=0.0))
    stat = _stationarity(trans, theta, lb, ub)
    X, U, T = trans.unpack(jnp.asarray(theta))
    return OptSolution(
        problem=trans.problem,
        states=[np.asarray(x) for x in X],
        inputs=[np.asarray(u) for u in U],
        durations=np.asarray(T),
        objective=float(trans.objective(theta)),
        max_violation=float(viol),
        stationarity=float(stat),
        converged=bool(viol <= opts.feas_tol and stat <= opts.stat_tol),
        trace=trace,
    )


def _restore(trans: Transcription, theta, lb, ub, opts: SolverOptions) -> np.ndarray:
    """Damped Gauss-Newton projection onto the equality manifold.

    Variables sitting on active bounds are held fixed; each minimum-norm
    Newton step is backtracked on the max equality residual.
    """
    for _ in range(opts.restore_iters):
        h = np.asarray(trans.eq_constraints(theta))
        hn = np.max(np.abs(h), initial=0.0)
        if hn < 1e-11:
            break
        free = ((ub - lb > 1e-12) & (theta - lb > 1e-9) & (ub - theta > 1e-9))
        J = np.asarray(trans.eq_jac(theta))[:, free]
        JJt = J @ J.T
        JJt[np.diag_indices_from(JJt)] += 1e-10
        full = np.zeros_like(theta)
        full[free] = J.T @ np.linalg.solve(JJt, h)
        alpha = 1.0
        for _ in range(20):
            cand = np.clip(theta - alpha * full, lb, ub)
            if np.max(np.abs(np.asarray(trans.eq_constraints(cand))), initial=0.0) < hn:
                theta = cand
                break
            alpha *= 0.5
        else:
            break  # no descent direction left; report what we have
    return theta


def _stationarity(trans: Transcription, theta, lb, ub) -> float:
    """KKT residual with least-squares multipliers.

    Fits (lambda, mu >= 0 on the active inequalities, bound multipliers on
    the active bounds) to the cost gradient and reports the remaining
    infinity-norm residual.
    """
    grad = np.array(jax.grad(trans._objective)(theta))
    g = np.asarray(trans.ineq_constraints(theta))
    act = g < 1e-6
    at_lb = theta - lb < 1e-7
    at_ub = ub - theta < 1e-7
    free = ~(at_lb | at_ub)
    Je = np.array(trans.eq_jac(theta))
    Ja = np.array(trans.ineq_jac(theta))[act] if act.any() else np.zeros((0, theta.size))
    # multipliers are fit over the free variables only; the active-bound
    # components are absorbed by (sign-consistent) bound multipliers below
    A = np.hstack([Je[:, free].T, -Ja[:, free].T])
    sol, *_ = np.linalg.lstsq(A, -grad[free], rcond=None)
    n_eq = trans.n_eq
    lam, mu = sol[:n_eq], np.maximum(sol[n_eq:], 0.0)
    if act.any() and np.any(sol[n_eq:] < 0.0):
        # clamped multipliers: refit the equality multipliers around them
        lam, *_ = np.linalg.lstsq(Je[:, free].T,
                                  -grad[free] + Ja[:, free].T @ mu, rcond=None)
    resid = grad + Je.T @ lam - Ja.T @ mu
    resid[at_lb & (resid > 0.0)] = 0.0
    resid[at_ub & (resid < 0.0)] = 0.0
    return float(np.max(np.abs(resid), initial=0.0))


def write_trace_csv(trace: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["iteration", "objective", "feasibility"])
        w.writeheader()
        for row in trace:
            w.writerow({k: row[k] for k in ("iteration", "objective", "feasibility")})


# --- problem constructors ----------------------------------------------------


def pronk_problem(model: RobotModel, speed: float, n_stance: int = 14,
                  n_flight: int = 10, **kw) -> OptProblem:
    phases = [PhaseSpec(Mode.STANCE, n_stance), PhaseSpec(Mode.FLIGHT, n_flight)]
    return OptProblem(model=model, phases=phases, gait="pronk", param=speed, **kw)


def jump_problem(model: RobotModel, distance: float, n_stance: int = 12,
                 n_flight: int = 10, crouch_thigh: float = 0.9, **kw) -> OptProblem:
    q_i = balanced_stand_q(model, q_thigh=crouch_thigh)
    q_f = q_i + np.array([distance, 0.0, 0.0, 0.0, 0.0])
    phases = [PhaseSpec(Mode.STANCE, n_stance), PhaseSpec(Mode.FLIGHT, n_flight),
              PhaseSpec(Mode.STANCE, n_stance)]
    return OptProblem(model=model, phases=phases, gait="jump", param=distance,
                      q0_fixed=q_i, qf_fixed=q_f, **kw)


# --- seeding -----------------------------------------------------------------


def simulated_guess(trans: Transcription, crouch_thigh: float = 0.8,
                    ext_thigh: float = 0.4) -> np.ndarray:
    """Seed the NLP from a heuristic hop simulated with the pitch frozen.

    A stiff PD pushes toward an extended leg in stance and recovers the
    crouch in flight; simulating this on a model with a huge pitch inertia
    produces a dynamically consistent (if crude) hop whose stance and
    flight segments are chopped at the located events and resampled onto
    the collocation nodes.
    """
    from dataclasses import replace as _replace

    from . import simulate as sim

    prob = trans.problem
    if prob.gait == "jump":
        return _jump_guess(trans)
    m = _replace(prob.model, I_pitch=50.0)  # pitch effectively frozen
    if prob.q0_fixed is not None:
        crouch = np.asarray(prob.q0_fixed, float)
    else:
        crouch = balanced_stand_q(m, q_thigh=crouch_thigh)
    ext = balanced_stand_q(m, q_thigh=ext_thigh)

    landed = {"flag": False}

    def ctrl(state):
        if state.mode is Mode.FLIGHT:
            landed["flag"] = True  # any later stance is the landing
            return 80.0 * (crouch[3:] - state.q[3:]) - 3.0 * state.qd[3:]
        if landed["flag"]:
            # landing: absorb the impact toward a half-extended posture
            # (pure crouch targets buckle under the touchdown momentum)
            mid = 0.5 * (crouch + ext)
            return 300.0 * (mid[3:] - state.q[3:]) - 15.0 * state.qd[3:]
        return 300.0 * (ext[3:] - state.q[3:]) - 5.0 * state.qd[3:]

    s0 = HybridState(crouch, np.zeros(dyn.N_Q), Mode.STANCE)
    if prob.gait == "jump":
        log, events, _ = sim.simulate_episode(m, s0, ctrl, duration=1.0,
                                              check_cone=False, min_height=0.02)
    else:
        log, events, _ = sim.simulate_stride(m, s0, ctrl, stride_T=1.0,
                                             check_cone=False)
    arr = log.arrays()
    t_lo = next(e.t for e in events if e.name == "liftoff")
    t_td = next(e.t for e in events if e.name == "touchdown")
    seg = {Mode.STANCE: (0.0, t_lo), Mode.FLIGHT: (t_lo, t_td)}

    lb, ub = trans.bounds()
    X, U, T = [], [], []
    t_elapsed = 0.0
    for i, ph in enumerate(trans.phases):
        if prob.gait == "jump" and i == 2:
            # landing stance: simulated settle after touchdown
            t_end = min(arr["t"][-1], t_td + 0.3)
            tn = np.linspace(t_td, t_end, ph.n_nodes)
            cols = np.column_stack([arr["q"], arr["qd"]])
            Xi = np.column_stack(
                [np.interp(tn, arr["t"], cols[:, j]) for j in range(N_X)])
            Ui = np.column_stack(
                [np.interp(tn, arr["t"], arr["tau"][:, j]) for j in range(dyn.N_U)])
            Xi[-1] = np.concatenate([prob.qf_fixed - np.array([prob.param, 0, 0, 0, 0]),
                                     np.zeros(dyn.N_Q)])
            Xi[:, 0] += prob.param
            Ti = t_end - t_td
        else:
            a, b = seg[ph.mode]
            tn = np.linspace(a, b, ph.n_nodes)
            cols = np.column_stack([arr["q"], arr["qd"]])
            Xi = np.column_stack(
                [np.interp(tn, arr["t"], cols[:, j]) for j in range(N_X)])
            Ui = np.column_stack(
                [np.interp(tn, arr["t"], arr["tau"][:, j]) for j in range(dyn.N_U)])
            Ti = b - a
        if prob.gait == "pronk" and prob.param != 0.0:
            tt = np.linspace(0.0, 1.0, ph.n_nodes)
            Xi[:, 0] += prob.param * (t_elapsed + tt * Ti)
            Xi[:, dyn.N_Q] += prob.param
        if prob.gait == "jump" and prob.param != 0.0 and ph.mode is Mode.FLIGHT:
            tt = np.linspace(0.0, 1.0, ph.n_nodes)
            Xi[:, 0] += prob.param * tt
            Xi[:, dyn.N_Q] += prob.param / Ti
        t_elapsed += Ti
        X.append(Xi)
        U.append(Ui)
        T.append(Ti)
    return np.clip(trans.pack(X, U, np.array(T)), lb, ub)


def _hermite_segment(q0, v0, q1, v1, T, n):
    """Cubic Hermite interpolation: positions, rates, accelerations at n nodes."""
    q0, v0, q1, v1 = (np.asarray(a, float) for a in (q0, v0, q1, v1))
    tau = np.linspace(0.0, 1.0, n)[:, None]
    h = np.hstack([2 * tau**3 - 3 * tau**2 + 1, tau**3 - 2 * tau**2 + tau,
                   -2 * tau**3 + 3 * tau**2, tau**3 - tau**2])
    hd = np.hstack([6 * tau**2 - 6 * tau, 3 * tau**2 - 4 * tau + 1,
                    -6 * tau**2 + 6 * tau, 3 * tau**2 - 2 * tau])
    hdd = np.hstack([12 * tau - 6, 6 * tau - 4, -12 * tau + 6, 6 * tau - 2])
    P = np.stack([q0, T * v0, q1, T * v1])
    return h @ P, (hd @ P) / T, (hdd @ P) / T**2


def _stance_torque_guess(p, q, qd, qdd):
    """Least-squares torques balancing the stance EOM at each node."""
    S = np.asarray(dyn.S_MAT)
    out = np.empty((q.shape[0], dyn.N_U))
    for i in range(q.shape[0]):
        M = np.asarray(dyn.mass_matrix(p, q[i]))
        C = np.asarray(dyn.coriolis_vector(p, q[i], qd[i]))
        G = np.asarray(dyn.gravity_force(p, q[i]))
        J = np.asarray(dyn.foot_jacobian(p, q[i]))
        A = np.hstack([S, J.T])
        sol, *_ = np.linalg.lstsq(A, M @ qdd[i] + C + G, rcond=None)
        out[i] = sol[:dyn.N_U]
    return out


def _jump_guess(trans: Transcription, liftoff_thigh: float = 0.55,
                t_stance: float = 0.25, t_flight: float = 0.30) -> np.ndarray:
    """Analytic rest-to-rest jump seed.

    Takeoff stance follows a cubic from the crouch to an extended lift-off
    state whose joint rates launch the torso ballistically onto the landing
    point; flight is exact projectile motion of the torso with the leg
    morphing back to the crouch; the landing stance decays the post-impact
    velocity to rest.  Torques come from least-squares inverse dynamics.
    """
    prob = trans.problem
    m = prob.model
    p = trans.p
    d = prob.param
    crouch = np.asarray(prob.q0_fixed, float)
    qf = np.asarray(prob.qf_fixed, float)
    q_lo = balanced_stand_q(m, q_thigh=liftoff_thigh)

    # lift-off velocity: ballistic arc from z_lo back down to the crouch
    # height, advancing the foot by the jump distance
    vz_lo = (crouch[1] - q_lo[1]) / t_flight + 0.5 * m.g * t_flight
    vx_lo = (crouch[0] + d - q_lo[0]) / t_flight
    J = np.asarray(dyn.foot_jacobian(p, q_lo))
    qd_joints = np.linalg.solve(J[:, 3:5], -np.array([vx_lo, vz_lo]))
    qd_lo = np.array([vx_lo, vz_lo, 0.0, qd_joints[0], qd_joints[1]])

    n0, n1, n2 = (ph.n_nodes for ph in trans.phases)

    # takeoff stance
    q_st, qd_st, qdd_st = _hermite_segment(crouch, np.zeros(5), q_lo, qd_lo,
                                           t_stance, n0)
    u_st = _stance_torque_guess(p, q_st, qd_st, qdd_st)

    # flight: exact torso ballistics, joints morph to the crouch posture
    t_fl = np.linspace(0.0, t_flight, n1)
    q_fl = np.empty((n1, dyn.N_Q))
    qd_fl = np.empty((n1, dyn.N_Q))
    q_fl[:, 0] = q_lo[0] + vx_lo * t_fl
    q_fl[:, 1] = q_lo[1] + vz_lo * t_fl - 0.5 * m.g * t_fl**2
    q_fl[:, 2] = 0.0
    qd_fl[:, 0] = vx_lo
    qd_fl[:, 1] = vz_lo - m.g * t_fl
    qd_fl[:, 2] = 0.0
    jq, jqd, _ = _hermite_segment(q_lo[3:], qd_lo[3:], crouch[3:],
                                  np.zeros(2), t_flight, n1)
    q_fl[:, 3:] = jq
    qd_fl[:, 3:] = jqd
    u_fl = np.zeros((n1, dyn.N_U))

    # landing: impact map, then decay to rest at the displaced crouch
    q_td = q_fl[-1]
    qd_plus, _ = (np.asarray(a) for a in dyn.impact_velocity(p, q_td, qd_fl[-1]))
    q_ld, qd_ld, qdd_ld = _hermite_segment(q_td, qd_plus, qf, np.zeros(5),
                                           t_stance, n2)
    u_ld = _stance_torque_guess(p, q_ld, qd_ld, qdd_ld)

    X = [np.hstack([q_st, qd_st]), np.hstack([q_fl, qd_fl]),
         np.hstack([q_ld, qd_ld])]
    U = [u_st, u_fl, u_ld]
    T = np.array([t_stance, t_flight, t_stance])
    lb, ub = trans.bounds()
    return np.clip(trans.pack(X, U, T), lb, ub)


def seed_from_solution(trans: Transcription, sol: OptSolution) -> np.ndarray:
    """Warm-start one problem from a solved neighbor (continuation).

    Node counts may differ (resampled linearly).  For pronking, a change
    in target speed is applied as a rigid shift of the horizontal velocity
    and a matching ramp of the horizontal position.
    """
    prob = trans.problem
    if [ph.mode for ph in prob.phases] != [ph.mode for ph in sol.problem.phases]:
        raise TranscriptionError("phase sequences differ; cannot reseed")
    X, U = [], []
    T = np.array(sol.durations, dtype=float)
    for i, ph in enumerate(prob.phases):
        Xi, Ui = np.array(sol.states[i]), np.array(sol.inputs[i])
        n_old = Xi.shape[0]
        if n_old != ph.n_nodes:
            told = np.linspace(0.0, 1.0, n_old)
            tnew = np.linspace(0.0, 1.0, ph.n_nodes)
            Xi = np.column_stack([np.interp(tnew, told, Xi[:, j]) for j in range(N_X)])
            Ui = np.column_stack(
                [np.interp(tnew, told, Ui[:, j]) for j in range(dyn.N_U)])
        X.append(Xi)
        U.append(Ui)
    if prob.gait == "pronk":
        dv = prob.param - sol.problem.param
        if dv != 0.0:
            t_elapsed = 0.0
            for i, ph in enumerate(prob.phases):
                tt = np.linspace(0.0, 1.0, ph.n_nodes)
                X[i][:, 0] += dv * (t_elapsed + tt * T[i])
                X[i][:, dyn.N_Q] += dv
                t_elapsed += T[i]
    elif prob.gait == "jump":
        dd = prob.param - sol.problem.param
        if dd != 0.0:
            for i, ph in enumerate(prob.phases):
                tt = np.linspace(0.0, 1.0, ph.n_nodes)
                if ph.mode is Mode.FLIGHT:
                    X[i][:, 0] += dd * tt
                    X[i][:, dyn.N_Q] += dd / T[i]
                elif i > 0:  # landing stance translates with the target
                    X[i][:, 0] += dd
    lb, ub = trans.bounds()
    return np.clip(trans.pack(X, U, T), lb, ub)


# --- export ------------------------------------------------------------------


def _hermite_eval(x0, x1, f0, f1, h, t):
    """Cubic Hermite interpolant on one interval; t in [0, 1]."""
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return (h00[:, None] * x0 + h10[:, None] * h * f0
            + h01[:, None] * x1 + h11[:, None] * h * f1)


def dense_trajectory(sol: OptSolution, samples_per_interval: int = 16):
    """Time-stamped dense states from the collocation solution.

    Returns (t, x) with x of shape (n_samples, 10); piecewise cubic per
    interval, matching the Hermite-Simpson interpolant.
    """
    trans = Transcription(sol.problem)
    ts, xs = [], []
    t_phase = 0.0
    for i, ph in enumerate(sol.problem.phases):
        X = sol.states[i]
        U = sol.inputs[i]
        mode = ph.mode
        F = np.asarray(jax.vmap(lambda x, u: trans._f(mode, x, u))(
            jnp.asarray(X), jnp.asarray(U)))
        h = sol.durations[i] / (ph.n_nodes - 1)
        tt = np.linspace(0.0, 1.0, samples_per_interval, endpoint=False)
        for k in range(ph.n_nodes - 1):
            xs.append(_hermite_eval(X[k], X[k + 1], F[k], F[k + 1], h, tt))
            ts.append(t_phase + (k + tt) * h)
        t_phase += sol.durations[i]
    ts.append(np.array([t_phase]))
    xs.append(sol.states[-1][-1][None, :])
    return np.concatenate(ts), np.concatenate(xs)


def export_primitive(sol: OptSolution, n_m: int = 24, fit_tol: float = 1e-3,
                     samples_per_interval: int = 16) -> MotionPrimitive:
    """Refit the solution's joint trajectories as a Bezier motion primitive.

    The phase variable spans the whole task (all phases); metadata carries
    the full initial state and phase timing so the primitive alone can seed
    a simulation.
    """
    if not sol.converged:
        raise SolveFailure("refusing to export an unconverged solution")
    t, x = dense_trajectory(sol, samples_per_interval)
    T_total = sol.total_time
    s = t / T_total
    joints = x[:, 3:dyn.N_Q].T  # (n_joints, n_samples)
    B, rms = bezier_fit_matrix(s, joints, n_m)
    if rms > fit_tol:
        raise OrderTooLowError(
            f"order-{n_m} refit residual {rms:.2e} rad exceeds {fit_tol:g}; "
            "raise the primitive order"
        )
    x0 = sol.states[0][0]
    prob = sol.problem
    meta = {
        "q0": x0[:dyn.N_Q].tolist(),
        "qd0": x0[dyn.N_Q:].tolist(),
        "phase_durations": sol.durations.tolist(),
        "stance_fraction": float(sol.durations[0] / T_total),
        "fit_rms": rms,
        "objective": sol.objective,
    }
    if prob.gait == "pronk":
        meta["qdx_avg"] = prob.param
    else:
        meta["distance"] = prob.param
    return MotionPrimitive(B, prob.param, T_total, prob.gait, meta)
