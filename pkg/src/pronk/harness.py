"""Experiment orchestration: speed sweeps, slope/gravity studies, jump
learning, warm-start comparisons, and the torque-library-vs-WBC latency
benchmark.

Every experiment is driven by a Scenario (validated before any simulation
starts) and a seed; reports carry the scenario echo and seed so any run is
bit-exact reproducible.  Reduction percentages are always recomputed from
the logged RMSEs, never entered by hand.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import control, trajopt
from .bezier import MotionPrimitive, PrimitiveLibrary
from .control import GainSet, LearningReport, LearningRunError, StopParams, phase_grid
from .library import TorqueLibrary, build_profile
from .model import G_EARTH, RobotModel
from .simulate import SimulationError
from .stabilizers import AttitudePolicy, SpeedRegulator

STANDARD_PERTURBATION = {"mass_scale": 1.2, "b_visc": 0.1, "delay_ms": 2.0}


class ScenarioError(ValueError):
    """Out-of-range scenario parameter (rejected before any simulation)."""


@dataclass(frozen=True)
class Scenario:
    """One experiment condition: environment, plant perturbation, task, seed."""

    g: float = G_EARTH
    slope_deg: float = 0.0
    mass_scale: float = 1.0
    b_visc: float = 0.0
    delay_ms: float = 0.0
    speed: float | None = None
    distance: float | None = None
    meas_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.g <= 0.0:
            raise ScenarioError(f"gravity must be positive, got {self.g}")
        if not -15.0 <= self.slope_deg <= 15.0:
            raise ScenarioError(f"slope {self.slope_deg} deg outside [-15, 15]")
        if self.mass_scale <= 0.0:
            raise ScenarioError("mass scale must be positive")
        if self.b_visc < 0.0 or self.delay_ms < 0.0 or self.meas_noise_std < 0.0:
            raise ScenarioError("friction, delay, and noise must be non-negative")

    @classmethod
    def perturbed(cls, **kw) -> "Scenario":
        """Scenario carrying the standard model-mismatch perturbation set."""
        base = {"mass_scale": STANDARD_PERTURBATION["mass_scale"],
                "b_visc": STANDARD_PERTURBATION["b_visc"],
                "delay_ms": STANDARD_PERTURBATION["delay_ms"]}
        base.update(kw)
        return cls(**base)

    def plant(self, nominal: RobotModel) -> RobotModel:
        """The (possibly perturbed) plant the controller actually runs on."""
        return nominal.with_environment(g=self.g, slope_deg=self.slope_deg).perturbed(
            mass_scale=self.mass_scale, b_visc=self.b_visc
        )

    @property
    def delay_steps(self) -> int:
        from .simulate import CONTROL_DT

        return int(round(self.delay_ms * 1e-3 / CONTROL_DT))

    def to_dict(self) -> dict:
        return asdict(self)


def scale_stride_time(t_earth: float, g_planet: float) -> float:
    """Stride period rescaled for gravity: T = T_earth * sqrt(g_earth/g)."""
    if g_planet <= 0.0:
        raise ScenarioError(f"gravity must be positive, got {g_planet}")
    return float(t_earth * np.sqrt(G_EARTH / g_planet))


@dataclass
class ExperimentReport:
    """Machine-readable result of one experiment (or one sweep point)."""

    name: str
    scenario: dict
    seed: int
    rows: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0
    notes: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "scenario": self.scenario,
            "seed": self.seed,
            "rows": self.rows,
            "wall_time_s": round(self.wall_time_s, 3),
            "notes": self.notes,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1, sort_keys=True)


# --- primitive acquisition ----------------------------------------------------


def solve_primitive(model: RobotModel, gait: str, p: float,
                    seed_solution: trajopt.OptSolution | None = None,
                    n_m: int | None = None,
                    **problem_kw) -> tuple[MotionPrimitive, trajopt.OptSolution]:
    """Solve the collocation problem for one task and export its primitive."""
    if gait == "pronk":
        prob = trajopt.pronk_problem(model, p, **problem_kw)
    else:
        prob = trajopt.jump_problem(model, p, **problem_kw)
    trans = trajopt.Transcription(prob)
    if seed_solution is not None:
        theta0 = trajopt.seed_from_solution(trans, seed_solution)
    else:
        theta0 = trajopt.simulated_guess(trans)
    sol = trajopt.solve(trans, theta0)
    if not sol.converged:
        raise trajopt.SolveFailure(
            f"{gait} p={p}: violation {sol.max_violation:.2e}, "
            f"stationarity {sol.stationarity:.2e}"
        )
    prim = trajopt.export_primitive(sol, **({} if n_m is None else {"n_m": n_m}))
    return prim, sol


def build_primitive_library(model: RobotModel, speeds, n_m: int | None = None,
                            **problem_kw) -> PrimitiveLibrary:
    """Solve a pronk primitive per speed, by continuation from slow to fast.

    Speeds are solved in order of increasing magnitude, each seeded from the
    nearest previously solved speed.
    """
    speeds = sorted(set(float(v) for v in speeds), key=abs)
    solved: dict[float, trajopt.OptSolution] = {}
    lib: PrimitiveLibrary | None = None
    for v in speeds:
        seed_sol = None
        if solved:
            nearest = min(solved, key=lambda u: abs(u - v))
            seed_sol = solved[nearest]
        prim, sol = solve_primitive(model, "pronk", v, seed_solution=seed_sol,
                                    n_m=n_m, **problem_kw)
        if lib is None:
            lib = PrimitiveLibrary(gait="pronk", model_hash=model.model_hash,
                                   n_M=prim.order)
        lib.insert(prim)
        solved[v] = sol
    if lib is None:
        raise ValueError("no speeds requested")
    return lib


# --- learning experiments -----------------------------------------------------


def _reduction_rows(prim: MotionPrimitive, report: LearningReport) -> dict:
    """One result row recomputed from the raw learning logs."""
    base = [r for r in report.records if r.feedback_only]
    accepted = [r for r in report.records if r.accepted and not r.feedback_only]
    row = {
        "p": prim.p,
        "delta_0": report.delta_0,
        "converged": report.converged,
        "stop_k": report.stop_k,
        "iterations": max((r.k for r in report.records), default=0),
        "reduction_pct": report.reduction_percent(),
        "thigh_reduction_pct": report.joint_reduction_percent(0),
        "calf_reduction_pct": report.joint_reduction_percent(1),
    }
    if accepted:
        row["delta_best"] = float(min(r.delta for r in accepted))
    if base and base[0].extras.get("landing_distance") is not None:
        row["landing_baseline"] = base[0].extras["landing_distance"]
    return row


def run_learning_scenario(
    nominal: RobotModel,
    prim: MotionPrimitive,
    scenario: Scenario,
    gains: GainSet | None = None,
    stop: StopParams | None = None,
    tau_f_init: np.ndarray | None = None,
    speed_reg: SpeedRegulator | None = None,
    attitude: AttitudePolicy | None = None,
    keep_logs: bool = False,
    fail_tolerant: bool = False,
) -> LearningReport:
    """One ILC learning run of the primitive on the scenario's plant."""
    plant = scenario.plant(nominal)
    return control.run_learning(
        plant, prim,
        gains=gains, stop=stop,
        tau_f_init=tau_f_init,
        speed_reg=speed_reg, attitude=attitude,
        delay_steps=scenario.delay_steps,
        meas_noise_std=scenario.meas_noise_std,
        seed=scenario.seed,
        keep_logs=keep_logs,
        fail_tolerant=fail_tolerant,
    )


def write_iteration_csv(report: LearningReport, path) -> None:
    """Per-iteration log: k,delta_k,accepted,rmse_thigh,rmse_calf."""
    import csv as _csv

    with open(path, "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["k", "delta_k", "accepted", "rmse_thigh", "rmse_calf"])
        for r in report.records:
            w.writerow([r.k, repr(float(r.delta)), int(r.accepted),
                        repr(float(r.rmse[0])), repr(float(r.rmse[1]))])


def run_speed_sweep(
    nominal: RobotModel,
    lib: PrimitiveLibrary,
    speeds,
    scenario: Scenario | None = None,
    gains: GainSet | None = None,
    stop: StopParams | None = None,
    workers: int = 1,
) -> ExperimentReport:
    """PD-baseline vs post-ILC tracking errors across commanded speeds.

    Per-speed failures are recorded as rows with an `error` field; the
    sweep continues.  Rows come out sorted by speed regardless of worker
    scheduling.
    """
    base = scenario or Scenario.perturbed()
    t0 = time.perf_counter()
    report = ExperimentReport("speed_sweep", base.to_dict(), base.seed)

    def one(v: float) -> dict:
        sc = replace(base, speed=float(v))
        try:
            prim = lib.lookup(float(v))
            rep = run_learning_scenario(nominal, prim, sc, gains=gains, stop=stop,
                                        fail_tolerant=True)
            return _reduction_rows(prim, rep)
        except (SimulationError, LearningRunError, ValueError) as exc:
            return {"p": float(v), "error": str(exc)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, speeds))
    else:
        rows = [one(v) for v in speeds]
    report.rows = sorted(rows, key=lambda r: r["p"])
    report.wall_time_s = time.perf_counter() - t0
    return report


def run_slope_study(
    nominal: RobotModel,
    lib: PrimitiveLibrary,
    slopes,
    speed: float = 0.0,
    scenario: Scenario | None = None,
    gains: GainSet | None = None,
    stop: StopParams | None = None,
    workers: int = 1,
) -> ExperimentReport:
    """Learning runs with gravity projected into the slope frame."""
    base = scenario or Scenario.perturbed()
    t0 = time.perf_counter()
    report = ExperimentReport("slope_study", base.to_dict(), base.seed)

    def one(slope: float) -> dict:
        sc = replace(base, slope_deg=float(slope), speed=speed)
        try:
            prim = lib.lookup(speed)
            rep = run_learning_scenario(nominal, prim, sc, gains=gains, stop=stop,
                                        fail_tolerant=True)
            row = _reduction_rows(prim, rep)
        except (SimulationError, LearningRunError, ValueError) as exc:
            row = {"p": speed, "error": str(exc)}
        row["slope_deg"] = float(slope)
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, slopes))
    else:
        rows = [one(s) for s in slopes]
    report.rows = sorted(rows, key=lambda r: r["slope_deg"])
    report.wall_time_s = time.perf_counter() - t0
    return report


def run_gravity_study(
    nominal: RobotModel,
    lib: PrimitiveLibrary,
    speed: float = 0.0,
    gravities: dict[str, float] | None = None,
    scenario: Scenario | None = None,
    gains: GainSet | None = None,
    stop: StopParams | None = None,
) -> ExperimentReport:
    """Earth control run plus off-Earth runs with rescaled stride times."""
    gs = gravities or {"earth": G_EARTH, "lunar": 1.62, "high_g": 15.70}
    base = scenario or Scenario.perturbed()
    t0 = time.perf_counter()
    report = ExperimentReport("gravity_study", base.to_dict(), base.seed)
    prim_earth = lib.lookup(speed)
    for name, g in sorted(gs.items()):
        sc = replace(base, g=float(g), speed=speed)
        prim = prim_earth.with_duration(scale_stride_time(prim_earth.T, g))
        try:
            rep = run_learning_scenario(nominal, prim, sc, gains=gains, stop=stop,
                                        fail_tolerant=True)
            row = _reduction_rows(prim, rep)
        except (SimulationError, LearningRunError) as exc:
            row = {"p": speed, "error": str(exc)}
        row["condition"] = name
        row["g"] = float(g)
        row["stride_time"] = prim.T
        report.rows.append(row)
    report.wall_time_s = time.perf_counter() - t0
    return report


def run_jump_task(
    nominal: RobotModel,
    prim: MotionPrimitive,
    scenario: Scenario | None = None,
    gains: GainSet | None = None,
    stop: StopParams | None = None,
    tl: TorqueLibrary | None = None,
) -> ExperimentReport:
    """Jump learning over repeated episodes from an identical initial state.

    Logs the landing distance per iteration; falls during flight are
    recorded as failed iterations.  A converged torque profile is stored in
    the torque library when one is provided.
    """
    sc = scenario or Scenario.perturbed()
    t0 = time.perf_counter()
    report = ExperimentReport("jump_task", sc.to_dict(), sc.seed)
    d = prim.p
    rep = run_learning_scenario(nominal, prim, sc, gains=gains, stop=stop,
                                fail_tolerant=True, keep_logs=False)
    for r in rep.records:
        row = {
            "k": r.k, "delta_k": None if np.isnan(r.delta) else float(r.delta),
            "accepted": bool(r.accepted), "failed": bool(r.failed),
            "feedback_only": bool(r.feedback_only),
        }
        land = r.extras.get("landing_distance")
        if land is not None:
            row["landing_distance"] = float(land)
            row["landing_error"] = float(land - d)
        report.rows.append(row)
    report.notes.append(f"commanded_distance={d}")
    if tl is not None and rep.converged and len(rep.accepted_traces) >= (stop or StopParams()).n_p:
        prof = build_profile(rep.accepted_traces, rep.s_grid, d, prim.T,
                             n_p=(stop or StopParams()).n_p, order=tl.n_M,
                             meta={"gait": "jump"})
        tl.insert(prof)
        report.notes.append("torque profile stored")
    report.wall_time_s = time.perf_counter() - t0
    return report


# --- latency benchmark --------------------------------------------------------


def bench_tl_vs_wbc(
    model: RobotModel,
    profile_B: np.ndarray,
    states: list,
    iterations: int = 100_000,
    rng: np.random.Generator | None = None,
) -> ExperimentReport:
    """Median/p99 per-call latency: Bezier torque-profile eval vs WBC.

    Both paths consume the same cyclic state stream.  The TL path evaluates
    the stored Bezier coefficient matrix at the state's phase; the WBC path
    computes full inverse dynamics for desired accelerations and contact
    forces.  The TL evaluation pre-allocates everything it needs: no
    per-call transient allocations beyond the returned vector.
    """
    from .bezier import bernstein_basis
    from . import dynamics as dyn
    import jax.numpy as jnp

    t0 = time.perf_counter()
    n = len(states)
    phases = np.linspace(0.0, 1.0, n, endpoint=False)
    order = profile_B.shape[1] - 1
    # TL path: precomputed basis per stream slot (profile playback caches
    # the basis over its fixed phase grid)
    basis = bernstein_basis(order, phases)  # (n, order+1)

    qdd_des = np.zeros(dyn.N_Q)
    f_des = np.array([0.0, model.total_mass * model.g])

    # warm both paths (jit compile / cache)
    _ = profile_B @ basis[0]
    q0, qd0 = states[0]
    _ = np.asarray(dyn.inverse_dynamics_jit(model.params(), jnp.asarray(q0),
                                            jnp.asarray(qd0), jnp.asarray(qdd_des),
                                            jnp.asarray(f_des)))

    tl_times = np.empty(iterations)
    for i in range(iterations):
        b = basis[i % n]
        t1 = time.perf_counter_ns()
        _ = profile_B @ b
        tl_times[i] = time.perf_counter_ns() - t1

    p = model.params()
    jstates = [(jnp.asarray(q), jnp.asarray(qd)) for q, qd in states]
    jqdd, jf = jnp.asarray(qdd_des), jnp.asarray(f_des)
    wbc_times = np.empty(iterations)
    for i in range(iterations):
        q, qd = jstates[i % n]
        t1 = time.perf_counter_ns()
        tau = dyn.inverse_dynamics_jit(p, q, qd, jqdd, jf)
        tau.block_until_ready()
        wbc_times[i] = time.perf_counter_ns() - t1

    def stats(ts):
        return {"median_us": float(np.median(ts) / 1e3),
                "p99_us": float(np.percentile(ts, 99) / 1e3),
                "mean_us": float(np.mean(ts) / 1e3)}

    report = ExperimentReport("bench_tl_vs_wbc", {"iterations": iterations}, 0)
    tl_s, wbc_s = stats(tl_times), stats(wbc_times)
    report.rows = [
        {"path": "tl", **tl_s},
        {"path": "wbc", **wbc_s},
        {"path": "ratio", "median_ratio": wbc_s["median_us"] / tl_s["median_us"]},
    ]
    report.wall_time_s = time.perf_counter() - t0
    report.raw = {"tl_ns": tl_times, "wbc_ns": wbc_times}
    return report


def write_latency_csv(report: ExperimentReport, path) -> None:
    """Per-call samples of both paths, one row per call."""
    import csv as _csv

    tl = report.raw["tl_ns"]
    wbc = report.raw["wbc_ns"]
    with open(path, "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["call", "tl_ns", "wbc_ns"])
        for i in range(len(tl)):
            w.writerow([i, int(tl[i]), int(wbc[i])])
