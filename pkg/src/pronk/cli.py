"""Command-line harness.

Subcommands: optimize, learn, replay, sweep, slopes, gravity, jump, bench,
vi-train, tl.  Global flags: --config, --seed, --out, --workers.  Every
command writes a machine-readable report.json plus the per-run CSVs of the
underlying module; reruns with identical (config, seed) are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import harness, trajopt
from .bezier import MotionPrimitive, PrimitiveLibrary
from .control import GainSet, StopParams
from .harness import Scenario
from .library import LibraryLoadError, TorqueLibrary, build_profile
from .model import RobotModel
from .stabilizers import train_attitude_policy


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _model_from_config(cfg: dict) -> RobotModel:
    return RobotModel(**cfg.get("model", {}))


def _scenario_from_config(cfg: dict, seed: int, **overrides) -> Scenario:
    sc = dict(cfg.get("scenario", {}))
    if sc.pop("standard_perturbation", True):
        base = dict(harness.STANDARD_PERTURBATION)
        sc.setdefault("mass_scale", base["mass_scale"])
        sc.setdefault("b_visc", base["b_visc"])
        sc.setdefault("delay_ms", base["delay_ms"])
    sc["seed"] = seed
    sc.update(overrides)
    return Scenario(**sc)


def _gains_from_config(cfg: dict) -> GainSet | None:
    g = cfg.get("gains")
    if not g:
        return None
    base = GainSet.default(2)
    kw = {k: np.full(2, float(g[k])) for k in ("kp_b", "kd_b", "kp_f", "kd_f") if k in g}
    if "ds" in g:
        kw["ds"] = float(g["ds"])
    from dataclasses import replace

    return replace(base, **kw)


def _stop_from_config(cfg: dict) -> StopParams | None:
    s = cfg.get("stop")
    return StopParams(**s) if s else None


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(report: harness.ExperimentReport, out: Path) -> None:
    report.save(out / "report.json")
    print(f"wrote {out / 'report.json'}")


def _load_primitive_library(path, model: RobotModel) -> PrimitiveLibrary:
    return PrimitiveLibrary.load(path, expect_n_joints=model.n_joints)


# --- subcommands --------------------------------------------------------------


def cmd_optimize(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib_path = out / (args.lib or "primitives.json")
    tcfg = cfg.get("trajopt", {})
    prim, sol = harness.solve_primitive(
        model, args.gait,
        args.speed if args.gait == "pronk" else args.distance,
        n_m=tcfg.get("n_m"),
        **{k: v for k, v in tcfg.items() if k in
           ("n_stance", "n_flight", "stride_time", "q_z_max")},
    )
    trajopt.write_trace_csv(sol.trace, out / "solver_trace.csv")
    if lib_path.exists():
        lib = _load_primitive_library(lib_path, model)
    else:
        lib = PrimitiveLibrary(gait=prim.gait, model_hash=model.model_hash,
                               n_M=prim.order)
    lib.insert(prim)
    lib.save(lib_path)
    print(f"solved {args.gait} p={prim.p}: objective {sol.objective:.4f}, "
          f"violation {sol.max_violation:.2e}; library now has {len(lib.entries)} entries")
    return 0


def cmd_learn(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib = _load_primitive_library(args.primitive, model)
    p = args.speed if args.speed is not None else args.distance
    prim = lib.lookup(float(p))
    scenario = _scenario_from_config(cfg, args.seed, speed=args.speed,
                                     distance=args.distance)
    gains = _gains_from_config(cfg)
    stop = _stop_from_config(cfg) or StopParams()

    tau_f_init = None
    if args.warm_start:
        tl = TorqueLibrary.load(args.warm_start, expect_model_hash=model.model_hash)
        tau_f_init = tl.warm_start(float(p), harness.phase_grid())

    rep = harness.run_learning_scenario(model, prim, scenario, gains=gains,
                                        stop=stop, tau_f_init=tau_f_init,
                                        fail_tolerant=True)
    harness.write_iteration_csv(rep, out / "iterations.csv")
    report = harness.ExperimentReport("learn", scenario.to_dict(), args.seed,
                                      rows=[harness._reduction_rows(prim, rep)])
    _write_report(report, out)

    if rep.converged and len(rep.accepted_traces) >= stop.n_p:
        prof = build_profile(rep.accepted_traces, rep.s_grid, prim.p, prim.T,
                             n_p=stop.n_p, order=prim.order,
                             meta={"speed": prim.p, "gait": prim.gait})
        tl_path = out / "torque_library.json"
        if tl_path.exists():
            tl = TorqueLibrary.load(tl_path)
        else:
            tl = TorqueLibrary(gait=prim.gait, model_hash=model.model_hash,
                               n_M=prim.order)
        tl.insert(prof)
        tl.save(tl_path)
        print(f"stored converged torque profile at p={prim.p} in {tl_path}")
    return 0


def cmd_replay(args, cfg) -> int:
    from .control import TrackingController, phase_grid
    from .model import HybridState, Mode
    from .simulate import simulate_episode, simulate_stride

    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib = _load_primitive_library(args.primitive, model)
    p = args.speed if args.speed is not None else args.distance
    prim = lib.lookup(float(p))
    gains = _gains_from_config(cfg) or GainSet.default(2)
    ctrl = TrackingController(model, prim, gains, phase_grid())
    q0 = np.asarray(prim.meta["q0"])
    qd0 = np.asarray(prim.meta["qd0"])
    state = HybridState(q0, qd0, Mode.STANCE)
    sim = simulate_episode if prim.gait == "jump" else simulate_stride
    log, events, _ = sim(model, state, ctrl, prim.T)
    log.write_csv(out / "replay.csv")
    report = harness.ExperimentReport(
        "replay", {"p": prim.p, "gait": prim.gait}, args.seed,
        rows=[{"event": e.name, "t": e.t} for e in events])
    _write_report(report, out)
    return 0


def cmd_sweep(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib = _load_primitive_library(args.primitive, model)
    speeds = [float(v) for v in args.speeds.split(",")] if args.speeds else \
        [float(v) for v in cfg.get("sweep", {}).get("speeds", lib.params)]
    scenario = _scenario_from_config(cfg, args.seed)
    report = harness.run_speed_sweep(model, lib, speeds, scenario=scenario,
                                     gains=_gains_from_config(cfg),
                                     stop=_stop_from_config(cfg),
                                     workers=args.workers)
    _write_report(report, out)
    _write_rows_csv(report.rows, out / "sweep.csv")
    return 0


def cmd_slopes(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib = _load_primitive_library(args.primitive, model)
    slopes = [float(v) for v in args.slopes.split(",")] if args.slopes else \
        [-10.0, -7.0, -5.0, 5.0, 7.0, 10.0]
    scenario = _scenario_from_config(cfg, args.seed)
    report = harness.run_slope_study(model, lib, slopes, speed=args.speed or 0.0,
                                     scenario=scenario,
                                     gains=_gains_from_config(cfg),
                                     stop=_stop_from_config(cfg),
                                     workers=args.workers)
    _write_report(report, out)
    _write_rows_csv(report.rows, out / "slopes.csv")
    return 0


def cmd_gravity(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib = _load_primitive_library(args.primitive, model)
    scenario = _scenario_from_config(cfg, args.seed)
    report = harness.run_gravity_study(model, lib, speed=args.speed or 0.0,
                                       scenario=scenario,
                                       gains=_gains_from_config(cfg),
                                       stop=_stop_from_config(cfg))
    _write_report(report, out)
    _write_rows_csv(report.rows, out / "gravity.csv")
    return 0


def cmd_jump(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    lib = _load_primitive_library(args.primitive, model)
    prim = lib.lookup(float(args.distance))
    scenario = _scenario_from_config(cfg, args.seed, distance=float(args.distance))
    report = harness.run_jump_task(model, prim, scenario=scenario,
                                   gains=_gains_from_config(cfg),
                                   stop=_stop_from_config(cfg))
    _write_report(report, out)
    _write_rows_csv(report.rows, out / "jump.csv")
    return 0


def cmd_bench(args, cfg) -> int:
    model = _model_from_config(cfg)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    from .model import balanced_stand_q

    q0 = balanced_stand_q(model, 0.8)
    states = [(q0 + rng.normal(0, 0.05, 5), rng.normal(0, 0.5, 5))
              for _ in range(64)]
    if args.tl:
        tl = TorqueLibrary.load(args.tl)
        B = tl.profiles[0].B
    else:
        B = rng.normal(0.0, 5.0, (2, 7))
    report = harness.bench_tl_vs_wbc(model, B, states, iterations=args.iterations)
    _write_report(report, out)
    harness.write_latency_csv(report, out / "latency.csv")
    ratio = report.rows[-1]["median_ratio"]
    print(f"median latency ratio (wbc/tl): {ratio:.1f}x")
    return 0


def cmd_vi_train(args, cfg) -> int:
    out = _out_dir(args)
    vcfg = cfg.get("vi", {})
    policy = train_attitude_policy(**vcfg)
    path = out / (args.policy or "policy.json")
    policy.save(path)
    print(f"wrote {path} (sweeps: {policy.meta.get('sweeps')}, "
          f"residual: {policy.meta.get('residual'):.2e})")
    return 0


def cmd_tl(args, cfg) -> int:
    if args.tl_cmd == "list":
        tl = TorqueLibrary.load(args.file)
        print(json.dumps({"gait": tl.gait, "model_hash": tl.model_hash,
                          "n_M": tl.n_M, "profiles": tl.describe()}, indent=1))
    elif args.tl_cmd == "show":
        tl = TorqueLibrary.load(args.file)
        prof = tl.query(float(args.p))
        print(json.dumps({"p": prof.p, "T": prof.T, "B": prof.B.tolist(),
                          "meta": prof.meta}, indent=1))
    elif args.tl_cmd == "merge":
        a = TorqueLibrary.load(args.file)
        b = TorqueLibrary.load(args.other)
        merged = a.merge(b)
        out_path = args.out or args.file
        merged.save(Path(out_path) / "merged.json" if Path(out_path).is_dir()
                    else out_path)
        print(f"merged {len(a)} + {len(b)} -> {len(merged)} profiles")
    return 0


def _write_rows_csv(rows: list[dict], path) -> None:
    import csv as _csv

    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pronk", description=__doc__)
    ap.add_argument("--config", default=None, help="TOML config file")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--workers", type=int, default=1)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="solve a trajectory and store its primitive")
    p.add_argument("--gait", choices=("pronk", "jump"), default="pronk")
    p.add_argument("--speed", type=float, default=0.0)
    p.add_argument("--distance", type=float, default=0.35)
    p.add_argument("--lib", default=None, help="library filename inside --out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("learn", help="run an ILC learning session")
    p.add_argument("--primitive", required=True, help="primitive library JSON")
    p.add_argument("--speed", type=float, default=None)
    p.add_argument("--distance", type=float, default=None)
    p.add_argument("--scenario", dest="config_alias", default=None,
                   help="alias for --config")
    p.add_argument("--warm-start", default=None, help="torque library JSON")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("replay", help="replay a primitive under PD feedback")
    p.add_argument("--primitive", required=True)
    p.add_argument("--speed", type=float, default=None)
    p.add_argument("--distance", type=float, default=None)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="speed sweep experiment")
    p.add_argument("--primitive", required=True)
    p.add_argument("--speeds", default=None, help="comma-separated speeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("slopes", help="slope study")
    p.add_argument("--primitive", required=True)
    p.add_argument("--slopes", default=None, help="comma-separated degrees")
    p.add_argument("--speed", type=float, default=0.0)
    p.set_defaults(func=cmd_slopes)

    p = sub.add_parser("gravity", help="gravity generalization study")
    p.add_argument("--primitive", required=True)
    p.add_argument("--speed", type=float, default=0.0)
    p.set_defaults(func=cmd_gravity)

    p = sub.add_parser("jump", help="jump learning task")
    p.add_argument("--primitive", required=True)
    p.add_argument("--distance", type=float, default=0.35)
    p.set_defaults(func=cmd_jump)

    p = sub.add_parser("bench", help="TL vs WBC latency benchmark")
    p.add_argument("--iterations", type=int, default=100_000)
    p.add_argument("--tl", default=None, help="torque library for the TL path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("vi-train", help="train the attitude policy")
    p.add_argument("--policy", default=None, help="policy filename inside --out")
    p.set_defaults(func=cmd_vi_train)

    p = sub.add_parser("tl", help="torque-library inspection")
    tl_sub = p.add_subparsers(dest="tl_cmd", required=True)
    q = tl_sub.add_parser("list")
    q.add_argument("file")
    q = tl_sub.add_parser("show")
    q.add_argument("file")
    q.add_argument("p")
    q = tl_sub.add_parser("merge")
    q.add_argument("file")
    q.add_argument("other")
    p.set_defaults(func=cmd_tl)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg_path = args.config or getattr(args, "config_alias", None)
    cfg = _load_config(cfg_path)
    try:
        return args.func(args, cfg)
    except (LibraryLoadError, trajopt.SolveFailure, harness.ScenarioError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
