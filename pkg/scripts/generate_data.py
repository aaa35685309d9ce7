#!/usr/bin/env python3
"""Regenerate the packaged reference artifacts in src/pronk/data/.

Solves the pronk primitive library by speed continuation, the jump
primitives by distance continuation, and stores the raw decision vectors
for the verification suite.  Deterministic given the model defaults.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from pronk import trajopt
from pronk.bezier import PrimitiveLibrary
from pronk.model import RobotModel

DATA = Path(__file__).resolve().parents[1] / "src" / "pronk" / "data"

PRONK_SPEEDS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
JUMP_DISTANCES = [0.0, 0.2, 0.35]
STORED = {"pronk_0.3": ("pronk", 0.3), "jump_0.35": ("jump", 0.35)}


def solve_family(model, gait, params):
    problems = {
        "pronk": trajopt.pronk_problem,
        "jump": trajopt.jump_problem,
    }
    solved = {}
    for p in sorted(set(params), key=abs):
        prob = problems[gait](model, p)
        trans = trajopt.Transcription(prob)
        if solved:
            nearest = min(solved, key=lambda u: abs(u - p))
            theta0 = trajopt.seed_from_solution(trans, solved[nearest])
        else:
            theta0 = trajopt.simulated_guess(trans)
        t0 = time.time()
        sol = trajopt.solve(trans, theta0)
        print(f"{gait} p={p}: obj={sol.objective:.2f} "
              f"viol={sol.max_violation:.2e} stat={sol.stationarity:.2e} "
              f"conv={sol.converged} ({time.time() - t0:.0f}s)", flush=True)
        if not sol.converged:
            raise SystemExit(f"{gait} p={p} failed to converge")
        solved[p] = sol
    return solved


def export_library(gait, solved):
    prims = {p: trajopt.export_primitive(s) for p, s in solved.items()}
    order = max(pr.order for pr in prims.values())
    lib = PrimitiveLibrary(gait=gait, model_hash=RobotModel().model_hash,
                           n_M=order)
    for p, sol in solved.items():
        lib.insert(trajopt.export_primitive(sol, n_m=order))
    return lib


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--skip-jump", action="store_true")
    args = parser.parse_args()

    DATA.mkdir(exist_ok=True)
    model = RobotModel()

    pronk_solved = solve_family(model, "pronk", PRONK_SPEEDS)
    export_library("pronk", pronk_solved).save(DATA / "primitives_pronk.json")
    print(f"wrote {DATA / 'primitives_pronk.json'}")

    jump_solved = {}
    if not args.skip_jump:
        jump_solved = solve_family(model, "jump", JUMP_DISTANCES)
        export_library("jump", jump_solved).save(DATA / "primitives_jump.json")
        print(f"wrote {DATA / 'primitives_jump.json'}")

    arrays = {}
    for name, (gait, p) in STORED.items():
        pool = pronk_solved if gait == "pronk" else jump_solved
        if p not in pool:
            continue
        sol = pool[p]
        trans = trajopt.Transcription(sol.problem)
        arrays[f"{name}_theta"] = trans.pack(sol.states, sol.inputs,
                                             sol.durations)
        arrays[f"{name}_param"] = np.array(p)
    np.savez(DATA / "solutions.npz", **arrays)
    print(f"wrote {DATA / 'solutions.npz'}")


if __name__ == "__main__":
    main()
