"""Precomputed reference artifacts shipped with the package.

All files here are regenerable from source with ``scripts/generate_data.py``
(equivalently, with ``pronk optimize`` / ``pronk learn`` runs): a motion
primitive library per gait, converged feedforward torque profiles, and the
raw collocation solution vectors used by the verification suite.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_DIR = Path(__file__).parent


def asset_path(name: str) -> Path:
    path = _DIR / name
    if not path.exists():
        raise FileNotFoundError(
            f"missing packaged asset {name!r}; regenerate with scripts/generate_data.py"
        )
    return path


def default_pronk_library():
    from ..bezier import PrimitiveLibrary

    return PrimitiveLibrary.load(asset_path("primitives_pronk.json"))


def default_jump_library():
    from ..bezier import PrimitiveLibrary

    return PrimitiveLibrary.load(asset_path("primitives_jump.json"))


def default_torque_library():
    from ..library import TorqueLibrary

    return TorqueLibrary.load(asset_path("torque_library.json"))


def load_solution(name: str) -> dict:
    """Raw collocation solution (decision vector + problem key) by name."""
    with np.load(asset_path("solutions.npz")) as z:
        key = f"{name}_theta"
        if key not in z:
            raise KeyError(f"no stored solution named {name!r}")
        return {"theta": z[key], "param": float(z[f"{name}_param"][()])}
