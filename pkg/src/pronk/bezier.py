"""Bezier-polynomial trajectories and the motion-primitive library.

Joint reference trajectories and stored torque profiles are represented as
Bezier curves over a normalized phase s in [0, 1].  A motion primitive is a
matrix of coefficients (one row per actuated joint) tagged with its task
parameter (mean speed or jump distance) and duration; primitives are kept in
a library sorted by task parameter and interpolated linearly between nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb

import numpy as np


class PhaseDomainError(ValueError):
    """Phase argument outside [0, 1]."""


class FitError(ValueError):
    """Least-squares Bezier fit could not be performed."""


class LibraryRangeError(ValueError):
    """Task parameter outside the library's covered range."""


def bernstein_basis(order: int, s) -> np.ndarray:
    """Bernstein basis row(s) for the given order, shape (..., order+1)."""
    s = np.asarray(s, dtype=float)
    i = np.arange(order + 1)
    binom = np.array([comb(order, k) for k in i], dtype=float)
    return binom * s[..., None] ** i * (1.0 - s[..., None]) ** (order - i)


@dataclass(frozen=True)
class BezierCurve:
    """Single scalar-valued Bezier curve of order len(coeffs) - 1."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.size < 2:
            raise ValueError("need at least 2 coefficients (order >= 1)")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def eval(self, s):
        _check_phase(s)
        return bernstein_basis(self.order, s) @ self.coeffs

    def derivative(self, s):
        """Phase derivative d/ds; the caller applies the 1/T chain rule."""
        _check_phase(s)
        dc = self.order * np.diff(self.coeffs)
        return bernstein_basis(self.order - 1, s) @ dc


def _check_phase(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise PhaseDomainError(f"phase must lie in [0, 1], got {s}")


def bezier_matrix_eval(B: np.ndarray, s: float) -> np.ndarray:
    """Evaluate all rows of a coefficient matrix at a single phase.

    Hot path for torque-profile playback: no curve objects, just one basis
    row and a mat-vec.
    """
    return B @ bernstein_basis(B.shape[1] - 1, float(s))


def bezier_matrix_derivative(B: np.ndarray, s: float) -> np.ndarray:
    n = B.shape[1] - 1
    dB = n * np.diff(B, axis=1)
    return dB @ bernstein_basis(n - 1, float(s))


def bezier_fit(s_samples, values, order: int) -> tuple[BezierCurve, float]:
    """Ordinary least-squares fit on the Bernstein basis.

    Returns the fitted curve and the RMS residual of the fit.  `values` may
    be 1-D (single curve); use `bezier_fit_matrix` for stacked joints.
    """
    s_samples = np.asarray(s_samples, dtype=float)
    values = np.asarray(values, dtype=float)
    if s_samples.size < order + 1:
        raise FitError(
            f"need at least {order + 1} samples for order {order}, got {s_samples.size}"
        )
    _check_phase(s_samples)
    A = bernstein_basis(order, s_samples)
    if np.linalg.matrix_rank(A) < order + 1:
        raise FitError("rank-deficient design matrix (degenerate phase samples)")
    coeffs, *_ = np.linalg.lstsq(A, values, rcond=None)
    rms = float(np.sqrt(np.mean((A @ coeffs - values) ** 2)))
    return BezierCurve(coeffs), rms


def bezier_fit_matrix(s_samples, values: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Fit each row of `values` (n_joints x n_samples); returns (B, max row RMS)."""
    s_samples = np.asarray(s_samples, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    rows = []
    worst = 0.0
    for row in values:
        curve, rms = bezier_fit(s_samples, row, order)
        rows.append(curve.coeffs)
        worst = max(worst, rms)
    return np.array(rows), worst


@dataclass(frozen=True)
class MotionPrimitive:
    """Desired joint trajectories for one task, as Bezier coefficients.

    B has one row per actuated joint; p is the task parameter (mean forward
    speed in m/s for pronking, jump distance in m for jumps); T is the
    stride/task duration in seconds.
    """

    B: np.ndarray
    p: float
    T: float
    gait: str = "pronk"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "B", B)
        if self.T <= 0.0:
            raise ValueError("duration T must be positive")
        if self.gait not in ("pronk", "jump"):
            raise ValueError(f"unknown gait {self.gait!r}")

    @property
    def n_joints(self) -> int:
        return self.B.shape[0]

    @property
    def order(self) -> int:
        return self.B.shape[1] - 1

    def eval(self, s: float) -> np.ndarray:
        _check_phase(s)
        return bezier_matrix_eval(self.B, s)

    def derivative(self, s: float) -> np.ndarray:
        _check_phase(s)
        return bezier_matrix_derivative(self.B, s)

    def with_duration(self, T: float) -> "MotionPrimitive":
        return MotionPrimitive(self.B, self.p, T, self.gait, dict(self.meta))


class PrimitiveLibrary:
    """Motion primitives sorted by task parameter, with linear interpolation."""

    def __init__(self, gait: str = "pronk", model_hash: str = "", n_M: int = 6):
        self.gait = gait
        self.model_hash = model_hash
        self.n_M = n_M
        self._entries: list[MotionPrimitive] = []

    @property
    def entries(self) -> list[MotionPrimitive]:
        return list(self._entries)

    @property
    def params(self) -> np.ndarray:
        return np.array([e.p for e in self._entries])

    def insert(self, prim: MotionPrimitive) -> None:
        if prim.order != self.n_M:
            raise ValueError(f"library order is {self.n_M}, primitive has {prim.order}")
        if self._entries and prim.n_joints != self._entries[0].n_joints:
            raise ValueError("joint-count mismatch with existing entries")
        self._entries = [e for e in self._entries if e.p != prim.p]
        self._entries.append(prim)
        self._entries.sort(key=lambda e: e.p)

    def lookup(self, p: float) -> MotionPrimitive:
        if not self._entries:
            raise LibraryRangeError("empty primitive library")
        ps = self.params
        if p < ps[0] or p > ps[-1]:
            raise LibraryRangeError(
                f"p={p} outside library range [{ps[0]}, {ps[-1]}]; extrapolation refused"
            )
        idx = int(np.searchsorted(ps, p))
        if idx < len(ps) and ps[idx] == p:
            return self._entries[idx]
        lo, hi = self._entries[idx - 1], self._entries[idx]
        w = (p - lo.p) / (hi.p - lo.p)
        B = (1.0 - w) * lo.B + w * hi.B
        T = (1.0 - w) * lo.T + w * hi.T
        meta = {"interpolated_from": [lo.p, hi.p]}
        # numeric metadata shared by both neighbors interpolates with them
        for key in set(lo.meta) & set(hi.meta):
            a, b = lo.meta[key], hi.meta[key]
            try:
                meta[key] = ((1.0 - w) * np.asarray(a, float)
                             + w * np.asarray(b, float)).tolist()
            except (TypeError, ValueError):
                continue
        return MotionPrimitive(B, p, T, self.gait, meta)

    def to_json_dict(self) -> dict:
        return {
            "meta": {"model_hash": self.model_hash, "gait": self.gait, "n_M": self.n_M},
            "entries": [
                {"p": e.p, "T": e.T, "B": e.B.tolist(), "meta": e.meta}
                for e in self._entries
            ],
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1)

    @classmethod
    def from_json_dict(cls, doc: dict, expect_n_joints: int | None = None) -> "PrimitiveLibrary":
        meta = doc["meta"]
        lib = cls(gait=meta["gait"], model_hash=meta["model_hash"], n_M=int(meta["n_M"]))
        for e in doc["entries"]:
            prim = MotionPrimitive(
                np.array(e["B"], dtype=float), float(e["p"]), float(e["T"]),
                lib.gait, dict(e.get("meta", {})),
            )
            if expect_n_joints is not None and prim.n_joints != expect_n_joints:
                raise ValueError(
                    f"library entries have {prim.n_joints} joints, model expects {expect_n_joints}"
                )
            lib.insert(prim)
        return lib

    @classmethod
    def load(cls, path, expect_n_joints: int | None = None) -> "PrimitiveLibrary":
        with open(path) as f:
            doc = json.load(f)
        return cls.from_json_dict(doc, expect_n_joints)
