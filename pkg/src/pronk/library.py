"""Persistent library of converged feedforward torque profiles.

After a learning run converges, the applied torques of the final accepted
iterations are averaged pointwise, fit as Bezier curves, and stored keyed
by the task parameter (speed or jump distance).  Stored profiles can be
queried back — with linear interpolation between neighboring entries — and
installed as the iteration-1 feedforward of a new run, replacing the
feedback bootstrap.
"""

from __future__ import annotations

import datetime
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .bezier import LibraryRangeError, bezier_fit_matrix, bernstein_basis

log = logging.getLogger(__name__)

LIBRARY_VERSION = 1


class ProfileBuildError(ValueError):
    """Not enough accepted iterations, or the Bezier fit missed tolerance."""


class LibraryLoadError(ValueError):
    """Malformed, truncated, or incompatible library file."""


@dataclass(frozen=True)
class TorqueProfile:
    """One stored feedforward profile: Bezier coefficients per joint."""

    B: np.ndarray  # (n_joints, n_M + 1)
    p: float
    T: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "B", B)
        if self.T <= 0.0:
            raise ValueError("stride time T must be positive")

    @property
    def order(self) -> int:
        return self.B.shape[1] - 1

    @property
    def n_joints(self) -> int:
        return self.B.shape[0]

    def eval(self, s: float) -> np.ndarray:
        return self.B @ bernstein_basis(self.order, float(s))

    def eval_grid(self, s_grid: np.ndarray) -> np.ndarray:
        """Profile sampled on a phase grid, shape (n_joints, N_s)."""
        return self.B @ bernstein_basis(self.order, np.asarray(s_grid, float)).T


def build_profile(
    traces: list[np.ndarray],
    s_grid: np.ndarray,
    p: float,
    T: float,
    n_p: int = 12,
    order: int = 6,
    fit_tol: float = 1e-3,
    meta: dict | None = None,
) -> TorqueProfile:
    """Average the final n_p accepted torque traces and fit Bezier curves.

    `traces` are filtered applied-torque grids of shape (n_joints, N_s),
    oldest first; the last n_p are used.  The fit must reproduce the
    pointwise mean within `fit_tol` N*m RMS, otherwise the order is too low
    for this profile and a build error is raised.
    """
    if len(traces) < n_p:
        raise ProfileBuildError(
            f"need {n_p} accepted iterations to build a profile, have {len(traces)}"
        )
    stack = np.stack(traces[-n_p:])
    mean = stack.mean(axis=0)
    B, rms = bezier_fit_matrix(s_grid, mean, order)
    if rms > fit_tol:
        raise ProfileBuildError(
            f"order-{order} fit residual {rms:.2e} N*m exceeds tolerance {fit_tol:g}; "
            "raise the profile order"
        )
    full_meta = {"created": datetime.date.today().isoformat(), "fit_rms": rms}
    full_meta.update(meta or {})
    return TorqueProfile(B, float(p), float(T), full_meta)


class TorqueLibrary:
    """Torque profiles sorted by task parameter, one library per gait/model."""

    def __init__(self, gait: str = "pronk", model_hash: str = "", n_M: int = 6,
                 version: int = LIBRARY_VERSION):
        self.gait = gait
        self.model_hash = model_hash
        self.n_M = n_M
        self.version = version
        self._profiles: list[TorqueProfile] = []

    @property
    def profiles(self) -> list[TorqueProfile]:
        return list(self._profiles)

    @property
    def params(self) -> np.ndarray:
        return np.array([e.p for e in self._profiles])

    def __len__(self) -> int:
        return len(self._profiles)

    def insert(self, prof: TorqueProfile) -> None:
        if prof.order != self.n_M:
            raise ValueError(f"library order is {self.n_M}, profile has {prof.order}")
        if self._profiles and prof.n_joints != self._profiles[0].n_joints:
            raise ValueError("joint-count mismatch with existing profiles")
        self._profiles = [e for e in self._profiles if e.p != prof.p]
        self._profiles.append(prof)
        self._profiles.sort(key=lambda e: e.p)

    def query(self, p: float) -> TorqueProfile:
        """Stored profile at p, or the linear interpolation of its neighbors."""
        if not self._profiles:
            raise LibraryRangeError("empty torque library")
        ps = self.params
        if p < ps[0] or p > ps[-1]:
            raise LibraryRangeError(
                f"p={p} outside library range [{ps[0]}, {ps[-1]}]; extrapolation refused"
            )
        idx = int(np.searchsorted(ps, p))
        if idx < len(ps) and ps[idx] == p:
            return self._profiles[idx]
        a, b = self._profiles[idx - 1], self._profiles[idx]
        w_a = (b.p - p) / (b.p - a.p)
        w_b = (p - a.p) / (b.p - a.p)
        return TorqueProfile(
            w_a * a.B + w_b * b.B, float(p), w_a * a.T + w_b * b.T,
            meta={"interpolated_from": [a.p, b.p]},
        )

    def warm_start(self, p: float, s_grid: np.ndarray) -> np.ndarray | None:
        """Iteration-1 feedforward grid for task parameter p.

        Returns None (feedback bootstrap) with a logged notice when the
        library is empty; out-of-range p raises.
        """
        if not self._profiles:
            log.info("torque library empty; falling back to feedback bootstrap")
            return None
        return self.query(p).eval_grid(s_grid)

    # --- persistence ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "gait": self.gait,
            "model_hash": self.model_hash,
            "n_M": self.n_M,
            "profiles": [
                {"p": e.p, "T": e.T, "B": e.B.tolist(), "meta": e.meta}
                for e in self._profiles
            ],
        }

    def save(self, path) -> None:
        # floats serialize via repr: shortest decimal (<= 17 significant
        # digits) that round-trips bit-exactly
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1)

    @classmethod
    def load(cls, path, expect_model_hash: str | None = None) -> "TorqueLibrary":
        with open(path) as f:
            text = f.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LibraryLoadError(
                f"{path}: parse failure at byte offset {exc.pos}: {exc.msg}"
            ) from exc
        for key in ("version", "gait", "model_hash", "n_M", "profiles"):
            if key not in doc:
                raise LibraryLoadError(f"{path}: missing field {key!r}")
        if int(doc["version"]) != LIBRARY_VERSION:
            raise LibraryLoadError(
                f"{path}: version {doc['version']} unsupported (expected {LIBRARY_VERSION})"
            )
        if expect_model_hash is not None and doc["model_hash"] != expect_model_hash:
            raise LibraryLoadError(
                f"{path}: model hash {doc['model_hash']} does not match "
                f"expected {expect_model_hash}"
            )
        lib = cls(gait=doc["gait"], model_hash=doc["model_hash"],
                  n_M=int(doc["n_M"]), version=int(doc["version"]))
        for e in doc["profiles"]:
            lib.insert(TorqueProfile(np.array(e["B"], dtype=float), float(e["p"]),
                                     float(e["T"]), dict(e.get("meta", {}))))
        return lib

    def merge(self, other: "TorqueLibrary") -> "TorqueLibrary":
        """New library with the other's profiles layered on top of this one."""
        if (other.gait, other.model_hash, other.n_M, other.version) != (
            self.gait, self.model_hash, self.n_M, self.version
        ):
            raise LibraryLoadError("cannot merge libraries with differing headers")
        out = TorqueLibrary(self.gait, self.model_hash, self.n_M, self.version)
        for prof in self._profiles:
            out.insert(prof)
        for prof in other._profiles:
            out.insert(prof)
        return out

    def describe(self) -> list[dict]:
        """One summary row per profile (for CLI listing)."""
        return [
            {"p": e.p, "T": e.T, "order": e.order, "n_joints": e.n_joints,
             **{k: v for k, v in e.meta.items() if np.isscalar(v)}}
            for e in self._profiles
        ]
