"""Offline zero-phase filtering and leg-odometry velocity recomputation.

Torque and error trajectories are smoothed after each stride/episode by
running an IIR low-pass forward and then backward over the sequence, which
cancels the filter's phase response and squares its magnitude response.
Edges are handled by reflective padding of three filter orders on each end,
removed after the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from . import dynamics as dyn
from .model import RobotModel


class FilterDesignError(ValueError):
    pass


class SequenceTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class IIRFilter:
    """Discrete transfer function b(z)/a(z), normalized to a[0] = 1."""

    b: np.ndarray
    a: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if a[0] == 0.0:
            raise FilterDesignError("denominator leading coefficient must be nonzero")
        b, a = b / a[0], a / a[0]
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)
        poles = np.roots(a) if a.size > 1 else np.array([])
        if poles.size and np.max(np.abs(poles)) >= 1.0:
            raise FilterDesignError(f"unstable filter: pole magnitudes {np.abs(poles)}")

    @property
    def order(self) -> int:
        return max(self.b.size, self.a.size) - 1

    def freq_response(self, w):
        """H(e^{jw}) at normalized angular frequencies w (rad/sample)."""
        return sps.freqz(self.b, self.a, worN=np.atleast_1d(w))[1]


def design_lowpass(cutoff_fraction: float) -> IIRFilter:
    """2nd-order Butterworth low-pass; cutoff as a fraction of Nyquist."""
    if not 0.0 < cutoff_fraction < 1.0:
        raise FilterDesignError(f"cutoff must be in (0, 1) of Nyquist, got {cutoff_fraction}")
    b, a = sps.butter(2, cutoff_fraction)
    return IIRFilter(b, a, meta={"type": "butter-lowpass", "cutoff": cutoff_fraction})


def _pad_width(f: IIRFilter) -> int:
    return 3 * f.order


def _check_length(f: IIRFilter, n: int):
    if n < 3 * f.order:
        raise SequenceTooShortError(
            f"need at least {3 * f.order} samples for an order-{f.order} filter, got {n}"
        )


def forward_pass(f: IIRFilter, x: np.ndarray) -> np.ndarray:
    """Reflect-pad and filter forward; output keeps the padding."""
    x = np.asarray(x, dtype=float)
    _check_length(f, x.shape[-1])
    pad = _pad_width(f)
    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pad, pad)], mode="reflect")
    return _lfilter_ss(f, xp)


def backward_pass(f: IIRFilter, y_padded: np.ndarray) -> np.ndarray:
    """Filter the forward-pass output in reverse and strip the padding."""
    pad = _pad_width(f)
    out = _lfilter_ss(f, y_padded[..., ::-1])[..., ::-1]
    return out[..., pad:-pad] if pad else out


def _lfilter_ss(f: IIRFilter, x: np.ndarray) -> np.ndarray:
    """Filter with steady-state initial conditions matched to the first
    sample, so constants pass through exactly (no startup transient)."""
    zi = sps.lfilter_zi(f.b, f.a)
    y, _ = sps.lfilter(f.b, f.a, x, axis=-1, zi=zi * x[..., :1])
    return y


def zero_phase_filter(f: IIRFilter, x: np.ndarray) -> np.ndarray:
    """Forward-backward filtering; works on the last axis."""
    return backward_pass(f, forward_pass(f, x))


def leg_odometry_velocity(model: RobotModel, log) -> np.ndarray:
    """Torso velocity during stance, recomputed from the pinned-foot chain.

    With the foot stationary, J_c qdot = 0 splits into base and joint
    blocks; the base block of the contact Jacobian is the identity, so the
    torso velocity is minus the joint-rate contribution to the foot
    velocity.  Uses joint angles and pitch plus their rates only.

    `log` is a TrajectoryLog or its `arrays()` dict; every sample must be
    in stance mode.
    """
    arrs = log.arrays() if hasattr(log, "arrays") else log
    modes = np.asarray(arrs["mode"])
    if np.any(modes != "stance"):
        raise ValueError("leg odometry is only defined on stance samples")
    q = np.asarray(arrs["q"], dtype=float)
    qd = np.asarray(arrs["qd"], dtype=float)
    p = model.params()
    out = np.empty((q.shape[0], 2))
    for i in range(q.shape[0]):
        Jc = np.asarray(dyn.foot_jacobian(p, q[i]))
        out[i] = -Jc[:, 2:] @ qd[i, 2:]
    return out
