"""Landmark registration of field curves and resampling onto a dyadic grid.

Field curves are warped by a piecewise-linear change of time so that the
extrema inside configured event windows land on the extrema of a reference
curve (the pointwise mean of the model runs).  Values are never changed,
only their time stamps; model runs themselves are left unregistered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DegenerateWarpError, WindowError
from .iodesign import Curve

FEATURES = ("min", "max")


@dataclass(frozen=True)
class GridSpec:
    """Dyadic grid: 2**J uniform samples spanning [t0, t1] inclusive."""

    J: int
    t0: float
    t1: float

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("grid level count J must be >= 1")
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got [{self.t0}, {self.t1}]")

    @property
    def n(self) -> int:
        return 2 ** self.J

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n)


@dataclass
class GridCurve:
    """Curve sampled on a dyadic grid."""

    y: np.ndarray
    J: int
    t0: float
    t1: float
    label: str = ""

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 1 or len(self.y) != 2 ** self.J:
            raise ValueError(f"grid curve {self.label!r}: expected 2**{self.J} samples, got {len(self.y)}")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.J, self.t0, self.t1)

    def times(self) -> np.ndarray:
        return self.grid.times()

    def to_curve(self) -> Curve:
        return Curve(self.times(), self.y.copy(), label=self.label)


@dataclass(frozen=True)
class EventWindow:
    """Time window holding an ordered list of landmark features."""

    lo: float
    hi: float
    features: tuple[str, ...]

    def __post_init__(self):
        if not self.lo < self.hi:
            raise WindowError(f"window [{self.lo}, {self.hi}]: lo must be < hi")
        if not self.features:
            raise WindowError(f"window [{self.lo}, {self.hi}]: no features")
        for f in self.features:
            if f not in FEATURES:
                raise WindowError(f"unknown feature {f!r} (expected one of {FEATURES})")


def validate_windows(windows) -> tuple[EventWindow, ...]:
    windows = tuple(windows)
    if not windows:
        raise WindowError("no event windows configured")
    for a, b in zip(windows, windows[1:]):
        if b.lo < a.hi:
            raise WindowError(
                f"windows [{a.lo}, {a.hi}] and [{b.lo}, {b.hi}] overlap or are out of order"
            )
    return windows


@dataclass(frozen=True)
class AnchorSet:
    """Landmark times, one per (window, feature), strictly increasing."""

    windows: tuple[EventWindow, ...]
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        n = sum(len(w.features) for w in self.windows)
        if len(self.times) != n:
            raise ValueError(f"anchor set needs {n} times, got {len(self.times)}")
        if np.any(np.diff(self.times) <= 0):
            raise DegenerateWarpError(
                f"anchor times must be strictly increasing, got {self.times.tolist()}"
            )

    def same_structure(self, other: "AnchorSet") -> bool:
        return all(
            a.features == b.features for a, b in zip(self.windows, other.windows)
        ) and len(self.windows) == len(other.windows)


def _curve_arrays(curve) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(curve, GridCurve):
        return curve.times(), curve.y
    return curve.t, curve.y


def build_reference_curve(model_runs, grid: GridSpec) -> GridCurve:
    """Pointwise mean of the model runs, linearly interpolated onto the grid."""
    if not model_runs:
        raise ValueError("need at least one model run for a reference curve")
    acc = np.zeros(grid.n)
    for run in model_runs:
        acc += resample_dyadic(run, grid.J, grid.t0, grid.t1).y
    return GridCurve(acc / len(model_runs), grid.J, grid.t0, grid.t1, label="reference")


def locate_anchors(curve, windows) -> AnchorSet:
    """Time of each windowed extremum; ties resolved to the earliest sample."""
    windows = validate_windows(windows)
    t, y = _curve_arrays(curve)
    times = []
    for w in windows:
        sel = np.nonzero((t >= w.lo) & (t <= w.hi))[0]
        if sel.size == 0:
            raise WindowError(f"window [{w.lo}, {w.hi}] contains no samples of the curve")
        for f in w.features:
            i = sel[np.argmax(y[sel])] if f == "max" else sel[np.argmin(y[sel])]
            times.append(t[i])
    return AnchorSet(windows=windows, times=np.array(times))


def register_curve(curve: Curve, src: AnchorSet, dst: AnchorSet) -> Curve:
    """Piecewise-linearly warp time so src anchors map exactly onto dst anchors.

    The curve's own domain endpoints are fixed points of the warp; values are
    untouched.
    """
    if not src.same_structure(dst):
        raise ValueError("source and destination anchor sets have different structure")
    t, y = _curve_arrays(curve)
    t_lo, t_hi = t[0], t[-1]
    src_k = np.concatenate(([t_lo], src.times, [t_hi]))
    dst_k = np.concatenate(([t_lo], dst.times, [t_hi]))
    if np.any(np.diff(src_k) <= 0):
        raise DegenerateWarpError(
            "source anchors collide with each other or the domain endpoints"
        )
    if np.any(np.diff(dst_k) <= 0):
        raise DegenerateWarpError(
            "destination anchors collide with each other or the domain endpoints"
        )
    warped = np.interp(t, src_k, dst_k)
    out = Curve(warped, np.array(y, copy=True), label=getattr(curve, "label", ""))
    out.design_index = getattr(curve, "design_index", None)
    return out


def resample_dyadic(curve, J: int, t0: float, t1: float) -> GridCurve:
    """Linear interpolation of the curve onto the 2**J-point grid over [t0, t1]."""
    grid = GridSpec(J, t0, t1)
    t, y = _curve_arrays(curve)
    tol = 1e-9 * (t1 - t0)
    if t[0] > t0 + tol or t[-1] < t1 - tol:
        raise CoverageError(
            f"curve {getattr(curve, 'label', '')!r} spans [{t[0]}, {t[-1]}], "
            f"does not cover [{t0}, {t1}]"
        )
    label = getattr(curve, "label", "")
    return GridCurve(np.interp(grid.times(), t, y), J, t0, t1, label=label)
