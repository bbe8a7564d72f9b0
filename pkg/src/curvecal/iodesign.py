"""Input/uncertainty map, curve files, and maximin Latin hypercube designs.

All parameters live on a coded scale: the input table assigns each one a
range [lo, hi]; variation parameters have their nominal pinned at the range
midpoint and deviations live in [-(hi-lo)/2, +(hi-lo)/2].  The design cube
used by the surrogates is the unit cube obtained by rescaling each range
to [0, 1].
"""

from __future__ import annotations

import csv
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CurveParseError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ROLE_CALIBRATION = "calibration"
ROLE_VARIATION = "variation"


@dataclass(frozen=True)
class ParameterSpec:
    """One row of the input/uncertainty table."""

    name: str
    role: str  # "calibration" | "variation"
    lo: float
    hi: float
    sd: float | None = None  # variation only; defaults to (hi - lo) / 6

    def __post_init__(self):
        if self.role not in (ROLE_CALIBRATION, ROLE_VARIATION):
            raise ConfigError(f"parameter {self.name!r}: unknown role {self.role!r}")
        if not self.lo < self.hi:
            raise ConfigError(f"parameter {self.name!r}: lo must be < hi, got [{self.lo}, {self.hi}]")
        if self.role == ROLE_VARIATION:
            if self.sd is None:
                object.__setattr__(self, "sd", (self.hi - self.lo) / 6.0)
            elif self.sd <= 0:
                raise ConfigError(f"parameter {self.name!r}: sd must be positive")

    @property
    def nominal(self) -> float:
        """Range midpoint; variation deviations are measured from here."""
        return 0.5 * (self.lo + self.hi)

    @property
    def trunc(self) -> float:
        """Half-width of the deviation box for a variation parameter."""
        return 0.5 * (self.hi - self.lo)


@dataclass(frozen=True)
class IUMap:
    """Ordered parameter table; entry order fixes the design-column order."""

    entries: tuple[ParameterSpec, ...]

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("input/uncertainty map has no parameters")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in input/uncertainty map")

    @property
    def d(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def calibration_entries(self) -> list[ParameterSpec]:
        return [e for e in self.entries if e.role == ROLE_CALIBRATION]

    def variation_entries(self) -> list[ParameterSpec]:
        return [e for e in self.entries if e.role == ROLE_VARIATION]

    def to_unit(self, values: np.ndarray) -> np.ndarray:
        """Map parameter-scale values (entry order) onto the unit design cube."""
        values = np.asarray(values, dtype=float)
        lo = np.array([e.lo for e in self.entries])
        hi = np.array([e.hi for e in self.entries])
        return (values - lo) / (hi - lo)

    def from_unit(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        lo = np.array([e.lo for e in self.entries])
        hi = np.array([e.hi for e in self.entries])
        return lo + points * (hi - lo)

    def assemble(self, delta: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Build a parameter-scale vector from deviations and calibration values.

        ``delta`` is ordered like the variation entries, ``u`` like the
        calibration entries; variation coordinates become nominal + delta.
        """
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty(self.d)
        i_d = i_u = 0
        for p, e in enumerate(self.entries):
            if e.role == ROLE_VARIATION:
                out[p] = e.nominal + delta[i_d]
                i_d += 1
            else:
                out[p] = u[i_u]
                i_u += 1
        if i_d != delta.size or i_u != u.size:
            raise ValueError(
                f"expected {i_d} deviations and {i_u} calibration values, "
                f"got {delta.size} and {u.size}"
            )
        return out


def load_iu_map(path) -> IUMap:
    """Parse an input/uncertainty table from a TOML file.

    Expected grammar::

        [[parameter]]
        name = "damping1"
        role = "calibration"        # or "variation"
        range = [0.125, 0.875]
        sd = 0.04903                # optional, variation only

    Calibration parameters get a uniform prior over their range; variation
    parameters get a zero-mean normal prior with the given sd (default one
    sixth of the range width) truncated to +/- half the range width.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"input/uncertainty map not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}")

    raw = doc.get("parameter")
    if not raw:
        raise ConfigError(f"{path}: no [[parameter]] blocks")

    entries = []
    for k, blk in enumerate(raw):
        for key in ("name", "role", "range"):
            if key not in blk:
                raise ConfigError(f"{path}: parameter {k + 1}: missing {key!r}")
        rng = blk["range"]
        if not (isinstance(rng, (list, tuple)) and len(rng) == 2):
            raise ConfigError(f"{path}: parameter {blk['name']!r}: range must be [lo, hi]")
        entries.append(
            ParameterSpec(
                name=str(blk["name"]),
                role=str(blk["role"]),
                lo=float(rng[0]),
                hi=float(rng[1]),
                sd=float(blk["sd"]) if "sd" in blk else None,
            )
        )
    return IUMap(entries=tuple(entries))


def write_iu_map(iumap: IUMap, path) -> None:
    lines = []
    for e in iumap.entries:
        lines.append("[[parameter]]")
        lines.append(f'name = "{e.name}"')
        lines.append(f'role = "{e.role}"')
        lines.append(f"range = [{e.lo!r}, {e.hi!r}]")
        if e.role == ROLE_VARIATION:
            lines.append(f"sd = {e.sd!r}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

@dataclass
class Curve:
    """A sampled real-valued function of time on a (possibly irregular) grid."""

    t: np.ndarray
    y: np.ndarray
    label: str = ""
    design_index: int | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.t.ndim != 1 or self.y.ndim != 1:
            raise CurveParseError(f"curve {self.label!r}: t and y must be 1-D")
        if len(self.t) != len(self.y):
            raise CurveParseError(
                f"curve {self.label!r}: length mismatch ({len(self.t)} times, {len(self.y)} values)"
            )
        if len(self.t) < 2:
            raise CurveParseError(f"curve {self.label!r}: need at least 2 samples")
        bad = np.nonzero(np.diff(self.t) <= 0)[0]
        if bad.size:
            raise CurveParseError(f"curve {self.label!r}: non-monotone time at row {bad[0] + 2}")

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t1(self) -> float:
        return float(self.t[-1])


def _natural_key(name: str):
    parts = re.split(r"(\d+)", name)
    return [int(p) if p.isdigit() else p for p in parts]


def load_curve(path, label: str | None = None) -> Curve:
    path = Path(path)
    t, y = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CurveParseError(f"{path}: empty file")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise CurveParseError(f"{path}: row {row_no}: expected two columns")
            try:
                t.append(float(row[0]))
                y.append(float(row[1]))
            except ValueError:
                raise CurveParseError(f"{path}: row {row_no}: non-numeric value")
    try:
        return Curve(np.array(t), np.array(y), label=label or path.stem)
    except CurveParseError as exc:
        raise CurveParseError(f"{path}: {exc}")


def load_curves(dir_path, kind: str = "field") -> list[Curve]:
    """Load every ``*.csv`` in a directory as a curve, sorted by label.

    Model curves additionally carry their design-row index (position in the
    sorted order), matching the row order of the design file.
    """
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise CurveParseError(f"not a directory: {dir_path}")
    files = sorted(dir_path.glob("*.csv"), key=lambda p: _natural_key(p.stem))
    curves = [load_curve(p) for p in files]
    if kind == "model":
        for k, c in enumerate(curves):
            c.design_index = k
    return curves


def write_curve(curve: Curve, path) -> None:
    """Write a curve as two-column CSV; re-loading reproduces it bit-exactly."""
    with open(path, "w", newline="") as fh:
        fh.write("t,y\n")
        for ti, yi in zip(curve.t, curve.y):
            fh.write(f"{float(ti)!r},{float(yi)!r}\n")


# ---------------------------------------------------------------------------
# Maximin Latin hypercube designs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    """K points in the unit cube, one column per parameter."""

    points: np.ndarray  # (K, d)
    column_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        if self.points.ndim != 2:
            raise ValueError("design points must be a 2-D array")
        if self.points.shape[1] != len(self.column_names):
            raise ValueError("column_names length does not match design dimension")

    @property
    def K(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def min_pairwise_distance(points: np.ndarray) -> float:
    """Smallest Euclidean distance between any two design points."""
    points = np.asarray(points, dtype=float)
    diff = points[:, None, :] - points[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    k = points.shape[0]
    d2[np.arange(k), np.arange(k)] = np.inf
    return float(math.sqrt(d2.min()))


def _random_lhd(K: int, d: int, rng: np.random.Generator) -> np.ndarray:
    cols = [(rng.permutation(K) + 0.5) / K for _ in range(d)]
    return np.column_stack(cols)


def _sq_dist_matrix(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    return d2


def _coordinate_exchange(x: np.ndarray, rng: np.random.Generator,
                         max_passes: int = 10) -> tuple[np.ndarray, list[float]]:
    """Greedy within-column swaps that never decrease the min pairwise distance."""
    K, d = x.shape
    x = x.copy()
    d2 = _sq_dist_matrix(x)
    best = d2.min()
    history = [best]
    pairs = [(i, j) for i in range(K) for j in range(i + 1, K)]
    for _ in range(max_passes):
        improved = False
        order = rng.permutation(len(pairs) * d)
        for flat in order:
            c, pair_idx = divmod(int(flat), len(pairs))
            i, j = pairs[pair_idx]
            if x[i, c] == x[j, c]:
                continue
            # Swapping x[i,c] <-> x[j,c] only changes distances to rows i and j.
            xi_old, xj_old = x[i, c], x[j, c]
            col = x[:, c]
            di_new = d2[i] - (xi_old - col) ** 2 + (xj_old - col) ** 2
            dj_new = d2[j] - (xj_old - col) ** 2 + (xi_old - col) ** 2
            di_new[i] = np.inf
            dj_new[j] = np.inf
            di_new[j] = dj_new[i] = d2[i, j]  # unchanged by a symmetric swap
            cand = min(di_new.min(), dj_new.min())
            if cand <= best:
                continue
            # Rest of the matrix: current min could sit in rows i or j, so
            # check the min over the untouched block as well.
            mask = np.ones(K, dtype=bool)
            mask[[i, j]] = False
            rest = d2[np.ix_(mask, mask)].min() if K > 2 else np.inf
            cand = min(cand, rest)
            if cand > best:
                x[i, c], x[j, c] = xj_old, xi_old
                d2[i], d2[:, i] = di_new, di_new
                d2[j], d2[:, j] = dj_new, dj_new
                d2[i, i] = d2[j, j] = np.inf
                best = cand
                history.append(best)
                improved = True
        if not improved:
            break
    return x, history


def generate_lhd(K: int, d: int, n_restarts: int = 8, seed=None,
                 names: tuple[str, ...] | None = None) -> DesignMatrix:
    """Approximately maximin cell-centered Latin hypercube in [0,1]^d.

    Best of ``n_restarts`` random hypercubes, each polished by coordinate
    exchange; deterministic for a fixed seed.
    """
    if K < 2:
        raise ValueError(f"need at least 2 design points, got {K}")
    if d < 1:
        raise ValueError(f"need at least 1 dimension, got {d}")
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best_x, best_obj = None, -np.inf
    for _ in range(n_restarts):
        x = _random_lhd(K, d, rng)
        x, hist = _coordinate_exchange(x, rng)
        if hist[-1] > best_obj:
            best_x, best_obj = x, hist[-1]
    if names is None:
        names = tuple(f"z{p + 1}" for p in range(d))
    return DesignMatrix(points=best_x, column_names=tuple(names))


def write_design(design: DesignMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(design.column_names) + "\n")
        for row in design.points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_design(path) -> DesignMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ConfigError(f"{path}: empty design file")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigError(f"{path}: design has no points")
    return DesignMatrix(points=np.array(rows), column_names=tuple(header))
