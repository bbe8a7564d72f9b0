"""Orthonormal Daubechies wavelet transform and union thresholding.

The transform uses the 4-tap Daubechies filter (two vanishing moments) with
periodic boundary handling, so the analysis of a length-2**J signal is an
orthogonal change of basis.  Coefficients are indexed by (level, position):
level 0 holds the single scaling coefficient and level j = 1..J holds
2**(j-1) detail coefficients.

The flat canonical order used throughout is scaling first, then levels in
increasing order: flat index 0 is (0, 0), and (j, p) sits at 2**(j-1) + p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .registration import GridCurve

_SQRT3 = math.sqrt(3.0)
# Daubechies 4-tap analysis filters (orthonormal: sum h^2 = 1, sum h = sqrt(2)).
H = np.array([1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3]) / (4.0 * math.sqrt(2.0))
G = np.array([H[3], -H[2], H[1], -H[0]])


def level_of_flat(i: int) -> int:
    """Resolution level of a flat coefficient index."""
    return 0 if i == 0 else i.bit_length()


def flat_of(level: int, position: int) -> int:
    if level == 0:
        if position != 0:
            raise ValueError("level 0 has a single coefficient at position 0")
        return 0
    if not 0 <= position < 2 ** (level - 1):
        raise ValueError(f"position {position} out of range for level {level}")
    return 2 ** (level - 1) + position


def _analysis_step(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(a)
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(4)[None, :]) % n
    block = a[idx]
    return block @ H, block @ G


def _synthesis_step(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    n = 2 * len(approx)
    out = np.zeros(n)
    k2 = 2 * np.arange(len(approx))
    for tap in range(4):
        np.add.at(out, (k2 + tap) % n, H[tap] * approx + G[tap] * detail)
    return out


@dataclass
class CoeffSet:
    """Wavelet coefficients of one grid curve.

    ``detail[j-1]`` holds the 2**(j-1) coefficients of level j.  The grid
    endpoints are carried along so the inverse transform can rebuild a
    GridCurve.
    """

    scaling: float
    detail: list[np.ndarray]
    source_label: str = ""
    t0: float = 0.0
    t1: float = 1.0

    @property
    def J(self) -> int:
        return len(self.detail)

    @property
    def n(self) -> int:
        return 2 ** self.J

    def to_vector(self) -> np.ndarray:
        """Flat canonical coefficient vector of length 2**J."""
        return np.concatenate(([self.scaling], *self.detail)) if self.detail else np.array([self.scaling])

    @classmethod
    def from_vector(cls, vec: np.ndarray, source_label: str = "",
                    t0: float = 0.0, t1: float = 1.0) -> "CoeffSet":
        vec = np.asarray(vec, dtype=float)
        n = len(vec)
        if n < 2 or n & (n - 1):
            raise ValueError(f"coefficient vector length must be a power of two >= 2, got {n}")
        J = n.bit_length() - 1
        detail = [vec[2 ** (j - 1): 2 ** j].copy() for j in range(1, J + 1)]
        return cls(scaling=float(vec[0]), detail=detail, source_label=source_label, t0=t0, t1=t1)


def dwt(g: GridCurve) -> CoeffSet:
    """Full periodic Daubechies decomposition of a dyadic-length curve."""
    y = np.asarray(g.y, dtype=float)
    n = len(y)
    if n < 2 or n & (n - 1):
        raise ValueError(f"signal length must be a power of two >= 2, got {n}")
    details = []
    a = y.copy()
    while len(a) > 1:
        a, d = _analysis_step(a)
        details.append(d)
    details.reverse()  # details[j-1] now holds level j
    return CoeffSet(scaling=float(a[0]), detail=details,
                    source_label=g.label, t0=g.t0, t1=g.t1)


def idwt(c: CoeffSet, keep: "RetainedIndexSet | None" = None) -> GridCurve:
    """Inverse transform; coefficients outside ``keep`` are zeroed first."""
    vec = c.to_vector()
    if keep is not None:
        if keep.J != c.J:
            raise ValueError(f"retained set is for J={keep.J}, coefficients have J={c.J}")
        mask = np.zeros(len(vec), dtype=bool)
        mask[keep.flat_indices()] = True
        vec = np.where(mask, vec, 0.0)
    y = synthesize_vector(vec)
    return GridCurve(y, J=c.J, t0=c.t0, t1=c.t1, label=c.source_label)


def synthesize_vector(vec: np.ndarray) -> np.ndarray:
    """Inverse transform of a flat canonical coefficient vector."""
    vec = np.asarray(vec, dtype=float)
    n = len(vec)
    if n < 2 or n & (n - 1):
        raise ValueError(f"coefficient vector length must be a power of two >= 2, got {n}")
    J = n.bit_length() - 1
    a = vec[:1].copy()
    for j in range(1, J + 1):
        a = _synthesis_step(a, vec[2 ** (j - 1): 2 ** j])
    return a


@dataclass(frozen=True)
class RetainedIndexSet:
    """Shared set of retained (level, position) coefficient indices."""

    indices: tuple[tuple[int, int], ...]
    J: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(set(self.indices))))
        for level, pos in self.indices:
            if not 0 <= level <= self.J:
                raise ValueError(f"level {level} outside 0..{self.J}")
            flat_of(level, pos)  # validates the position

    def __len__(self) -> int:
        return len(self.indices)

    def flat_indices(self) -> np.ndarray:
        return np.array([flat_of(j, p) for j, p in self.indices], dtype=int)

    def levels(self) -> np.ndarray:
        """Resolution level of each retained index, in canonical order."""
        return np.array([j for j, _ in self.indices], dtype=int)

    def labels(self) -> list[str]:
        return [f"{j}.{p}" for j, p in self.indices]

    @classmethod
    def all_indices(cls, J: int) -> "RetainedIndexSet":
        idx = [(0, 0)] + [(j, p) for j in range(1, J + 1) for p in range(2 ** (j - 1))]
        return cls(indices=tuple(idx), J=J)

    @classmethod
    def from_labels(cls, labels, J: int) -> "RetainedIndexSet":
        idx = []
        for lab in labels:
            j, p = lab.split(".")
            idx.append((int(j), int(p)))
        return cls(indices=tuple(idx), J=J)


def base_indices(keep_levels: int) -> list[tuple[int, int]]:
    """All (level, position) pairs at levels 0..keep_levels."""
    idx = [(0, 0)]
    for j in range(1, keep_levels + 1):
        idx.extend((j, p) for p in range(2 ** (j - 1)))
    return idx


def threshold_union(all_curves, keep_levels: int = 3, pct: float = 0.025) -> RetainedIndexSet:
    """Union over curves of the per-curve thresholding rule.

    Per curve, every coefficient at levels 0..keep_levels is retained, plus
    any higher-level coefficient whose magnitude ranks within the top ``pct``
    fraction of all that curve's coefficients (all levels pooled).  The
    cutoff is the ceil(pct * 2**J)-th largest magnitude, retained inclusively
    on ties.
    """
    all_curves = list(all_curves)
    if not all_curves:
        raise ValueError("no coefficient sets supplied")
    if not 0.0 < pct < 1.0:
        raise ValueError(f"pct must be inside (0, 1), got {pct}")
    J = all_curves[0].J
    for c in all_curves:
        if c.J != J:
            raise ValueError("all coefficient sets must share the same J")
    if keep_levels < 0 or keep_levels > J:
        raise ValueError(f"keep_levels must be in 0..{J}")

    n = 2 ** J
    k = max(1, math.ceil(pct * n))
    first_high = 2 ** keep_levels  # flat index of the first level > keep_levels
    retained: set[tuple[int, int]] = set(base_indices(keep_levels))
    for c in all_curves:
        mags = np.abs(c.to_vector())
        cutoff = np.partition(mags, n - k)[n - k]
        for i in np.nonzero(mags[first_high:] >= cutoff)[0]:
            flat = first_high + int(i)
            level = level_of_flat(flat)
            retained.add((level, flat - 2 ** (level - 1)))
    return RetainedIndexSet(indices=tuple(retained), J=J)


def restrict(c: CoeffSet, keep: RetainedIndexSet) -> np.ndarray:
    """Project a coefficient set onto the retained indices (canonical order)."""
    if keep.J != c.J:
        raise ValueError(f"retained set is for J={keep.J}, coefficients have J={c.J}")
    return c.to_vector()[keep.flat_indices()]


def basis_matrix(keep: RetainedIndexSet) -> np.ndarray:
    """Rows are the retained basis functions sampled on the grid.

    Reconstruction of any retained coefficient vector is then a single
    matrix product: curve = values @ basis_matrix(keep).
    """
    n = 2 ** keep.J
    flat = keep.flat_indices()
    psi = np.zeros((len(flat), n))
    for row, i in enumerate(flat):
        e = np.zeros(n)
        e[i] = 1.0
        psi[row] = synthesize_vector(e)
    return psi
