"""Synthetic test bed with known ground truth.

A cheap analytic "simulator" produces curves with two sharp oscillatory
events whose amplitudes depend smoothly on the inputs (the calibration
inputs act like damping levels).  Field replicates are built from the true
inputs plus a planted bias, per-level wavelet noise, and random time jitter
of the events, so the whole pipeline -- registration included -- can be
verified against recorded truth.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .iodesign import (Curve, DesignMatrix, IUMap, ParameterSpec, generate_lhd,
                       write_curve, write_design, write_iu_map)
from .registration import EventWindow, GridCurve, GridSpec
from .wavelet import dwt, level_of_flat, synthesize_vector

# Event geometry in normalized time tau = (t - t0) / (t1 - t0).  A sine
# carrier puts one deep minimum just before the center and one deep maximum
# just after it, both well inside the window and unique under noise; the
# carrier is kept curved enough that the extremum locations barely move with
# the inputs (the trend term would otherwise drag gentle extrema around).
EVENT1 = dict(center=0.22, width=0.075, cycles=3.0)
EVENT2 = dict(center=0.62, width=0.08, cycles=2.5)
WINDOW_HALF = 0.14


@dataclass
class SynthSpec:
    """Everything the generator needs; truth values must sit inside supports."""

    n_cal: int = 2
    n_var: int = 3
    true_u: tuple | None = None
    true_delta: tuple | None = None
    bias_kind: str = "additive"  # zero | additive | multiplicative
    bias_scale: float = 0.15
    noise_scale: float = 0.05
    noise_level_decay: float = 0.5  # sigma_j = noise_scale * 2**(-decay * j)
    n_rep: int = 7
    K: int = 40
    J: int = 8
    t0: float = 0.0
    t1: float = 65.0
    jitter: float = 0.4
    smooth_levels: int | None = None  # band-limit curves to this resolution level
    lhd_restarts: int = 4
    condition_b_shift: tuple | None = None  # parameter-scale nominal shift (variation dims)
    K_b: int | None = None

    def __post_init__(self):
        if self.n_cal < 1 or self.n_var < 1:
            raise ConfigError("need at least one calibration and one variation input")
        if self.bias_kind not in ("zero", "additive", "multiplicative"):
            raise ConfigError(f"unknown bias_kind {self.bias_kind!r}")
        if self.n_rep < 2:
            raise ConfigError("need at least 2 field replicates")

    @property
    def d(self) -> int:
        return self.n_cal + self.n_var


def build_iumap(spec: SynthSpec) -> IUMap:
    """Table-style parameter map: calibration entries first, then variation."""
    entries = [
        ParameterSpec(name=f"damping{i + 1}", role="calibration", lo=0.125, hi=0.875)
        for i in range(spec.n_cal)
    ]
    for p in range(spec.n_var):
        half = 0.5 * (0.35 + 0.3 * (p % 3) / 2.0)  # widths vary like a real table
        entries.append(ParameterSpec(name=f"x{p + 1}", role="variation",
                                     lo=0.5 - half, hi=0.5 + half))
    return IUMap(entries=tuple(entries))


def event_windows(spec: SynthSpec) -> tuple[EventWindow, ...]:
    span = spec.t1 - spec.t0
    wins = []
    for ev in (EVENT1, EVENT2):
        c = spec.t0 + ev["center"] * span
        w = WINDOW_HALF * span
        wins.append(EventWindow(lo=c - w, hi=c + w, features=("min", "max")))
    return tuple(wins)


class Simulator:
    """Analytic curve family y(values; t), smooth in all inputs."""

    def __init__(self, spec: SynthSpec, iumap: IUMap):
        self.spec = spec
        self.iumap = iumap
        nv, nc = spec.n_var, spec.n_cal
        self.a1 = np.array([0.45 / (p + 1) for p in range(nv)])
        self.a2 = np.array([0.30 * (-1) ** p / (p + 1) for p in range(nv)])
        self.cal1 = 0
        self.cal2 = min(1, nc - 1)

    def _standardize(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zeta = np.empty(self.iumap.d)
        for p, e in enumerate(self.iumap.entries):
            zeta[p] = (values[p] - e.nominal) / e.trunc
        cal = np.array([zeta[p] for p, e in enumerate(self.iumap.entries)
                        if e.role == "calibration"])
        var = np.array([zeta[p] for p, e in enumerate(self.iumap.entries)
                        if e.role == "variation"])
        return cal, var

    def __call__(self, values, t) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        t = np.asarray(t, dtype=float)
        cal, var = self._standardize(values)
        span = self.spec.t1 - self.spec.t0
        tau = (t - self.spec.t0) / span

        g1 = (1.3 + 0.55 * cal[self.cal1] + float(self.a1 @ var)
              + 0.18 * math.sin(1.3 * cal[self.cal1] + 0.9 * var[0]))
        g2 = (0.9 - 0.5 * cal[self.cal2] + float(self.a2 @ var)
              + 0.15 * math.cos(0.8 * cal[self.cal2] - 0.6 * var[0]))
        g3 = 0.35 + 0.2 * var[0] + 0.1 * cal[self.cal1]
        base = 2.0 + 0.25 * var[-1]

        return (base + g1 * _packet(tau, **EVENT1) + g2 * _packet(tau, **EVENT2)
                + g3 * (tau - 0.5))


def _packet(tau: np.ndarray, center: float, width: float, cycles: float) -> np.ndarray:
    return (np.exp(-0.5 * ((tau - center) / width) ** 2)
            * np.sin(2.0 * math.pi * cycles * (tau - center)))


def bias_curve(spec: SynthSpec, t: np.ndarray) -> np.ndarray:
    """The planted additive bias (or multiplicative factor) on a time grid.

    The additive bias lives in smooth bumps away from the event windows, so
    the input effects of the curve family cannot absorb it.
    """
    tau = (np.asarray(t, dtype=float) - spec.t0) / (spec.t1 - spec.t0)
    if spec.bias_kind == "zero":
        return np.zeros_like(tau)
    if spec.bias_kind == "additive":
        return spec.bias_scale * (1.2 * np.exp(-((tau - 0.45) / 0.07) ** 2)
                                  + 0.9 * np.exp(-((tau - 0.88) / 0.09) ** 2))
    # multiplicative: relative factor m(t), reality = model * (1 + m)
    return spec.bias_scale * (0.6 + 0.5 * np.sin(2 * math.pi * tau + 0.2))


def level_sigmas(spec: SynthSpec) -> np.ndarray:
    j = np.arange(spec.J + 1)
    return spec.noise_scale * 2.0 ** (-spec.noise_level_decay * j)


def _wavelet_noise(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    sig = level_sigmas(spec)
    n = 2 ** spec.J
    flat_sd = np.array([sig[level_of_flat(i)] for i in range(n)])
    return synthesize_vector(flat_sd * rng.standard_normal(n))


def _lowpass(y: np.ndarray, spec: SynthSpec) -> np.ndarray:
    """Band-limit a grid signal to resolution levels <= smooth_levels.

    Mirrors the representability assumption of the analysis: reality, model
    and bias share the basis elements that survive thresholding.
    """
    if spec.smooth_levels is None or spec.smooth_levels >= spec.J:
        return y
    vec = dwt(GridCurve(y, spec.J, spec.t0, spec.t1)).to_vector()
    n = 2 ** spec.J
    mask = np.array([level_of_flat(i) <= spec.smooth_levels for i in range(n)])
    return synthesize_vector(np.where(mask, vec, 0.0))


@dataclass
class SynthDataset:
    spec: SynthSpec
    iumap: IUMap
    windows: tuple[EventWindow, ...]
    design: DesignMatrix
    model_curves: list[Curve]
    field_curves: list[Curve]
    truth: dict
    design_b: DesignMatrix | None = None
    model_curves_b: list[Curve] | None = None

    def write(self, out_dir) -> dict:
        """Write the dataset tree; returns the paths of everything written."""
        out = Path(out_dir)
        (out / "model").mkdir(parents=True, exist_ok=True)
        (out / "field").mkdir(exist_ok=True)
        write_iu_map(self.iumap, out / "iumap.toml")
        write_design(self.design, out / "design.csv")
        for k, c in enumerate(self.model_curves):
            write_curve(c, out / "model" / f"run_{k:03d}.csv")
        for r, c in enumerate(self.field_curves):
            write_curve(c, out / "field" / f"rep_{r:02d}.csv")
        paths = {
            "iumap": "iumap.toml", "design": "design.csv",
            "model_dir": "model", "field_dir": "field", "truth": "truth.json",
        }
        if self.model_curves_b is not None:
            (out / "model_b").mkdir(exist_ok=True)
            write_design(self.design_b, out / "design_b.csv")
            for k, c in enumerate(self.model_curves_b):
                write_curve(c, out / "model_b" / f"run_{k:03d}.csv")
            paths.update({"design_b": "design_b.csv", "model_dir_b": "model_b"})
        (out / "truth.json").write_text(json.dumps(self.truth, indent=1, sort_keys=True))
        return paths


def _default_truth(spec: SynthSpec, iumap: IUMap) -> tuple[np.ndarray, np.ndarray]:
    cal = iumap.calibration_entries()
    var = iumap.variation_entries()
    if spec.true_u is None:
        frac = [0.75, 0.35]
        u = np.array([e.lo + frac[i % 2] * (e.hi - e.lo) for i, e in enumerate(cal)])
    else:
        u = np.asarray(spec.true_u, dtype=float)
    if spec.true_delta is None:
        delta = np.array([0.4 * e.trunc * (-1) ** p for p, e in enumerate(var)])
    else:
        delta = np.asarray(spec.true_delta, dtype=float)
    return u, delta


def synth_testbed(spec: SynthSpec, rng: np.random.Generator) -> SynthDataset:
    """Generate model runs, field replicates and the truth record."""
    iumap = build_iumap(spec)
    sim = Simulator(spec, iumap)
    grid = GridSpec(spec.J, spec.t0, spec.t1)
    tg = grid.times()

    true_u, true_delta = _default_truth(spec, iumap)
    cal = iumap.calibration_entries()
    var = iumap.variation_entries()
    if len(true_u) != len(cal) or len(true_delta) != len(var):
        raise ConfigError("truth vectors do not match the parameter table")
    for uv, e in zip(true_u, cal):
        if not e.lo <= uv <= e.hi:
            raise ConfigError(f"true {e.name}={uv} outside [{e.lo}, {e.hi}]")
    for dv, e in zip(true_delta, var):
        if abs(dv) > e.trunc:
            raise ConfigError(f"true delta for {e.name}={dv} outside +/-{e.trunc}")

    # Model runs on the dyadic grid, one per design row.
    design = generate_lhd(spec.K, iumap.d, n_restarts=spec.lhd_restarts,
                          seed=int(rng.integers(2 ** 31)), names=tuple(iumap.names))
    model_curves = []
    for k, row in enumerate(design.points):
        y = _lowpass(sim(iumap.from_unit(row), tg), spec)
        c = Curve(tg.copy(), y, label=f"run_{k:03d}")
        c.design_index = k
        model_curves.append(c)

    # True reality: simulator at the true inputs, with the planted bias.
    v_true = iumap.assemble(true_delta, true_u)
    y_model_raw = sim(v_true, tg)
    b = bias_curve(spec, tg)
    y_model_true = _lowpass(y_model_raw, spec)
    if spec.bias_kind == "multiplicative":
        y_reality = _lowpass(y_model_raw * (1.0 + b), spec)
        bias_additive = y_reality - y_model_true
    else:
        y_reality = y_model_true + _lowpass(b, spec)
        bias_additive = y_reality - y_model_true

    # Field replicates: reality + per-level wavelet noise, events jittered in
    # time.  The jitter warp is piecewise linear with knots at the true
    # anchor times, i.e. inside the same warp family the registration
    # inverts; each event window shifts rigidly by its own random offset.
    windows = event_windows(spec)
    from .registration import locate_anchors
    truth_anchors = locate_anchors(GridCurve(y_reality, spec.J, spec.t0, spec.t1),
                                   windows).times
    n_feats = [len(w.features) for w in windows]
    gaps = np.diff(np.concatenate(([spec.t0], truth_anchors, [spec.t1])))
    max_shift = 0.45 * float(gaps.min())
    field_curves = []
    for r in range(spec.n_rep):
        noise = _wavelet_noise(spec, rng)
        offsets = np.clip(rng.normal(scale=spec.jitter, size=len(windows)),
                          -max_shift, max_shift)
        per_anchor = np.repeat(offsets, n_feats)
        knots_src = np.concatenate(([spec.t0], truth_anchors, [spec.t1]))
        knots_dst = np.concatenate(([spec.t0], truth_anchors + per_anchor, [spec.t1]))
        t_warp = np.interp(tg, knots_src, knots_dst)
        field_curves.append(Curve(t_warp, y_reality + noise, label=f"rep_{r:02d}"))

    truth = {
        "true_u": true_u.tolist(),
        "true_delta": true_delta.tolist(),
        "bias_kind": spec.bias_kind,
        "bias_additive": bias_additive.tolist(),
        "reality": y_reality.tolist(),
        "model_at_truth": y_model_true.tolist(),
        "noise_sigma_by_level": level_sigmas(spec).tolist(),
        "grid": {"J": spec.J, "t0": spec.t0, "t1": spec.t1},
        "spec": {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in dataclasses.asdict(spec).items()},
    }

    dataset = SynthDataset(spec=spec, iumap=iumap, windows=event_windows(spec),
                           design=design, model_curves=model_curves,
                           field_curves=field_curves, truth=truth)

    if spec.condition_b_shift is not None:
        shift = np.asarray(spec.condition_b_shift, dtype=float)
        if len(shift) != spec.n_var:
            raise ConfigError("condition_b_shift must have one entry per variation input")
        kb = spec.K_b or spec.K
        design_b = generate_lhd(kb, iumap.d, n_restarts=spec.lhd_restarts,
                                seed=int(rng.integers(2 ** 31)), names=tuple(iumap.names))
        shift_full = np.zeros(iumap.d)
        iv = 0
        for p, e in enumerate(iumap.entries):
            if e.role == "variation":
                shift_full[p] = shift[iv]
                iv += 1
        curves_b = []
        for k, row in enumerate(design_b.points):
            y = _lowpass(sim(iumap.from_unit(row) + shift_full, tg), spec)
            c = Curve(tg.copy(), y, label=f"run_{k:03d}")
            c.design_index = k
            curves_b.append(c)
        delta_b_true = np.array([0.3 * e.trunc * (-1) ** (p + 1)
                                 for p, e in enumerate(var)])
        vb_true = iumap.assemble(delta_b_true, true_u) + shift_full
        yb_model_raw = sim(vb_true, tg)
        yb_model_true = _lowpass(yb_model_raw, spec)
        if spec.bias_kind == "multiplicative":
            yb_reality = _lowpass(yb_model_raw * (1.0 + b), spec)
        else:
            yb_reality = yb_model_true + _lowpass(b, spec)
        truth["condition_b"] = {
            "shift": shift.tolist(),
            "true_delta_b": delta_b_true.tolist(),
            "reality": yb_reality.tolist(),
            "model_at_truth": yb_model_true.tolist(),
        }
        dataset.design_b = design_b
        dataset.model_curves_b = curves_b

    return dataset


def load_synth_spec(path) -> SynthSpec:
    """Read a SynthSpec from a flat TOML file of the dataclass fields."""
    import sys
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    fields = {f.name for f in dataclasses.fields(SynthSpec)}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
    for key in ("true_u", "true_delta", "condition_b_shift"):
        if key in doc and doc[key] is not None:
            doc[key] = tuple(doc[key])
    return SynthSpec(**doc)
