"""Recombining posterior draws into curves, bands, and extrapolations.

Every consumer here takes aligned rows of the saved joint draws: bias,
model coefficients, inputs and variances of one draw belong together and
are never mixed across draws.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import PosteriorDraws, PriorSpec
from .emulator import GaspEnsemble
from .iodesign import Curve
from .registration import GridCurve, GridSpec, resample_dyadic
from .wavelet import RetainedIndexSet, basis_matrix

log = logging.getLogger(__name__)

BAND_MODES = ("symmetric", "shortest")


@dataclass
class CurveEnsemble:
    """H posterior sample curves on a common dyadic grid."""

    ys: np.ndarray  # (H, 2**J)
    J: int
    t0: float
    t1: float
    kind: str = ""
    guard_fallbacks: int = 0

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=float)
        if self.ys.ndim != 2 or self.ys.shape[1] != 2 ** self.J:
            raise ValueError(f"ensemble needs shape (H, 2**{self.J})")

    @property
    def H(self) -> int:
        return self.ys.shape[0]

    def times(self) -> np.ndarray:
        return GridSpec(self.J, self.t0, self.t1).times()

    def shifted(self, offset, kind: str | None = None) -> "CurveEnsemble":
        """Add a curve (or scalar) to every member."""
        off = offset.y if isinstance(offset, GridCurve) else np.asarray(offset, dtype=float)
        return CurveEnsemble(self.ys + off, self.J, self.t0, self.t1,
                             kind=kind or self.kind, guard_fallbacks=self.guard_fallbacks)


@dataclass
class Band:
    """Pointwise center curve with lower/upper tolerance bounds."""

    center: GridCurve
    lower: GridCurve
    upper: GridCurve
    alpha: float
    mode: str

    def width(self) -> np.ndarray:
        return self.upper.y - self.lower.y

    def covers(self, curve) -> np.ndarray:
        """Boolean mask: is the given curve inside the band at each grid point."""
        y = curve.y if isinstance(curve, GridCurve) else np.asarray(curve, dtype=float)
        return (y >= self.lower.y) & (y <= self.upper.y)

    def shifted(self, offset) -> "Band":
        off = offset.y if isinstance(offset, GridCurve) else np.asarray(offset, dtype=float)
        mk = lambda g: GridCurve(g.y + off, g.J, g.t0, g.t1, label=g.label)
        return Band(mk(self.center), mk(self.lower), mk(self.upper), self.alpha, self.mode)


def reconstruct_ensemble(coeff_draws: np.ndarray, keep: RetainedIndexSet,
                         t0: float, t1: float, kind: str = "",
                         psi: np.ndarray | None = None) -> CurveEnsemble:
    """Inverse-transform each draw's retained coefficients into a curve.

    Linearity of the transform lets the whole ensemble come out of a single
    matrix product against the retained basis functions.
    """
    coeff_draws = np.atleast_2d(np.asarray(coeff_draws, dtype=float))
    if coeff_draws.shape[1] != len(keep):
        raise ValueError(
            f"draws have {coeff_draws.shape[1]} columns, retained set has {len(keep)}"
        )
    if psi is None:
        psi = basis_matrix(keep)
    return CurveEnsemble(coeff_draws @ psi, keep.J, t0, t1, kind=kind)


def tolerance_band(e: CurveEnsemble, alpha: float = 0.1, mode: str = "symmetric") -> Band:
    """Pointwise tolerance bounds around the posterior mean curve.

    symmetric: equal-tail empirical quantiles (order statistics with linear
    interpolation).  shortest: at each grid point, the narrowest window
    containing ceil((1-alpha) H) of the H values.
    """
    if e.H < 2:
        raise ValueError("need at least 2 ensemble members for a band")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be inside (0, 1), got {alpha}")
    if mode not in BAND_MODES:
        raise ValueError(f"mode must be one of {BAND_MODES}")
    center = e.ys.mean(axis=0)
    if mode == "symmetric":
        lo, hi = np.quantile(e.ys, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    else:
        s = np.sort(e.ys, axis=0)
        m = math.ceil((1.0 - alpha) * e.H)
        widths = s[m - 1:, :] - s[: e.H - m + 1, :]
        start = np.argmin(widths, axis=0)
        cols = np.arange(s.shape[1])
        lo = s[start, cols]
        hi = s[start + m - 1, cols]
    mk = lambda y, lab: GridCurve(y, e.J, e.t0, e.t1, label=lab)
    return Band(center=mk(center, f"{e.kind}.center"), lower=mk(lo, f"{e.kind}.lower"),
                upper=mk(hi, f"{e.kind}.upper"), alpha=alpha, mode=mode)


def _check_wider(outer: Band, inner: Band, tol: float, what: str) -> None:
    ok = outer.width() >= (1.0 - tol) * inner.width()
    if not np.all(ok):
        worst = float(np.max((inner.width() - outer.width()) / np.maximum(inner.width(), 1e-300)))
        raise RuntimeError(
            f"{what}: band should be pointwise at least as wide "
            f"(worst shortfall {worst:.3%}, tolerance {tol:.0%})"
        )


def predict_reality(draws: PosteriorDraws, keep: RetainedIndexSet,
                    t0: float, t1: float, alpha: float = 0.1,
                    mode: str = "symmetric") -> tuple[CurveEnsemble, Band]:
    """Bias-corrected reality: per draw, model coefficients plus bias."""
    ens = reconstruct_ensemble(draws.wM + draws.wb, keep, t0, t1, kind="reality")
    return ens, tolerance_band(ens, alpha, mode)


def bias_ensemble(draws: PosteriorDraws, keep: RetainedIndexSet,
                  t0: float, t1: float, alpha: float = 0.1,
                  mode: str = "symmetric") -> tuple[CurveEnsemble, Band]:
    """Posterior sample curves of the bias function, with tolerance bounds."""
    ens = reconstruct_ensemble(draws.wb, keep, t0, t1, kind="bias")
    return ens, tolerance_band(ens, alpha, mode)


def pure_model_prediction(draws: PosteriorDraws, fits, priors: PriorSpec,
                          keep: RetainedIndexSet, t0: float, t1: float,
                          model_run: Curve | None = None) -> GridCurve:
    """Surrogate reconstruction at the posterior-mean inputs, bias-uncorrected.

    If an actual model run at the estimated inputs is supplied it is used
    instead (resampled onto the grid), which is the preferred variant.
    """
    if model_run is not None:
        out = resample_dyadic(model_run, keep.J, t0, t1)
        out.label = "pure_model"
        return out
    delta_hat = draws.delta.mean(axis=0)
    u_hat = draws.u.mean(axis=0)
    means, _ = GaspEnsemble(fits).mean_var(priors.z_unit(delta_hat, u_hat))
    y = means @ basis_matrix(keep)
    return GridCurve(y, keep.J, t0, t1, label="pure_model")


def predict_new_field_run(draws: PosteriorDraws, keep: RetainedIndexSet,
                          rng: np.random.Generator, t0: float, t1: float,
                          alpha: float = 0.1, mode: str = "symmetric",
                          width_tol: float = 0.02) -> tuple[CurveEnsemble, Band]:
    """Prediction of a fresh field measurement of the same unit.

    Adds per-draw noise with the drawn variances to the reality
    coefficients; the resulting band is checked to be pointwise at least as
    wide as the reality band (up to Monte Carlo jitter).
    """
    eps = rng.standard_normal(draws.wM.shape) * np.sqrt(draws.sigma2)
    psi = basis_matrix(keep)
    reality = reconstruct_ensemble(draws.wM + draws.wb, keep, t0, t1, kind="reality", psi=psi)
    ens = reconstruct_ensemble(draws.wM + draws.wb + eps, keep, t0, t1, kind="field", psi=psi)
    band = tolerance_band(ens, alpha, mode)
    _check_wider(band, tolerance_band(reality, alpha, mode), width_tol,
                 "new-field-run vs reality")
    return ens, band


def extrapolate_delta_shift(base: tuple[CurveEnsemble, Band], run_at_shifted,
                            run_at_nominal) -> tuple[CurveEnsemble, Band]:
    """Translate predictions by the model-run difference between two nominals.

    Both runs are resampled onto the prediction grid first; if no physical
    nominal run exists, pass the surrogate reconstruction at the nominal
    inputs in its place.
    """
    ens, band = base
    shifted = _on_grid(run_at_shifted, ens)
    nominal = _on_grid(run_at_nominal, ens)
    d = shifted - nominal
    return ens.shifted(d), band.shifted(d)


def _on_grid(curve, ens: CurveEnsemble) -> np.ndarray:
    if isinstance(curve, GridCurve):
        if curve.J == ens.J and curve.t0 == ens.t0 and curve.t1 == ens.t1:
            return curve.y
        curve = curve.to_curve()
    return resample_dyadic(curve, ens.J, ens.t0, ens.t1).y


def extrapolate_same_type(draws: PosteriorDraws, fits, priors: PriorSpec,
                          keep: RetainedIndexSet, rng: np.random.Generator,
                          t0: float, t1: float, alpha: float = 0.1,
                          mode: str = "symmetric",
                          wider_than: Band | None = None,
                          width_tol: float = 0.02) -> tuple[CurveEnsemble, Band]:
    """Prediction for a new unit of the same type (fresh deviations).

    Per draw: a fresh deviation vector from its prior, the surrogate
    conditioned on that draw's model-coefficient values at the tested unit's
    inputs, plus the draw's bias and noise.  Bias and calibration values are
    consumed jointly from the aligned draw.
    """
    ens_fits = GaspEnsemble(fits)
    H, m = draws.wM.shape
    coeffs = np.empty((H, m))
    for h in range(H):
        delta_new = priors.sample_delta(rng)
        z_star = priors.z_unit(draws.delta[h], draws.u[h])
        z_new = priors.z_unit(delta_new, draws.u[h])
        mean, var = ens_fits.augmented_mean_var(z_star, draws.wM[h], z_new)
        w_new = mean + np.sqrt(var) * rng.standard_normal(m)
        eps = rng.standard_normal(m) * np.sqrt(draws.sigma2[h])
        coeffs[h] = w_new + draws.wb[h] + eps
    ens = reconstruct_ensemble(coeffs, keep, t0, t1, kind="same_type")
    band = tolerance_band(ens, alpha, mode)
    if wider_than is not None:
        _check_wider(band, wider_than, width_tol, "same-type vs new-field-run")
    return ens, band


def extrapolate_new_nominals(draws: PosteriorDraws, fitsB, priors: PriorSpec,
                             keep: RetainedIndexSet, mode: str,
                             rng: np.random.Generator, t0: float, t1: float,
                             eps_guard: float | None = None, alpha: float = 0.1,
                             band_mode: str = "symmetric") -> tuple[CurveEnsemble, Band]:
    """Carry the tested system's bias over to a shifted-nominal system.

    ``fitsB`` must be surrogates fitted on the shifted-nominal model runs
    alone, restricted to the same retained coefficient set.  mode
    "additive" transfers the bias curve as is; "multiplicative" transfers
    the relative bias, falling back to additive at grid points where the
    original model curve passes too close to zero (counted and logged).
    """
    if mode not in ("additive", "multiplicative"):
        raise ValueError(f"mode must be 'additive' or 'multiplicative', got {mode!r}")
    ensB = GaspEnsemble(fitsB)
    psi = basis_matrix(keep)
    H, m = draws.wM.shape

    y_model = draws.wM @ psi
    y_reality = (draws.wM + draws.wb) @ psi
    if eps_guard is None:
        eps_guard = 1e-3 * float(np.max(np.abs(y_model.mean(axis=0))))

    n = psi.shape[1]
    ys = np.empty((H, n))
    fallbacks = 0
    for h in range(H):
        delta_b = priors.sample_delta(rng)
        z_b = priors.z_unit(delta_b, draws.u[h])
        mean, var = ensB.mean_var(z_b)
        w_bm = mean + np.sqrt(var) * rng.standard_normal(m)
        eps = rng.standard_normal(m) * np.sqrt(draws.sigma2[h])
        y_bm = w_bm @ psi
        noise = eps @ psi
        bias = y_reality[h] - y_model[h]
        if mode == "additive":
            ys[h] = y_bm + bias + noise
        else:
            ok = np.abs(y_model[h]) >= eps_guard
            fallbacks += int(np.size(ok) - np.count_nonzero(ok))
            mult = np.where(ok, y_bm * (y_reality[h] / np.where(ok, y_model[h], 1.0)),
                            y_bm + bias)
            ys[h] = mult + noise
    if fallbacks:
        log.info("multiplicative bias fell back to additive at %d of %d grid evaluations",
                 fallbacks, H * n)
    ens = CurveEnsemble(ys, keep.J, t0, t1, kind=f"condition_b_{mode}",
                        guard_fallbacks=fallbacks)
    return ens, tolerance_band(ens, alpha, band_mode)
