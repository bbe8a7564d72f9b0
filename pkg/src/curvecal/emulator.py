"""Per-coefficient Gaussian-process surrogates for the model-run data.

Each retained wavelet coefficient, viewed as a function of the design
inputs, gets its own stationary Gaussian process with constant mean,
constant variance and a power-exponential correlation

    c(z, z') = exp(-sum_p beta_p |z_p - z'_p|**(2 - alpha_p)),

with beta_p >= 0 and alpha_p in [0, 1].  The mean and variance are profiled
out of the likelihood in closed form; the correlation parameters are fitted
by multi-start derivative-free maximization of the profile likelihood.
Prediction is the usual plug-in kriging mean and variance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from .errors import ConditioningError, FitError
from .iodesign import generate_lhd

log = logging.getLogger(__name__)

DEFAULT_NUGGET = 1e-8


def correlation(z, z2, alpha, beta) -> float:
    """Power-exponential correlation between two points."""
    z = np.asarray(z, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not (z.shape == z2.shape == alpha.shape == beta.shape):
        raise ValueError("z, z2, alpha and beta must have matching shapes")
    if np.any(beta < 0):
        raise ValueError("beta must be nonnegative")
    if np.any((alpha < 0) | (alpha > 1)):
        raise ValueError("alpha must lie in [0, 1]")
    return float(np.exp(-np.sum(beta * np.abs(z - z2) ** (2.0 - alpha))))


def corr_vector(design: np.ndarray, z: np.ndarray, alpha, beta) -> np.ndarray:
    """Correlations between each design row and a single point."""
    diff = np.abs(design - np.asarray(z, dtype=float)[None, :])
    return np.exp(-(diff ** (2.0 - np.asarray(alpha))) @ np.asarray(beta))


def corr_matrix(design: np.ndarray, alpha, beta, nugget: float = 0.0) -> np.ndarray:
    diff = np.abs(design[:, None, :] - design[None, :, :])
    r = np.exp(-np.einsum("ijp,p->ij", diff ** (2.0 - np.asarray(alpha)), np.asarray(beta)))
    if nugget:
        r = r + nugget * np.eye(len(design))
    return r


@dataclass(frozen=True)
class GaspHyper:
    """Fitted hyperparameters: mean, precision, and correlation shape."""

    mu: float
    lam: float  # precision: process variance is 1 / lam
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if np.any(self.beta < 0):
            raise ValueError("beta must be nonnegative")
        if np.any((self.alpha < 0) | (self.alpha > 1)):
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class FitOptions:
    n_starts: int | None = None  # default 2 d + 1
    seed: int = 0
    nugget: float = DEFAULT_NUGGET
    maxfev_per_param: int = 150
    log_beta_bounds: tuple[float, float] = (-14.0, 5.0)
    start_log_beta: tuple[float, float] = (-4.0, 2.0)


@dataclass
class GaspFit:
    """Fitted surrogate with precomputed factorizations.

    ``chol`` is the Cholesky factor of the nugget-regularized correlation
    matrix; ``rinv_resid`` is R^-1 (w - mu 1); ``rinv`` the explicit inverse
    used for batched evaluation and leave-one-out diagnostics.
    """

    hyper: GaspHyper
    design: np.ndarray
    response: np.ndarray
    chol: tuple
    rinv_resid: np.ndarray
    rinv: np.ndarray
    nugget: float
    is_constant: bool = False
    label: str = ""

    @property
    def K(self) -> int:
        return len(self.response)

    @property
    def d(self) -> int:
        return self.design.shape[1]

    def ensemble(self) -> "GaspEnsemble":
        """Single-fit ensemble; the shared evaluation kernel for this fit."""
        if getattr(self, "_ens", None) is None:
            self._ens = GaspEnsemble([self])
        return self._ens


def _profile_stats(R_chol, response):
    """GLS-profiled mean and variance given a correlation factorization."""
    ones = np.ones_like(response)
    rinv_w = cho_solve(R_chol, response)
    rinv_1 = cho_solve(R_chol, ones)
    mu = float(ones @ rinv_w) / float(ones @ rinv_1)
    resid = response - mu
    sig2 = float(resid @ (rinv_w - mu * rinv_1)) / len(response)
    return mu, sig2


def _profile_nll(params, design, response, nugget, d):
    alpha = np.clip(params[:d], 0.0, 1.0)
    beta = np.exp(params[d:])
    try:
        R = corr_matrix(design, alpha, beta, nugget=nugget)
        chol = cho_factor(R, lower=True)
    except (LinAlgError, FloatingPointError):
        return 1e12
    _, sig2 = _profile_stats(chol, response)
    if not np.isfinite(sig2) or sig2 <= 0:
        return 1e12
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    K = len(response)
    nll = 0.5 * (K * math.log(sig2) + logdet)
    return nll if np.isfinite(nll) else 1e12


def _constant_fit(design, response, nugget, label) -> GaspFit:
    K = len(response)
    mu = float(np.mean(response))
    scale = max(abs(mu), 1.0)
    hyper = GaspHyper(mu=mu, lam=1.0 / (1e-24 * scale * scale),
                      alpha=np.zeros(design.shape[1]), beta=np.zeros(design.shape[1]))
    R = np.ones((K, K)) + nugget * np.eye(K)
    chol = cho_factor(R, lower=True)
    resid = response - mu
    return GaspFit(hyper=hyper, design=design, response=response, chol=chol,
                   rinv_resid=cho_solve(chol, resid), rinv=cho_solve(chol, np.eye(K)),
                   nugget=nugget, is_constant=True, label=label)


def fit_gasp(design: np.ndarray, response: np.ndarray,
             opts: FitOptions | None = None, label: str = "") -> GaspFit:
    """Maximum-likelihood surrogate fit with profiled mean and variance.

    Correlation parameters are searched over (alpha_p, log beta_p) from
    2 d + 1 Latin-hypercube starts; deterministic for a fixed opts.seed.
    """
    opts = opts or FitOptions()
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if design.ndim != 2:
        raise ValueError("design must be a K x d matrix")
    K, d = design.shape
    if len(response) != K:
        raise ValueError(f"response length {len(response)} != design rows {K}")
    if K < 2:
        raise ValueError("need at least 2 design points")

    span = float(np.ptp(response))
    scale = max(np.max(np.abs(response)), 1e-300)
    if span <= 1e-12 * scale:
        return _constant_fit(design, response, opts.nugget, label)

    n_starts = opts.n_starts if opts.n_starts is not None else 2 * d + 1
    n_params = 2 * d
    lb0, lb1 = opts.start_log_beta
    starts_unit = generate_lhd(max(n_starts, 2), n_params, n_restarts=1,
                               seed=opts.seed).points[:n_starts]
    starts = np.empty_like(starts_unit)
    starts[:, :d] = starts_unit[:, :d]  # alpha in [0, 1]
    starts[:, d:] = lb0 + (lb1 - lb0) * starts_unit[:, d:]

    bounds = [(0.0, 1.0)] * d + [opts.log_beta_bounds] * d
    best_params, best_val = None, np.inf
    maxfev = opts.maxfev_per_param * n_params
    for x0 in starts:
        res = minimize(_profile_nll, x0, args=(design, response, opts.nugget, d),
                       method="Powell", bounds=bounds,
                       options={"maxfev": maxfev, "xtol": 1e-4, "ftol": 1e-7})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_params = res.fun, res.x
    if best_params is None or best_val >= 1e12:
        raise FitError(f"hyperparameter search failed for coefficient {label or '?'}")

    alpha = np.clip(best_params[:d], 0.0, 1.0)
    beta = np.exp(best_params[d:])
    R = corr_matrix(design, alpha, beta, nugget=opts.nugget)
    try:
        chol = cho_factor(R, lower=True)
    except LinAlgError:
        raise ConditioningError(
            f"correlation matrix for coefficient {label or '?'} is not positive "
            f"definite beyond the nugget"
        )
    mu, sig2 = _profile_stats(chol, response)
    sig2 = max(sig2, 1e-24 * scale * scale)
    hyper = GaspHyper(mu=mu, lam=1.0 / sig2, alpha=alpha, beta=beta)
    resid = response - mu
    return GaspFit(hyper=hyper, design=design, response=response, chol=chol,
                   rinv_resid=cho_solve(chol, resid), rinv=cho_solve(chol, np.eye(K)),
                   nugget=opts.nugget, label=label)


def refit_frozen(fit: GaspFit, design: np.ndarray, response: np.ndarray) -> GaspFit:
    """Rebuild the factorizations for new data, keeping the hyperparameters."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    h = fit.hyper
    R = corr_matrix(design, h.alpha, h.beta, nugget=fit.nugget)
    try:
        chol = cho_factor(R, lower=True)
    except LinAlgError:
        raise ConditioningError("augmented correlation matrix is not positive definite")
    resid = response - h.mu
    return GaspFit(hyper=h, design=design, response=response, chol=chol,
                   rinv_resid=cho_solve(chol, resid),
                   rinv=cho_solve(chol, np.eye(len(response))),
                   nugget=fit.nugget, is_constant=fit.is_constant, label=fit.label)


def _check_range(z):
    if np.any(z < 0.0) or np.any(z > 1.0):
        log.warning("prediction point %s lies outside the unit design cube", np.round(z, 4))


def _design_row_match(design: np.ndarray, z: np.ndarray) -> int | None:
    hits = np.nonzero(np.all(np.abs(design - z[None, :]) <= 1e-12, axis=1))[0]
    return int(hits[0]) if hits.size else None


def predict(fit: GaspFit, z) -> tuple[float, float]:
    """Plug-in predictive mean and variance at a point of the design cube.

    At an exact design-row match the nugget-free interpolation answer is
    returned directly (the nugget is numerical regularization only, and its
    round-off amplification would otherwise leak into the mean).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    _check_range(z)
    mean, var = fit.ensemble().mean_var(z)
    return float(mean[0]), float(var[0])


def predictive_cov(fit: GaspFit, z1, z2) -> float:
    """Covariance of the predictive distribution between two points."""
    if fit.is_constant:
        return 0.0
    z1 = np.atleast_1d(np.asarray(z1, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    return float(fit.ensemble().cross_cov(z1, z2)[0])


def predict_augmented(fit: GaspFit, extra: tuple, z_new) -> tuple[float, float]:
    """Prediction after conditioning on one extra (point, value) pair.

    Hyperparameters stay frozen; the update is the exact Gaussian
    conditioning (Schur complement), which reproduces a refit of the
    (K+1)-point system to round-off.  If the extra point coincides with an
    existing design row the augmentation is skipped.
    """
    z_star, w_star = extra
    z_star = np.atleast_1d(np.asarray(z_star, dtype=float))
    z_new = np.atleast_1d(np.asarray(z_new, dtype=float))
    mean, var = fit.ensemble().augmented_mean_var(z_star, np.array([float(w_star)]), z_new)
    return float(mean[0]), float(var[0])


def loo_residuals(fit: GaspFit) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out residuals and Studentized residuals, hyperparameters frozen.

    Closed form via the inverse correlation matrix; identical to dropping
    each row and predicting it from the rest with the fitted parameters.
    """
    diag = np.diag(fit.rinv).copy()
    resid = fit.rinv_resid / diag
    var = 1.0 / (fit.hyper.lam * diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        student = np.where(var > 0, resid / np.sqrt(var), 0.0)
    return resid, student


class GaspEnsemble:
    """Vectorized evaluation across many fits sharing one design matrix.

    Stacks the per-fit hyperparameters and factorizations so that the mean
    and variance of every coefficient surrogate at a point come out of a few
    array operations.  Agrees with predict() fit by fit.
    """

    def __init__(self, fits):
        fits = list(fits)
        if not fits:
            raise ValueError("empty fit list")
        self.fits = fits
        self.design = fits[0].design
        for f in fits:
            if f.design.shape != self.design.shape or not np.array_equal(f.design, self.design):
                raise ValueError("all fits in an ensemble must share the design matrix")
        self.m = len(fits)
        self.K, self.d = self.design.shape
        self.alpha = np.stack([f.hyper.alpha for f in fits])
        self.beta = np.stack([f.hyper.beta for f in fits])
        self.mu = np.array([f.hyper.mu for f in fits])
        self.lam = np.array([f.hyper.lam for f in fits])
        self.nugget = np.array([f.nugget for f in fits])
        self.rinv = np.stack([f.rinv for f in fits])
        self.rinv_resid = np.stack([f.rinv_resid for f in fits])
        self.const = np.array([f.is_constant for f in fits])

    def corr_all(self, z: np.ndarray) -> np.ndarray:
        """Correlation of every fit's process between z and each design row."""
        diff = np.abs(self.design - z[None, :])  # (K, d)
        powed = diff[None, :, :] ** (2.0 - self.alpha[:, None, :])  # (m, K, d)
        return np.exp(-np.einsum("mkd,md->mk", powed, self.beta))

    def point_corr(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        diff = np.abs(z1 - z2)
        return np.exp(-np.sum(self.beta * diff[None, :] ** (2.0 - self.alpha), axis=1))

    def mean_var(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        k = _design_row_match(self.design, z)
        if k is not None:
            mean = np.array([f.response[k] for f in self.fits])
            var = np.clip(self.nugget * (1.0 - self.nugget * self.rinv[:, k, k]), 0.0, None) / self.lam
            mean = np.where(self.const, self.mu, mean)
            var = np.where(self.const, 0.0, var)
            return mean, var
        r = self.corr_all(z)
        mean = self.mu + np.einsum("mk,mk->m", r, self.rinv_resid)
        q = np.einsum("mk,mkl,ml->m", r, self.rinv, r)
        var = np.clip(1.0 - q, 0.0, None) / self.lam
        if self.const.any():
            mean = np.where(self.const, self.mu, mean)
            var = np.where(self.const, 0.0, var)
        return mean, var

    def cross_cov(self, z1, z2) -> np.ndarray:
        """Predictive covariance of each fit's process between two points."""
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        r1 = self.corr_all(z1)
        t2 = np.einsum("mkl,ml->mk", self.rinv, self.corr_all(z2))
        c = (self.point_corr(z1, z2) - np.einsum("mk,mk->m", r1, t2)) / self.lam
        return np.where(self.const, 0.0, c)

    def augmented_mean_var(self, z_star, w_star, z_new) -> tuple[np.ndarray, np.ndarray]:
        """Per-fit prediction at z_new conditioned on values w_star at z_star."""
        z_star = np.asarray(z_star, dtype=float)
        z_new = np.asarray(z_new, dtype=float)
        w_star = np.asarray(w_star, dtype=float)
        m_new, v_new = self.mean_var(z_new)
        if _design_row_match(self.design, z_star) is not None:
            return m_new, v_new
        m_star, v_star = self.mean_var(z_star)
        v_star_obs = v_star + self.nugget / self.lam
        if np.any(v_star_obs <= 0):
            raise ConditioningError("augmented point has nonpositive predictive variance")
        c = self.cross_cov(z_new, z_star)
        mean = m_new + c / v_star_obs * (w_star - m_star)
        var = np.clip(v_new - c * c / v_star_obs, 0.0, None)
        if self.const.any():
            mean = np.where(self.const, self.mu, mean)
            var = np.where(self.const, 0.0, var)
        return mean, var
