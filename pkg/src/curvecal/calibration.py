"""Priors, likelihood, and the modularized MCMC over coefficients.

The analysis is deliberately modular: the per-coefficient noise variances
are sampled from the replicate sums of squares alone (inverse gamma), and
only the deviations, calibration values and level hypervariances go through
Metropolis-Hastings against the marginal likelihood in which the bias and
model coefficients have been integrated out.  Conditional on those, the
bias and model coefficients are normal and are drawn in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .emulator import GaspEnsemble
from .errors import ConfigError
from .iodesign import IUMap
from .wavelet import RetainedIndexSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldSummary:
    """Sufficient statistics of the field replicates, one entry per index."""

    wbar: np.ndarray  # replicate mean per retained coefficient
    s2: np.ndarray    # raw sum of squared deviations (not divided by n-1)
    n_rep: int

    def __post_init__(self):
        object.__setattr__(self, "wbar", np.asarray(self.wbar, dtype=float))
        object.__setattr__(self, "s2", np.asarray(self.s2, dtype=float))
        if self.n_rep < 2:
            raise ValueError("need at least 2 replicates for the noise statistics")
        if np.any(self.s2 < 0):
            raise ValueError("sums of squares must be nonnegative")

    @property
    def m(self) -> int:
        return len(self.wbar)


def field_summaries(field_coeffs: np.ndarray) -> FieldSummary:
    """Replicate mean and sum of squares per retained coefficient."""
    field_coeffs = np.asarray(field_coeffs, dtype=float)
    if field_coeffs.ndim != 2:
        raise ValueError("expected an n_rep x n_indices matrix")
    n_rep = field_coeffs.shape[0]
    if n_rep < 2:
        raise ValueError(f"need at least 2 replicates, got {n_rep}")
    wbar = field_coeffs.mean(axis=0)
    s2 = np.sum((field_coeffs - wbar) ** 2, axis=0)
    return FieldSummary(wbar=wbar, s2=s2, n_rep=n_rep)


def sample_sigma2(s2, n_rep: int, H: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of a noise variance given the replicate sum of squares.

    The density is proportional to (s2/sigma2 chi-square likelihood) times a
    1/sigma2 prior, i.e. inverse gamma with shape (n_rep - 1)/2 and rate
    s2/2.  For 7 replicates that is shape 3 with mean s2/4 and mode s2/8.
    """
    if n_rep < 2:
        raise ValueError("need n_rep >= 2")
    s2 = float(s2)
    if s2 <= 0:
        raise ValueError("s2 must be positive (apply a floor upstream for degenerate data)")
    shape = (n_rep - 1) / 2.0
    return 1.0 / rng.gamma(shape, scale=2.0 / s2, size=H)


def _sample_sigma2_matrix(s2: np.ndarray, n_rep: int, H: int,
                          rng: np.random.Generator) -> np.ndarray:
    shape = (n_rep - 1) / 2.0
    return 1.0 / rng.gamma(shape, scale=2.0 / s2[None, :], size=(H, len(s2)))


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass
class PriorSpec:
    """Priors for the deviations, calibration values, and hypervariances.

    Deviations get zero-mean truncated normals, calibration values uniforms
    over their ranges; the hypervariance prior is the conditional
    1 / (tau2 + sbar_level / n_rep) kernel, restricted to ``tau2_support``
    (unbounded by default; the prior is improper but the posterior proper).
    """

    iumap: IUMap
    index_levels: np.ndarray
    tau2_support: tuple[float, float] = (0.0, math.inf)
    index_labels: tuple[str, ...] = ()

    delta_sd: np.ndarray = field(init=False)
    delta_trunc: np.ndarray = field(init=False)
    u_lo: np.ndarray = field(init=False)
    u_hi: np.ndarray = field(init=False)
    levels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.index_levels = np.asarray(self.index_levels, dtype=int)
        if not self.index_labels:
            self.index_labels = tuple(f"i{k}" for k in range(len(self.index_levels)))
        elif len(self.index_labels) != len(self.index_levels):
            raise ConfigError("index_labels must match index_levels")
        var = self.iumap.variation_entries()
        cal = self.iumap.calibration_entries()
        self.delta_sd = np.array([e.sd for e in var])
        self.delta_trunc = np.array([e.trunc for e in var])
        self.u_lo = np.array([e.lo for e in cal])
        self.u_hi = np.array([e.hi for e in cal])
        self.levels = np.unique(self.index_levels)
        lo, hi = self.tau2_support
        if not (0.0 <= lo < hi):
            raise ConfigError(f"bad tau2 support [{lo}, {hi}]")

    @classmethod
    def from_iumap(cls, iumap: IUMap, keep: RetainedIndexSet,
                   tau2_support: tuple[float, float] = (0.0, math.inf)) -> "PriorSpec":
        return cls(iumap=iumap, index_levels=keep.levels(),
                   tau2_support=tau2_support, index_labels=tuple(keep.labels()))

    @property
    def n_delta(self) -> int:
        return len(self.delta_sd)

    @property
    def n_u(self) -> int:
        return len(self.u_lo)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def u_mid(self) -> np.ndarray:
        return 0.5 * (self.u_lo + self.u_hi)

    def z_unit(self, delta, u) -> np.ndarray:
        """Unit-cube surrogate input for given deviations and calibration values."""
        return self.iumap.to_unit(self.iumap.assemble(delta, u))

    def in_support(self, delta, u) -> bool:
        return bool(
            np.all(np.abs(delta) <= self.delta_trunc)
            and np.all((u >= self.u_lo) & (u <= self.u_hi))
        )

    def log_prior_delta_u(self, delta, u) -> float:
        """Unnormalized log prior; -inf outside the support box."""
        if not self.in_support(delta, u):
            return -math.inf
        return float(-0.5 * np.sum((delta / self.delta_sd) ** 2))

    def log_prior_tau2(self, tau2, sbar_level, n_rep: int) -> float:
        lo, hi = self.tau2_support
        tau2 = np.asarray(tau2, dtype=float)
        if np.any(tau2 < lo) or np.any(tau2 > hi) or np.any(tau2 <= 0):
            return -math.inf
        return float(-np.sum(np.log(tau2 + sbar_level / n_rep)))

    def sample_delta(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Truncated-normal prior draws of the deviation vector (rejection)."""
        n = self.n_delta
        shape = (n,) if size is None else (size, n)
        out = rng.normal(scale=self.delta_sd, size=shape)
        bad = np.abs(out) > self.delta_trunc
        while bad.any():
            out[bad] = rng.normal(scale=np.broadcast_to(self.delta_sd, shape)[bad])
            bad = np.abs(out) > self.delta_trunc
        return out

    def sbar_by_level(self, sigma2: np.ndarray) -> np.ndarray:
        """Average noise variance per active resolution level."""
        return np.array([sigma2[self.index_levels == j].mean() for j in self.levels])

    def tau2_per_index(self, tau2_by_level: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.levels, self.index_levels)
        return np.asarray(tau2_by_level, dtype=float)[pos]


# ---------------------------------------------------------------------------
# Conditional conjugate moments (bias and model-coefficient draws)
# ---------------------------------------------------------------------------

def bias_conditional_moments(wbar, mhat, vhat, sigma2, n_rep, tau2_idx):
    """Mean and variance of each bias coefficient given everything else."""
    a = np.asarray(vhat) + np.asarray(sigma2) / n_rep
    tau2_idx = np.asarray(tau2_idx, dtype=float)
    tot = a + tau2_idx
    with np.errstate(divide="ignore", invalid="ignore"):
        m2 = np.where(tot > 0, tau2_idx / tot, 0.0) * (np.asarray(wbar) - np.asarray(mhat))
        v2 = np.where(tot > 0, tau2_idx * a / tot, 0.0)
    return m2, v2


def model_coeff_conditional_moments(wbar, wb, mhat, vhat, sigma2, n_rep):
    """Mean and variance of each model coefficient given everything else."""
    vhat = np.asarray(vhat, dtype=float)
    s = np.asarray(sigma2, dtype=float) / n_rep
    tot = vhat + s
    mhat = np.asarray(mhat, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(tot > 0, vhat / tot, 0.0)
        m1 = frac * (np.asarray(wbar) - np.asarray(wb)) + (1.0 - frac) * mhat
        v1 = np.where(tot > 0, vhat * s / tot, 0.0)
    return m1, v1


# ---------------------------------------------------------------------------
# The Metropolis-Hastings machinery
# ---------------------------------------------------------------------------

@dataclass
class ChainState:
    """Current chain position with cached surrogate evaluations."""

    delta: np.ndarray
    u: np.ndarray
    tau2: np.ndarray          # one entry per active level
    sigma2: np.ndarray        # per index, fixed within a saved-draw block
    sbar_level: np.ndarray    # per active level, from sigma2
    mhat: np.ndarray          # surrogate mean per index at (delta, u)
    vhat: np.ndarray          # surrogate variance per index at (delta, u)
    log_like: float


class CalibrationProblem:
    """Bundles data, surrogates and priors for likelihood evaluation."""

    def __init__(self, summaries: FieldSummary, fits, priors: PriorSpec,
                 flat_likelihood: bool = False):
        self.summaries = summaries
        self.priors = priors
        self.flat = flat_likelihood
        self.m = summaries.m
        if len(priors.index_levels) != self.m:
            raise ValueError("index level map does not match the number of coefficients")
        self.ensemble = None if flat_likelihood else GaspEnsemble(fits)
        if self.ensemble is not None and self.ensemble.m != self.m:
            raise ValueError("number of fits does not match the number of coefficients")

    def gasp_at(self, delta, u) -> tuple[np.ndarray, np.ndarray]:
        if self.flat:
            z = np.zeros(self.m)
            return z, z
        return self.ensemble.mean_var(self.priors.z_unit(delta, u))

    def log_like(self, mhat, vhat, sigma2, tau2_by_level) -> float:
        """Marginal log likelihood with bias and model coefficients integrated out.

        Additive constants (the 2 pi factors) are dropped consistently.
        """
        if self.flat:
            return 0.0
        tv = vhat + sigma2 / self.summaries.n_rep + self.priors.tau2_per_index(tau2_by_level)
        if np.any(tv <= 0):
            raise FloatingPointError("nonpositive total variance in the marginal likelihood")
        dev = self.summaries.wbar - mhat
        return float(-0.5 * np.sum(np.log(tv) + dev * dev / tv))

    def make_state(self, delta, u, tau2, sigma2) -> ChainState:
        delta = np.asarray(delta, dtype=float)
        u = np.asarray(u, dtype=float)
        tau2 = np.asarray(tau2, dtype=float)
        sigma2 = np.asarray(sigma2, dtype=float)
        mhat, vhat = self.gasp_at(delta, u)
        ll = self.log_like(mhat, vhat, sigma2, tau2)
        return ChainState(delta=delta, u=u, tau2=tau2, sigma2=sigma2,
                          sbar_level=self.priors.sbar_by_level(sigma2),
                          mhat=mhat, vhat=vhat, log_like=ll)

    def set_block_sigma2(self, state: ChainState, sigma2: np.ndarray) -> ChainState:
        sigma2 = np.asarray(sigma2, dtype=float)
        sbar = self.priors.sbar_by_level(sigma2)
        ll = self.log_like(state.mhat, state.vhat, sigma2, state.tau2)
        return replace(state, sigma2=sigma2, sbar_level=sbar, log_like=ll)


def log_marginal_likelihood(delta, u, tau2, sigma2, summaries: FieldSummary,
                            fits, priors: PriorSpec) -> float:
    """One-shot marginal log likelihood (see CalibrationProblem.log_like)."""
    problem = CalibrationProblem(summaries, fits, priors)
    mhat, vhat = problem.gasp_at(np.asarray(delta, float), np.asarray(u, float))
    return problem.log_like(mhat, vhat, np.asarray(sigma2, float), np.asarray(tau2, float))


def mh_step_tau(problem: CalibrationProblem, state: ChainState,
                rng: np.random.Generator, half_width: float = 0.7) -> tuple[ChainState, bool]:
    """Joint log-uniform proposal for all level hypervariances.

    Each tau_j^2 is proposed reciprocally on [tau_j^2 e^-w, tau_j^2 e^w];
    the Hastings correction is the product of proposed/current values.
    """
    priors = problem.priors
    n_rep = problem.summaries.n_rep
    shift = rng.uniform(-half_width, half_width, size=len(state.tau2))
    proposal = state.tau2 * np.exp(shift)

    lp_new = priors.log_prior_tau2(proposal, state.sbar_level, n_rep)
    if not math.isfinite(lp_new):
        return state, False
    lp_old = priors.log_prior_tau2(state.tau2, state.sbar_level, n_rep)
    ll_new = problem.log_like(state.mhat, state.vhat, state.sigma2, proposal)
    hastings = float(np.sum(np.log(proposal) - np.log(state.tau2)))
    log_rho = (ll_new + lp_new) - (state.log_like + lp_old) + hastings
    if math.log(rng.uniform()) < log_rho:
        return replace(state, tau2=proposal, log_like=ll_new), True
    return state, False


def _local_interval(x: float, lo: float, hi: float, step: float) -> tuple[float, float]:
    return max(lo, x - step), min(hi, x + step)


def _mixture_logpdf(x: np.ndarray, cond: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                    step: float) -> float:
    """Log density of the per-coordinate 50-50 global/local uniform mixture."""
    total = 0.0
    for xi, ci, a, b in zip(x, cond, lo, hi):
        la, lb = _local_interval(ci, a, b, step)
        dens = 0.5 / (b - a)
        if la <= xi <= lb:
            dens += 0.5 / (lb - la)
        total += math.log(dens)
    return total


def mh_step_du(problem: CalibrationProblem, state: ChainState,
               rng: np.random.Generator, step: float = 0.05) -> tuple[ChainState, bool]:
    """Mixture proposal for deviations and calibration values.

    Per coordinate, half the mass proposes uniformly over the whole prior
    support and half uniformly over the support intersected with a +/- step
    window around the current value.
    """
    priors = problem.priors
    lo = np.concatenate((-priors.delta_trunc, priors.u_lo))
    hi = np.concatenate((priors.delta_trunc, priors.u_hi))
    cur = np.concatenate((state.delta, state.u))

    pick_local = rng.uniform(size=len(cur)) < 0.5
    unif = rng.uniform(size=len(cur))
    prop = np.empty_like(cur)
    for k in range(len(cur)):
        if pick_local[k]:
            a, b = _local_interval(cur[k], lo[k], hi[k], step)
        else:
            a, b = lo[k], hi[k]
        prop[k] = a + (b - a) * unif[k]

    nd = priors.n_delta
    delta_new, u_new = prop[:nd], prop[nd:]
    lp_new = priors.log_prior_delta_u(delta_new, u_new)
    if not math.isfinite(lp_new):
        return state, False
    lp_old = priors.log_prior_delta_u(state.delta, state.u)
    mhat_new, vhat_new = problem.gasp_at(delta_new, u_new)
    ll_new = problem.log_like(mhat_new, vhat_new, state.sigma2, state.tau2)
    hastings = (_mixture_logpdf(cur, prop, lo, hi, step)
                - _mixture_logpdf(prop, cur, lo, hi, step))
    log_rho = (ll_new + lp_new) - (state.log_like + lp_old) + hastings
    if math.log(rng.uniform()) < log_rho:
        return replace(state, delta=delta_new, u=u_new,
                       mhat=mhat_new, vhat=vhat_new, log_like=ll_new), True
    return state, False


# ---------------------------------------------------------------------------
# The sampler
# ---------------------------------------------------------------------------

@dataclass
class McmcConfig:
    n_saved: int = 1000
    thin: int = 200
    seed: int | None = None
    tau2_support: tuple[float, float] = (0.0, math.inf)
    flat_likelihood: bool = False
    tau_half_width: float = 0.7
    du_step: float = 0.05
    s2_floor_scale: float = 1e-12

    def __post_init__(self):
        if self.n_saved < 1 or self.thin < 1:
            raise ConfigError("n_saved and thin must be positive")


@dataclass
class PosteriorDraws:
    """Joint saved draws; components of one row are mutually consistent.

    The posterior over model coefficients, bias, inputs and variances is
    highly dependent, so consumers must only ever use aligned rows (the
    ``draw`` accessor), never independently resampled columns.
    """

    wM: np.ndarray
    wb: np.ndarray
    delta: np.ndarray
    u: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    levels: np.ndarray
    index_labels: list[str]
    delta_names: list[str]
    u_names: list[str]
    seed: int | None
    thin: int
    accept_tau: float
    accept_du: float

    @property
    def H(self) -> int:
        return self.wM.shape[0]

    @property
    def m(self) -> int:
        return self.wM.shape[1]

    def draw(self, h: int) -> dict:
        return {
            "wM": self.wM[h], "wb": self.wb[h], "delta": self.delta[h],
            "u": self.u[h], "sigma2": self.sigma2[h], "tau2": self.tau2[h],
        }

    def columns(self) -> list[str]:
        return (
            [f"delta.{n}" for n in self.delta_names]
            + [f"u.{n}" for n in self.u_names]
            + [f"tau2.level{j}" for j in self.levels]
            + [f"sigma2.{lab}" for lab in self.index_labels]
            + [f"wb.{lab}" for lab in self.index_labels]
            + [f"wM.{lab}" for lab in self.index_labels]
        )

    def to_matrix(self) -> np.ndarray:
        return np.column_stack((self.delta, self.u, self.tau2,
                                self.sigma2, self.wb, self.wM))


def run_mcmc(summaries: FieldSummary, fits, priors: PriorSpec,
             cfg: McmcConfig) -> PosteriorDraws:
    """The full modular sampler.

    Per saved draw h: fresh noise variances from their replicate-only
    posterior, ``thin`` cycles of the two Metropolis-Hastings substeps with
    the variances held fixed, then closed-form conditional draws of the bias
    and model coefficients.
    """
    seq = np.random.SeedSequence(cfg.seed)
    rng_sigma, rng_chain, rng_bias, rng_model = (np.random.default_rng(s) for s in seq.spawn(4))
    H, n_rep, m = cfg.n_saved, summaries.n_rep, summaries.m

    s2 = summaries.s2.copy()
    zero = s2 <= 0
    if zero.any():
        floor = cfg.s2_floor_scale * max(float(np.sum(summaries.wbar ** 2)) / m, 1e-300)
        log.warning("flooring %d zero replicate sums of squares at %.3e", zero.sum(), floor)
        s2[zero] = floor

    sigma2_draws = _sample_sigma2_matrix(s2, n_rep, H, rng_sigma)

    if cfg.tau2_support != (0.0, math.inf) and cfg.tau2_support != priors.tau2_support:
        priors = replace(priors, tau2_support=cfg.tau2_support)
    problem = CalibrationProblem(summaries, fits, priors, flat_likelihood=cfg.flat_likelihood)

    lo_t, hi_t = priors.tau2_support
    tau2_init = priors.sbar_by_level(sigma2_draws[0]) / n_rep
    if lo_t > 0:
        tau2_init = np.maximum(tau2_init, lo_t)
    if math.isfinite(hi_t):
        tau2_init = np.minimum(tau2_init, hi_t)
    try:
        state = problem.make_state(np.zeros(priors.n_delta), priors.u_mid(),
                                   tau2_init, sigma2_draws[0])
    except FloatingPointError as exc:
        raise ConfigError(f"non-finite posterior at initialization ({exc}); "
                          "start the chain from the prior medians") from exc
    if not math.isfinite(state.log_like):
        raise ConfigError("non-finite posterior at initialization; "
                          "start the chain from the prior medians")

    wM = np.empty((H, m))
    wb = np.empty((H, m))
    delta_s = np.empty((H, priors.n_delta))
    u_s = np.empty((H, priors.n_u))
    tau2_s = np.empty((H, priors.n_levels))
    acc_tau = acc_du = 0

    for h in range(H):
        state = problem.set_block_sigma2(state, sigma2_draws[h])
        for _ in range(cfg.thin):
            state, ok = mh_step_tau(problem, state, rng_chain, cfg.tau_half_width)
            acc_tau += ok
            state, ok = mh_step_du(problem, state, rng_chain, cfg.du_step)
            acc_du += ok
        tau2_idx = priors.tau2_per_index(state.tau2)
        m2, v2 = bias_conditional_moments(summaries.wbar, state.mhat, state.vhat,
                                          state.sigma2, n_rep, tau2_idx)
        wb[h] = m2 + np.sqrt(v2) * rng_bias.standard_normal(m)
        m1, v1 = model_coeff_conditional_moments(summaries.wbar, wb[h], state.mhat,
                                                 state.vhat, state.sigma2, n_rep)
        wM[h] = m1 + np.sqrt(v1) * rng_model.standard_normal(m)
        delta_s[h] = state.delta
        u_s[h] = state.u
        tau2_s[h] = state.tau2

    n_steps = H * cfg.thin
    var_names = [e.name for e in priors.iumap.variation_entries()]
    cal_names = [e.name for e in priors.iumap.calibration_entries()]
    return PosteriorDraws(
        wM=wM, wb=wb, delta=delta_s, u=u_s, sigma2=sigma2_draws, tau2=tau2_s,
        levels=priors.levels.copy(), index_labels=list(priors.index_labels),
        delta_names=var_names, u_names=cal_names,
        seed=cfg.seed, thin=cfg.thin,
        accept_tau=acc_tau / n_steps, accept_du=acc_du / n_steps,
    )
