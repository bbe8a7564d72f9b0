import math

import numpy as np
import pytest
from scipy import integrate, stats

from curvecal import calibration as cal
from curvecal import emulator as em
from curvecal.errors import ConfigError
from curvecal.iodesign import IUMap, ParameterSpec, generate_lhd
from curvecal.wavelet import RetainedIndexSet


def _iumap(n_cal=1, n_var=1):
    entries = [ParameterSpec(f"u{i+1}", "calibration", 0.125, 0.875)
               for i in range(n_cal)]
    entries += [ParameterSpec(f"x{i+1}", "variation", 0.3529, 0.6471)
                for i in range(n_var)]
    return IUMap(entries=tuple(entries))


def _priors(n_cal=1, n_var=1, levels=(0, 1, 1), tau2_support=(0.0, math.inf)):
    return cal.PriorSpec(iumap=_iumap(n_cal, n_var), index_levels=np.array(levels),
                         tau2_support=tau2_support)


class TestFieldSummaries:
    def test_equal_replicates(self):
        s = cal.field_summaries(np.full((5, 3), 2.5))
        assert np.allclose(s.wbar, 2.5) and np.allclose(s.s2, 0.0)

    def test_hand_arithmetic(self):
        s = cal.field_summaries(np.array([[0.0], [2.0]]))
        assert s.wbar[0] == 1.0 and s.s2[0] == 2.0

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 11))
        s = cal.field_summaries(x)
        assert np.array_equal(s.wbar, x.mean(axis=0))
        expect = np.array([np.sum((x[:, i] - x[:, i].mean()) ** 2) for i in range(11)])
        assert np.allclose(s.s2, expect, atol=1e-14)

    def test_single_replicate_rejected(self):
        with pytest.raises(ValueError):
            cal.field_summaries(np.zeros((1, 3)))


class TestSampleSigma2:
    def test_mean_and_mode(self):
        rng = np.random.default_rng(42)
        draws = cal.sample_sigma2(4.0, 7, 100_000, rng)
        assert draws.mean() == pytest.approx(1.0, rel=0.01)
        kde = stats.gaussian_kde(draws[draws < 3.0])
        grid = np.linspace(0.2, 1.2, 501)
        mode = grid[np.argmax(kde(grid))]
        assert mode == pytest.approx(0.5, rel=0.05)

    def test_scale_family(self):
        d1 = cal.sample_sigma2(1.0, 7, 50_000, np.random.default_rng(1))
        d2 = cal.sample_sigma2(5.0, 7, 50_000, np.random.default_rng(1))
        assert np.allclose(d2, 5.0 * d1, rtol=1e-12)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            cal.sample_sigma2(0.0, 7, 10, np.random.default_rng(0))


def _stub_constant_fits(mus, design=None):
    """Fits whose prediction is exactly (mu, 0) everywhere."""
    design = design if design is not None else generate_lhd(6, 2, 1, seed=0).points
    return [em.fit_gasp(design, np.full(len(design), mu)) for mu in mus]


class TestLogMarginalLikelihood:
    def test_single_index_zero_contribution(self):
        # vhat = 0 (constant fit), sigma2/n = 1, tau2 = 0, wbar = mhat
        priors = _priors(levels=(0,))
        fits = _stub_constant_fits([1.7])
        summ = cal.FieldSummary(wbar=np.array([1.7]), s2=np.array([1.0]), n_rep=7)
        ll = cal.log_marginal_likelihood(np.zeros(1), np.array([0.5]), np.array([0.0]),
                                         np.array([7.0]), summ, fits, priors)
        assert ll == pytest.approx(0.0, abs=1e-12)

    def test_large_tau2_is_data_independent(self):
        priors = _priors(levels=(0, 0))
        fits = _stub_constant_fits([0.3, -0.4])
        tau2 = np.array([1e12])
        sigma2 = np.array([2.0, 3.0])
        lls = []
        for wbar in ([5.0, -2.0], [0.0, 0.1]):
            summ = cal.FieldSummary(wbar=np.array(wbar), s2=np.ones(2), n_rep=7)
            lls.append(cal.log_marginal_likelihood(np.zeros(1), np.array([0.5]),
                                                   tau2, sigma2, summ, fits, priors))
        assert lls[0] == pytest.approx(lls[1], abs=1e-9)
        assert lls[0] == pytest.approx(-np.log(1e12), abs=1e-9)

    def test_matches_quadrature_oracle(self):
        # One index: integrate the bias and model coefficient out numerically.
        rng = np.random.default_rng(3)
        design = generate_lhd(12, 2, 2, seed=5).points
        resp = np.sin(3 * design[:, 0]) + 0.5 * design[:, 1]
        fit = em.fit_gasp(design, resp, em.FitOptions(seed=1))
        priors = _priors(levels=(2,))
        summ = cal.FieldSummary(wbar=np.array([0.8]), s2=np.array([1.0]), n_rep=7)
        delta, u = np.array([0.05]), np.array([0.6])
        tau2, sigma2 = np.array([0.4]), np.array([0.7])

        ll = cal.log_marginal_likelihood(delta, u, tau2, sigma2, summ, [fit], priors)

        mhat, vhat = em.predict(fit, priors.z_unit(delta, u))
        s = sigma2[0] / 7.0

        def integrand(wb, wm):
            return (stats.norm.pdf(summ.wbar[0], wm + wb, math.sqrt(s))
                    * stats.norm.pdf(wm, mhat, math.sqrt(vhat))
                    * stats.norm.pdf(wb, 0.0, math.sqrt(tau2[0])))

        # integration box tight around each factor's own scale, or the
        # narrow surrogate spike is missed entirely
        wm_lo, wm_hi = mhat - 10 * math.sqrt(vhat) - 1e-6, mhat + 10 * math.sqrt(vhat) + 1e-6
        wb_hw = 10 * math.sqrt(tau2[0])
        val, err = integrate.dblquad(integrand, wm_lo, wm_hi, -wb_hw, wb_hw,
                                     epsabs=1e-12, epsrel=1e-10)
        expect = math.log(val) + 0.5 * math.log(2 * math.pi)  # constants dropped in ll
        assert ll == pytest.approx(expect, abs=1e-6)


class TestConditionalMoments:
    def test_tau2_zero_pins_bias(self):
        m2, v2 = cal.bias_conditional_moments(
            wbar=np.array([3.0]), mhat=np.array([1.0]), vhat=np.array([0.5]),
            sigma2=np.array([2.0]), n_rep=7, tau2_idx=np.array([0.0]))
        assert m2[0] == 0.0 and v2[0] == 0.0

    def test_vhat_zero_pins_model_coefficient(self):
        m1, v1 = cal.model_coeff_conditional_moments(
            wbar=np.array([3.0]), wb=np.array([0.2]), mhat=np.array([1.3]),
            vhat=np.array([0.0]), sigma2=np.array([2.0]), n_rep=7)
        assert m1[0] == 1.3 and v1[0] == 0.0

    def test_displayed_forms(self):
        wbar, mhat, vhat = 1.4, 0.9, 0.3
        sigma2, n, tau2, wb = 2.1, 7, 0.8, 0.25
        s = sigma2 / n
        m2, v2 = cal.bias_conditional_moments(wbar, mhat, vhat, sigma2, n,
                                              tau2_idx=tau2)
        assert m2 == pytest.approx(tau2 / (vhat + s + tau2) * (wbar - mhat))
        assert v2 == pytest.approx(tau2 * (vhat + s) / (vhat + s + tau2))
        m1, v1 = cal.model_coeff_conditional_moments(wbar, wb, mhat, vhat, sigma2, n)
        assert m1 == pytest.approx(vhat / (vhat + s) * (wbar - wb) + s / (vhat + s) * mhat)
        assert v1 == pytest.approx(vhat * s / (vhat + s))


class TestTauStep:
    def test_proposal_window(self):
        # From tau2 = 1 the proposal support is [e^-0.7, e^0.7].
        priors = _priors(levels=(0,), tau2_support=(1e-9, 1e9))
        problem = cal.CalibrationProblem(
            cal.FieldSummary(np.zeros(1), np.ones(1), 7), None, priors,
            flat_likelihood=True)
        state = problem.make_state(np.zeros(1), np.array([0.5]), np.ones(1), np.ones(1))
        rng = np.random.default_rng(0)
        lo, hi = math.exp(-0.7), math.exp(0.7)
        seen = []
        for _ in range(500):
            new, accepted = cal.mh_step_tau(problem, state, rng)
            if accepted:
                seen.append(new.tau2[0])
        assert seen and all(lo - 1e-12 <= t <= hi + 1e-12 for t in seen)

    def test_flat_likelihood_matches_prior_median(self):
        support = (0.2, 5.0)
        priors = _priors(levels=(0, 0), tau2_support=support)
        sigma2 = np.array([1.4, 0.6])  # sbar = 1.0 -> prior scale c = 1/7
        problem = cal.CalibrationProblem(
            cal.FieldSummary(np.zeros(2), np.ones(2), 7), None, priors,
            flat_likelihood=True)
        state = problem.make_state(np.zeros(1), np.array([0.5]), np.array([1.0]), sigma2)
        rng = np.random.default_rng(7)
        samples = []
        for i in range(300_000):
            state, _ = cal.mh_step_tau(problem, state, rng)
            if i % 5 == 0:
                samples.append(state.tau2[0])
        c = 1.0 / 7.0
        a, b = support
        # inverse cdf of the truncated reciprocal prior
        median = (a + c) * ((b + c) / (a + c)) ** 0.5 - c
        assert np.median(samples) == pytest.approx(median, rel=0.02)

    def test_three_bin_cross_flow_balance(self):
        # Reversible chains have balanced cross flows for any discretization
        # with 3+ cells (2 cells balance trivially along one trajectory).
        support = (0.3, 3.0)
        priors = _priors(levels=(0,), tau2_support=support)
        problem = cal.CalibrationProblem(
            cal.FieldSummary(np.zeros(1), np.ones(1), 7), None, priors,
            flat_likelihood=True)
        state = problem.make_state(np.zeros(1), np.array([0.5]), np.ones(1), np.ones(1))
        rng = np.random.default_rng(3)
        edges = [0.7, 1.4]
        prev_bin, counts = None, np.zeros((3, 3))
        for _ in range(60_000):
            state, _ = cal.mh_step_tau(problem, state, rng)
            b = int(np.searchsorted(edges, state.tau2[0]))
            if prev_bin is not None:
                counts[prev_bin, b] += 1
            prev_bin = b
        for i in range(3):
            for j in range(i + 1, 3):
                nij, nji = counts[i, j], counts[j, i]
                assert abs(nij - nji) <= 4.0 * math.sqrt(nij + nji) + 1


class TestDuStep:
    def test_local_interval_interior(self):
        assert cal._local_interval(0.5, 0.125, 0.875, 0.05) == (0.45, 0.55)

    def test_local_interval_boundary(self):
        lo, hi = cal._local_interval(0.13, 0.125, 0.875, 0.05)
        assert lo == 0.125 and hi == pytest.approx(0.18)

    def test_flat_likelihood_recovers_priors(self):
        priors = _priors(n_cal=1, n_var=1, levels=(0,))
        problem = cal.CalibrationProblem(
            cal.FieldSummary(np.zeros(1), np.ones(1), 7), None, priors,
            flat_likelihood=True)
        state = problem.make_state(np.zeros(1), np.array([0.5]), np.ones(1), np.ones(1))
        rng = np.random.default_rng(11)
        us, ds = [], []
        for i in range(40_000):
            state, _ = cal.mh_step_du(problem, state, rng)
            if i % 2 == 0:
                us.append(state.u[0])
                ds.append(state.delta[0])
        e = priors.iumap.entries
        u_cdf = stats.uniform(e[0].lo, e[0].hi - e[0].lo).cdf
        x5 = e[1]
        d_cdf = stats.truncnorm(-x5.trunc / x5.sd, x5.trunc / x5.sd, 0.0, x5.sd).cdf
        for p in (0.1, 0.5, 0.9):
            assert abs(u_cdf(np.quantile(us, p)) - p) <= 0.03
            assert abs(d_cdf(np.quantile(ds, p)) - p) <= 0.03


class TestRunMcmc:
    def _setup(self, seed=0, m=3):
        rng = np.random.default_rng(seed)
        design = generate_lhd(14, 2, 2, seed=3).points
        fits = [em.fit_gasp(design, np.sin((i + 2) * design[:, 0]) + design[:, 1],
                            em.FitOptions(seed=i)) for i in range(m)]
        summ = cal.FieldSummary(wbar=rng.normal(size=m), s2=rng.uniform(0.5, 2, m),
                                n_rep=7)
        priors = _priors(n_cal=1, n_var=1, levels=(0, 1, 1)[:m])
        return summ, fits, priors

    def test_sigma2_stream_is_modular(self):
        summ, fits, priors = self._setup()
        cfg = cal.McmcConfig(n_saved=20, thin=3, seed=5)
        d1 = cal.run_mcmc(summ, fits, priors, cfg)
        bumped = cal.FieldSummary(wbar=summ.wbar + 10.0, s2=summ.s2, n_rep=7)
        d2 = cal.run_mcmc(bumped, fits, priors, cfg)
        assert np.array_equal(d1.sigma2, d2.sigma2)

    def test_draws_respect_supports(self):
        summ, fits, priors = self._setup()
        draws = cal.run_mcmc(summ, fits, priors, cal.McmcConfig(n_saved=50, thin=5, seed=2))
        assert np.all(np.abs(draws.delta) <= priors.delta_trunc + 1e-12)
        assert np.all((draws.u >= priors.u_lo) & (draws.u <= priors.u_hi))
        assert np.all(draws.tau2 > 0)
        assert np.all(draws.sigma2 > 0)

    def test_deterministic(self):
        summ, fits, priors = self._setup()
        cfg = cal.McmcConfig(n_saved=10, thin=4, seed=9)
        d1 = cal.run_mcmc(summ, fits, priors, cfg)
        d2 = cal.run_mcmc(summ, fits, priors, cfg)
        assert np.array_equal(d1.to_matrix(), d2.to_matrix())

    def test_zero_s2_floored_with_warning(self, caplog):
        summ, fits, priors = self._setup()
        degen = cal.FieldSummary(wbar=summ.wbar, s2=np.array([0.0, 1.0, 1.0]), n_rep=7)
        with caplog.at_level("WARNING"):
            draws = cal.run_mcmc(degen, fits, priors,
                                 cal.McmcConfig(n_saved=5, thin=2, seed=1))
        assert "flooring" in caplog.text
        assert np.all(draws.sigma2[:, 0] > 0)

    def test_nonfinite_init_reports(self):
        summ, fits, priors = self._setup()
        bad = cal.FieldSummary(wbar=np.array([np.inf, 0.0, 0.0]), s2=np.ones(3), n_rep=7)
        with pytest.raises(ConfigError, match="initialization"):
            cal.run_mcmc(bad, fits, priors, cal.McmcConfig(n_saved=5, thin=2, seed=1))

    def test_joint_draw_accessor_aligned(self):
        summ, fits, priors = self._setup()
        draws = cal.run_mcmc(summ, fits, priors, cal.McmcConfig(n_saved=8, thin=2, seed=4))
        d = draws.draw(5)
        assert np.array_equal(d["wb"], draws.wb[5])
        assert np.array_equal(d["u"], draws.u[5])
        assert set(d) == {"wM", "wb", "delta", "u", "sigma2", "tau2"}
