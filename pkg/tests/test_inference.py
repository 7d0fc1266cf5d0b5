import numpy as np
import pytest

from synthconf.dgp import DgpSpec, make_matched_spec, simulate
from synthconf.errors import PanelError, SpecError
from synthconf.estimators import oracle_beta_horizontal
from synthconf.inference import (
    EstimateReport,
    ci_dr,
    ci_regression,
    critical_value,
    dr_variance_components,
    placebo_test,
    variance_horizontal,
    variance_vertical,
)
from synthconf.panel import HORIZONTAL, VERTICAL, AggregationWeights, Panel, TreatmentPattern, WeightSet


def zero_spec(pattern, seed, r=1, sigma_lambda=1.0, sigma_gamma=1.0, sigma_eps=1.0, gamma=0.0, lam=0.0):
    N, T = pattern.shape
    return DgpSpec(r=r, lambda_=np.full((T, r), lam), gamma=np.full((N, r), gamma),
                   sigma_lambda=sigma_lambda * np.eye(r), sigma_gamma=sigma_gamma * np.eye(r),
                   iota_unit=np.zeros(N), iota_time=np.zeros(T), sigma_eps=sigma_eps, tau=0.0,
                   pattern=pattern, seed=seed)


class TestCriticalValue:
    def test_normal(self):
        assert critical_value(0.95, critical="normal") == pytest.approx(1.959963984540054, abs=1e-12)
        assert critical_value(0.9) == pytest.approx(1.6448536269514722, abs=1e-12)

    def test_student_t(self):
        assert critical_value(0.95, 7) == pytest.approx(2.3646242510102993, abs=1e-9)
        assert critical_value(0.95, 7, "normal") == pytest.approx(1.959963984540054, abs=1e-12)

    @pytest.mark.parametrize("level", [0.0, 1.0, 1.5])
    def test_bad_level(self, level):
        with pytest.raises(SpecError):
            critical_value(level)

    def test_bad_rule(self):
        with pytest.raises(SpecError):
            critical_value(0.95, 5, "bootstrap")


class TestEstimateReport:
    def test_contains_estimate(self):
        with pytest.raises(SpecError):
            EstimateReport(1.0, 0.1, 1.2, 1.5, 0.95, "given_loadings", "horizontal")

    def test_tag(self):
        with pytest.raises(SpecError):
            EstimateReport(1.0, 0.1, 0.8, 1.2, 0.95, "given_nothing", "horizontal")

    def test_width_and_covers(self):
        rep = EstimateReport(1.0, 0.1, 0.8, 1.2, 0.95, "worst_case", "synthetic_did")
        assert rep.width == pytest.approx(0.4)
        assert rep.covers(0.8) and not rep.covers(1.21)
        assert rep.to_dict()["df"] is None


class TestVarianceHorizontal:
    def test_constant_post_zero(self):
        p = TreatmentPattern(5, 4, 2, 4)
        Y = np.zeros(p.shape)
        Y[:, p.n_pre:] = 3.7
        h = WeightSet.uniform(HORIZONTAL, 3, 4)
        assert variance_horizontal(Panel(Y, p), h) == 0.0

    def test_positive_iff_nonconstant(self, rng):
        p = TreatmentPattern(5, 4, 2, 4)
        h = WeightSet.uniform(HORIZONTAL, 3, 4)
        assert variance_horizontal(Panel(rng.normal(size=p.shape), p), h) > 0

    def test_needs_three_post_periods(self):
        p = TreatmentPattern(5, 4, 2, 2)
        with pytest.raises(PanelError, match="T1 >= 3"):
            variance_horizontal(Panel(np.zeros(p.shape), p), WeightSet.uniform(HORIZONTAL, 3, 2))

    def test_pure_noise_moment(self):
        p = TreatmentPattern(4, 4, 3, 10)
        q = np.array([0.5, 0.3, 0.2])
        g = np.random.default_rng(0)
        v = g.dirichlet(np.ones(p.n_post))
        h = WeightSet(HORIZONTAL, np.full(3, 1 / 3), v, 0.0, 1.0, 1.0)
        sigma = 1.7
        tiny = 1e-18
        draws = [variance_horizontal(simulate(zero_spec(p, (1, k), sigma_lambda=tiny, sigma_gamma=tiny,
                                                        sigma_eps=sigma))[0], h, q)
                 for k in range(2000)]
        target = sigma**2 * (q @ q) * (v @ v)
        assert np.mean(draws) == pytest.approx(target, rel=0.05)

    def test_one_factor_moment(self):
        p = TreatmentPattern(4, 4, 3, 10)
        q = AggregationWeights([0.6, 0.2, 0.2])
        h = WeightSet.uniform(HORIZONTAL, 3, 10)
        base = zero_spec(p, 0, sigma_lambda=2.0, gamma=1.0)
        gamma_tilde = simulate(base)[1].gamma_tilde
        G = (base.gamma + gamma_tilde)[p.n_controls:, 0]
        target = (h.v @ h.v) * ((q.q @ G) ** 2 * 2.0 + 1.0 * (q.q @ q.q))
        draws = [variance_horizontal(simulate(base.replace(seed=(2, k)), gamma_tilde=gamma_tilde)[0], h, q)
                 for k in range(2000)]
        assert np.mean(draws) == pytest.approx(target, rel=0.05)


class TestVarianceVertical:
    def test_constant_treated_zero(self):
        p = TreatmentPattern(4, 5, 3, 2)
        Y = np.zeros(p.shape)
        Y[p.n_controls:] = -2.0
        assert variance_vertical(Panel(Y, p), WeightSet.uniform(VERTICAL, 3, 3)) == 0.0

    def test_needs_three_treated(self):
        p = TreatmentPattern(4, 5, 2, 2)
        with pytest.raises(PanelError, match="N1 >= 3"):
            variance_vertical(Panel(np.zeros(p.shape), p), WeightSet.uniform(VERTICAL, 3, 2))

    def test_pure_noise_moment(self):
        p = TreatmentPattern(4, 4, 10, 3)
        q = np.array([0.2, 0.2, 0.6])
        v = WeightSet.uniform(VERTICAL, 3, 10)
        tiny = 1e-18
        draws = [variance_vertical(simulate(zero_spec(p, (3, k), sigma_lambda=tiny, sigma_gamma=tiny,
                                                      sigma_eps=0.5))[0], v, q)
                 for k in range(2000)]
        assert np.mean(draws) == pytest.approx(0.25 * (q @ q) * (v.v @ v.v), rel=0.05)

    def test_one_factor_moment(self):
        p = TreatmentPattern(4, 4, 10, 3)
        q = np.array([0.5, 0.25, 0.25])
        v = WeightSet.uniform(VERTICAL, 3, 10)
        base = zero_spec(p, 0, sigma_gamma=1.5, lam=0.5)
        lambda_tilde = simulate(base)[1].lambda_tilde
        L = (base.lambda_ + lambda_tilde)[p.n_pre:, 0]
        target = (v.v @ v.v) * ((q @ L) ** 2 * 1.5 + (q @ q))
        draws = [variance_vertical(simulate(base.replace(seed=(4, k)), lambda_tilde=lambda_tilde)[0], v, q)
                 for k in range(2000)]
        assert np.mean(draws) == pytest.approx(target, rel=0.05)


class TestCiRegression:
    def test_degenerate(self, fe_panel):
        panel, _, b = fe_panel(TreatmentPattern(6, 5, 2, 4), tau=0.0)
        p = panel.pattern
        # a constant time effect after treatment makes the post statistics constant
        Y = panel.outcomes.copy()
        Y[:, p.n_pre:] = Y[:, [p.n_pre]]
        rep = ci_regression(Panel(Y, p), WeightSet.uniform(HORIZONTAL, 4, 4))
        assert rep.se == 0.0
        assert rep.ci_low == rep.tau_hat == rep.ci_high
        assert rep.conditioning == "given_loadings"

    def test_half_width(self, rng):
        p = TreatmentPattern(6, 5, 3, 4)
        panel = Panel(rng.normal(size=p.shape), p)
        v = WeightSet.uniform(VERTICAL, 5, 3)
        for rule, df in (("t", 2), ("normal", float("inf"))):
            rep = ci_regression(panel, v, level=0.9, critical=rule)
            assert rep.conditioning == "given_factors"
            assert rep.df == df
            half = critical_value(0.9, 2, rule) * np.sqrt(variance_vertical(panel, v))
            assert rep.ci_high - rep.tau_hat == pytest.approx(half, rel=1e-12)
            assert rep.tau_hat - rep.ci_low == pytest.approx(half, rel=1e-12)

    def test_bad_method(self, rng):
        p = TreatmentPattern(6, 5, 3, 4)
        with pytest.raises(SpecError):
            ci_regression(Panel(rng.normal(size=p.shape), p), WeightSet.uniform(VERTICAL, 5, 3),
                          method="diagonal")

    def test_coverage_given_loadings(self):
        """Nominal coverage over redraws of factors and noise with loadings held fixed."""
        p = TreatmentPattern(8, 121, 4, 8)
        base = zero_spec(p, 0, r=2, sigma_lambda=1.0, sigma_gamma=1.0, gamma=1.0)
        base = base.replace(iota_time=np.linspace(0, 1, p.n_periods))
        base = make_matched_spec(base, HORIZONTAL)
        gamma_tilde = simulate(base)[1].gamma_tilde
        h = WeightSet.uniform(HORIZONTAL, p.n_pre, p.n_post)
        beta = oracle_beta_horizontal(base, h)
        reps = 1000
        hits = sum(ci_regression(simulate(base.replace(seed=(9, k)), gamma_tilde=gamma_tilde)[0], h,
                                 beta=beta).covers(0.0) for k in range(reps))
        assert 0.93 <= hits / reps <= 0.97

    def test_unmatched_factors_undercover(self):
        p = TreatmentPattern(31, 41, 8, 8)
        lam = np.r_[np.zeros(p.n_pre), np.ones(p.n_post)][:, None]
        base = zero_spec(p, 0, gamma=1.0).replace(lambda_=lam)
        h = WeightSet.uniform(HORIZONTAL, p.n_pre, p.n_post)
        reps = 300
        hits = sum(ci_regression(simulate(base.replace(seed=(10, k)))[0], h, beta=0.0).covers(0.0)
                   for k in range(reps))
        assert hits / reps < 0.90


class TestCiDr:
    def test_noiseless_fixed_effects(self, fe_panel):
        panel, _, _ = fe_panel(TreatmentPattern(6, 5, 3, 4), tau=2.0)
        rep = ci_dr(panel, WeightSet.uniform(HORIZONTAL, 4, 4), WeightSet.uniform(VERTICAL, 5, 3))
        assert rep.tau_hat == pytest.approx(2.0, abs=1e-12)
        assert rep.se == pytest.approx(0.0, abs=1e-7)
        assert rep.conditioning == "worst_case"

    def test_se_is_max_component(self, rng):
        p = TreatmentPattern(7, 6, 4, 5)
        panel = Panel(rng.normal(size=p.shape), p)
        h = WeightSet(HORIZONTAL, rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5)), 0.0, 1.0, 1.0)
        v = WeightSet(VERTICAL, rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(4)), 0.0, 1.0, 1.0)
        comp = dr_variance_components(panel, h, v)
        rep = ci_dr(panel, h, v)
        assert rep.se == np.sqrt(max(comp.values()))
        assert rep.variance_components == comp
        # recompute the components from their definitions
        D = v.v @ panel.treated_post - v.w @ panel.control_post
        E = panel.treated_post @ h.v - panel.treated_pre @ h.w
        assert comp["v_h_hat"] == pytest.approx((h.v @ h.v) * np.var(D, ddof=1), rel=1e-12)
        assert comp["v_v_hat"] == pytest.approx((v.v @ v.v) * np.var(E, ddof=1), rel=1e-12)

    def test_df_follows_larger_component(self, rng):
        p = TreatmentPattern(7, 6, 4, 5)
        Y = rng.normal(size=p.shape)
        Y[p.n_controls:] += 50 * rng.normal(size=(p.n_treated, 1))
        rep = ci_dr(Panel(Y, p), WeightSet.uniform(HORIZONTAL, 5, 5), WeightSet.uniform(VERTICAL, 6, 4))
        assert rep.df == p.n_treated - 1

    def test_needs_three_by_three(self):
        p = TreatmentPattern(6, 5, 2, 4)
        with pytest.raises(PanelError):
            ci_dr(Panel(np.zeros(p.shape), p), WeightSet.uniform(HORIZONTAL, 4, 4),
                  WeightSet.uniform(VERTICAL, 5, 2))


class TestPlaceboTest:
    def test_strictly_largest(self):
        taus = list(np.linspace(-1, 1, 19)) + [5.0]
        assert placebo_test(taus, 19) == pytest.approx(1 / 20)

    def test_all_equal(self):
        assert placebo_test([0.3] * 7, 2) == 1.0

    def test_ties_count_against(self):
        assert placebo_test([1.0, -2.0, 2.0, 0.5], 2) == pytest.approx(2 / 4)

    def test_errors(self):
        with pytest.raises(PanelError):
            placebo_test([1.0], 0)
        with pytest.raises(PanelError):
            placebo_test([1.0, 2.0], 2)

    def test_valid_under_exchangeability(self):
        g = np.random.default_rng(3)
        pvals = np.array([placebo_test(g.normal(size=20), 19) for _ in range(5000)])
        for k in range(1, 21):
            assert np.mean(pvals <= k / 20) <= k / 20 + 3 * np.sqrt(k / 20 * (1 - k / 20) / 5000) + 1e-12
        assert np.mean(pvals <= 0.10) <= 0.12
