import math

import numpy as np
import pytest
from scipy import stats

from levybigjump import (
    EstimatorError,
    FSpec,
    LevyModel,
    RngStream,
    TailSpec,
    canonical_model,
    count_large_jumps,
)
from levybigjump import fluctuation, rarevent
from conftest import assert_within


class TestBigJumpSampler:
    def test_exactly_one_big_jump(self, m0):
        t = 50.0
        for i in range(20):
            p = rarevent.sample_given_one_big_jump(m0, 0.0, t, RngStream(1, i),
                                                   step=t)
            assert count_large_jumps(p, t * 1.0, t) == 1  # a = 1

    def test_threshold_below_cutoff_rejected(self, m0):
        with pytest.raises(EstimatorError):
            rarevent.sample_given_one_big_jump(m0, 0.0, 0.5, RngStream(0))

    def test_upward_mean_rejected(self):
        m = canonical_model(drift=-1.0)
        with pytest.raises(EstimatorError):
            rarevent.sample_given_one_big_jump(m, 0.0, 50.0, RngStream(0))

    def test_base_path_has_no_big_jumps(self, m0):
        prop = rarevent.sample_big_jump_proposal(m0, 0.0, 50.0, RngStream(2),
                                                 step=50.0)
        assert all(j.size <= prop.threshold for j in prop.base_path.jumps)
        assert prop.jump_size > prop.threshold

    def test_jump_times_uniform(self, m0, rng):
        t, n = 50.0, 10_000
        times = np.array([
            rarevent.sample_big_jump_proposal(m0, 0.0, t, rng.substream(i),
                                              step=t).jump_time
            for i in range(n)])
        _, p = stats.kstest(times / t, "uniform")
        assert p > 0.01

    def test_jump_sizes_pareto(self, m0, rng):
        t, n = 50.0, 10_000
        sizes = np.array([
            rarevent.sample_big_jump_proposal(m0, 0.0, t,
                                              rng.substream(10_000 + i),
                                              step=t).jump_size
            for i in range(n)])
        _, p = stats.kstest((sizes / (1.0 * t)) ** -2.0, "uniform")
        assert p > 0.01

    def test_composition_is_base_plus_step(self, m0):
        prop = rarevent.sample_big_jump_proposal(m0, 0.0, 50.0, RngStream(3),
                                                 step=50.0)
        composed = rarevent.sample_given_one_big_jump(m0, 0.0, 50.0,
                                                      RngStream(3), step=50.0)
        step = prop.jump_size * (prop.base_path.times >= prop.jump_time)
        idx = np.searchsorted(prop.base_path.times, prop.jump_time,
                              side="right") - 1
        step[:idx] = 0.0  # left limit at the jump time stays on the base
        assert np.allclose(composed.values, prop.base_path.values + step,
                           atol=1e-10)


class TestPositivityEstimator:
    def test_matches_naive_at_t50(self, m0, rng):
        strat = rarevent.estimate_p_xi_positive(m0, 50.0, 100_000,
                                                rng.substream(1))
        naive = rarevent.naive_p_xi_positive(m0, 50.0, 2_000_000,
                                             rng.substream(2))
        comb = 4 * math.hypot(strat.stderr, naive.stderr)
        assert_within(strat.value, naive.value, comb, "P(xi_50 > 0)")

    def test_unbiased_where_naive_cheap(self, m0, rng):
        # t = 10: the event is not rare, so both estimators see it well
        strat = rarevent.estimate_p_xi_positive(m0, 10.0, 50_000,
                                                rng.substream(3))
        naive = rarevent.naive_p_xi_positive(m0, 10.0, 500_000,
                                             rng.substream(4))
        comb = 4 * math.hypot(strat.stderr, naive.stderr)
        assert_within(strat.value, naive.value, comb, "P(xi_10 > 0)")

    def test_k0_stratum_recorded(self, m0, rng):
        est = rarevent.estimate_p_xi_positive(m0, 50.0, 20_000,
                                              rng.substream(5))
        ks = [s["k"] for s in est.strata]
        assert ks[0] == 0 and 1 in ks
        w = {s["k"]: s["weight"] for s in est.strata}
        assert w[0] == pytest.approx(math.exp(-0.02), rel=1e-12)

    def test_requires_negative_mean(self):
        m = canonical_model(drift=-1.0)
        with pytest.raises(EstimatorError):
            rarevent.estimate_p_xi_positive(m, 50.0, 1000, RngStream(0))


class TestPassageEstimator:
    def test_drift_only_exact(self, drift_only, rng):
        # P_x{tau_0 > t} is 1 before x/a and 0 after; x=3, a=3
        before = rarevent.estimate_p_tau_exceeds(drift_only, 3.0, 0.5, 1000,
                                                 rng.substream(1))
        after = rarevent.estimate_p_tau_exceeds(drift_only, 3.0, 1.5, 1000,
                                                rng.substream(2))
        assert before.value == 1.0 and before.stderr == 0.0
        assert after.value == 0.0

    def test_matches_naive(self, m0, rng):
        strat = rarevent.estimate_p_tau_exceeds(m0, 1.0, 50.0, 100_000,
                                                rng.substream(3))
        naive = rarevent.naive_p_tau_exceeds(m0, 1.0, 50.0, 2_000_000,
                                             rng.substream(4))
        comb = 3 * math.hypot(strat.stderr, naive.stderr)
        assert_within(strat.value, naive.value, comb, "P_1(tau > 50)")

    def test_positive_start_required(self, m0):
        with pytest.raises(ValueError):
            rarevent.estimate_p_tau_exceeds(m0, -1.0, 50.0, 1000, RngStream(0))


class TestLimitLaw:
    def test_pareto_quantile_median(self, m0):
        # P{Z >= z} = (z/a)^-alpha: median at a * 2^(1/alpha) = sqrt(2)
        assert rarevent.pareto_overshoot_quantile(m0, 0.5) == \
            pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_jump_size_sampling(self, m0, rng):
        draws = rarevent.sample_limit_law(m0, 1.0, [1.0], rng, size=20_000)
        sizes = np.array([d.jump_size for d in draws])
        _, p = stats.kstest(sizes ** -2.0, "uniform")
        assert p > 0.01

    def test_degenerate_tau_gives_uniform_time(self, m0, rng):
        draws = rarevent.sample_limit_law(m0, 1.0, [1.0], rng.substream(1),
                                          size=20_000)
        times = np.array([d.jump_time for d in draws])
        _, p = stats.kstest(times, "uniform")
        assert p > 0.01

    def test_equilibrium_time_mean_identity(self, m0, rng):
        # size-biased pick then uniform position: E[T] = sum(tau^2)/(2 sum(tau))
        tau, _ = fluctuation.sample_tau(m0, 1.0, 200.0, 20_000,
                                        rng.substream(2))
        draws = rarevent.sample_limit_law(m0, 1.0, tau, rng.substream(3),
                                          size=50_000)
        times = np.array([d.jump_time for d in draws])
        target = float((tau @ tau) / (2.0 * tau.sum()))
        se = times.std(ddof=1) / math.sqrt(times.size)
        assert_within(times.mean(), target, 3 * se, "equilibrium mean")

    def test_empty_tau_rejected(self, m0, rng):
        with pytest.raises(ValueError):
            rarevent.sample_limit_law(m0, 1.0, [], rng)


class TestScaledPathDistance:
    def test_decreasing_along_ladder(self, m0, rng):
        # needs a solid sample: the conditioning hits at t=100 are scarce
        vals = []
        for i, t in enumerate((25.0, 100.0)):
            est = rarevent.scaled_path_distance(m0, 1.0, t, 400_000,
                                                rng.substream(i), T=5.0)
            vals.append(est)
        # late value below the early one at 95% confidence
        lo = vals[0].value - 2 * vals[0].stderr
        hi = vals[1].value + 2 * vals[1].stderr
        assert hi < lo

    def test_drift_only_flags_zero_effective_samples(self, drift_only, rng):
        est = rarevent.scaled_path_distance(drift_only, 1.0, 10.0, 1000,
                                            rng.substream(5), T=5.0)
        assert est.flags["zero_effective_samples"]
        assert math.isnan(est.value)


class TestSizeBiasedJumpCheck:
    def test_pareto_factor_exact(self, m0, rng):
        tau = np.array([1.0])
        lhs, rhs = rarevent.size_biased_jump_check(
            m0, 1.0, 2.0, 5.0, 100.0, 2000, rng, tau_samples=tau)
        assert lhs.flags["pareto_factor"] == 0.25

    def test_rhs_tends_to_one_for_large_T(self, m0, rng):
        tau, _ = fluctuation.sample_tau(m0, 1.0, 200.0, 20_000,
                                        rng.substream(1))
        _, rhs = rarevent.size_biased_jump_check(
            m0, 1.0, 1.0, 200.0, 100.0, 2000, rng.substream(2),
            tau_samples=tau)
        assert rhs == pytest.approx(1.0, abs=1e-9)

    def test_b_below_a_rejected(self, m0, rng):
        with pytest.raises(ValueError):
            rarevent.size_biased_jump_check(m0, 1.0, 0.5, 5.0, 100.0, 1000,
                                            rng)

    def test_agreement_at_t100(self, m0, rng):
        tau, _ = fluctuation.sample_tau(m0, 1.0, 200.0, 100_000,
                                        rng.substream(3))
        lhs, rhs = rarevent.size_biased_jump_check(
            m0, 1.0, 2.0, 5.0, 100.0, 100_000, rng.substream(4),
            tau_samples=tau)
        tol = 3 * math.hypot(lhs.stderr, lhs.flags["rhs_stderr"]) + 0.1
        assert_within(lhs.value, rhs, tol, "size-biased jump b=2a")


class TestLimitCoefficient:
    def test_zero_function_gives_zero(self, m0, rng):
        f_zero = FSpec.table([(0.1, 0.0), (10.0, 0.0)])
        est = rarevent.estimate_limit_coefficient(m0, f_zero, 20.0, 50.0,
                                                  2000, rng)
        assert est.value == 0.0

    def test_invalid_f_rejected(self, m0, rng):
        flat = FSpec.table([(0.1, 0.5), (1e9, 0.5)])  # does not vanish
        with pytest.raises(EstimatorError):
            rarevent.estimate_limit_coefficient(m0, flat, 20.0, 50.0, 2000,
                                                rng)

    def test_truncation_monotone_in_pasting_horizon(self, m0, rng):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        s_vals = np.linspace(0.5, 40.0, 256)
        # small reference scale: the pasted term is visible and strictly felt
        vis = rarevent.coefficient_integrand_samples(m0, f, s_vals,
                                                     [5.0, 10.0, 20.0],
                                                     rng.substream(1),
                                                     t_ref=10.0)
        means = vis.mean(axis=0)
        assert means[0] > means[1] > means[2]
        # default reference scale: correction below double precision, so the
        # truncated coefficients coincide (still non-increasing)
        dflt = rarevent.coefficient_integrand_samples(m0, f, s_vals,
                                                      [5.0, 10.0, 20.0],
                                                      rng.substream(1))
        dm = dflt.mean(axis=0)
        assert dm[0] == dm[1] == dm[2]

    def test_sensitivity_reported(self, m0, rng):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        est = rarevent.estimate_limit_coefficient(m0, f, 20.0, 100.0, 4000,
                                                  rng.substream(2))
        assert "value_2tref" in est.flags
        assert est.flags["value_2tref"] == est.value  # both corrections underflow
        assert est.flags["truncation_tail_estimate"] < 0.05 * est.value

    def test_strata_serialize(self, m0, rng):
        est = rarevent.estimate_p_xi_positive(m0, 25.0, 5000, rng)
        d = est.to_dict()
        assert {"value", "stderr", "n", "seed", "strata"} <= set(d)
        assert all({"k", "weight", "n", "hits"} <= set(s) for s in d["strata"])
