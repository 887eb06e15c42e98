import json
import math

import numpy as np
import pytest
from scipy import stats

from levybigjump import (
    RngStream,
    TrendReport,
    canonical_model,
    chisq_poisson,
    event_equivalence,
    ks_test,
    trend_check,
)
from levybigjump.verify import THEOREMS, symdiff_ratio


class TestKsTest:
    def test_exact_uniforms_pass(self):
        g = RngStream(60).generator()
        stat, p = ks_test(g.random(10_000), stats.uniform.cdf)
        assert p > 0.01

    def test_point_mass_rejected(self):
        stat, p = ks_test(np.full(100, 0.5), stats.uniform.cdf)
        assert stat == pytest.approx(0.5, abs=1e-12)
        assert p < 1e-6

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            ks_test(np.arange(10) / 10.0, stats.uniform.cdf)


class TestChisqPoisson:
    def test_null_draws_pass(self):
        g = RngStream(61).generator()
        counts = np.bincount(g.poisson(0.4, 100_000))
        stat, p = chisq_poisson(counts, 0.4)
        assert p > 0.01

    def test_rate_mismatch_rejected(self):
        g = RngStream(62).generator()
        counts = np.bincount(g.poisson(0.8, 100_000))
        _, p = chisq_poisson(counts, 0.4)
        assert p < 1e-10

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            chisq_poisson(np.zeros(5), 0.4)

    def test_small_sample_rejected(self):
        with pytest.raises(ValueError):
            chisq_poisson(np.array([500, 300]), 0.4)

    def test_degenerate_pooling_rejected(self):
        # rate so small that everything pools into one bin
        counts = np.array([100_000])
        with pytest.raises(ValueError, match="pooling"):
            chisq_poisson(counts, 1e-9)

    def test_null_calibration(self):
        # rejection rate at level 0.01 over many repetitions stays near 0.01
        g = RngStream(63).generator()
        rejections = 0
        reps = 1000
        for _ in range(reps):
            counts = np.bincount(g.poisson(0.4, 2000))
            _, p = chisq_poisson(counts, 0.4)
            rejections += p <= 0.01
        assert 0.001 * reps <= rejections <= 0.05 * reps

    def test_ks_null_calibration(self):
        g = RngStream(64).generator()
        rejections = 0
        reps = 1000
        for _ in range(reps):
            _, p = ks_test(g.random(500), stats.uniform.cdf)
            rejections += p <= 0.01
        assert 0.001 * reps <= rejections <= 0.05 * reps


class TestTrendCheck:
    def test_spec_example_toward_one(self):
        pts = [(25, 1.4, 0.01), (50, 1.2, 0.01), (100, 1.1, 0.01)]
        assert trend_check(pts, "toward_one").passed

    def test_flat_noisy_series_passes(self):
        pts = [(25, 1.00, 0.05), (50, 1.04, 0.05), (100, 0.98, 0.05)]
        assert trend_check(pts, "decreasing").passed
        assert trend_check(pts, "toward_one").passed

    def test_diverging_series_fails(self):
        pts = [(25, 1.1, 0.01), (50, 1.5, 0.01), (100, 2.2, 0.01)]
        assert not trend_check(pts, "toward_one").passed
        assert not trend_check(pts, "decreasing").passed

    def test_increasing_direction(self):
        pts = [(25, 0.5, 0.01), (50, 0.8, 0.01), (100, 0.95, 0.01)]
        assert trend_check(pts, "increasing").passed
        assert not trend_check(pts, "decreasing").passed

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            trend_check([(1, 1.0, 0.1), (2, 1.0, 0.1)], "decreasing")

    def test_deterministic_report(self):
        pts = [(25, 1.4, 0.01), (50, 1.2, 0.02), (100, 1.1, 0.03)]
        a = trend_check(pts, "toward_one", 2.0)
        b = trend_check(pts, "toward_one", 2.0)
        assert a == b
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


class TestSymdiffArithmetic:
    def test_identical_events_zero(self):
        assert symdiff_ratio(0.3, 0.3, 0.3, 0.3) == 0.0

    def test_disjoint_events(self):
        assert symdiff_ratio(0.2, 0.1, 0.0, 0.1) == pytest.approx(3.0)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            symdiff_ratio(0.2, 0.1, 0.0, 0.0)


class TestEventEquivalence:
    def test_bigjump_vs_positive_decreases(self, m0, rng):
        vals = []
        for i, t in enumerate((25.0, 50.0, 100.0)):
            est = event_equivalence(m0, t, 50_000, rng.substream(i),
                                    "bigjump_vs_positive")
            vals.append((t, est.value, est.stderr))
        assert all(b[1] < a[1] for a, b in zip(vals, vals[1:]))
        assert trend_check(vals, "decreasing").passed

    def test_unknown_pair_rejected(self, m0, rng):
        with pytest.raises(ValueError):
            event_equivalence(m0, 25.0, 1000, rng, "nope")


class TestTheoremRegistry:
    def test_exactly_eleven_entries(self):
        assert len(THEOREMS) == 11

    def test_expected_ids(self):
        assert set(THEOREMS) == {
            "jump-count-poisson", "jump-time-uniform", "positivity-rate",
            "passage-rate", "size-biased-jump", "event-equivalence",
            "laplace-positive", "conditional-laplace", "reflected-joint",
            "limit-coefficient", "cbre-regimes"}

    def test_every_entry_carries_a_claim(self):
        for tid, (claim, runner) in THEOREMS.items():
            assert isinstance(claim, str) and len(claim) > 10
            assert callable(runner)

    def test_runner_report_schema(self, m0):
        from levybigjump.verify import run_jump_count_poisson
        rep = run_jump_count_poisson(m0, seed=3, n=20_000)
        assert isinstance(rep, list)
        for r in rep:
            assert {"theorem_id", "test", "statistic", "p_or_slack",
                    "pass"} <= set(r)
