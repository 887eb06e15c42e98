import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levybigjump import (
    FSpec,
    LevyModel,
    ModelError,
    TailSpec,
    canonical_model,
    load_model,
    save_model,
    validate_heavy_tail_conditions,
)
from levybigjump.model import LeftJumpSpec


class TestTailMass:
    def test_power_law_evaluation(self, m0):
        assert m0.tail_mass(2.0) == pytest.approx(0.25, abs=1e-15)

    def test_boundary(self, m0):
        assert m0.tail_mass(1.0) == 1.0

    def test_below_cutoff_equals_total_rate(self, m0):
        assert m0.tail_mass(0.5) == m0.total_rate == 1.0

    def test_nonpositive_x_rejected(self, m0):
        with pytest.raises(ValueError):
            m0.tail_mass(0.0)
        with pytest.raises(ValueError):
            m0.tail_mass(-1.0)

    def test_monotone_on_grid(self, m0):
        xs = np.geomspace(0.1, 1e4, 200)
        vals = m0.tail_mass(xs)
        assert np.all(np.diff(vals) <= 0)

    @given(x=st.floats(1.0, 1e6), k=st.floats(1.0, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_scaling_law_constant_family(self, x, k):
        m = canonical_model()
        ratio = m.tail_mass(k * x) / m.tail_mass(x)
        assert ratio == pytest.approx(k ** -2.0, rel=1e-9)

    def test_log_power_monotone_and_invertible(self):
        tail = TailSpec(2.0, 1.0, 1.0, log_power=1.0)
        xs = np.geomspace(1.0, 1e5, 100)
        vals = tail.mass(xs)
        assert np.all(np.diff(vals) < 0)
        back = tail.invert(vals)
        assert np.allclose(back, xs, rtol=1e-9)

    def test_log_power_exceeding_alpha_rejected(self):
        with pytest.raises(ModelError):
            TailSpec(2.0, 1.0, 1.0, log_power=2.5)


class TestMeanDrift:
    def test_canonical(self, m0):
        # drift -3 plus rate-1 jumps of mean 2
        assert m0.mean_drift() == pytest.approx(-1.0, abs=1e-12)

    def test_pure_drift(self, drift_only):
        assert drift_only.mean_drift() == -3.0

    def test_brownian_part_is_centered(self):
        m = canonical_model(sigma=0.5)
        assert m.mean_drift() == pytest.approx(-1.0, abs=1e-12)

    def test_infinite_mean_jump_rejected(self):
        m = LevyModel(-3.0, 0.0, TailSpec(0.9, 1.0, 1.0))
        with pytest.raises(ModelError):
            m.mean_drift()

    def test_left_jumps_contribute(self):
        m = LevyModel(-3.0, 0.0, TailSpec(2.0, 1.0, 1.0),
                      left_jumps=LeftJumpSpec(rate=0.5, mean=1.0))
        assert m.mean_drift() == pytest.approx(-1.5, abs=1e-12)

    def test_log_power_mean_jump_against_quadrature(self):
        from scipy import integrate
        tail = TailSpec(2.0, 1.0, 1.0, log_power=1.0)
        direct, _ = integrate.quad(
            lambda y: float(tail.mass(y)), 1.0, np.inf, limit=400)
        expected = 1.0 * float(tail.mass(1.0)) + direct
        assert tail.tail_integral(1.0) == pytest.approx(expected, rel=1e-6)


class TestConditionsReport:
    def test_canonical_passes(self, m0):
        rep = validate_heavy_tail_conditions(m0)
        assert rep.ok
        assert rep.applicable["conditional_limit_theorems"]
        assert rep.applicable["cbre_subcritical"]

    def test_upward_mean_flags_rare_event_estimators(self):
        m = canonical_model(drift=-1.0)  # mean +1
        rep = validate_heavy_tail_conditions(m)
        assert not rep.negative_mean
        assert not rep.applicable["conditional_limit_theorems"]
        assert rep.applicable["cbre_supercritical"]

    def test_small_alpha_violates_tail_condition(self):
        m = LevyModel(-3.0, 0.0, TailSpec(0.9, 1.0, 1.0))
        rep = validate_heavy_tail_conditions(m)
        assert not rep.alpha_gt_one
        assert not rep.ok


class TestJumpSampling:
    def test_inverse_cdf_band(self, m0, rng):
        g = rng.generator()
        u = g.random(20000)
        sizes = m0.tail.sample_sizes(u, 1.0, 5.0)
        assert np.all(sizes >= 1.0) and np.all(sizes <= 5.0)
        # median of the band law: solve (1 - y^-2)/(1 - 25^-1) = 1/2
        med = np.median(sizes)
        target = math.sqrt(1.0 / (1.0 - 0.5 * (1 - 1 / 25)))
        assert med == pytest.approx(target, rel=0.02)

    def test_tail_sizes_pareto(self, m0, rng):
        g = rng.generator()
        sizes = m0.tail.sample_sizes(g.random(20000), 50.0)
        assert np.all(sizes >= 50.0)
        assert np.median(sizes) == pytest.approx(50.0 * math.sqrt(2), rel=0.02)

    def test_small_jump_variance_matches_quadrature(self):
        from scipy import integrate
        tail = TailSpec(2.0, 1.0, 1.0)
        v, _ = integrate.quad(lambda u: u * u * 2.0 * u ** -3.0, 0.25, 1.0)
        assert tail.small_jump_variance(0.25) == pytest.approx(v, rel=1e-9)


class TestModelIO:
    def test_round_trip(self, tmp_path, m0):
        p = tmp_path / "m.json"
        save_model(m0, p)
        again = load_model(p)
        assert again == m0
        assert again.model_hash() == m0.model_hash()

    def test_missing_field_named(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"drift": -3.0, "sigma": 0.0, "alpha": 2.0,
                                 "x0": 1.0}))
        with pytest.raises(ModelError, match="scale"):
            load_model(p)

    def test_wrong_type_named(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"drift": "fast", "sigma": 0.0, "alpha": 2.0,
                                 "x0": 1.0, "scale": 1.0}))
        with pytest.raises(ModelError, match="drift"):
            load_model(p)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ModelError, match="JSON"):
            load_model(p)

    def test_sv_round_trip(self, tmp_path):
        m = LevyModel(-3.0, 0.0, TailSpec(2.0, 1.0, 1.0, log_power=0.5))
        p = tmp_path / "m.json"
        save_model(m, p)
        assert load_model(p) == m


class TestFSpec:
    def test_cbre_survival_value(self):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        assert f.evaluate(1.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)

    def test_zero_mass_is_zero(self):
        f = FSpec.cbre_survival(0.0, 1.0, 1.0)
        assert f.evaluate(0.5) == 0.0
        assert f.evaluate(100.0) == 0.0

    def test_limits(self):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        assert f.evaluate(1e300) < 1e-290
        assert f.evaluate(1e-300) == pytest.approx(1.0)

    def test_domain(self):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            f.evaluate(0.0)
        with pytest.raises(ValueError):
            f.evaluate(-1.0)

    @given(z1=st.floats(1e-6, 1e6), z2=st.floats(1e-6, 1e6))
    @settings(max_examples=100, deadline=None)
    def test_non_increasing(self, z1, z2):
        f = FSpec.cbre_survival(1.5, 2.0, 0.5)
        lo, hi = min(z1, z2), max(z1, z2)
        assert f.evaluate(lo) >= f.evaluate(hi)

    def test_power_cutoff(self):
        f = FSpec.power_cutoff(0.5)
        assert f.evaluate(0.25) == 1.0
        assert f.evaluate(4.0) == 0.5

    def test_table_interpolation_clamps(self):
        f = FSpec.table([(1.0, 0.8), (10.0, 0.2)])
        assert f.evaluate(0.5) == 0.8
        assert f.evaluate(100.0) == pytest.approx(0.2)
        mid = f.evaluate(math.sqrt(10.0))
        assert mid == pytest.approx(0.5, abs=1e-12)

    def test_table_must_be_non_increasing(self):
        with pytest.raises(ValueError):
            FSpec.table([(1.0, 0.2), (2.0, 0.8)])

    def test_condition_issues_clean(self):
        assert FSpec.cbre_survival(1.0, 1.0, 1.0).condition_issues() == []
        assert FSpec.power_cutoff(0.3).condition_issues() == []
