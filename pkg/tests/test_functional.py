import math

import numpy as np
import pytest

from levybigjump import (
    FSpec,
    LevyModel,
    Path,
    RngStream,
    TailSpec,
    estimate_ef,
    eval_f,
    exp_functional,
    sample_path,
)
from levybigjump import eventsim, rarevent
from conftest import assert_within

# Frozen from the symbolic segment-integration oracle (sympy):
#   drift -1 from 0 with a +2 jump at s=1, gamma=1, horizon 2
#   -> integral = 2*sinh(1) = e - 1/e
SINGLE_JUMP_A2 = 2.3504023872876029
UP_DRIFT_A2 = 0.8646647167633873      # 1 - exp(-2)
CLASSICAL_SURVIVAL = 0.6321205588285577  # 1 - exp(-1)


def flat_path(value, t_end):
    return Path.from_events(value, 0.0, [], t_end)


class TestExpFunctional:
    def test_zero_path_identity(self):
        q = exp_functional(flat_path(0.0, 5.0), 5.0, 1.0)
        assert q.value == pytest.approx(5.0, abs=1e-12)
        assert q.abs_error_bound == 0.0

    def test_unit_up_drift(self):
        p = Path.from_events(0.0, 1.0, [], 2.0)
        q = exp_functional(p, 2.0, 1.0)
        assert q.value == pytest.approx(UP_DRIFT_A2, rel=1e-13)

    def test_single_jump_against_symbolic_oracle(self):
        p = Path.from_events(0.0, -1.0, [(1.0, 2.0)], 2.0)
        q = exp_functional(p, 2.0, 1.0)
        assert q.value == pytest.approx(SINGLE_JUMP_A2, rel=1e-13)

    def test_partial_horizon(self):
        p = Path.from_events(0.0, -1.0, [(1.0, 2.0)], 2.0)
        q = exp_functional(p, 1.0, 1.0)
        assert q.value == pytest.approx(math.e - 1.0, rel=1e-13)

    def test_out_of_range(self):
        p = flat_path(0.0, 1.0)
        with pytest.raises(ValueError):
            exp_functional(p, 2.0, 1.0)
        with pytest.raises(ValueError):
            exp_functional(p, 0.0, 1.0)

    def test_gamma_scaling_on_flat_path(self):
        q = exp_functional(flat_path(1.0, 3.0), 3.0, 2.0)
        assert q.value == pytest.approx(3.0 * math.exp(-2.0), rel=1e-13)

    def test_kernel_agrees_with_path_quadrature(self, m0):
        p = sample_path(m0, 0.0, 25.0, 1.0, RngStream(77))
        direct = exp_functional(p, 25.0, 1.0).value
        batch = eventsim.EventBatch(
            1, 25.0, 0.0, m0.drift,
            np.array([0, len(p.jumps)], dtype=np.int64),
            np.array([j.time for j in p.jumps]),
            np.array([j.size for j in p.jumps]))
        a, _ = eventsim.functional_marks(batch, 1.0, [25.0])
        assert a[0, 0] == pytest.approx(direct, rel=1e-10)

    def test_trapezoid_error_bound_for_brownian(self):
        m = LevyModel(-0.5, 1.0, TailSpec(2.0, 1.0, 0.0))
        p = sample_path(m, 0.0, 5.0, 0.01, RngStream(3))
        q = exp_functional(p, 5.0, 1.0)
        assert q.abs_error_bound > 0
        assert q.abs_error_bound < 0.05 * q.value


class TestExpFunctionalInvariants:
    def test_monotone_in_t(self, m0):
        p = sample_path(m0, 0.0, 20.0, 0.5, RngStream(11))
        vals = [exp_functional(p, t, 1.0).value for t in (1.0, 5.0, 10.0, 20.0)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_shift_law_exact(self, m0):
        p = sample_path(m0, 0.0, 10.0, 0.5, RngStream(12))
        shifted = Path(p.t_end, p.times, p.values + 0.7, p.jumps, p.start + 0.7,
                       p.sigma, p.cutoff)
        a0 = exp_functional(p, 10.0, 1.3).value
        a1 = exp_functional(shifted, 10.0, 1.3).value
        assert a1 == pytest.approx(math.exp(-1.3 * 0.7) * a0, rel=1e-12)

    def test_sandwich(self, m0):
        from levybigjump import running_extrema
        p = sample_path(m0, 0.0, 15.0, 0.5, RngStream(13))
        t, gamma = 15.0, 0.8
        a = exp_functional(p, t, gamma).value
        vals = p.values[p.times <= t]
        hi, lo = vals.max(), vals.min()
        assert t * math.exp(-gamma * hi) <= a <= t * math.exp(-gamma * lo)

    def test_small_t_inverse_moment_bounded(self, m0, rng):
        # E[A_t^-beta] * t^beta stays bounded as t -> 0
        beta, n = 0.5, 10_000
        caps = []
        for i, t in enumerate((0.01, 0.1, 1.0)):
            g = rng.substream(i).generator()
            batch = eventsim.sample_event_batch(m0, 0.0, t, n, g)
            a, _ = eventsim.functional_marks(batch, 1.0, [t])
            caps.append((a[:, 0] ** -beta).mean() * t ** beta)
        assert max(caps) < 1.5


class TestEvalF:
    def test_classical_survival_value(self):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        assert eval_f(f, 1.0) == pytest.approx(CLASSICAL_SURVIVAL, abs=1e-15)

    def test_vectorized(self):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        z = np.array([0.5, 1.0, 2.0])
        out = eval_f(f, z)
        assert out.shape == (3,)
        assert np.all(np.diff(out) < 0)


class TestEstimateEF:
    def test_deterministic_path_zero_variance(self, drift_only):
        # rate-0 drift -3: A_t = (exp(3t) - 1)/3 exactly, so F(A_t) is constant
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        est = estimate_ef(drift_only, f, 1.0, 500, RngStream(4))
        exact = f.evaluate((math.exp(3.0) - 1.0) / 3.0)
        assert est.value == pytest.approx(exact, rel=1e-12)
        assert est.stderr == pytest.approx(0.0, abs=1e-15)

    def test_n_floor(self, m0):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            estimate_ef(m0, f, 1.0, 50, RngStream(0))

    def test_naive_vs_stratified_cross_validation(self, m0, rng):
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        t = 50.0
        naive = estimate_ef(m0, f, t, 2_000_000, rng.substream(1))
        strat = rarevent.estimate_ef_stratified(m0, f, t, 100_000,
                                                rng.substream(2))
        comb = 3 * math.hypot(naive.stderr, strat.stderr)
        assert_within(strat.value, naive.value, comb,
                      "stratified vs naive E[F(A_t)]")

    def test_decay_bound_shape(self, m0, rng):
        # E[F(A_t)] <= C * nu(a t, inf): the normalized ratio stays bounded
        f = FSpec.cbre_survival(1.0, 1.0, 1.0)
        ratios = []
        for i, t in enumerate((25.0, 50.0, 100.0)):
            est = rarevent.estimate_ef_stratified(m0, f, t, 20_000,
                                                  rng.substream(3, i))
            ratios.append(est.value / m0.tail_mass(t))
        assert max(ratios) < 10.0
