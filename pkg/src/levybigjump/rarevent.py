"""Single-big-jump decomposition: exact conditional samplers and stratified
rare-event estimators.

With negative mean drift (decay rate a > 0), the events {xi_t > 0} and
{tau_0 > t} are rare and essentially driven by one jump of size about a*t.
Conditioning on the number of such jumps is exact (Poisson counts, uniform
times, tail-restricted sizes), which turns each rare probability into a short
sum of non-rare conditional Monte Carlo problems.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .model import EstimatorError, FSpec, LevyModel
from .functional import McEstimate, MeanAccumulator
from .path import Path, sample_path, truncate_large
from .rngstream import CHUNK, RngStream, as_stream, chunk_ranges, map_chunks
from .stratify import StratifiedResult, stratified_estimate
from . import eventsim


@dataclass(frozen=True)
class BigJumpProposal:
    """A trajectory decomposed as base (no jump above threshold) plus one
    oversized jump at a uniform time."""

    threshold: float
    jump_time: float
    jump_size: float
    base_path: Path


@dataclass(frozen=True)
class LimitLawSample:
    """One draw of the limiting step process: jump time (equilibrium law of
    the passage time) and jump size in units of t (Pareto above the decay
    rate)."""

    jump_time: float
    jump_size: float


# -- exact conditional sampler ---------------------------------------------------


def sample_big_jump_proposal(model: LevyModel, start: float, t: float,
                             rng: RngStream | int,
                             step: float | None = None) -> BigJumpProposal:
    """Draw xi on [0, t] conditioned on exactly one jump larger than a*t.

    The construction is exact: an independent truncated path (band-limited
    jump sizes), one uniform jump time and one size from the normalized tail
    above a*t.
    """
    a = model.require_negative_mean()
    thr = a * t
    if thr < model.tail.x0:
        raise EstimatorError(
            f"big-jump threshold a*t={thr:g} is below the jump cutoff "
            f"x0={model.tail.x0:g}; increase t")
    rng = as_stream(rng)
    g = rng.generator()
    rate_small = model.tail.band_rate(model.tail.x0, thr)
    n_small = g.poisson(rate_small * t)
    times = np.sort(g.random(n_small)) * t
    sizes = np.atleast_1d(model.tail.sample_sizes(g.random(n_small),
                                                  model.tail.x0, thr))
    events = list(zip(times.tolist(), sizes.tolist()))
    if model.left_jumps is not None and model.left_jumps.rate > 0:
        nl = g.poisson(model.left_jumps.rate * t)
        lt = np.sort(g.random(nl)) * t
        ls = -g.exponential(model.left_jumps.mean, nl)
        events += list(zip(lt.tolist(), ls.tolist()))
    jump_time = float(g.random() * t)
    jump_size = float(model.tail.sample_sizes(g.random(), thr))
    events.append((jump_time, jump_size))
    step = step if step is not None else max(t / 512, 1e-3)
    sigma = model.effective_sigma()
    brownian = None
    if sigma > 0:
        from .path import _build_grid
        grid, _ = _build_grid(t, step, [e[0] for e in events])
        incs = g.normal(0.0, 1.0, grid.size - 1) * np.sqrt(np.diff(grid)) * sigma
        brownian = np.concatenate([[0.0], np.cumsum(incs)])
    composed = Path.from_events(start, model.drift, events, t, step=step,
                                sigma=sigma, brownian=brownian,
                                cutoff=model.tail.x0)
    base = truncate_large(composed, thr)
    return BigJumpProposal(thr, jump_time, jump_size, base)


def sample_given_one_big_jump(model: LevyModel, start: float, t: float,
                              rng: RngStream | int,
                              step: float | None = None) -> Path:
    """The composed path of :func:`sample_big_jump_proposal`."""
    prop = sample_big_jump_proposal(model, start, t, rng, step)
    events = [(j.time, j.size) for j in prop.base_path.jumps]
    events.append((prop.jump_time, prop.jump_size))
    # rebuild on the same grid; for sigma=0 this is exact reconstruction
    values = prop.base_path.values.copy()
    idx = np.searchsorted(prop.base_path.times, prop.jump_time, side="right") - 1
    values[idx:] += prop.jump_size
    from .path import JumpRecord
    jumps = tuple(sorted(prop.base_path.jumps + (JumpRecord(prop.jump_time,
                                                            prop.jump_size),),
                         key=lambda j: j.time))
    return Path(prop.base_path.t_end, prop.base_path.times, values, jumps,
                prop.base_path.start, prop.base_path.sigma,
                prop.base_path.cutoff)


# -- stratified estimators -------------------------------------------------------


def _finish(res: StratifiedResult, col: int, n: int, seed: int,
            flags: dict | None = None) -> McEstimate:
    return McEstimate(float(res.means[col]), float(res.stderr()[col]), n,
                      seed, strata=res.strata, flags=flags)


def estimate_p_xi_positive(model: LevyModel, t: float, n: int,
                           rng: RngStream | int, workers: int = 1) -> McEstimate:
    """Stratified P{xi_t > 0} with exact Poisson weights at threshold a*t."""
    a = model.require_negative_mean()
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "terminal",
                              {"op": "gt", "level": 0.0}, a * t,
                              workers=workers)
    return _finish(res, 0, n, rng.master_seed)


def estimate_p_xi_exceeds(model: LevyModel, t: float, level: float, n: int,
                          rng: RngStream | int, threshold: float | None = None,
                          workers: int = 1) -> McEstimate:
    """Stratified P{xi_t > level}; the threshold defaults to half the jump
    size needed to beat the drift and the level."""
    a = model.require_negative_mean()
    if threshold is None:
        threshold = 0.5 * (level + a * t)
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "terminal",
                              {"op": "gt", "level": level}, threshold,
                              workers=workers)
    return _finish(res, 0, n, rng.master_seed)


def estimate_p_xi_window(model: LevyModel, t: float, lo: float, hi: float,
                         n: int, rng: RngStream | int,
                         threshold: float | None = None,
                         workers: int = 1) -> McEstimate:
    """Stratified P{xi_t in [lo, hi)}."""
    a = model.require_negative_mean()
    if threshold is None:
        threshold = 0.5 * (lo + a * t)
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "terminal",
                              {"op": "window", "lo": lo, "hi": hi}, threshold,
                              workers=workers)
    return _finish(res, 0, n, rng.master_seed)


def estimate_p_tau_exceeds(model: LevyModel, x: float, t: float, n: int,
                           rng: RngStream | int, workers: int = 1) -> McEstimate:
    """Stratified P_x{tau_0 > t}: survival of the composed paths, with the
    passage time located exactly on each piecewise-linear trajectory."""
    if x <= 0:
        raise ValueError("starting level x must be positive")
    a = model.require_negative_mean()
    _require_linear(model)
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "survival", {"t_eval": t},
                              a * t, start=x, workers=workers)
    return _finish(res, 0, n, rng.master_seed)


def estimate_ef_stratified(model: LevyModel, f: FSpec, t: float, n: int,
                           rng: RngStream | int, gamma: float = 1.0,
                           workers: int = 1) -> McEstimate:
    """Stratified E[F(A_t(gamma * xi))] at threshold a*t."""
    a = model.require_negative_mean()
    _require_linear(model)
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "functional_f",
                              {"f": f, "gamma": gamma, "t_eval": t}, a * t,
                              value_bound=max(f.sup_value(), 1.0),
                              workers=workers)
    return _finish(res, 0, n, rng.master_seed)


def _require_linear(model: LevyModel):
    if not model.is_piecewise_linear:
        raise EstimatorError("path-level stratified estimators require "
                             "sigma = 0 (piecewise-linear trajectories)")


# -- naive oracles ---------------------------------------------------------------


def _naive_terminal_chunk(task):
    model, t, lo, hi, stream = task
    g = stream.generator()
    batch = eventsim.sample_event_batch(model, 0.0, t, hi - lo, g,
                                        need_times=False)
    pos = batch.terminal() > 0.0
    k = int(pos.sum())
    return float(k), float(k), hi - lo


def _naive_tau_chunk(task):
    model, x, t, lo, hi, stream = task
    g = stream.generator()
    batch = eventsim.sample_event_batch(model, x, t, hi - lo, g)
    st = eventsim.path_stats(batch)
    surv = st[:, 0] > t
    k = int(surv.sum())
    return float(k), float(k), hi - lo


def naive_p_xi_positive(model: LevyModel, t: float, n: int,
                        rng: RngStream | int, workers: int = 1) -> McEstimate:
    """Plain Monte Carlo P{xi_t > 0}; the expensive cross-check oracle."""
    rng = as_stream(rng)
    _require_linear(model)
    acc = MeanAccumulator()
    tasks = [(model, t, lo, hi, rng.substream(c))
             for c, lo, hi in chunk_ranges(n)]
    for part in map_chunks(_naive_terminal_chunk, tasks, workers):
        acc.add(*part)
    return McEstimate(float(acc.mean()[0]), float(acc.stderr()[0]), n,
                      rng.master_seed)


def naive_p_tau_exceeds(model: LevyModel, x: float, t: float, n: int,
                        rng: RngStream | int, workers: int = 1) -> McEstimate:
    """Plain Monte Carlo P_x{tau_0 > t}."""
    rng = as_stream(rng)
    _require_linear(model)
    acc = MeanAccumulator()
    tasks = [(model, x, t, lo, hi, rng.substream(c))
             for c, lo, hi in chunk_ranges(n)]
    for part in map_chunks(_naive_tau_chunk, tasks, workers):
        acc.add(*part)
    return McEstimate(float(acc.mean()[0]), float(acc.stderr()[0]), n,
                      rng.master_seed)


# -- limit laws ------------------------------------------------------------------


def pareto_overshoot_quantile(model: LevyModel, u):
    """Quantile of the limiting jump size law P{Z >= z} = (z/a)^(-alpha)."""
    a = model.require_negative_mean()
    return a * np.asarray(u, dtype=float) ** (-1.0 / model.tail.alpha)


def sample_limit_law(model: LevyModel, x: float, tau_samples, rng: RngStream | int,
                     size: int | None = None):
    """Draw from the limiting step process of the scaled conditioned path.

    The jump time follows the equilibrium law of the passage time from x
    (pick a sample with probability proportional to its value, then a uniform
    position inside it); the jump size is an independent Pareto above the
    decay rate, in units of t.
    """
    tau = np.asarray(tau_samples, dtype=float)
    if tau.size == 0:
        raise ValueError("tau_samples must be nonempty")
    if np.any(tau < 0):
        raise ValueError("tau_samples must be non-negative")
    g = as_stream(rng).generator()
    m = 1 if size is None else int(size)
    p = tau / tau.sum()
    idx = g.choice(tau.size, size=m, p=p)
    times = tau[idx] * g.random(m)
    sizes = pareto_overshoot_quantile(model, 1.0 - g.random(m))
    if size is None:
        return LimitLawSample(float(times[0]), float(sizes[0]))
    return [LimitLawSample(float(t_), float(s_)) for t_, s_ in zip(times, sizes)]


def scaled_path_distance(model: LevyModel, x: float, t: float, n: int,
                         rng: RngStream | int, T: float | None = None,
                         workers: int = 1) -> McEstimate:
    """E[sup_{s<=T} |xi_s/t - step(s)/t| | tau_0 > t] where step is the first
    big jump frozen into a step function; measures convergence to the limit."""
    a = model.require_negative_mean()
    _require_linear(model)
    T = t if T is None else T
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "survival_distance",
                              {"t_eval": t, "T": T, "t_scale": t}, a * t,
                              start=x, value_bound=2.0, workers=workers)
    value, stderr = res.ratio(1, 0)
    flags = {}
    hits = sum(s["hits"] for s in res.strata if s["k"] > 0)
    den = float(res.means[0])
    if den <= 0.0 or not math.isfinite(value):
        flags["zero_effective_samples"] = True
        value, stderr = float("nan"), float("nan")
    flags["conditioning_hits"] = hits
    return McEstimate(value, stderr, n, rng.master_seed, strata=res.strata,
                      flags=flags)


def size_biased_jump_check(model: LevyModel, x: float, b: float, T: float,
                           t: float, n: int, rng: RngStream | int,
                           tau_samples=None, tau_horizon: float | None = None,
                           workers: int = 1):
    """Compare P_x{first big jump > b*t, arriving by T | tau_0 > t} with its
    limit (b/a)^(-alpha) * E_x[tau_0 ^ T] / E_x[tau_0].

    Returns (lhs, rhs); the rhs Monte Carlo error is in lhs.flags.
    """
    a = model.require_negative_mean()
    if b < a:
        raise ValueError("b must be at least the decay rate a")
    _require_linear(model)
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "survival_bigjump",
                              {"t_eval": t, "b_level": b * t, "T": T}, a * t,
                              start=x, workers=workers)
    value, stderr = res.ratio(1, 0)
    flags = {}
    if tau_samples is None:
        from .fluctuation import sample_tau
        horizon = tau_horizon if tau_horizon is not None else max(50.0 / a, 20.0 * x)
        tau_samples, _ = sample_tau(model, x, horizon, n, rng.substream(999),
                                    workers=workers)
    tau = np.asarray(tau_samples, dtype=float)
    capped = np.minimum(tau, T)
    pareto = (b / a) ** (-model.tail.alpha)
    rhs = pareto * float(capped.mean() / tau.mean())
    # delta-method error of the sample ratio
    mt, mc = tau.mean(), capped.mean()
    if tau.size > 1:
        cov = np.cov(np.vstack([capped, tau]))
        var = (cov[0, 0] / mt**2 + mc**2 * cov[1, 1] / mt**4
               - 2 * mc * cov[0, 1] / mt**3) / tau.size
    else:
        var = 0.0
    flags["rhs_stderr"] = float(pareto * math.sqrt(max(var, 0.0)))
    flags["pareto_factor"] = pareto
    if res.means[0] <= 0:
        flags["zero_effective_samples"] = True
        value, stderr = float("nan"), float("nan")
    lhs = McEstimate(value, stderr, n, rng.master_seed, strata=res.strata,
                     flags=flags)
    return lhs, rhs


# -- the decay-rate coefficient (limit of E[F(A_t)] / nu_bar(a t)) ----------------


def _coef_samples(model, f, gamma, s_vals, T_big, floors, g):
    """Integrand samples F(A_s + exp(-gamma*(xi_s + J)) * A_Tbig(copy)),
    one column per tail floor of J."""
    n = s_vals.size
    s_max_here = float(s_vals.max()) if n else 0.0
    outer = eventsim.sample_event_batch(model, 0.0, s_max_here, n, g)
    a_s, xi_s = eventsim.functional_at(outer, gamma, s_vals)
    inner = eventsim.sample_event_batch(model, 0.0, T_big, n, g)
    a_hat, _ = eventsim.functional_marks(inner, gamma, [T_big])
    a_hat = a_hat[:, 0]
    u = g.random(n)
    cols = []
    for floor in floors:
        j = np.atleast_1d(model.tail.sample_sizes(u, max(floor, model.tail.x0)))
        expo = -gamma * (xi_s + j)
        corr = np.exp(np.minimum(expo, 700.0)) * a_hat
        cols.append(f.evaluate(np.maximum(a_s + corr, 1e-300)))
    return np.column_stack(cols)


def _coef_task(task):
    model, f, gamma, s_max, n_total, T_big, floors, lo, hi, stream = task
    g = stream.generator()
    h = s_max / n_total
    idx = np.arange(lo, hi, dtype=float)
    s_vals = (idx + g.random(hi - lo)) * h
    return _coef_samples(model, f, gamma, s_vals, T_big, floors, g)


def estimate_limit_coefficient(model: LevyModel, f: FSpec, T_big: float,
                               s_max: float, n: int, rng: RngStream | int,
                               gamma: float = 1.0, t_ref: float | None = None,
                               workers: int = 1) -> McEstimate:
    """Nested Monte Carlo of the limiting coefficient

        lim E[F(A_t)] / nu_bar(a t) = integral_0^inf E[C(s)] ds,

    where C(s) pastes an independent copy (over horizon T_big) onto the path
    at s through the conditional oversized-jump factor exp(-(xi_s + J)).

    The limit in t is replaced by a fixed reference: J is drawn from the jump
    law conditioned above a*t_ref (default 1e4/a).  At that scale the pasted
    term is below double precision, which is the point: the limit correction
    vanishes.  Sensitivity is reported at 2*t_ref in the flags.
    """
    a = model.require_negative_mean()
    _require_linear(model)
    issues = f.condition_issues()
    if issues:
        raise EstimatorError("test function violates the decay conditions: "
                             + "; ".join(issues))
    if n % 2:
        n += 1
    rng = as_stream(rng)
    t_ref = 1e4 / a if t_ref is None else t_ref
    floors = (a * t_ref, 2 * a * t_ref)
    tasks = [(model, f, gamma, s_max, n, T_big, floors, lo, hi,
              rng.substream(c)) for c, lo, hi in chunk_ranges(n)]
    samples = np.vstack(map_chunks(_coef_task, tasks, workers))
    h = s_max / n
    vals = samples.sum(axis=0) * h
    pairs = samples[0::2] - samples[1::2]
    se = h * math.sqrt(float((pairs * pairs).sum(axis=0)[0]) / 2.0)
    tail_est = float(samples[-max(n // 50, 1):, 0].mean()) * s_max / max(
        model.tail.alpha - 1.0, 1e-9)
    flags = {"t_ref": t_ref, "value_2tref": float(vals[1]),
             "truncation_tail_estimate": tail_est, "T_big": T_big,
             "s_max": s_max}
    return McEstimate(float(vals[0]), float(se), n, rng.master_seed, flags=flags)


def coefficient_integrand_samples(model: LevyModel, f: FSpec, s_values,
                                  T_bigs, rng: RngStream | int,
                                  gamma: float = 1.0,
                                  t_ref: float = 1e4) -> np.ndarray:
    """Fixed-seed integrand samples across several pasting horizons T_big;
    used to check that the truncated coefficient decreases in T_big."""
    rng = as_stream(rng)
    g = rng.generator()
    s_vals = np.asarray(s_values, dtype=float)
    n = s_vals.size
    a = model.require_negative_mean()
    outer = eventsim.sample_event_batch(model, 0.0, float(s_vals.max()), n, g)
    a_s, xi_s = eventsim.functional_at(outer, gamma, s_vals)
    T_bigs = sorted(T_bigs)
    inner = eventsim.sample_event_batch(model, 0.0, float(T_bigs[-1]), n, g)
    a_hat, _ = eventsim.functional_marks(inner, gamma, T_bigs)
    u = g.random(n)
    j = np.atleast_1d(model.tail.sample_sizes(u, max(a * t_ref, model.tail.x0)))
    out = np.empty((n, len(T_bigs)))
    for c in range(len(T_bigs)):
        expo = -gamma * (xi_s + j)
        corr = np.exp(np.minimum(expo, 700.0)) * a_hat[:, c]
        out[:, c] = f.evaluate(np.maximum(a_s + corr, 1e-300))
    return out
