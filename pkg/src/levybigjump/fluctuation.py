"""Passage-time moments, renewal functions via occupation identities, and the
Laplace-transform limits they feed.

The renewal functions of the two ladder processes are recovered from the
time-integrated joint law of the running supremum and its reflection: the
occupation integral factorizes as c0 * V(x) * Vhat(y), so a rank-1 fit of the
estimated occupation matrix yields both functions up to one reciprocal scale
that cancels in every downstream formula.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import math
import warnings

import numpy as np

from .model import EstimatorError, LevyModel
from .functional import McEstimate, MeanAccumulator
from .rngstream import RngStream, as_stream, chunk_ranges, map_chunks
from .stratify import stratified_estimate
from . import eventsim


# -- passage times ---------------------------------------------------------------


def _tau_chunk(task):
    model, x, horizon, lo, hi, stream = task
    g = stream.generator()
    batch = eventsim.sample_event_batch(model, x, horizon, hi - lo, g)
    st = eventsim.path_stats(batch)
    return st[:, 0]


def sample_tau(model: LevyModel, x: float, horizon: float, n: int,
               rng: RngStream | int, workers: int = 1):
    """Exact passage times to (-inf, 0] from x, censored at the horizon.

    Returns (tau, censored): censored entries hold the horizon value.
    """
    if x <= 0:
        raise ValueError("starting level x must be positive")
    if not model.is_piecewise_linear:
        raise EstimatorError("passage-time sampling requires sigma = 0")
    rng = as_stream(rng)
    tasks = [(model, x, horizon, lo, hi, rng.substream(c))
             for c, lo, hi in chunk_ranges(n)]
    tau = np.concatenate(map_chunks(_tau_chunk, tasks, workers))
    censored = ~np.isfinite(tau) | (tau > horizon)
    return np.where(censored, horizon, tau), censored


def estimate_mean_tau(model: LevyModel, x: float, horizon: float, n: int,
                      rng: RngStream | int, workers: int = 1) -> McEstimate:
    """Mean passage time from x, horizon-censored.

    Censored paths contribute the horizon value (a lower bound), the censored
    fraction is reported, and above 10% censoring the estimate carries a
    horizon-too-short warning flag.
    """
    model.require_negative_mean()
    rng = as_stream(rng)
    tau, censored = sample_tau(model, x, horizon, n, rng, workers)
    acc = MeanAccumulator()
    acc.add_values(tau)
    frac = float(censored.mean())
    stderr = float(acc.stderr()[0]) + frac * horizon / math.sqrt(n)
    flags = {"censored_fraction": frac}
    if frac > 0.10:
        flags["horizon_warning"] = True
    return McEstimate(float(acc.mean()[0]), stderr, n, rng.master_seed,
                      flags=flags)


# -- occupation integrals and renewal functions -----------------------------------


def _occupation_chunk(task):
    model, horizon, xg, yg, lo, hi, stream, want_cov = task
    g = stream.generator()
    batch = eventsim.sample_event_batch(model, 0.0, horizon, hi - lo, g)
    full, late = eventsim.occupation_integrals(batch, xg, yg, horizon / 10.0)
    flat = full.reshape(full.shape[0], -1)
    s1 = flat.sum(axis=0)
    s2 = (flat * flat).sum(axis=0)
    cross = flat.T @ flat if want_cov else None
    return s1, s2, late.reshape(late.shape[0], -1).sum(axis=0), cross, hi - lo


def occupation_matrix(model: LevyModel, x_grid, y_grid, horizon: float,
                      n: int, rng: RngStream | int, workers: int = 1,
                      want_cov: bool = False):
    """Monte Carlo of integral_0^horizon P{S_s <= x, S_s - xi_s <= y} ds on a
    grid.  Returns (means, stderr, late_fraction, cov_or_None)."""
    model.require_negative_mean()
    if not model.is_piecewise_linear:
        raise EstimatorError("occupation integrals require sigma = 0")
    rng = as_stream(rng)
    xg = np.asarray(x_grid, dtype=float)
    yg = np.asarray(y_grid, dtype=float)
    if want_cov and xg.size * yg.size > 64:
        raise ValueError("covariance output limited to small grids")
    tasks = [(model, horizon, xg, yg, lo, hi, rng.substream(c), want_cov)
             for c, lo, hi in chunk_ranges(n)]
    s1 = s2 = late = cross = None
    nn = 0
    for part in map_chunks(_occupation_chunk, tasks, workers):
        s1 = part[0] if s1 is None else s1 + part[0]
        s2 = part[1] if s2 is None else s2 + part[1]
        late = part[2] if late is None else late + part[2]
        if want_cov:
            cross = part[3] if cross is None else cross + part[3]
        nn += part[4]
    mean = s1 / nn
    var = np.maximum(s2 - nn * mean**2, 0.0) / max(nn - 1, 1)
    stderr = np.sqrt(var / nn)
    with np.errstate(invalid="ignore", divide="ignore"):
        late_frac = np.where(s1 > 0, late / np.maximum(s1, 1e-300), 0.0)
    cov = None
    if want_cov:
        cov = (cross - nn * np.outer(mean, mean)) / max(nn - 1, 1) / nn
    shape = (xg.size, yg.size)
    return (mean.reshape(shape), stderr.reshape(shape),
            late_frac.reshape(shape), cov)


def estimate_occupation_product(model: LevyModel, x: float, y: float,
                                horizon: float | None = None, n: int = 10_000,
                                rng: RngStream | int = 0,
                                workers: int = 1) -> McEstimate:
    """Occupation integral at a single (x, y) cell, with a divergence guard on
    the last-decade contribution."""
    a = model.require_negative_mean()
    if x < 0 or y < 0:
        raise ValueError("x and y must be non-negative")
    if horizon is None:
        horizon = max(50.0 / a, 20.0 * max(x, y, 1.0))
    rng = as_stream(rng)
    mean, stderr, late, _ = occupation_matrix(model, [x], [y], horizon, n,
                                              rng, workers)
    flags = {"late_fraction": float(late[0, 0]), "horizon": horizon}
    if late[0, 0] > 0.05:
        flags["divergence_guard"] = True
    return McEstimate(float(mean[0, 0]), float(stderr[0, 0]), n,
                      rng.master_seed, flags=flags)


def _pava_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-decreasing sequences."""
    vals = []
    counts = []
    for v in y:
        vals.append(float(v))
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, c2 = vals.pop(), counts.pop()
            v1, c1 = vals.pop(), counts.pop()
            vals.append((v1 * c1 + v2 * c2) / (c1 + c2))
            counts.append(c1 + c2)
    out = np.empty(y.size)
    i = 0
    for v, c in zip(vals, counts):
        out[i:i + c] = v
        i += c
    return out


def c0_constant(model: LevyModel) -> float:
    """The occupation normalization constant.

    Any nonzero drift or Brownian part makes the time-t law atomless at 0, so
    the defining integral vanishes and the constant is exactly 1.
    """
    if (model.drift == 0 and model.effective_sigma() == 0
            and model.total_rate == 0):
        raise NotImplementedError("degenerate constant-zero process")
    return 1.0


@dataclass(frozen=True)
class RenewalEstimate:
    """Renewal functions of both ladder processes on a common grid."""

    grid: np.ndarray
    v: np.ndarray        # upward ladder renewal function V
    vhat: np.ndarray     # downward ladder renewal function Vhat
    c0: float
    horizon: float
    n: int
    model_hash: str
    iso_distance_v: float = 0.0
    iso_distance_vhat: float = 0.0
    stderr_scale: float = 0.0

    def v_at(self, x: float) -> float:
        return float(np.interp(x, self.grid, self.v))

    def vhat_at(self, y: float) -> float:
        return float(np.interp(y, self.grid, self.vhat))

    def header_dict(self) -> dict:
        return {"c0": self.c0, "horizon": self.horizon, "n": self.n,
                "model_hash": self.model_hash}

    def to_csv(self, fh) -> None:
        fh.write("x,V,Vhat\n")
        for x, v, w in zip(self.grid, self.v, self.vhat):
            fh.write(f"{x:.17g},{v:.17g},{w:.17g}\n")


def estimate_renewal(model: LevyModel, grid, horizon: float | None = None,
                     n: int = 20_000, rng: RngStream | int = 0,
                     workers: int = 1) -> RenewalEstimate:
    """Estimate V and Vhat by a rank-1 factorization of the occupation matrix.

    The split of the product V(x)*Vhat(y) into factors carries one free
    reciprocal scale; every downstream formula uses one factor of each, so
    the choice cancels.  Both factors are projected to be non-decreasing
    (pool-adjacent-violators), and the projection distances are reported.
    """
    a = model.require_negative_mean()
    grid = np.asarray(grid, dtype=float)
    if horizon is None:
        horizon = max(50.0 / a, 20.0 * float(grid.max()))
    rng = as_stream(rng)
    mean, stderr, late, _ = occupation_matrix(model, grid, grid, horizon, n,
                                              rng, workers)
    u, s, vt = np.linalg.svd(mean, full_matrices=False)
    v_raw = u[:, 0] * math.sqrt(s[0])
    w_raw = vt[0, :] * math.sqrt(s[0])
    if v_raw.sum() < 0:
        v_raw, w_raw = -v_raw, -w_raw
    v_raw = np.maximum(v_raw, 0.0)
    w_raw = np.maximum(w_raw, 0.0)
    v_iso = _pava_nondecreasing(v_raw)
    w_iso = _pava_nondecreasing(w_raw)
    return RenewalEstimate(
        grid, v_iso, w_iso, c0_constant(model), horizon, n,
        model.model_hash(),
        iso_distance_v=float(np.mean(np.abs(v_iso - v_raw))),
        iso_distance_vhat=float(np.mean(np.abs(w_iso - w_raw))),
        stderr_scale=float(np.mean(stderr)),
    )


# -- Laplace-transform limits ------------------------------------------------------


def laplace_limit_rhs(model: LevyModel, lam: float, x: float,
                      renewal: RenewalEstimate) -> float:
    """Limit value c0 * alpha * Vhat(x) * integral_0^inf exp(-lam*y) V(y) dy.

    The integral uses the trapezoid rule on the renewal grid plus a linear
    tail extrapolation of V; if the extrapolated part dominates, a warning is
    emitted.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    g, v = renewal.grid, renewal.v
    body = float(np.trapezoid(np.exp(-lam * g) * v, g))
    ymax = float(g[-1])
    k = max(2, g.size // 4)
    slope = float(np.polyfit(g[-k:], v[-k:], 1)[0])
    slope = max(slope, 0.0)
    tail = math.exp(-lam * ymax) * (v[-1] / lam + slope / lam**2)
    if tail > 0.25 * (body + tail):
        warnings.warn("renewal grid too short: tail extrapolation dominates "
                      "the Laplace quadrature", stacklevel=2)
    return renewal.c0 * model.tail.alpha * renewal.vhat_at(x) * (body + tail)


def laplace_positive_part(model: LevyModel, lam: float, t: float, n: int,
                          rng: RngStream | int, rhs_mode: str = "mc",
                          workers: int = 1):
    """lhs = E[exp(-lam*xi_t); xi_t >= 0] (stratified); rhs = its limit
    alpha/(a*lam) * P{xi_1 > a*t}.

    ``rhs_mode="mc"`` estimates the unit-time exceedance by a dedicated
    stratified run; ``"proxy"`` substitutes the tail mass (flagged).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    a = model.require_negative_mean()
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "laplace_terminal",
                              {"lam": lam}, a * t, workers=workers)
    flags = {}
    if rhs_mode == "proxy":
        p_level, p_err = float(model.tail_mass(a * t)), 0.0
        flags["rhs_proxy"] = True
    else:
        from .rarevent import estimate_p_xi_exceeds
        p = estimate_p_xi_exceeds(model, 1.0, a * t, n, rng.substream(7001),
                                  workers=workers)
        p_level, p_err = p.value, p.stderr
    factor = model.tail.alpha / (a * lam)
    rhs = factor * p_level
    flags["rhs_stderr"] = factor * p_err
    lhs = McEstimate(float(res.means[0]), float(res.stderr()[0]), n,
                     rng.master_seed, strata=res.strata, flags=flags)
    return lhs, rhs


def conditional_laplace_scaled(model: LevyModel, x: float, lam: float,
                               t: float, n: int, rng: RngStream | int,
                               workers: int = 1) -> McEstimate:
    """(a*t / P{xi_1 > a*t}) * E_x[exp(-lam*xi_t); tau_0 > t], the quantity
    whose large-t limit is the renewal quadrature of laplace_limit_rhs."""
    a = model.require_negative_mean()
    rng = as_stream(rng)
    res = stratified_estimate(model, t, n, rng, "survival_laplace",
                              {"lam": lam, "t_eval": t}, a * t, start=x,
                              workers=workers)
    raw, raw_err = float(res.means[1]), float(res.stderr()[1])
    from .rarevent import estimate_p_xi_exceeds
    p = estimate_p_xi_exceeds(model, 1.0, a * t, n, rng.substream(7003),
                              workers=workers)
    if p.value <= 0 or raw <= 0:
        return McEstimate(float("nan"), float("nan"), n, rng.master_seed,
                          flags={"zero_effective_samples": True})
    scale = a * t / p.value
    value = scale * raw
    rel = math.sqrt((raw_err / raw) ** 2 + (p.stderr / p.value) ** 2)
    return McEstimate(value, value * rel, n, rng.master_seed,
                      strata=res.strata,
                      flags={"p_xi1_exceeds": p.value,
                             "p_xi1_stderr": p.stderr})


def reflected_joint_cdf(model: LevyModel, t: float, x: float, y: float,
                        n: int, rng: RngStream | int,
                        workers: int = 1) -> McEstimate:
    """P{S_t <= x, S_t - xi_t <= y} by stratified Monte Carlo.

    The dominant paths carry one late jump landing near the terminal window,
    so the stratification threshold sits at half the typical drift depth.
    """
    a = model.require_negative_mean()
    rng = as_stream(rng)
    if math.isinf(x) and math.isinf(y):
        return McEstimate(1.0, 0.0, n, rng.master_seed)
    thr = max(0.5 * a * t, model.tail.x0)
    res = stratified_estimate(model, t, n, rng, "reflected_cells",
                              {"cells": [(x, y)]}, thr, workers=workers)
    return _mc_from(res, 0, n, rng.master_seed)


def reflected_joint_cells(model: LevyModel, t: float, cells, n: int,
                          rng: RngStream | int, workers: int = 1):
    """Joint CDF values for several (x, y) cells on shared paths."""
    a = model.require_negative_mean()
    rng = as_stream(rng)
    thr = max(0.5 * a * t, model.tail.x0)
    res = stratified_estimate(model, t, n, rng, "reflected_cells",
                              {"cells": list(cells)}, thr, workers=workers)
    err = res.stderr()
    return [McEstimate(float(res.means[i]), float(err[i]), n, rng.master_seed)
            for i in range(len(cells))]


def _mc_from(res, col, n, seed):
    return McEstimate(float(res.means[col]), float(res.stderr()[col]), n, seed,
                      strata=res.strata)


def local_probability_ratio(model: LevyModel, t: float, delta: float, x_grid,
                            n: int, rng: RngStream | int, workers: int = 1):
    """Per-x ratio of P{xi_t in [x, x+delta)} to t * P{xi_1 in [a*t+x, ...+delta)}.

    Both cell masses come from stratified runs sharing a stream, which
    correlates their errors and tightens the ratio.  Cells with no hits are
    flagged rather than divided.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    a = model.require_negative_mean()
    if model.effective_sigma() == 0 and model.total_rate == 0:
        raise EstimatorError("local probabilities need a diffuse terminal law "
                             "(drift-only models have point masses)")
    rng = as_stream(rng)
    from .rarevent import estimate_p_xi_window
    out = []
    for i, x in enumerate(np.asarray(x_grid, dtype=float)):
        if x + a * t <= 0:
            raise ValueError("grid point too deep in the bulk: need x > -a*t")
        sub = rng.substream(i)
        num = estimate_p_xi_window(model, t, x, x + delta, n, sub,
                                   workers=workers)
        den = estimate_p_xi_window(model, 1.0, a * t + x, a * t + x + delta, n,
                                   sub, workers=workers)
        entry = {"x": float(x), "num": num.value, "num_stderr": num.stderr,
                 "den": den.value, "den_stderr": den.stderr}
        if num.value <= 0 or den.value <= 0:
            entry["empty_cell"] = True
            entry["ratio"] = float("nan")
            entry["stderr"] = float("nan")
        else:
            r = num.value / (t * den.value)
            rel = math.sqrt((num.stderr / num.value) ** 2
                            + (den.stderr / den.value) ** 2)
            entry["ratio"] = r
            entry["stderr"] = r * rel
        out.append(entry)
    return out
