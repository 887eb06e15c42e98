"""Stratified sampling over the exact Poisson law of big-jump counts.

Any functional of the path on [0, t] satisfies

    E[g(xi)] = sum_k P{K = k} * E[g(xi) | K = k],

where K is the number of jumps larger than a threshold in [0, t].  The
conditional law given K = k is sampled exactly: an unconditioned path with
jump sizes restricted to (x0, threshold], plus k jumps at iid uniform times
with sizes drawn from the jump law above the threshold.  Strata beyond the
adaptive cap are not sampled; their Poisson mass (times the value bound) goes
into the reported error budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import LevyModel
from .rngstream import CHUNK, RngStream, chunk_ranges, map_chunks
from . import eventsim

REL_TAIL = 1e-4   # unsampled Poisson mass allowed, relative to the estimate
KMAX = 40


# -- per-path value functions (registry keys keep chunk tasks picklable) -------


def _v_terminal(batch, bt, bs, p):
    big = bs.sum(axis=1) if bs.shape[1] else 0.0
    end = batch.terminal(big if bs.shape[1] else None)
    op = p.get("op", "gt")
    if op == "gt":
        out = end > p.get("level", 0.0)
    elif op == "ge":
        out = end >= p.get("level", 0.0)
    elif op == "window":
        out = (end >= p["lo"]) & (end < p["hi"])
    else:
        raise ValueError(f"unknown terminal op {op!r}")
    return out.astype(float)[:, None]


def _v_laplace_terminal(batch, bt, bs, p):
    big = bs.sum(axis=1) if bs.shape[1] else 0.0
    end = batch.terminal(big if bs.shape[1] else None)
    ind = end >= 0.0
    w = np.where(ind, np.exp(-p["lam"] * np.maximum(end, 0.0)), 0.0)
    return w[:, None]


def _v_survival(batch, bt, bs, p):
    st = eventsim.path_stats(batch, bt, bs)
    return (st[:, 0] > p["t_eval"]).astype(float)[:, None]


def _v_survival_laplace(batch, bt, bs, p):
    st = eventsim.path_stats(batch, bt, bs)
    surv = st[:, 0] > p["t_eval"]
    w = np.where(surv, np.exp(-p["lam"] * np.maximum(st[:, 1], -700 / p["lam"])), 0.0)
    return np.column_stack([surv.astype(float), w])


def _v_survival_bigjump(batch, bt, bs, p):
    st = eventsim.path_stats(batch, bt, bs)
    surv = (st[:, 0] > p["t_eval"]).astype(float)
    if bs.shape[1]:
        hit = (bs[:, 0] > p["b_level"]) & (bt[:, 0] <= p["T"])
        both = surv * hit
    else:
        both = np.zeros(batch.n)
    return np.column_stack([surv, both])


def _v_survival_distance(batch, bt, bs, p):
    st = eventsim.path_stats(batch, bt, bs)
    surv = (st[:, 0] > p["t_eval"]).astype(float)
    dist = eventsim.step_distance(batch, bt, bs, p["T"]) / p["t_scale"]
    return np.column_stack([surv, surv * dist])


def _v_symdiff_survival(batch, bt, bs, p):
    """Columns: 1{tau>t}, P{tau>J}, P{tau>J, tau>t}, P{tau>t, J>=tau}.

    For k >= 1 the first big jump J is explicit; for k = 0 it lies beyond t
    and is integrated out against its exponential clock (rate = big_rate),
    using the no-big-jump passage time simulated out to the batch horizon.
    """
    t = p["t_eval"]
    st = eventsim.path_stats(batch, bt, bs)
    tau = st[:, 0]
    surv_t = (tau > t).astype(float)
    if bs.shape[1]:
        jumpsurv = (tau > bt[:, 0]).astype(float)
        both = jumpsurv * surv_t
        sd2 = np.zeros(batch.n)  # J >= tau > t impossible when J <= t
    else:
        tau_c = np.minimum(tau, batch.t_end)
        clock = np.where(surv_t > 0, -np.expm1(-p["big_rate"] * (tau_c - t)), 0.0)
        jumpsurv = clock
        both = clock
        sd2 = np.where(surv_t > 0, np.exp(-p["big_rate"] * (tau_c - t)), 0.0)
    return np.column_stack([surv_t, jumpsurv, both, sd2])


def _v_functional_f(batch, bt, bs, p):
    a, _ = eventsim.functional_marks(batch, p["gamma"], [p["t_eval"]], bt, bs)
    vals = p["f"].evaluate(np.maximum(a[:, 0], 1e-300))
    return np.asarray(vals, dtype=float)[:, None]


def _v_reflected_cells(batch, bt, bs, p):
    st = eventsim.path_stats(batch, bt, bs)
    sup = np.maximum(st[:, 2], 0.0)
    gap = sup - st[:, 1]
    cols = [((sup <= x) & (gap <= y)).astype(float) for x, y in p["cells"]]
    return np.column_stack(cols)


# value function, and whether it needs event times (terminal-only statistics
# skip time sampling and per-path sorting entirely)
VALUE_FNS = {
    "terminal": (_v_terminal, False),
    "laplace_terminal": (_v_laplace_terminal, False),
    "survival": (_v_survival, True),
    "survival_laplace": (_v_survival_laplace, True),
    "survival_bigjump": (_v_survival_bigjump, True),
    "survival_distance": (_v_survival_distance, True),
    "symdiff_survival": (_v_symdiff_survival, True),
    "functional_f": (_v_functional_f, True),
    "reflected_cells": (_v_reflected_cells, True),
}


# -- driver --------------------------------------------------------------------


@dataclass(frozen=True)
class StratifiedResult:
    """Vector estimate over the Poisson strata with its covariance."""

    means: np.ndarray          # (m,)
    cov: np.ndarray            # (m, m) covariance of the estimator
    tail_bound: float          # unsampled Poisson mass * value bound
    strata: tuple              # per-stratum dicts
    threshold: float
    big_mass: float            # Poisson mean of the big-jump count
    n_per_stratum: int

    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov)) + self.tail_bound

    def ratio(self, num: int, den: int):
        """Delta-method value/stderr for means[num]/means[den]."""
        d = self.means[den]
        if d <= 0:
            return np.nan, np.nan
        r = self.means[num] / d
        g = np.zeros(self.means.size)
        g[num] = 1.0 / d
        g[den] = -r / d
        var = float(g @ self.cov @ g)
        return float(r), float(np.sqrt(max(var, 0.0))) + 2 * self.tail_bound / d


def _stratum_chunk(task):
    (model, start, horizon, t_cond, threshold, k, value_key, params,
     stream, n_chunk) = task
    fn, need_times = VALUE_FNS[value_key]
    g = stream.generator()
    lo = model.tail.x0
    batch = eventsim.sample_event_batch(model, start, horizon, n_chunk, g,
                                        band=(lo, threshold),
                                        need_times=need_times)
    bt, bs = eventsim.sample_big_jumps(model, t_cond, n_chunk, k, g, threshold,
                                       need_times=need_times)
    vals = fn(batch, bt, bs, params)
    s1 = vals.sum(axis=0)
    cross = vals.T @ vals
    hits = int(np.count_nonzero(np.abs(vals).sum(axis=1)))
    return s1, cross, vals.shape[0], hits


def stratified_estimate(model: LevyModel, t: float, n: int, rng: RngStream,
                        value_key: str, params: dict, threshold: float,
                        start: float = 0.0, horizon: float | None = None,
                        value_bound: float = 1.0, workers: int = 1,
                        rel_tail: float = REL_TAIL, kmax: int = KMAX,
                        ) -> StratifiedResult:
    """Estimate E[values(path on [0, horizon])] stratified by the number of
    jumps above ``threshold`` during [0, t], with n samples per stratum.

    Parameters
    ----------
    value_key : str
        Registry key of the per-path value function (m columns, all bounded
        by ``value_bound``).
    threshold : float
        Big-jump size cut; clamped to the jump cutoff from below.
    horizon : float, optional
        Sampling horizon for the base paths (defaults to t).  Strata weights
        always refer to the count on [0, t].
    """
    horizon = t if horizon is None else horizon
    threshold = max(threshold, model.tail.x0)
    lam = float(model.tail_mass(threshold)) * t if model.tail.scale > 0 else 0.0
    strata = []
    means, covs, weights = [], [], []
    k = 0
    while True:
        w = float(stats.poisson.pmf(k, lam)) if lam > 0 else (1.0 if k == 0 else 0.0)
        tasks = [(model, start, horizon, t, threshold, k, value_key, params,
                  rng.substream(k, c), hi - lo)
                 for c, lo, hi in chunk_ranges(n)]
        s1 = None
        cross = None
        nn = 0
        hits = 0
        for part in map_chunks(_stratum_chunk, tasks, workers):
            s1 = part[0] if s1 is None else s1 + part[0]
            cross = part[1] if cross is None else cross + part[1]
            nn += part[2]
            hits += part[3]
        mu = s1 / nn
        cov_k = (cross - nn * np.outer(mu, mu)) / max(nn - 1, 1)
        means.append(mu)
        covs.append(cov_k)
        weights.append(w)
        strata.append({"k": k, "weight": w, "n": nn, "hits": hits,
                       "mean": mu.tolist(),
                       "var": np.diag(cov_k).tolist()})
        tail = float(stats.poisson.sf(k, lam)) if lam > 0 else 0.0
        primary = abs(float(sum(wk * m[0] for wk, m in zip(weights, means))))
        if tail <= max(rel_tail * primary, 1e-14) or k >= kmax:
            break
        k += 1
    m = means[0].size
    est = np.zeros(m)
    cov = np.zeros((m, m))
    for wk, mu, ck, rec in zip(weights, means, covs, strata):
        est += wk * mu
        cov += wk * wk * ck / rec["n"]
    tail = float(stats.poisson.sf(k, lam)) if lam > 0 else 0.0
    return StratifiedResult(est, cov, tail * value_bound, tuple(strata),
                            threshold, lam, n)
