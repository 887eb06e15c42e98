"""Bulk event-level simulation for piecewise-linear (sigma = 0) models.

Paths are stored as flat CSR-style event arrays (offsets into sorted jump
times/sizes per path).  Stratified estimators compose a "base" batch (jump
sizes restricted to a band) with per-path arrays of big jumps; the numba
kernels below merge the two streams on the fly and compute exact path
statistics: passage times, terminal values, extrema, exponential functionals,
occupation integrals.

Draw order inside a batch is fixed (counts, times, sizes, then the left-jump
block), which together with chunked stream assignment makes every estimator
reproducible and worker-count independent.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from .model import LevyModel


@dataclass
class EventBatch:
    """n flat paths: start + drift*t between jumps, jumps at (times, sizes)."""

    n: int
    t_end: float
    start: float
    drift: float
    offsets: np.ndarray  # int64, shape (n+1,)
    times: np.ndarray    # float64, sorted within each path
    sizes: np.ndarray    # float64

    def path_sums(self) -> np.ndarray:
        cs = np.concatenate(([0.0], np.cumsum(self.sizes)))
        return cs[self.offsets[1:]] - cs[self.offsets[:-1]]

    def terminal(self, extra: np.ndarray | None = None) -> np.ndarray:
        """xi at t_end (plus optional per-path extra jump mass)."""
        out = self.start + self.drift * self.t_end + self.path_sums()
        if extra is not None:
            out = out + extra
        return out


_EMPTY_BIG = np.zeros((0, 0))


def no_big(n: int) -> np.ndarray:
    return np.zeros((n, 0))


def _group_positions(offsets_total, starts_within, counts):
    """Flat target indices for placing per-path blocks of ``counts`` events."""
    m = int(counts.sum())
    base = np.repeat(offsets_total[:-1] + starts_within, counts)
    cum = np.concatenate(([0], np.cumsum(counts)[:-1]))
    ranks = np.arange(m, dtype=np.int64) - np.repeat(cum, counts)
    return base + ranks


def sample_event_batch(model: LevyModel, start: float, t: float, n: int,
                       g: np.random.Generator,
                       band: tuple[float, float | None] | None = None,
                       need_times: bool = True) -> EventBatch:
    """Sample n paths of the jump part on [0, t], sizes restricted to ``band``.

    ``band=(lo, hi)`` keeps jumps with size in (lo, hi]; ``hi=None`` means no
    upper cut; ``band=None`` keeps everything.  Left jumps (if configured) are
    merged into the same event stream with negative sizes.  Terminal-only
    statistics can skip time sampling entirely with ``need_times=False``.
    """
    lo, hi = (model.tail.x0, None) if band is None else band
    rate = model.tail.band_rate(lo, hi)
    left = model.left_jumps if (model.left_jumps is not None
                                and model.left_jumps.rate > 0) else None
    counts_r = g.poisson(rate * t, n) if rate > 0 else np.zeros(n, np.int64)
    counts_l = g.poisson(left.rate * t, n) if left else np.zeros(n, np.int64)
    counts = counts_r + counts_l
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    m_total = int(offsets[-1])
    tt = np.zeros(m_total) if need_times else np.zeros(0)
    ss = np.empty(m_total)
    m_r = int(counts_r.sum())
    if m_r:
        pos = _group_positions(offsets, np.zeros(n, np.int64), counts_r)
        if need_times:
            tt[pos] = g.random(m_r) * t
        ss[pos] = np.atleast_1d(model.tail.sample_sizes(g.random(m_r), lo, hi))
    if left:
        m_l = int(counts_l.sum())
        if m_l:
            pos = _group_positions(offsets, counts_r, counts_l)
            if need_times:
                tt[pos] = g.random(m_l) * t
            ss[pos] = -g.exponential(left.mean, m_l)
    if need_times and m_total:
        _cosort_events(offsets, tt, ss)
    return EventBatch(n, float(t), float(start), model.drift, offsets, tt, ss)


def sample_big_jumps(model: LevyModel, t: float, n: int, k: int,
                     g: np.random.Generator, threshold: float,
                     need_times: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """k conditional big jumps per path: iid uniform times (sorted rows) and
    iid sizes from the jump law restricted above ``threshold``."""
    if k == 0:
        return no_big(n), no_big(n)
    if need_times:
        bt = np.sort(g.random((n, k)) * t, axis=1)
    else:
        bt = np.zeros((n, k))
    bs = np.atleast_1d(model.tail.sample_sizes(g.random(n * k), threshold))
    return np.ascontiguousarray(bt), np.ascontiguousarray(bs.reshape(n, k))


# -- numba kernels -------------------------------------------------------------


@njit(cache=True)
def _cosort_events(offsets, times, sizes):
    """Sort each path's events by time in place (sizes follow)."""
    n = offsets.shape[0] - 1
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        if hi - lo > 1:
            order = np.argsort(times[lo:hi])
            times[lo:hi] = times[lo:hi][order]
            sizes[lo:hi] = sizes[lo:hi][order]


@njit(cache=True)
def _path_stats(offsets, times, sizes, bt, bs, start, drift, t_end, out):
    """Per path: [tau, xi(t_end), sup xi, inf xi], exact for piecewise lines.

    tau is the first time xi <= 0 (np.inf if none before t_end); sup/inf are
    over [0, t_end] of xi itself (callers apply the 0-caps).
    """
    n = offsets.shape[0] - 1
    k = bt.shape[1]
    for i in range(n):
        v = start
        prev = 0.0
        tau = np.inf
        hi = start
        lo_ = start
        if v <= 0.0:
            tau = 0.0
        jb = offsets[i]
        je = offsets[i + 1]
        kb = 0
        while jb < je or kb < k:
            if kb >= k or (jb < je and times[jb] <= bt[i, kb]):
                tj = times[jb]
                sz = sizes[jb]
                jb += 1
            else:
                tj = bt[i, kb]
                sz = bs[i, kb]
                kb += 1
            left = v + drift * (tj - prev)
            if left < lo_:
                lo_ = left
            if left > hi:
                hi = left
            if left <= 0.0 and tau == np.inf and drift < 0.0:
                tau = prev + v / (-drift)
            v = left + sz
            if v > hi:
                hi = v
            if v < lo_:
                lo_ = v
            if v <= 0.0 and tau == np.inf:
                tau = tj
            prev = tj
        left = v + drift * (t_end - prev)
        if left < lo_:
            lo_ = left
        if left > hi:
            hi = left
        if left <= 0.0 and tau == np.inf and drift < 0.0:
            tau = prev + v / (-drift)
        out[i, 0] = tau
        out[i, 1] = left
        out[i, 2] = hi
        out[i, 3] = lo_


@njit(cache=True)
def _clip_exp(e):
    if e > 700.0:
        e = 700.0
    return math.exp(e)


@njit(cache=True)
def _seg_integral(v, d, dt, gamma):
    """integral over the segment of exp(-gamma * (v + d*s)) ds for s in [0, dt]."""
    if dt <= 0.0:
        return 0.0
    if d == 0.0:
        return dt * _clip_exp(-gamma * v)
    a = _clip_exp(-gamma * v)
    b = _clip_exp(-gamma * (v + d * dt))
    return (a - b) / (gamma * d)


@njit(cache=True)
def _functional_marks(offsets, times, sizes, bt, bs, start, drift, gamma,
                      marks, out_a, out_v):
    """A_m = integral_0^m exp(-gamma*xi) and xi at each mark, per path.

    marks must be ascending; events beyond the last mark are ignored.
    """
    n = offsets.shape[0] - 1
    k = bt.shape[1]
    nm = marks.shape[0]
    for i in range(n):
        v = start
        prev = 0.0
        acc = 0.0
        mi = 0
        jb = offsets[i]
        je = offsets[i + 1]
        kb = 0
        while (jb < je or kb < k) and mi < nm:
            if kb >= k or (jb < je and times[jb] <= bt[i, kb]):
                tj = times[jb]
                sz = sizes[jb]
                adv_base = True
            else:
                tj = bt[i, kb]
                sz = bs[i, kb]
                adv_base = False
            while mi < nm and marks[mi] <= tj:
                m = marks[mi]
                out_a[i, mi] = acc + _seg_integral(v, drift, m - prev, gamma)
                out_v[i, mi] = v + drift * (m - prev)
                mi += 1
            if mi >= nm:
                break
            acc += _seg_integral(v, drift, tj - prev, gamma)
            v = v + drift * (tj - prev) + sz
            prev = tj
            if adv_base:
                jb += 1
            else:
                kb += 1
        while mi < nm:
            m = marks[mi]
            out_a[i, mi] = acc + _seg_integral(v, drift, m - prev, gamma)
            out_v[i, mi] = v + drift * (m - prev)
            mi += 1


@njit(cache=True)
def _functional_at(offsets, times, sizes, start, drift, gamma, mark_per_path,
                   out_a, out_v):
    """A and xi at one per-path mark (no big-jump overlay)."""
    n = offsets.shape[0] - 1
    for i in range(n):
        v = start
        prev = 0.0
        acc = 0.0
        m = mark_per_path[i]
        for j in range(offsets[i], offsets[i + 1]):
            tj = times[j]
            if tj > m:
                break
            acc += _seg_integral(v, drift, tj - prev, gamma)
            v = v + drift * (tj - prev) + sizes[j]
            prev = tj
        out_a[i] = acc + _seg_integral(v, drift, m - prev, gamma)
        out_v[i] = v + drift * (m - prev)


@njit(cache=True)
def _occupation(offsets, times, sizes, start, drift, t_end, xg, yg, cut,
                out_full, out_late):
    """Occupation integrals int 1{S<=x, S-xi<=y} ds per path and grid cell.

    Needs drift < 0 (the reflected gap S-xi then increases within segments).
    Contributions are bucketed at the first x-index with xg >= S; the caller
    takes a cumulative sum along the x axis.  ``out_late`` collects the part
    from s >= cut (horizon-truncation error accounting).
    """
    n = offsets.shape[0] - 1
    nx = xg.shape[0]
    ny = yg.shape[0]
    slope = -drift
    for i in range(n):
        v = start
        prev = 0.0
        s_run = start if start > 0.0 else 0.0
        ix = 0
        j = offsets[i]
        je = offsets[i + 1]
        while True:
            while ix < nx and xg[ix] < s_run:
                ix += 1
            if ix >= nx:
                break
            if j < je:
                tj = times[j]
            else:
                tj = t_end
            seg_len = tj - prev
            if seg_len > 0.0:
                d0 = s_run - v  # reflected gap at segment start, >= 0
                for jy in range(ny):
                    w = (yg[jy] - d0) / slope
                    if w > seg_len:
                        w = seg_len
                    if w > 0.0:
                        out_full[i, ix, jy] += w
                        late = prev + w - (cut if cut > prev else prev)
                        if late > 0.0:
                            if late > w:
                                late = w
                            out_late[i, ix, jy] += late
            if j >= je:
                break
            v = v + drift * seg_len + sizes[j]
            if v > s_run:
                s_run = v
            prev = tj
            j += 1


@njit(cache=True)
def _step_distance(offsets, times, sizes, bt, bs, start, drift, T, out):
    """sup over [0, T] of |xi_s - D*1{s>=J}| with (J, D) the first big jump."""
    n = offsets.shape[0] - 1
    k = bt.shape[1]
    for i in range(n):
        if k > 0:
            J = bt[i, 0]
            D = bs[i, 0]
        else:
            J = np.inf
            D = 0.0
        v = start
        prev = 0.0
        best = abs(start)
        jb = offsets[i]
        je = offsets[i + 1]
        kb = 0
        while jb < je or kb < k:
            if kb >= k or (jb < je and times[jb] <= bt[i, kb]):
                tj = times[jb]
                sz = sizes[jb]
                jb += 1
            else:
                tj = bt[i, kb]
                sz = bs[i, kb]
                kb += 1
            if tj > T:
                break
            left = v + drift * (tj - prev)
            ref_left = D if tj > J else 0.0   # indicator at s -> tj-
            d = abs(left - ref_left)
            if d > best:
                best = d
            v = left + sz
            ref_right = D if tj >= J else 0.0
            d = abs(v - ref_right)
            if d > best:
                best = d
            prev = tj
        left = v + drift * (T - prev)
        d = abs(left - (D if T >= J else 0.0))
        if d > best:
            best = d
        out[i] = best


# -- wrappers ------------------------------------------------------------------


def path_stats(batch: EventBatch, bt: np.ndarray | None = None,
               bs: np.ndarray | None = None,
               t_end: float | None = None) -> np.ndarray:
    """Columns: tau, terminal, sup xi, inf xi."""
    if bt is None:
        bt = no_big(batch.n)
        bs = bt
    out = np.empty((batch.n, 4))
    _path_stats(batch.offsets, batch.times, batch.sizes, bt, bs,
                batch.start, batch.drift,
                batch.t_end if t_end is None else float(t_end), out)
    return out


def functional_marks(batch: EventBatch, gamma: float, marks,
                     bt: np.ndarray | None = None,
                     bs: np.ndarray | None = None):
    """(A, xi) arrays of shape (n, len(marks)) at the given ascending marks."""
    if bt is None:
        bt = no_big(batch.n)
        bs = bt
    marks = np.asarray(marks, dtype=float)
    out_a = np.empty((batch.n, marks.size))
    out_v = np.empty((batch.n, marks.size))
    _functional_marks(batch.offsets, batch.times, batch.sizes, bt, bs,
                      batch.start, batch.drift, float(gamma), marks,
                      out_a, out_v)
    return out_a, out_v


def functional_at(batch: EventBatch, gamma: float, mark_per_path):
    marks = np.ascontiguousarray(mark_per_path, dtype=float)
    out_a = np.empty(batch.n)
    out_v = np.empty(batch.n)
    _functional_at(batch.offsets, batch.times, batch.sizes, batch.start,
                   batch.drift, float(gamma), marks, out_a, out_v)
    return out_a, out_v


def occupation_integrals(batch: EventBatch, x_grid, y_grid, cut: float):
    """Per-path occupation integrals on the grid; full and late-time parts."""
    if batch.drift >= 0:
        raise ValueError("occupation integrals need a strictly negative drift")
    xg = np.ascontiguousarray(x_grid, dtype=float)
    yg = np.ascontiguousarray(y_grid, dtype=float)
    full = np.zeros((batch.n, xg.size, yg.size))
    late = np.zeros((batch.n, xg.size, yg.size))
    _occupation(batch.offsets, batch.times, batch.sizes, batch.start,
                batch.drift, batch.t_end, xg, yg, float(cut), full, late)
    np.cumsum(full, axis=1, out=full)
    np.cumsum(late, axis=1, out=late)
    return full, late


def step_distance(batch: EventBatch, bt: np.ndarray, bs: np.ndarray,
                  T: float) -> np.ndarray:
    out = np.empty(batch.n)
    _step_distance(batch.offsets, batch.times, batch.sizes, bt, bs,
                   batch.start, batch.drift, float(T), out)
    return out
