"""Exact trajectory sampling and path statistics.

A ``Path`` is a cadlag trajectory stored as a grid of (time, value) pairs.
Jump times appear twice in the grid (left limit, then post-jump value), and
between grid entries the trajectory is linear.  For ``sigma = 0`` the grid is
exact; for ``sigma > 0`` Brownian increments are sampled on the step grid
refined by jump times, and anything between grid points (passage times in
particular) carries O(step) bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LevyModel
from .rngstream import RngStream, as_stream


@dataclass(frozen=True)
class JumpRecord:
    time: float
    size: float


@dataclass(frozen=True)
class Path:
    """One trajectory on [0, t_end] with its recorded jumps.

    Immutable; safe to share between threads.
    """

    t_end: float
    times: np.ndarray
    values: np.ndarray
    jumps: tuple
    start: float
    sigma: float = 0.0
    cutoff: float = 0.0  # smallest recordable jump size (model x0)

    def __post_init__(self):
        if self.times[0] != 0.0:
            raise ValueError("path grid must start at time 0")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("path grid times must be non-decreasing")

    @property
    def exact(self) -> bool:
        """True when values between grid points are exactly linear."""
        return self.sigma == 0.0

    # -- construction --------------------------------------------------------

    @classmethod
    def from_events(cls, start: float, drift: float, events, t_end: float,
                    step: float | None = None, sigma: float = 0.0,
                    brownian: np.ndarray | None = None,
                    cutoff: float = 0.0) -> "Path":
        """Build a drift + jumps path; optional Brownian values on the grid.

        ``events`` is an iterable of (time, size); ``brownian`` (if given) must
        align with the refined grid returned by ``_build_grid``.
        """
        merged: dict[float, float] = {}
        for t, s in events:
            t = float(t)
            if 0.0 < t <= t_end:
                merged[t] = merged.get(t, 0.0) + float(s)
        events = sorted(merged.items())
        grid, is_jump = _build_grid(t_end, step, [t for t, _ in events])
        n = grid.size
        values = np.empty(2 * n)  # room for duplicated jump rows
        times = np.empty(2 * n)
        jump_iter = iter(events)
        nxt = next(jump_iter, None)
        cum = 0.0
        k = 0
        for i, t in enumerate(grid):
            b = 0.0 if brownian is None else brownian[i]
            base = start + drift * t + b
            if is_jump[i] and nxt is not None and nxt[0] == t:
                times[k] = t
                values[k] = base + cum  # left limit
                k += 1
                cum += nxt[1]
                nxt = next(jump_iter, None)
            times[k] = t
            values[k] = base + cum
            k += 1
        jumps = tuple(JumpRecord(t, s) for t, s in events)
        return cls(float(t_end), times[:k].copy(), values[:k].copy(),
                   jumps, float(start), float(sigma), float(cutoff))

    # -- queries --------------------------------------------------------------

    def value_at(self, t: float) -> float:
        """Right-continuous value at time t (linear interpolation on segments)."""
        if not 0.0 <= t <= self.t_end:
            raise ValueError("time outside [0, t_end]")
        i = np.searchsorted(self.times, t, side="right") - 1
        if i >= self.times.size - 1:
            return float(self.values[-1])
        t0, t1 = self.times[i], self.times[i + 1]
        if t1 == t0:
            return float(self.values[i + 1])
        w = (t - t0) / (t1 - t0)
        return float(self.values[i] * (1 - w) + self.values[i + 1] * w)

    def segments(self):
        """Yield (t0, v0, t1, v1) linear pieces, skipping zero-length jumps."""
        t, v = self.times, self.values
        for i in range(t.size - 1):
            if t[i + 1] > t[i]:
                yield t[i], v[i], t[i + 1], v[i + 1]


def _build_grid(t_end: float, step: float | None, jump_times):
    """Sorted union of the regular step grid and jump times; flags jump rows."""
    if step is None or step <= 0 or step >= t_end:
        base = np.array([0.0, t_end])
    else:
        m = int(np.ceil(t_end / step))
        base = np.linspace(0.0, t_end, m + 1)
    jt = np.asarray(sorted(set(jump_times)), dtype=float)
    grid = np.union1d(base, jt)
    is_jump = np.isin(grid, jt)
    return grid, is_jump


# -- sampling ------------------------------------------------------------------


def sample_path(model: LevyModel, x0_state: float, t: float, step: float,
                rng: RngStream | int) -> Path:
    """Draw one exact trajectory of the model on [0, t].

    Jump times are Poisson at the total rate, sizes come from the inverse CDF
    of the jump law; Brownian increments (if any) are sampled on the step grid
    refined by the jump times.  Deterministic given the stream.
    """
    if t <= 0:
        raise ValueError("horizon t must be positive")
    if step <= 0:
        raise ValueError("step must be positive")
    g = as_stream(rng).generator()
    events = _draw_events(model, t, g)
    sigma = model.effective_sigma()
    cut = model.tail.x0 if model.tail.scale > 0 else 0.0
    if sigma > 0:
        grid, _ = _build_grid(t, step, [e[0] for e in events])
        incs = g.normal(0.0, 1.0, grid.size - 1) * np.sqrt(np.diff(grid)) * sigma
        brownian = np.concatenate([[0.0], np.cumsum(incs)])
        return Path.from_events(x0_state, model.drift, events, t, step=step,
                                sigma=sigma, brownian=brownian, cutoff=cut)
    return Path.from_events(x0_state, model.drift, events, t, step=step,
                            cutoff=cut)


def _draw_events(model: LevyModel, t: float, g: np.random.Generator):
    """Jump (time, size) list on [0, t].  Draw order is part of the contract:
    right counts, right times, right sizes, then left-jump counts/times/sizes."""
    events = []
    rate = model.total_rate
    if rate > 0:
        n = g.poisson(rate * t)
        times = np.sort(g.random(n)) * t
        sizes = model.tail.sample_sizes(g.random(n))
        events += list(zip(times.tolist(), np.atleast_1d(sizes).tolist()))
    if model.left_jumps is not None and model.left_jumps.rate > 0:
        n = g.poisson(model.left_jumps.rate * t)
        times = np.sort(g.random(n)) * t
        sizes = -g.exponential(model.left_jumps.mean, n)
        events += list(zip(times.tolist(), sizes.tolist()))
    events.sort()
    return events


# -- operations ----------------------------------------------------------------


def truncate_large(path: Path, x: float) -> Path:
    """Remove all jumps larger than x (no drift re-compensation).

    The grid keeps the removed jump times; values from each removed jump
    onward shift down by its size, so the truncation identity
    path = truncated + sum of removed steps holds pointwise on the grid.
    """
    if x < path.cutoff:
        raise ValueError("truncation threshold below the jump cutoff is "
                         "unsupported (sub-cutoff jumps are not recorded)")
    values = path.values.copy()
    kept = []
    for j in path.jumps:
        if j.size > x:
            idx = np.searchsorted(path.times, j.time, side="right") - 1
            values[idx:] -= j.size
        else:
            kept.append(j)
    return Path(path.t_end, path.times, values, tuple(kept), path.start,
                path.sigma, path.cutoff)


def count_large_jumps(path: Path, x: float, t: float) -> int:
    """Number of recorded jumps with size > x up to time t."""
    if not 0.0 <= t <= path.t_end:
        raise ValueError("time outside [0, t_end]")
    return sum(1 for j in path.jumps if j.size > x and j.time <= t)


def first_large_jump(path: Path, x: float) -> float | None:
    """Arrival time of the first jump with size > x, or None."""
    for j in path.jumps:
        if j.size > x:
            return j.time
    return None


def first_passage(path: Path, level: float) -> float | None:
    """First time the path value is <= level; exact on linear segments.

    For sigma > 0 the crossing is located on the piecewise-linear
    interpolation of the sampled grid (grid-resolution accuracy).
    """
    if level > path.start:
        raise ValueError("passage level must not exceed the start value")
    if path.start <= level:
        return 0.0
    t, v = path.times, path.values
    for i in range(t.size - 1):
        if t[i + 1] == t[i]:
            if v[i + 1] <= level:  # downward jump through the level
                return float(t[i])
            continue
        if v[i + 1] <= level:
            frac = (v[i] - level) / (v[i] - v[i + 1])
            return float(t[i] + frac * (t[i + 1] - t[i]))
    return None


def running_extrema(path: Path, t: float) -> tuple[float, float]:
    """(sup of 0 v xi_s, inf of 0 ^ xi_s) over s in [0, t], exact on segments."""
    if not 0.0 <= t <= path.t_end:
        raise ValueError("time outside [0, t_end]")
    mask = path.times <= t
    vals = path.values[mask]
    vt = path.value_at(t)
    hi = max(0.0, float(vals.max()) if vals.size else -np.inf, vt)
    lo = min(0.0, float(vals.min()) if vals.size else np.inf, vt)
    return hi, lo


def dump_csv(path: Path, fh) -> None:
    """Write the grid as CSV: time,value,is_jump,jump_size."""
    jump_at = {j.time: j.size for j in path.jumps}
    fh.write("time,value,is_jump,jump_size\n")
    prev_t = None
    for t, v in zip(path.times, path.values):
        is_jump = prev_t == t and t in jump_at
        size = jump_at[t] if is_jump else 0.0
        fh.write(f"{t:.17g},{v:.17g},{int(is_jump)},{size:.17g}\n")
        prev_t = t
