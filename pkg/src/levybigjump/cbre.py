"""Branching processes in a Levy random environment: survival probabilities
and their decay regimes.

For the stable branching mechanism the quenched survival probability is an
explicit functional of the environment: given the path, the generating
equation integrates in closed form, and taking the reproduction variable to
infinity leaves survival = F_x(A_t(gamma * xi)) with
F_x(z) = 1 - exp(-x (c gamma z)^(-1/gamma)).  Everything here reduces to
Monte Carlo over environment paths of that functional.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .model import EstimatorError, FSpec, LevyModel
from .functional import McEstimate, MeanAccumulator, estimate_ef
from .rngstream import CHUNK, RngStream, as_stream, chunk_ranges, map_chunks
from . import eventsim, rarevent


@dataclass(frozen=True)
class BranchingSpec:
    """Stable branching mechanism: stability index gamma (1 = Feller
    diffusion), scale c, initial mass x_init."""

    gamma: float
    c: float
    x_init: float

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.c <= 0:
            raise ValueError("branching scale c must be positive")
        if self.x_init <= 0:
            raise ValueError("initial mass must be positive")

    def survival_fspec(self) -> FSpec:
        return FSpec.cbre_survival(self.x_init, self.c, self.gamma)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "c": self.c, "x_init": self.x_init}


def u_solve(branching: BranchingSpec, A: float, lam: float) -> float:
    """Backward generating solution (c*gamma*A + lam**-gamma)**(-1/gamma).

    ``A`` is the exponential functional of the environment between the two
    times; ``lam = math.inf`` is the reproduction limit, where A = 0 returns
    the infinite sentinel (survival probability 1 downstream).
    """
    if A < 0:
        raise ValueError("integrated environment A must be non-negative")
    g, c = branching.gamma, branching.c
    if math.isinf(lam):
        if A == 0.0:
            return math.inf
        return (c * g * A) ** (-1.0 / g)
    if lam <= 0:
        raise ValueError("lam must be positive or math.inf")
    return (c * g * A + lam ** (-g)) ** (-1.0 / g)


def quenched_survival(branching: BranchingSpec, A: float) -> float:
    """1 - exp(-x * u) at the reproduction limit, for one frozen environment."""
    u = u_solve(branching, A, math.inf)
    if math.isinf(u):
        return 1.0
    return -math.expm1(-branching.x_init * u)


def survival_probability(model_env: LevyModel, branching: BranchingSpec,
                         t: float, n: int, rng: RngStream | int,
                         workers: int = 1, method: str = "auto",
                         step: float = 0.05) -> McEstimate:
    """P{population alive at t} = E[F_x(A_t(gamma * xi))] over environments.

    ``method="auto"`` routes heavy-tailed downward-drift environments through
    the stratified big-jump estimator (the survival event is rare there) and
    everything else through plain Monte Carlo.
    """
    f = branching.survival_fspec()
    if method == "auto":
        heavy_sub = (model_env.is_piecewise_linear
                     and model_env.tail.scale > 0
                     and model_env.tail.alpha > 1
                     and model_env.mean_drift() < 0)
        method = "stratified" if heavy_sub else "naive"
    if method == "stratified":
        return rarevent.estimate_ef_stratified(model_env, f, t, n,
                                               rng, gamma=branching.gamma,
                                               workers=workers)
    return estimate_ef(model_env, f, t, n, rng, gamma=branching.gamma,
                       workers=workers, step=step)


# -- shared-path ladders -----------------------------------------------------------


def _ladder_chunk(task):
    model, f, gamma, marks, lo, hi, stream = task
    g = stream.generator()
    batch = eventsim.sample_event_batch(model, 0.0, float(marks[-1]),
                                        hi - lo, g)
    a, _ = eventsim.functional_marks(batch, gamma, marks)
    vals = f.evaluate(np.maximum(a, 1e-300))
    return vals.sum(axis=0), (vals * vals).sum(axis=0), hi - lo


def _ladder_bm_chunk(task):
    model, f, gamma, marks, step, lo, hi, stream = task
    g = stream.generator()
    n = hi - lo
    t_max = float(marks[-1])
    m = max(2, int(math.ceil(t_max / step)))
    grid = np.union1d(np.linspace(0.0, t_max, m + 1), marks)
    idx = np.searchsorted(grid, marks)
    incs = g.normal(0.0, 1.0, (n, grid.size - 1)) \
        * (model.effective_sigma() * np.sqrt(np.diff(grid)))
    xi = model.drift * grid[None, :]
    xi = xi + np.concatenate([np.zeros((n, 1)), np.cumsum(incs, axis=1)],
                             axis=1)
    w = np.exp(np.minimum(-gamma * xi, 700.0))
    cells = 0.5 * (w[:, 1:] + w[:, :-1]) * np.diff(grid)
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(cells, axis=1)], axis=1)
    a = cum[:, idx]
    vals = f.evaluate(np.maximum(a, 1e-300))
    return vals.sum(axis=0), (vals * vals).sum(axis=0), n


def survival_ladder_shared(model_env: LevyModel, branching: BranchingSpec,
                           t_ladder, n: int, rng: RngStream | int,
                           workers: int = 1, step: float = 0.05):
    """Plain Monte Carlo survival at every ladder time from shared paths.

    A_t is non-decreasing per path and F non-increasing, so the returned
    estimates are exactly monotone non-increasing in t.
    """
    rng = as_stream(rng)
    f = branching.survival_fspec()
    marks = np.asarray(sorted(t_ladder), dtype=float)
    if model_env.is_piecewise_linear:
        tasks = [(model_env, f, branching.gamma, marks, lo, hi,
                  rng.substream(c)) for c, lo, hi in chunk_ranges(n)]
        parts = map_chunks(_ladder_chunk, tasks, workers)
    elif model_env.total_rate == 0 and (model_env.left_jumps is None
                                        or model_env.left_jumps.rate == 0):
        tasks = [(model_env, f, branching.gamma, marks, step, lo, hi,
                  rng.substream(c))
                 for c, lo, hi in chunk_ranges(n, chunk=min(CHUNK, 2048))]
        parts = map_chunks(_ladder_bm_chunk, tasks, workers)
    else:
        raise EstimatorError("shared-path ladders support sigma = 0 or "
                             "jump-free environments")
    acc = MeanAccumulator(dim=marks.size)
    for part in parts:
        acc.add(*part)
    mean, se = acc.mean(), acc.stderr()
    return [McEstimate(float(mean[i]), float(se[i]), n, rng.master_seed)
            for i in range(marks.size)]


# -- regime classification ----------------------------------------------------------


@dataclass(frozen=True)
class RegimeReport:
    """Survival regime with (where defined) the fitted decay exponent and the
    tail-normalized coefficient; for supercritical environments
    ``coefficient_hat`` holds the plateau estimate."""

    regime: str
    mean_env: float
    alpha: float
    decay_exponent_hat: float | None
    coefficient_hat: McEstimate | None
    ladder: tuple
    flags: dict

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "mean_env": self.mean_env,
            "alpha": self.alpha,
            "decay_exponent_hat": self.decay_exponent_hat,
            "coefficient_hat": (None if self.coefficient_hat is None
                                else self.coefficient_hat.to_dict()),
            "ladder": [list(p) for p in self.ladder],
            "flags": dict(self.flags),
        }


def _fit_exponent(ladder):
    """Weighted least squares of log value on log t; returns (-slope, se)."""
    ts = np.array([p[0] for p in ladder])
    vs = np.array([p[1] for p in ladder])
    es = np.array([p[2] for p in ladder])
    if np.any(vs <= 0):
        return None, None
    w = (vs / np.maximum(es, 1e-300)) ** 2  # weights for log-scale errors
    x, y = np.log(ts), np.log(vs)
    xm = np.average(x, weights=w)
    ym = np.average(y, weights=w)
    sxx = np.average((x - xm) ** 2, weights=w)
    slope = np.average((x - xm) * (y - ym), weights=w) / sxx
    se = math.sqrt(1.0 / (w.sum() * sxx))
    return float(-slope), float(se)


def classify_regime(model_env: LevyModel, branching: BranchingSpec, t_ladder,
                    n: int, rng: RngStream | int,
                    workers: int = 1) -> RegimeReport:
    """Label the survival regime from the environment mean and estimate the
    polynomial decay exponent (and coefficient, when subcritical).

    The regime depends on the sign of E[xi_1]: upward means the integrated
    environment stays finite and survival plateaus; downward with a heavy
    right tail gives polynomial decay at the tail index; zero mean decays at
    the positivity exponent of the environment.
    """
    t_ladder = sorted(float(t) for t in t_ladder)
    if len(t_ladder) < 3:
        raise ValueError("t_ladder needs at least 3 points")
    rng = as_stream(rng)
    mean = model_env.mean_drift()
    alpha = model_env.tail.alpha
    flags = {}
    if mean > 0:
        regime = "supercritical"
    elif mean < 0:
        regime = "subcritical"
    else:
        regime = "critical"
    if regime == "subcritical" and model_env.is_piecewise_linear \
            and model_env.tail.scale > 0 and alpha > 1:
        ests = [survival_probability(model_env, branching, t, n,
                                     rng.substream(i), workers=workers,
                                     method="stratified")
                for i, t in enumerate(t_ladder)]
    else:
        ests = survival_ladder_shared(model_env, branching, t_ladder, n, rng,
                                      workers=workers)
    ladder = tuple((t, e.value, e.stderr) for t, e in zip(t_ladder, ests))
    values = [e.value for e in ests]
    if any(b > a + 3 * math.hypot(ea.stderr, eb.stderr)
           for (a, ea), (b, eb) in zip(zip(values, ests),
                                       zip(values[1:], ests[1:]))):
        flags["conflicting_trend"] = True
    exponent = None
    coefficient = None
    if regime == "supercritical":
        coefficient = ests[-1]  # plateau estimate
        flags["plateau_diffs"] = [abs(b - a) for a, b in zip(values,
                                                             values[1:])]
    else:
        exponent, exp_se = _fit_exponent(ladder)
        if exponent is None:
            flags["diagnostic_failure"] = "non-positive survival estimates"
        else:
            flags["exponent_stderr"] = exp_se
        if regime == "subcritical" and exponent is not None:
            a_env = -mean
            t_max = t_ladder[-1]
            tail = float(model_env.tail_mass(a_env * t_max))
            last = ests[-1]
            coefficient = McEstimate(last.value / tail, last.stderr / tail,
                                     last.n, last.seed,
                                     flags={"normalization": "tail mass at "
                                            "a*t_max"})
    return RegimeReport(regime, mean, alpha, exponent, coefficient, ladder,
                        flags)
