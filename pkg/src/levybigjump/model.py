"""Model family: spectrally one-sided Levy processes with a regularly varying
right jump tail.

The jump part is compound Poisson with a hard cutoff at ``x0``: the tail
function equals its cutoff value below ``x0``, so the total jump rate is
finite and every jump is exactly simulable by inverse-CDF sampling.  The
slowly varying factor is either a constant or ``(log(e+x))**p``, both of which
admit deterministic numeric tail inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import hashlib
import json
import math

import numpy as np
from scipy import integrate


class ModelError(ValueError):
    """Raised when a model (or model file) violates a structural requirement."""


class EstimatorError(ValueError):
    """Raised when an estimator's applicability conditions fail."""


_E = math.e


@dataclass(frozen=True)
class TailSpec:
    """Right-tail function nu_bar(x) = scale * x**(-alpha) * l(x) for x >= x0.

    ``log_power=None`` means the slowly varying factor l is constant 1;
    otherwise l(x) = (log(e+x))**log_power.  Below the cutoff the tail is
    frozen at its cutoff value, which is also the total jump rate.
    """

    alpha: float
    x0: float = 1.0
    scale: float = 1.0
    log_power: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ModelError("tail alpha must be positive")
        if not (self.x0 > 0):
            raise ModelError("tail x0 must be positive")
        if self.scale < 0:
            raise ModelError("tail scale must be non-negative (0 disables jumps)")
        if self.log_power is not None and self.log_power > self.alpha:
            # keeps nu_bar non-increasing on [x0, inf)
            raise ModelError("tail log_power must not exceed alpha")

    def _sv(self, x):
        if self.log_power is None:
            return np.ones_like(np.asarray(x, dtype=float))
        return np.log(_E + np.asarray(x, dtype=float)) ** self.log_power

    def mass(self, x):
        """Tail mass nu(x, inf); constant below the cutoff."""
        x = np.asarray(x, dtype=float)
        xe = np.maximum(x, self.x0)
        out = self.scale * xe ** (-self.alpha) * self._sv(xe)
        return out if out.shape else float(out)

    @property
    def total_rate(self) -> float:
        return float(self.mass(self.x0))

    def invert(self, v):
        """Solve mass(y) = v for y >= x0 (v <= total rate)."""
        if self.scale == 0:
            raise ValueError("tail has no jump mass to invert (scale = 0)")
        v = np.asarray(v, dtype=float)
        if np.any(v <= 0) or np.any(v > self.total_rate * (1 + 1e-12)):
            raise ValueError("tail inversion target outside (0, total_rate]")
        if self.log_power is None:
            y = (self.scale / v) ** (1.0 / self.alpha)
            y = np.maximum(y, self.x0)
            return y if y.shape else float(y)
        # bisection on the monotone tail; deterministic fixed iteration count
        lo = np.full(v.shape if v.shape else (1,), self.x0)
        hi = np.full_like(lo, self.x0 * 2)
        vv = v.reshape(lo.shape)
        for _ in range(80):
            need = self.mass(hi) > vv
            if not need.any():
                break
            hi = np.where(need, hi * 2, hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            high_side = self.mass(mid) > vv
            lo = np.where(high_side, mid, lo)
            hi = np.where(high_side, hi, mid)
        out = 0.5 * (lo + hi)
        return out if v.shape else float(out[0])

    def band_rate(self, lo: float, hi: float | None = None) -> float:
        """Arrival rate of jumps with size in (lo, hi]."""
        lo = max(lo, self.x0)
        top = 0.0 if hi is None else float(self.mass(hi))
        return float(self.mass(lo)) - top

    def sample_sizes(self, u, lo: float | None = None, hi: float | None = None):
        """Inverse-CDF jump sizes from nu restricted to (lo, hi], u ~ U(0,1)."""
        lo = self.x0 if lo is None else max(lo, self.x0)
        m_lo = float(self.mass(lo))
        m_hi = 0.0 if hi is None else float(self.mass(hi))
        u = np.asarray(u, dtype=float)
        target = m_hi + (1.0 - u) * (m_lo - m_hi)
        return self.invert(target)

    def tail_integral(self, x: float) -> float:
        """integral of u nu(du) over (max(x, x0), inf); finite iff alpha > 1."""
        if self.scale == 0:
            return 0.0
        if self.alpha <= 1:
            raise ModelError("mean jump size is infinite for alpha <= 1")
        x = max(x, self.x0)
        if self.log_power is None:
            # x*mass(x) + int_x^inf mass = x*mass(x)*alpha/(alpha-1)
            return float(self.mass(x)) * x * self.alpha / (self.alpha - 1.0)
        val, _ = integrate.quad(lambda s: float(self.mass(x / s)) / s**2, 0.0, 1.0,
                                limit=200)
        return x * val + x * float(self.mass(x))

    def mean_jump(self) -> float:
        """Mean of one jump under the normalized law above the cutoff."""
        if self.scale == 0:
            raise ValueError("tail has no jumps (scale = 0)")
        return self.tail_integral(self.x0) / self.total_rate

    def small_jump_variance(self, eps: float) -> float:
        """Variance of the power-law jump part extended over (eps, x0)."""
        if not 0 < eps < self.x0:
            raise ModelError("small-jump cutoff eps must lie in (0, x0)")
        if self.scale == 0:
            return 0.0
        if self.log_power is None:
            a, c = self.alpha, self.scale
            if abs(a - 2.0) < 1e-12:
                return float(a * c * math.log(self.x0 / eps))
            return float(a * c * (self.x0 ** (2 - a) - eps ** (2 - a)) / (2 - a))
        dens = lambda u: (self.alpha * self.scale * u ** (-self.alpha - 1) * float(self._sv(u))
                          - self.scale * u ** (-self.alpha)
                          * self.log_power * float(self._sv(u)) / (np.log(_E + u) * (_E + u)))
        val, _ = integrate.quad(lambda u: u * u * dens(u), eps, self.x0, limit=200)
        return float(val)


@dataclass(frozen=True)
class LeftJumpSpec:
    """Optional light downward jumps: compound Poisson with exponential sizes."""

    rate: float
    mean: float

    def __post_init__(self):
        if self.rate < 0 or self.mean <= 0:
            raise ModelError("left_jumps needs rate >= 0 and mean > 0")


@dataclass(frozen=True)
class LevyModel:
    """drift*t + sigma*B_t + compound-Poisson jumps with tail ``tail``.

    ``drift`` is the raw slope between jumps (jumps are not compensated).
    ``small_jump`` optionally adds a Brownian term whose variance matches the
    power-law jump mass on (eps, x0); the compensated small-jump integral is
    centered, so the mean is unaffected.
    """

    drift: float
    sigma: float
    tail: TailSpec
    small_jump: float | None = None  # gaussian_approx cutoff eps, or None
    left_jumps: LeftJumpSpec | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ModelError("sigma must be non-negative")
        if self.small_jump is not None:
            self.tail.small_jump_variance(self.small_jump)  # validates eps

    # -- basic quantities ---------------------------------------------------

    def tail_mass(self, x) -> float:
        """nu(x, inf); equals the total compound-Poisson rate below the cutoff."""
        if np.any(np.asarray(x) <= 0):
            raise ValueError("tail_mass needs x > 0")
        return self.tail.mass(x)

    @property
    def total_rate(self) -> float:
        return self.tail.total_rate

    def mean_drift(self) -> float:
        """E[xi_1]: drift plus the uncompensated jump-rate contribution."""
        m = self.drift + self.tail.tail_integral(self.tail.x0)
        if self.left_jumps is not None:
            m -= self.left_jumps.rate * self.left_jumps.mean
        return float(m)

    def decay_rate(self) -> float:
        """a = -E[xi_1]; positive in the negative-drift regime."""
        return -self.mean_drift()

    def effective_sigma(self) -> float:
        s2 = self.sigma**2
        if self.small_jump is not None:
            s2 += self.tail.small_jump_variance(self.small_jump)
        return math.sqrt(s2)

    @property
    def is_piecewise_linear(self) -> bool:
        return self.effective_sigma() == 0.0

    def require_negative_mean(self) -> float:
        a = self.decay_rate()
        if not a > 0:
            raise EstimatorError(
                "estimator requires a negative-mean model (decay rate a > 0)")
        return a

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        sv = "const" if self.tail.log_power is None else {"logp": self.tail.log_power}
        d = {
            "drift": self.drift,
            "sigma": self.sigma,
            "alpha": self.tail.alpha,
            "x0": self.tail.x0,
            "scale": self.tail.scale,
            "sv": sv,
            "small_jump": "none" if self.small_jump is None
            else {"gaussian_eps": self.small_jump},
        }
        if self.left_jumps is not None:
            d["left_jumps"] = {"rate": self.left_jumps.rate,
                               "mean": self.left_jumps.mean}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LevyModel":
        if not isinstance(d, dict):
            raise ModelError("model file must contain a JSON object")
        required = ("drift", "sigma", "alpha", "x0", "scale")
        for k in required:
            if k not in d:
                raise ModelError(f"model field missing: {k!r}")
            if not isinstance(d[k], (int, float)) or isinstance(d[k], bool):
                raise ModelError(f"model field {k!r} must be a number")
        sv = d.get("sv", "const")
        if sv == "const":
            logp = None
        elif isinstance(sv, dict) and set(sv) == {"logp"}:
            logp = float(sv["logp"])
        else:
            raise ModelError("model field 'sv' must be \"const\" or {\"logp\": p}")
        sj = d.get("small_jump", "none")
        if sj == "none":
            eps = None
        elif isinstance(sj, dict) and set(sj) == {"gaussian_eps"}:
            eps = float(sj["gaussian_eps"])
        else:
            raise ModelError(
                "model field 'small_jump' must be \"none\" or {\"gaussian_eps\": e}")
        lj = d.get("left_jumps")
        left = None
        if lj is not None:
            if not isinstance(lj, dict) or set(lj) != {"rate", "mean"}:
                raise ModelError("model field 'left_jumps' must be {rate, mean}")
            left = LeftJumpSpec(float(lj["rate"]), float(lj["mean"]))
        tail = TailSpec(float(d["alpha"]), float(d["x0"]), float(d["scale"]), logp)
        return cls(float(d["drift"]), float(d["sigma"]), tail, eps, left)

    def model_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def load_model(path) -> LevyModel:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from exc
    return LevyModel.from_dict(data)


def save_model(model: LevyModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


# -- canonical test model ----------------------------------------------------

def canonical_model(drift: float = -3.0, sigma: float = 0.0, alpha: float = 2.0,
                    x0: float = 1.0, scale: float = 1.0) -> LevyModel:
    """Compound Poisson, Pareto(alpha, x0) jumps at unit rate, linear drift."""
    return LevyModel(drift, sigma, TailSpec(alpha, x0, scale))


# -- test functions F ---------------------------------------------------------

@dataclass(frozen=True)
class FSpec:
    """Bounded, positive, non-increasing test function with power decay.

    ``beta`` is the decay exponent certificate (sup z**beta * F(z) finite) and
    ``lipschitz_floor`` the left end of the Lipschitz region.
    """

    kind: str
    beta: float = 0.5
    lipschitz_floor: float = 0.05
    x: float = 1.0
    c: float = 1.0
    gamma: float = 1.0
    power: float = 0.5
    points: tuple = ()

    @classmethod
    def cbre_survival(cls, x: float, c: float = 1.0, gamma: float = 1.0,
                      beta: float = 0.5) -> "FSpec":
        """F(z) = 1 - exp(-x * (c*gamma*z)**(-1/gamma)); quenched CBRE survival."""
        if x < 0 or c <= 0 or not 0 < gamma <= 1:
            raise ValueError("cbre_survival needs x >= 0, c > 0, gamma in (0, 1]")
        return cls("cbre_survival", beta=beta, x=x, c=c, gamma=gamma)

    @classmethod
    def power_cutoff(cls, beta: float) -> "FSpec":
        """F(z) = min(1, z**-beta)."""
        if not 0 < beta < 1:
            raise ValueError("power_cutoff needs beta in (0, 1)")
        return cls("power_cutoff", beta=beta, power=beta)

    @classmethod
    def table(cls, points, beta: float = 0.5) -> "FSpec":
        """Tabulated F, log-linear in z between nodes, clamped outside."""
        pts = tuple(sorted((float(z), float(v)) for z, v in points))
        if len(pts) < 2:
            raise ValueError("table needs at least two points")
        if any(z <= 0 for z, _ in pts):
            raise ValueError("table abscissae must be positive")
        vals = [v for _, v in pts]
        if any(v < 0 for v in vals):
            raise ValueError("table values must be non-negative")
        if any(b > a + 1e-12 for a, b in zip(vals, vals[1:])):
            raise ValueError("table values must be non-increasing")
        return cls("table", beta=beta, points=pts)

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(~(z > 0)):
            raise ValueError("F is defined on z > 0")
        if self.kind == "cbre_survival":
            if self.x == 0:
                out = np.zeros_like(z)
            else:
                with np.errstate(over="ignore", divide="ignore"):
                    u = (self.c * self.gamma * z) ** (-1.0 / self.gamma)
                    out = -np.expm1(-self.x * u)
        elif self.kind == "power_cutoff":
            out = np.minimum(1.0, z ** (-self.power))
        elif self.kind == "table":
            zs = np.array([p[0] for p in self.points])
            vs = np.array([p[1] for p in self.points])
            out = np.interp(np.log(z), np.log(zs), vs)
        else:
            raise ValueError(f"unknown FSpec kind {self.kind!r}")
        return out if out.shape else float(out)

    __call__ = evaluate

    def sup_value(self) -> float:
        """F(0+)."""
        if self.kind == "cbre_survival":
            return 0.0 if self.x == 0 else 1.0
        if self.kind == "power_cutoff":
            return 1.0
        return self.points[0][1]

    def condition_issues(self, z_lo: float = 1e-6, z_hi: float = 1e8,
                         n_grid: int = 400) -> list[str]:
        """Desk-scale check of boundedness, monotonicity, power decay, Lipschitz."""
        issues = []
        if not 0 < self.beta < 1:
            issues.append("beta must lie in (0, 1)")
            return issues
        z = np.geomspace(z_lo, z_hi, n_grid)
        f = self.evaluate(z)
        if np.any(f < 0) or not np.isfinite(f).all():
            issues.append("F must be finite and non-negative")
        if np.any(np.diff(f) > 1e-12):
            issues.append("F must be non-increasing")
        w = z**self.beta * f
        tail = w[z > z_hi ** 0.5]
        if tail.size >= 2 and tail[-1] > 2.0 * max(tail[0], 1e-300) and tail[-1] > 1e-9:
            issues.append(f"z**beta*F(z) keeps growing: sup on (0,inf) looks infinite "
                          f"(beta={self.beta})")
        zz = z[z >= self.lipschitz_floor]
        if zz.size >= 3:
            slopes = np.abs(np.diff(self.evaluate(zz)) / np.diff(zz))
            if not np.isfinite(slopes).all():
                issues.append("F is not Lipschitz away from 0")
        return issues


# -- standing assumptions -----------------------------------------------------

@dataclass(frozen=True)
class ConditionsReport:
    """Which standing assumptions hold and which estimator families apply."""

    alpha_gt_one: bool
    negative_mean: bool
    local_density_ok: bool
    total_rate_finite: bool
    mean_env: float | None
    messages: tuple
    applicable: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.alpha_gt_one and self.negative_mean and self.local_density_ok

    def to_dict(self) -> dict:
        return {
            "alpha_gt_one": self.alpha_gt_one,
            "negative_mean": self.negative_mean,
            "local_density_ok": self.local_density_ok,
            "total_rate_finite": self.total_rate_finite,
            "mean_env": self.mean_env,
            "messages": list(self.messages),
            "applicable": dict(self.applicable),
        }


def validate_heavy_tail_conditions(model: LevyModel) -> ConditionsReport:
    """Check the regular-variation and drift assumptions behind each estimator.

    Failures are reported, not raised: an upward-mean model is still a valid
    CBRE environment (supercritical regime), it just disqualifies the
    negative-drift limit theorems.
    """
    msgs = []
    has_jumps = model.tail.scale > 0
    alpha_ok = model.tail.alpha > 1
    if has_jumps and not alpha_ok:
        msgs.append(f"tail index alpha={model.tail.alpha} <= 1: mean jump size "
                    "infinite, regular-variation assumptions fail")
    mean = model.mean_drift() if (alpha_ok or not has_jumps) else None
    neg = bool(mean is not None and mean < 0)
    if mean is not None and not neg:
        msgs.append(f"mean drift E[xi_1]={mean} >= 0: rare-event estimators for "
                    "positivity/passage do not apply")
    heavy = has_jumps and alpha_ok
    if not has_jumps:
        msgs.append("no jump part: regularly varying tail assumptions vacuous")
    # the cutoff Pareto family has density alpha*nu_bar(x)/x (up to the slowly
    # varying correction), which satisfies the local tail condition exactly
    local_ok = True
    rate_ok = math.isfinite(model.total_rate)
    applicable = {
        "jump_count_poisson_law": rate_ok,
        "conditional_limit_theorems": heavy and neg,
        "exponential_functional_decay": heavy and neg,
        "renewal_occupation_identities": heavy and neg,
        "cbre_supercritical": bool(mean is not None and mean > 0),
        "cbre_critical": bool(mean is not None and mean == 0),
        "cbre_subcritical": heavy and neg,
    }
    return ConditionsReport(alpha_ok if has_jumps else True, neg, local_ok,
                            rate_ok, mean, tuple(msgs), applicable)
