"""Latency distributions shared by the simulator and the anchoring predictor.

End-to-end latency is ``W_q + L_infer + L_net``: an M/M/1 waiting time, a
lognormal runtime and either a lognormal best-effort or a base-plus-uniform
QoS transport term. The analytic side evaluates ``P[shift + W + Y > bound]``
with ``Y`` a moment-matched lognormal, integrating the waiting time exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

SITE_CLASSES = ("edge", "regional", "central")
MAX_LOAD = 0.999


@dataclass(frozen=True)
class LatencyModel:
    service_mean: float = 15.0
    infer_median: float = 40.0
    infer_sigma: float = 0.4
    net_be_median: float = 20.0
    net_be_sigma: float = 0.8
    net_qos_base: float = 8.0
    net_qos_jitter: float = 2.0
    # transport offset per site class, added on top of the QoS base
    site_offsets: dict = field(
        default_factory=lambda: {"edge": 0.0, "regional": 6.0, "central": 15.0}
    )
    # share of the runtime spent before the first response unit
    ttfb_fraction: float = 0.25

    def __post_init__(self) -> None:
        positive = (
            self.service_mean,
            self.infer_median,
            self.infer_sigma,
            self.net_be_median,
            self.net_be_sigma,
            self.net_qos_base,
        )
        if not all(v > 0 for v in positive):
            raise ValueError("latency model parameters must be positive")
        if not 0 <= self.net_qos_jitter <= self.net_qos_base:
            raise ValueError("net_qos_jitter must lie in [0, net_qos_base]")
        if not 0 < self.ttfb_fraction <= 1:
            raise ValueError("ttfb_fraction must lie in (0, 1]")
        missing = set(SITE_CLASSES) - set(self.site_offsets)
        if missing or any(v < 0 for v in self.site_offsets.values()):
            raise ValueError("site_offsets needs a non-negative value per site class")

    def __hash__(self) -> int:
        return hash(
            (
                self.service_mean,
                self.infer_median,
                self.infer_sigma,
                self.net_be_median,
                self.net_be_sigma,
                self.net_qos_base,
                self.net_qos_jitter,
                tuple(sorted(self.site_offsets.items())),
                self.ttfb_fraction,
            )
        )


# --------------------------------------------------------------------------
# sampling


def sample_wq(rho: float, service_mean: float, rng: np.random.Generator, size=None):
    """Exact M/M/1 waiting time: 0 w.p. 1-rho, else Exp(mean s/(1-rho))."""
    if not 0 <= rho < 1:
        raise ValueError("offered load must lie in [0, 1)")
    n = 1 if size is None else size
    busy = rng.random(n) < rho
    wait = rng.exponential(service_mean / (1.0 - rho), n)
    out = np.where(busy, wait, 0.0)
    return float(out[0]) if size is None else out


def sample_infer(model: LatencyModel, rng: np.random.Generator, size: int) -> np.ndarray:
    return model.infer_median * np.exp(model.infer_sigma * rng.standard_normal(size))


def sample_net_best_effort(model: LatencyModel, rng: np.random.Generator, size: int) -> np.ndarray:
    return model.net_be_median * np.exp(model.net_be_sigma * rng.standard_normal(size))


def sample_net_qos(model: LatencyModel, rng: np.random.Generator, size: int) -> np.ndarray:
    j = model.net_qos_jitter
    return model.net_qos_base + rng.uniform(-j, j, size)


# --------------------------------------------------------------------------
# analytic tails


def lognormal_sf(median: float, sigma: float, bound: float) -> float:
    """P[X > bound] for X = median * exp(sigma * Z)."""
    if bound <= 0:
        return 1.0
    z = (math.log(bound) - math.log(median)) / sigma
    return 0.5 * special.erfc(z / math.sqrt(2.0))


def match_lognormal(mean: float, var: float) -> tuple[float, float]:
    """(median, sigma) of the lognormal with the given mean and variance."""
    s2 = math.log1p(var / (mean * mean))
    sigma = math.sqrt(s2)
    return mean * math.exp(-0.5 * s2), max(sigma, 1e-9)


@dataclass(frozen=True)
class TailParams:
    """``shift + W + Y`` with W ~ M/M/1(load, service_mean), Y ~ lognormal."""

    shift: float
    load: float
    service_mean: float
    median: float
    sigma: float


def tail_params(
    model: LatencyModel,
    load: float,
    site_class: str,
    backhaul_rtt: float = 0.0,
    first_response: bool = False,
) -> TailParams:
    load = min(max(load, 0.0), MAX_LOAD)
    frac = model.ttfb_fraction if first_response else 1.0
    med = model.infer_median * frac
    s2 = model.infer_sigma**2
    inf_mean = med * math.exp(0.5 * s2)
    inf_var = inf_mean**2 * math.expm1(s2)
    jit_var = model.net_qos_jitter**2 / 3.0
    median, sigma = match_lognormal(inf_mean, inf_var + jit_var)
    shift = model.net_qos_base + model.site_offsets[site_class] + backhaul_rtt
    return TailParams(shift, load, model.service_mean, median, sigma)


@lru_cache(maxsize=65536)
def _tail(p: TailParams, bound: float) -> float:
    x = bound - p.shift
    if x <= 0:
        return 1.0
    base = lognormal_sf(p.median, p.sigma, x)
    if p.load == 0:
        return base
    theta = (1.0 - p.load) / p.service_mean
    mu = math.log(p.median)
    z_hi = (math.log(x) - mu) / p.sigma
    z_lo = min(-12.0, z_hi - 1.0)

    def integrand(z: float) -> float:
        y = math.exp(mu + p.sigma * z)
        return math.exp(-0.5 * z * z - theta * (x - y))

    val, _ = integrate.quad(integrand, z_lo, z_hi, limit=200, epsabs=1e-13)
    return min(1.0, base + p.load * val / math.sqrt(2 * math.pi))


def tail_probability(p: TailParams, bound: float) -> float:
    """P[shift + W + Y > bound]."""
    return _tail(p, float(bound))


@lru_cache(maxsize=65536)
def _tail_quantile(p: TailParams, q: float) -> float:
    target = 1.0 - q
    lo = p.shift
    hi = p.shift + p.median * math.exp(8 * p.sigma)
    if p.load > 0:
        hi += p.service_mean / (1.0 - p.load) * 40.0
    while _tail(p, hi) > target:
        hi *= 2.0
    return optimize.brentq(lambda b: _tail(p, b) - target, lo, hi, xtol=1e-9, rtol=1e-12)


def tail_quantile(p: TailParams, q: float) -> float:
    """Smallest bound with P[L > bound] <= 1 - q."""
    return _tail_quantile(p, float(q))


def mm1_mean_wait(rho: float, service_mean: float) -> float:
    return rho * service_mean / (1.0 - rho)
