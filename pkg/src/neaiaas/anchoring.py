"""AI paging: per-candidate violation risk and risk-minimizing anchor choice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from neaiaas.catalog import CandidateBinding, CatalogEntry
from neaiaas.contract import ContractFailure, FailureCause, ValidatedASP
from neaiaas.latency import LatencyModel, tail_params, tail_probability, tail_quantile


@dataclass(frozen=True)
class ContextSummary:
    load_estimate: Mapping[str, float] = field(default_factory=dict)
    mobility_speed: float = 0.0
    backhaul_rtt_estimate: Mapping[str, float] = field(default_factory=dict)
    default_load: float = 0.5

    def __post_init__(self) -> None:
        if self.mobility_speed < 0:
            raise ValueError("mobility_speed must be non-negative")
        if any(not 0 <= v < 1 for v in self.load_estimate.values()):
            raise ValueError("site load estimates must lie in [0, 1)")

    def load_of(self, site_id: str) -> float:
        return self.load_estimate.get(site_id, self.default_load)

    def rtt_of(self, site_class: str) -> float:
        return self.backhaul_rtt_estimate.get(site_class, 0.0)


@dataclass(frozen=True)
class RiskEstimate:
    p_tail_violation: float
    p_ff_violation: float
    p_migration: float


@dataclass(frozen=True)
class RiskWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0

    def __post_init__(self) -> None:
        if min(self.w1, self.w2, self.w3) < 0 or self.w1 + self.w2 + self.w3 <= 0:
            raise ValueError("risk weights must be non-negative with a positive sum")

    def score(self, r: RiskEstimate) -> float:
        return self.w1 * r.p_tail_violation + self.w2 * r.p_ff_violation + self.w3 * r.p_migration


@dataclass(frozen=True)
class MobilityRisk:
    """Hazard 1 - exp(-(speed/ref_speed) * kappa[site_class])."""

    ref_speed: float = 10.0
    kappa: Mapping[str, float] = field(
        default_factory=lambda: {"edge": 1.0, "regional": 0.3, "central": 0.0}
    )

    def __post_init__(self) -> None:
        if self.ref_speed <= 0:
            raise ValueError("ref_speed must be positive")
        k = self.kappa
        if not k["edge"] > k["regional"] > k["central"] == 0:
            raise ValueError("kappa must satisfy edge > regional > central = 0")

    def probability(self, speed: float, site_class: str) -> float:
        return -math.expm1(-(speed / self.ref_speed) * self.kappa[site_class])


class AnalyticPredictor:
    """Closed-form estimates from the simulator's latency family.

    Serves both discovery (ttfb median, p99, cost) and paging (tail risks).
    The context is fixed per instance, so results are memoized per entry.
    """

    def __init__(self, model: LatencyModel, ctx: ContextSummary, mobility: Optional[MobilityRisk] = None):
        self.model = model
        self.ctx = ctx
        self.mobility = mobility or MobilityRisk()
        self._estimates: dict = {}
        self._risks: dict = {}

    def _params(self, entry: CatalogEntry, first_response: bool):
        return tail_params(
            self.model,
            self.ctx.load_of(entry.site_id),
            entry.site_class,
            self.ctx.rtt_of(entry.site_class),
            first_response=first_response,
        )

    def estimate(self, entry: CatalogEntry, asp: ValidatedASP) -> tuple[float, float, float]:
        hit = self._estimates.get(entry)
        if hit is None:
            ttfb = tail_quantile(self._params(entry, True), 0.5)
            p99 = tail_quantile(self._params(entry, False), 0.99)
            hit = self._estimates[entry] = (ttfb, p99, entry.base_cost)
        return hit

    def risk(self, entry: CatalogEntry, asp: ValidatedASP) -> RiskEstimate:
        key = (entry, asp.p99_bound, asp.ttfb_bound)
        hit = self._risks.get(key)
        if hit is None:
            hit = self._risks[key] = RiskEstimate(
                p_tail_violation=tail_probability(self._params(entry, False), asp.p99_bound),
                p_ff_violation=tail_probability(self._params(entry, True), asp.ttfb_bound),
                p_migration=self.mobility.probability(self.ctx.mobility_speed, entry.site_class),
            )
        return hit


def predict_risk(
    c: CandidateBinding,
    ctx: ContextSummary,
    asp: ValidatedASP,
    model: Optional[LatencyModel] = None,
    mobility: Optional[MobilityRisk] = None,
) -> RiskEstimate:
    return AnalyticPredictor(model or LatencyModel(), ctx, mobility).risk(c.entry, asp)


def select_anchor(
    cands: Sequence[CandidateBinding],
    ctx: ContextSummary,
    asp: ValidatedASP,
    w: RiskWeights = RiskWeights(),
    predictor: Optional[AnalyticPredictor] = None,
    clock: Optional[Callable[[], float]] = None,
    deadline: Optional[float] = None,
) -> tuple[CandidateBinding, RiskEstimate]:
    """Argmin of weighted risk over compliant candidates.

    Scores within a relative 1e-9 of each other count as tied and fall back
    to (est_cost, model_id, model_version, site_id).
    """
    predictor = predictor or AnalyticPredictor(LatencyModel(), ctx)
    admissible = [c for c in cands if c.compliant]
    if not admissible:
        raise ContractFailure(FailureCause.NO_FEASIBLE_BINDING, "every candidate has negative slack")
    best = None
    for c in admissible:
        r = predictor.risk(c.entry, asp)
        s = w.score(r)
        if best is None:
            best = (s, c, r)
            continue
        tied = math.isclose(s, best[0], rel_tol=1e-9, abs_tol=1e-15)
        if (not tied and s < best[0]) or (tied and c.tie_key < best[1].tie_key):
            best = (s, c, r)
    if clock is not None and deadline is not None and clock() > deadline:
        raise ContractFailure(FailureCause.DEADLINE_EXPIRY, "tau_page exceeded during anchoring")
    return best[1], best[2]
