"""Model/site catalog and the DISCOVER procedure.

Hard constraints decide membership; the slack score against the profile's
latency bounds decides order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import jsonschema

from neaiaas.contract import ContractFailure, FailureCause, ValidatedASP
from neaiaas.latency import SITE_CLASSES


@dataclass(frozen=True)
class CatalogEntry:
    model_id: str
    model_version: str
    site_id: str
    site_class: str
    quality_tier: int
    sovereignty_zone: str
    base_cost: float
    hardware_deps: frozenset[str] = frozenset()
    site_hardware: frozenset[str] = frozenset()

    @property
    def binding_key(self) -> tuple[str, str, str]:
        return (self.model_id, self.model_version, self.site_id)


@dataclass(frozen=True)
class CandidateBinding:
    entry: CatalogEntry
    est_ttfb: float
    est_p99: float
    est_cost: float
    slack: float

    @property
    def compliant(self) -> bool:
        """Negative slack means the binding is predicted to break a bound."""
        return self.slack >= 0

    @property
    def tie_key(self) -> tuple:
        return (self.est_cost, *self.entry.binding_key)


class EstimateSource(Protocol):
    def estimate(self, entry: CatalogEntry, asp: ValidatedASP) -> tuple[float, float, float]:
        """Return (est_ttfb, est_p99, est_cost) for an admissible entry."""


def _constraint_failures(entry: CatalogEntry, asp: ValidatedASP, tier: int) -> list[str]:
    failed = []
    if entry.sovereignty_zone not in asp.privacy_scope.allowed_zones:
        failed.append("sovereignty")
    if entry.quality_tier < tier:
        failed.append("tier")
    if not entry.hardware_deps <= entry.site_hardware:
        failed.append("hardware")
    if entry.base_cost > asp.cost_envelope:
        failed.append("cost")
    return failed


def admissibility_filter(entry: CatalogEntry, asp: ValidatedASP) -> bool:
    return not _constraint_failures(entry, asp, asp.quality_tier)


def slack_score(ttfb: float, p99: float, cost: float, asp: ValidatedASP, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return min(asp.p99_bound - p99, asp.ttfb_bound - ttfb) - lam * cost


def _annotate(entry: CatalogEntry, asp: ValidatedASP, predictor: EstimateSource, lam: float):
    ttfb, p99, cost = predictor.estimate(entry, asp)
    return CandidateBinding(entry, ttfb, p99, cost, slack_score(ttfb, p99, cost, asp, lam))


def rank(cands: Iterable[CandidateBinding]) -> list[CandidateBinding]:
    return sorted(cands, key=lambda c: (-c.slack, *c.tie_key))


def discover(
    asp: ValidatedASP,
    catalog: Sequence[CatalogEntry],
    predictor: EstimateSource,
    lam: float = 0.0,
    model_id: Optional[str] = None,
    exclude: Iterable[tuple[str, str, str]] = (),
) -> list[CandidateBinding]:
    """Admissible candidates, best slack first.

    If the requested tier yields nothing, each fallback tier is tried once in
    ladder order. Negative-slack candidates stay in the list, flagged.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    excluded = set(exclude)
    pool = [e for e in catalog if e.binding_key not in excluded]
    if model_id is not None:
        pool = [e for e in pool if e.model_id == model_id]
        if not pool:
            raise ContractFailure(FailureCause.MODEL_UNAVAILABLE, f"model {model_id} not in catalog")

    for tier in (asp.quality_tier, *asp.fallback_ladder):
        step = asp if tier == asp.quality_tier else asp.with_tier(tier)
        admitted = [e for e in pool if not _constraint_failures(e, step, tier)]
        if admitted:
            return rank(_annotate(e, step, predictor, lam) for e in admitted)

    failures = [_constraint_failures(e, asp, asp.quality_tier) for e in pool]
    if failures and all(f == ["sovereignty"] for f in failures):
        raise ContractFailure(
            FailureCause.SOVEREIGNTY_VIOLATION, "every candidate lies outside the privacy scope"
        )
    raise ContractFailure(FailureCause.NO_FEASIBLE_BINDING, "no admissible (model, site) binding")


# --------------------------------------------------------------------------
# JSON catalog files


def catalog_schema() -> dict:
    text = resources.files("neaiaas").joinpath("schema/catalog.schema.json").read_text()
    return json.loads(text)


def parse_catalog(data: list) -> list[CatalogEntry]:
    jsonschema.validate(data, catalog_schema())
    entries = []
    seen = set()
    for raw in data:
        entry = CatalogEntry(
            model_id=raw["model_id"],
            model_version=raw["model_version"],
            site_id=raw["site_id"],
            site_class=raw["site_class"],
            quality_tier=int(raw["quality_tier"]),
            sovereignty_zone=raw["sovereignty_zone"],
            base_cost=float(raw["base_cost"]),
            hardware_deps=frozenset(raw.get("hardware_deps", ())),
            site_hardware=frozenset(raw.get("site_hardware", ())),
        )
        if entry.site_class not in SITE_CLASSES:
            raise ValueError(f"unknown site_class {entry.site_class!r}")
        if entry.binding_key in seen:
            raise ValueError(f"duplicate catalog entry {entry.binding_key}")
        seen.add(entry.binding_key)
        entries.append(entry)
    return entries


def load_catalog(path: str | Path) -> list[CatalogEntry]:
    with open(path) as fh:
        return parse_catalog(json.load(fh))
