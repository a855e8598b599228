import pytest

from neaiaas.anchoring import (
    AnalyticPredictor,
    ContextSummary,
    MobilityRisk,
    RiskEstimate,
    RiskWeights,
    predict_risk,
    select_anchor,
)
from neaiaas.catalog import CandidateBinding
from neaiaas.contract import AIServiceProfile, ContractFailure, FailureCause, validate_asp
from neaiaas.latency import LatencyModel

from conftest import entry


class RiskTable:
    def __init__(self, table):
        self.table = table

    def risk(self, e, asp):
        return RiskEstimate(*self.table[e.site_id])


def cand(site, cost=1.0, slack=10.0):
    return CandidateBinding(entry(site, cost=cost), 30, 80, cost, slack)


def test_weighted_argmin_example(asp):
    pred = RiskTable({"a": (0.1, 0.1, 0.1), "b": (0.2, 0.0, 0.0)})
    choice, r = select_anchor([cand("a"), cand("b")], ContextSummary(), asp, RiskWeights(1, 1, 1), pred)
    assert choice.entry.site_id == "b" and r.p_tail_violation == 0.2


def test_singleton(asp):
    pred = RiskTable({"a": (0.9, 0.9, 0.9)})
    assert select_anchor([cand("a")], ContextSummary(), asp, predictor=pred)[0].entry.site_id == "a"


def test_tie_break_cost_then_id(asp):
    pred = RiskTable({"a": (0.1, 0.0, 0.0), "b": (0.0, 0.1, 0.0), "c": (0.05, 0.05, 0.0)})
    cands = [cand("c", cost=2.0), cand("b"), cand("a")]
    assert select_anchor(cands, ContextSummary(), asp, predictor=pred)[0].entry.site_id == "a"


def test_negative_slack_excluded(asp):
    pred = RiskTable({"a": (0.0, 0.0, 0.0), "b": (0.5, 0.5, 0.5)})
    choice, _ = select_anchor([cand("a", slack=-1), cand("b")], ContextSummary(), asp, predictor=pred)
    assert choice.entry.site_id == "b"
    with pytest.raises(ContractFailure) as ei:
        select_anchor([cand("a", slack=-1)], ContextSummary(), asp, predictor=pred)
    assert ei.value.cause is FailureCause.NO_FEASIBLE_BINDING


def test_deadline(asp):
    pred = RiskTable({"a": (0.0, 0.0, 0.0)})
    with pytest.raises(ContractFailure) as ei:
        select_anchor([cand("a")], ContextSummary(), asp, predictor=pred, clock=lambda: 25.0, deadline=20.0)
    assert ei.value.cause is FailureCause.DEADLINE_EXPIRY


def test_argmin_invariant_under_weight_scaling(asp):
    import random

    rng = random.Random(9)
    for _ in range(200):
        sites = [f"s{i}" for i in range(rng.randint(1, 6))]
        pred = RiskTable({s: tuple(rng.random() for _ in range(3)) for s in sites})
        w = RiskWeights(rng.random(), rng.random(), rng.random() + 0.01)
        k = rng.uniform(0.1, 50)
        cands = [cand(s) for s in sites]
        one = select_anchor(cands, ContextSummary(), asp, w, pred)[0]
        two = select_anchor(cands, ContextSummary(), asp, RiskWeights(w.w1 * k, w.w2 * k, w.w3 * k), pred)[0]
        assert one.entry.site_id == two.entry.site_id


def test_risk_extremes():
    ctx = ContextSummary(default_load=0.5)
    far = validate_asp(AIServiceProfile(10**9, 10**9, 10**9, 0.99, 10**9))
    near = validate_asp(AIServiceProfile(1e-9, 1e-9, 1e-9, 0.99, 1e-9))
    assert predict_risk(cand("a"), ctx, far).p_tail_violation < 1e-9
    assert predict_risk(cand("a"), ctx, near).p_tail_violation == pytest.approx(1.0)


def test_risk_monotone_in_bound_and_load():
    m = LatencyModel()
    e = entry("a", site_class="regional")
    prev = None
    for bound in (80, 120, 200, 400):
        asp = validate_asp(AIServiceProfile(50, bound, bound, 0.99, 1000))
        r = AnalyticPredictor(m, ContextSummary(default_load=0.6)).risk(e, asp).p_tail_violation
        assert prev is None or r <= prev
        prev = r
    asp = validate_asp(AIServiceProfile(50, 150, 200, 0.99, 1000))
    vals = [AnalyticPredictor(m, ContextSummary(default_load=x)).risk(e, asp).p_tail_violation
            for x in (0.0, 0.3, 0.6, 0.9)]
    assert vals == sorted(vals)


def test_migration_risk_shape():
    mob = MobilityRisk()
    assert mob.probability(0, "edge") == 0
    assert mob.probability(30, "central") == 0
    assert mob.probability(10, "edge") == pytest.approx(1 - 2.718281828459045 ** -1)
    assert mob.probability(20, "edge") > mob.probability(10, "edge") > mob.probability(10, "regional")


def test_mobility_kappa_order_enforced():
    with pytest.raises(ValueError):
        MobilityRisk(kappa={"edge": 0.1, "regional": 0.3, "central": 0.0})


def test_context_validation():
    with pytest.raises(ValueError):
        ContextSummary(load_estimate={"a": 1.0})
    with pytest.raises(ValueError):
        ContextSummary(mobility_speed=-1)


def test_weights_validation():
    with pytest.raises(ValueError):
        RiskWeights(0, 0, 0)
    with pytest.raises(ValueError):
        RiskWeights(-1, 1, 1)


def test_predictor_estimate_consistent_with_slack(asp):
    m = LatencyModel()
    pred = AnalyticPredictor(m, ContextSummary(default_load=0.4))
    ttfb, p99, cost = pred.estimate(entry("a", cost=2.5), asp)
    assert 0 < ttfb < p99 and cost == 2.5
