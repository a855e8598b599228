import json
import random

import jsonschema
import pytest

from neaiaas.catalog import (
    CandidateBinding,
    admissibility_filter,
    discover,
    load_catalog,
    parse_catalog,
    rank,
    slack_score,
)
from neaiaas.contract import AIServiceProfile, ContractFailure, FailureCause, PrivacyScope, validate_asp

from conftest import TablePredictor, entry


def profile(**kw):
    args = dict(ttfb_bound=50, p95_bound=80, p99_bound=100, completion_prob_min=0.99, hard_timeout=200)
    args.update(kw)
    return validate_asp(AIServiceProfile(**args))


def test_slack_hand_arithmetic():
    assert slack_score(30, 80, 10, profile(), 0.1) == pytest.approx(19.0)


def test_slack_at_bounds_is_zero():
    assert slack_score(50, 100, 7, profile(), 0.0) == 0.0


def test_slack_negative_flags_candidate():
    sl = slack_score(30, 120, 5, profile(), 0.1)
    assert sl == pytest.approx(min(-20, 20) - 0.5)
    assert not CandidateBinding(entry("a"), 30, 120, 5, sl).compliant


def test_filter_constraints():
    asp = profile(privacy_scope=PrivacyScope.STRICT, quality_tier=2, cost_envelope=5)
    assert not admissibility_filter(entry("a", zone="foreign", tier=2), asp)
    assert not admissibility_filter(entry("a", tier=1), asp)
    assert not admissibility_filter(entry("a", tier=2, deps={"gpu"}), asp)
    assert not admissibility_filter(entry("a", tier=2, cost=6), asp)
    assert admissibility_filter(entry("a", tier=2, deps={"gpu"}, hw={"gpu", "npu"}, cost=5), asp)


def test_discover_drops_sovereignty_excluded():
    asp = profile(privacy_scope=PrivacyScope.REGIONAL)
    cat = [entry("a"), entry("b", zone="allied"), entry("c", zone="foreign")]
    pred = TablePredictor({k: (30, 80, 1) for k in "abc"})
    got = discover(asp, cat, pred)
    assert [c.entry.site_id for c in got] == ["a", "b"]


def test_discover_ranks_by_slack():
    pred = TablePredictor({"a": (45, 95, 1), "b": (30, 80, 1)})
    got = discover(profile(), [entry("a"), entry("b")], pred)
    assert [c.slack for c in got] == [20, 5]
    assert got[0].entry.site_id == "b"


def test_discover_tie_break_cost_then_ids():
    pred = TablePredictor({"x": (30, 80, 3), "b": (30, 80, 1), "a": (30, 80, 1)})
    got = discover(profile(), [entry("x", cost=3), entry("b"), entry("a")], pred)
    assert [c.entry.site_id for c in got] == ["a", "b", "x"]


def test_discover_keeps_flagged_candidates():
    pred = TablePredictor({"a": (30, 150, 1)})
    got = discover(profile(), [entry("a")], pred)
    assert len(got) == 1 and not got[0].compliant


def test_empty_admissible_set_no_ladder():
    with pytest.raises(ContractFailure) as ei:
        discover(profile(quality_tier=3), [entry("a", tier=1)], TablePredictor({}))
    assert ei.value.cause is FailureCause.NO_FEASIBLE_BINDING


def test_sovereignty_only_failure():
    asp = profile(privacy_scope=PrivacyScope.STRICT)
    with pytest.raises(ContractFailure) as ei:
        discover(asp, [entry("a", zone="foreign"), entry("b", zone="allied")], TablePredictor({}))
    assert ei.value.cause is FailureCause.SOVEREIGNTY_VIOLATION


def test_mixed_exclusion_is_no_feasible_binding():
    asp = profile(privacy_scope=PrivacyScope.STRICT, quality_tier=2)
    cat = [entry("a", zone="foreign", tier=2), entry("b", tier=1)]
    with pytest.raises(ContractFailure) as ei:
        discover(asp, cat, TablePredictor({}))
    assert ei.value.cause is FailureCause.NO_FEASIBLE_BINDING


def test_model_unavailable():
    with pytest.raises(ContractFailure) as ei:
        discover(profile(), [entry("a")], TablePredictor({}), model_id="other")
    assert ei.value.cause is FailureCause.MODEL_UNAVAILABLE


def test_fallback_ladder():
    asp = profile(quality_tier=3, fallback_ladder=(2, 1))
    pred = TablePredictor({"a": (30, 80, 1), "b": (30, 80, 1)})
    got = discover(asp, [entry("a", tier=1), entry("b", tier=2)], pred)
    assert [c.entry.site_id for c in got] == ["b"]
    got = discover(profile(quality_tier=3, fallback_ladder=(1,)), [entry("a", tier=1)], pred)
    assert [c.entry.site_id for c in got] == ["a"]


def test_exclude_current_binding():
    pred = TablePredictor({"a": (30, 80, 1), "b": (30, 90, 1)})
    got = discover(profile(), [entry("a"), entry("b")], pred, exclude=[("m", "1", "a")])
    assert [c.entry.site_id for c in got] == ["b"]


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        slack_score(1, 1, 1, profile(), -0.1)


def _random_catalog(rng):
    zones, classes = ("domestic", "allied", "foreign"), ("edge", "regional", "central")
    return [
        entry(f"s{i}", tier=rng.randint(1, 3), zone=rng.choice(zones), site_class=rng.choice(classes),
              cost=rng.uniform(0, 10), deps=set(rng.sample(["gpu", "npu"], rng.randint(0, 2))),
              hw=set(rng.sample(["gpu", "npu", "cpu"], rng.randint(0, 3))))
        for i in range(rng.randint(1, 12))
    ]


def test_filter_soundness_random_catalogs():
    rng = random.Random(17)
    scopes = list(PrivacyScope)
    for _ in range(300):
        cat = _random_catalog(rng)
        asp = profile(privacy_scope=rng.choice(scopes), quality_tier=rng.randint(1, 3),
                      cost_envelope=rng.uniform(0, 10))
        pred = TablePredictor({e.site_id: (rng.uniform(10, 60), rng.uniform(50, 150), e.base_cost) for e in cat})
        try:
            got = discover(asp, cat, pred)
        except ContractFailure:
            assert not any(admissibility_filter(e, asp) for e in cat)
            continue
        assert all(admissibility_filter(c.entry, asp) for c in got)
        assert got == rank(got)


def test_cost_scaling_keeps_ranking_without_lambda():
    rng = random.Random(4)
    cat = [entry(f"s{i}", cost=rng.uniform(0, 3)) for i in range(8)]
    base = {e.site_id: (rng.uniform(10, 60), rng.uniform(50, 150), e.base_cost) for e in cat}
    scaled = {k: (a, b, 7 * c) for k, (a, b, c) in base.items()}
    one = [c.entry.site_id for c in discover(profile(), cat, TablePredictor(base))]
    two = [c.entry.site_id for c in discover(profile(), cat, TablePredictor(scaled))]
    assert one == two


def test_discover_deterministic():
    pred = TablePredictor({"a": (30, 80, 1), "b": (30, 80, 1)})
    cat = [entry("b"), entry("a")]
    assert repr(discover(profile(), cat, pred)) == repr(discover(profile(), cat, pred))


def test_catalog_file_roundtrip(tmp_path):
    data = [{"model_id": "m", "model_version": "1", "site_id": "e1", "site_class": "edge",
             "quality_tier": 2, "sovereignty_zone": "domestic", "base_cost": 1.5,
             "hardware_deps": ["gpu"], "site_hardware": ["gpu"]}]
    path = tmp_path / "cat.json"
    path.write_text(json.dumps(data))
    (e,) = load_catalog(path)
    assert e.hardware_deps == {"gpu"} and e.base_cost == 1.5


def test_catalog_schema_rejects_unknown_zone():
    bad = [{"model_id": "m", "model_version": "1", "site_id": "e1", "site_class": "edge",
            "quality_tier": 2, "sovereignty_zone": "moon", "base_cost": 1.5}]
    with pytest.raises(jsonschema.ValidationError):
        parse_catalog(bad)


def test_catalog_duplicate_binding_rejected():
    row = {"model_id": "m", "model_version": "1", "site_id": "e1", "site_class": "edge",
           "quality_tier": 2, "sovereignty_zone": "domestic", "base_cost": 1.5}
    with pytest.raises(ValueError):
        parse_catalog([row, dict(row)])
