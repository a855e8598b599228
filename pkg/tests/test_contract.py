import itertools
import json
from dataclasses import replace

import pytest

from neaiaas.contract import (
    AIServiceProfile,
    AISessionRecord,
    ContractFailure,
    EventKind,
    FailureCause,
    LifecycleEvent,
    Phase,
    Plane,
    PrivacyScope,
    ProtocolError,
    SessionState,
    TimerConfig,
    TraceLog,
    atomicity_holds,
    evaluate_compliance,
    is_violation,
    transition,
    validate_asp,
    validate_timers,
)
from neaiaas.telemetry import RequestSample, TelemetryWindow, window_stats
from neaiaas.txn import ComputeSite, QosPlane, confirm_pair, prepare

S, E = SessionState, EventKind


def base(**kw):
    args = dict(ttfb_bound=50, p95_bound=80, p99_bound=100, completion_prob_min=0.99,
                hard_timeout=200, rate_min=0)
    args.update(kw)
    return AIServiceProfile(**args)


def test_failure_cause_is_closed_nine():
    assert {c.value for c in FailureCause} == {
        "consent_violation", "policy_denial", "sovereignty_violation", "model_unavailable",
        "no_feasible_binding", "compute_scarcity", "qos_scarcity", "state_transfer_failure",
        "deadline_expiry",
    }


def test_validate_asp_accepts_ordered_bounds():
    v = validate_asp(base())
    assert v.p99_bound == 100 and v.profile == base()


@pytest.mark.parametrize("kw", [
    dict(ttfb_bound=120),
    dict(completion_prob_min=0),
    dict(completion_prob_min=1.2),
    dict(p99_bound=300),
    dict(p95_bound=120),
    dict(ttfb_bound=0),
    dict(rate_min=-1),
    dict(cost_envelope=-1),
    dict(quality_tier=2, fallback_ladder=(1, 1)),
    dict(quality_tier=2, fallback_ladder=(3,)),
])
def test_validate_asp_rejects(kw):
    with pytest.raises(ContractFailure) as ei:
        validate_asp(base(**kw))
    assert ei.value.cause is FailureCause.POLICY_DENIAL
    assert ei.value.detail


def test_completion_prob_one_is_allowed():
    validate_asp(base(completion_prob_min=1.0))


def test_validate_timers_examples():
    asp = validate_asp(base())
    validate_timers(TimerConfig(1, 2, 3, 4, 50, 100), asp)
    for bad in (TimerConfig(2, 1, 3, 4, 50, 100), TimerConfig(1, 2, 3, 4, 150, 100)):
        with pytest.raises(ContractFailure) as ei:
            validate_timers(bad, asp)
        assert ei.value.cause is FailureCause.POLICY_DENIAL
        assert "timer order violated" in ei.value.detail


def test_validate_timers_mig_bounded_by_timeout():
    asp = validate_asp(base())
    with pytest.raises(ContractFailure):
        validate_timers(TimerConfig(1, 2, 3, 4, 201, 1000), asp)


def test_timer_rule_exhaustive_small_grid():
    asp = validate_asp(base(hard_timeout=3, p99_bound=3, p95_bound=2, ttfb_bound=1))
    for a, b, c, d, mig, lease in itertools.product(range(1, 4), repeat=6):
        expect = a <= b <= c <= d and mig <= min(3, lease)
        try:
            validate_timers(TimerConfig(a, b, c, d, mig, lease), asp)
            got = True
        except ContractFailure:
            got = False
        assert got == expect, (a, b, c, d, mig, lease)


def test_privacy_scope_zones():
    assert PrivacyScope.STRICT.allowed_zones == {"domestic"}
    assert PrivacyScope.REGIONAL.allowed_zones == {"domestic", "allied"}
    assert "foreign" in PrivacyScope.OPEN.allowed_zones


def test_digest_is_stable_and_content_addressed():
    assert base().digest() == base().digest()
    assert base().digest() != base(p99_bound=101).digest()


# -- automaton ---------------------------------------------------------------


def bound_record(state=S.SERVING, timers=TimerConfig(1, 2, 3, 4, 50, 100)):
    site, qos = ComputeSite("e", 2), QosPlane(2)
    rec = AISessionRecord("s", "d", state=S.ANCHORED)
    pair = prepare(rec, None, site, qos, timers, 0.0)
    confirm_pair(pair, timers, 0.0)
    return replace(rec, state=state, **pair.binding_fields()), pair


def ev(kind, **kw):
    return LifecycleEvent(kind, **kw)


def test_forward_path_to_serving():
    rec = AISessionRecord("s", "d")
    for kind, want in [(E.DISCOVER_DONE, S.DISCOVERING), (E.ANCHOR_DONE, S.ANCHORED),
                       (E.PREPARE_DONE, S.PREPARING)]:
        rec = transition(rec, ev(kind), 0)
        assert rec.state is want
    _, pair = bound_record()
    rec = transition(rec, ev(E.COMMIT_DONE, binding=pair.binding_fields()), 0)
    assert rec.state is S.COMMITTED and atomicity_holds(rec)
    rec = transition(rec, ev(E.SERVE), 0)
    assert rec.state is S.SERVING and rec.serving_enabled


def test_commit_done_without_leases_is_protocol_error():
    rec = AISessionRecord("s", "d", state=S.PREPARING)
    with pytest.raises(ProtocolError):
        transition(rec, ev(E.COMMIT_DONE), 0)


def test_consent_revoked_stops_serving():
    rec, _ = bound_record()
    out = transition(rec, ev(E.CONSENT_REVOKED), 5)
    assert out.state is S.RELEASED
    assert out.cause is FailureCause.CONSENT_VIOLATION
    assert not out.serving_enabled and not out.authz_valid
    with pytest.raises(ProtocolError):
        transition(out, ev(E.REQUEST_SERVED), 6)


def test_lease_expired_leaves_committed():
    rec, _ = bound_record(S.COMMITTED)
    out = transition(rec, ev(E.LEASE_EXPIRED, plane=Plane.QOS), 5)
    assert out.state is not S.COMMITTED
    assert out.state is S.FAILED and out.cause is FailureCause.DEADLINE_EXPIRY


def test_timer_expired_during_migration_preserves_old_binding():
    rec, pair = bound_record(S.MIGRATING)
    out = transition(rec, ev(E.TIMER_EXPIRED, phase=Phase.MIG), 5)
    assert out.state is S.SERVING
    assert out.migration_cause is FailureCause.DEADLINE_EXPIRY
    assert out.compute_lease is pair.compute and out.qos_lease is pair.qos


@pytest.mark.parametrize("state", [S.IDLE, S.DISCOVERING, S.ANCHORED, S.PREPARING])
def test_timer_expired_elsewhere_fails(state):
    out = transition(AISessionRecord("s", "d", state=state), ev(E.TIMER_EXPIRED, phase=Phase.PAGE), 0)
    assert out.state is S.FAILED and out.cause is FailureCause.DEADLINE_EXPIRY


def test_terminal_states_reject_everything():
    for st in (S.RELEASED, S.FAILED):
        rec = AISessionRecord("s", "d", state=st, cause=FailureCause.QOS_SCARCITY)
        for kind in EventKind:
            with pytest.raises(ProtocolError):
                transition(rec, ev(kind, cause=FailureCause.POLICY_DENIAL), 0)


def test_undefined_pairs_are_rejected():
    with pytest.raises(ProtocolError):
        transition(AISessionRecord("s", "d"), ev(E.MIGRATION_START), 0)
    with pytest.raises(ProtocolError):
        transition(AISessionRecord("s", "d"), ev(E.LEASE_EXPIRED, plane=Plane.COMPUTE), 0)
    rec, _ = bound_record()
    with pytest.raises(ProtocolError):
        transition(rec, ev(E.FAIL, cause=FailureCause.QOS_SCARCITY), 0)


def test_atomicity_holds_flags_half_binding():
    rec, pair = bound_record()
    assert atomicity_holds(rec)
    pair.site.expire_due(1e9)
    assert not atomicity_holds(rec)


def test_migration_abort_records_cause():
    rec, _ = bound_record(S.MIGRATING)
    out = transition(rec, ev(E.MIGRATION_ABORT, cause=FailureCause.QOS_SCARCITY), 0)
    assert out.state is S.SERVING and out.migration_cause is FailureCause.QOS_SCARCITY


# -- compliance --------------------------------------------------------------


def test_single_request_violation_examples():
    asp = validate_asp(base(p99_bound=100, hard_timeout=200, p95_bound=90))
    assert is_violation(150, asp)
    assert not is_violation(90, asp)
    assert is_violation(201, asp)


def sample(t, lat, done=True):
    return RequestSample(t, min(lat, 1.0), lat, done)


def test_compliance_verdict():
    asp = validate_asp(base(p99_bound=100, hard_timeout=600, p95_bound=90, ttfb_bound=50))
    lats = [1.0] * 10 + [500.0]
    w = TelemetryWindow(0, 100, tuple(sample(i, x) for i, x in enumerate(lats)))
    stats = window_stats(w, asp)
    assert stats.q99_hat == sorted(lats)[-1] == 500.0
    v = evaluate_compliance(stats, asp)
    assert not v.p99_ok and not v.compliant
    assert v.ttfb_ok and v.completion_ok  # 500 ms still finished before T_max


def test_compliance_all_good():
    asp = validate_asp(base(completion_prob_min=0.9))
    w = TelemetryWindow(0, 100, tuple(sample(i, 10.0) for i in range(10)))
    assert evaluate_compliance(window_stats(w, asp), asp).compliant


def test_empty_stats_is_an_error():
    from neaiaas.telemetry import WindowStats
    with pytest.raises(ValueError):
        evaluate_compliance(WindowStats(0, 0, 0, 1, 0, 0, 0), validate_asp(base()))


def test_trace_log_lines_are_json():
    log = TraceLog()
    a = AISessionRecord("s1", "d")
    b = transition(a, ev(E.FAIL, cause=FailureCause.MODEL_UNAVAILABLE), 3.0)
    log.record(3.0, a, ev(E.FAIL, cause=FailureCause.MODEL_UNAVAILABLE), b)
    row = json.loads(log.dumps().strip())
    assert row == {
        "timestamp": 3.0, "session_id": "s1", "state_before": "Idle",
        "event": "Fail(model_unavailable)", "state_after": "Failed(model_unavailable)",
        "cause": "model_unavailable",
    }
