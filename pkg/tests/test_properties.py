import math
from dataclasses import replace
from fractions import Fraction

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from neaiaas.anchoring import ContextSummary
from neaiaas.catalog import slack_score
from neaiaas.contract import (
    AIServiceProfile,
    AISessionRecord,
    EventKind,
    FailureCause,
    LifecycleEvent,
    Phase,
    Plane,
    ProtocolError,
    SessionState,
    TERMINAL_STATES,
    atomicity_holds,
    transition,
    validate_asp,
)
from neaiaas.lifecycle import Domain, FaultPlan, STAGES, check_domain
from neaiaas.telemetry import quantile
from neaiaas.txn import ComputeSite, Managers, QosPlane

from conftest import edge_catalog

floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@given(st.lists(floats, min_size=1, max_size=300), st.sampled_from([0.5, 0.95, 0.99, 1.0]))
def test_quantile_matches_rank_oracle(xs, p):
    k = math.ceil(Fraction(str(p)) * len(xs))
    assert quantile(xs, p) == sorted(xs)[k - 1]


@given(st.lists(floats, min_size=1, max_size=50), st.floats(min_value=0.01, max_value=1.0))
def test_quantile_is_a_sample_and_monotone(xs, p):
    q = quantile(xs, p)
    assert q in xs and quantile(xs, 1.0) == max(xs) and q >= min(xs)


bounds = st.floats(min_value=1, max_value=1000)


@given(bounds, bounds, st.floats(min_value=0, max_value=10), st.floats(min_value=0, max_value=5))
def test_slack_is_min_margin_minus_cost(ttfb, p99, cost, lam):
    asp = validate_asp(AIServiceProfile(500, 800, 900, 0.99, 1000))
    s = slack_score(ttfb, p99, cost, asp, lam)
    assert s <= 900 - p99 and s <= 500 - ttfb
    assert math.isclose(s + lam * cost, min(900 - p99, 500 - ttfb), abs_tol=1e-9)


events = st.builds(
    LifecycleEvent,
    st.sampled_from(list(EventKind)),
    plane=st.none() | st.sampled_from(list(Plane)),
    phase=st.none() | st.sampled_from(list(Phase)),
    cause=st.none() | st.sampled_from(list(FailureCause)),
)


@given(st.sampled_from(list(SessionState)), events)
def test_transition_total_and_deterministic(state, ev):
    rec = AISessionRecord("s", "d", state=state, cause=FailureCause.POLICY_DENIAL if state is SessionState.FAILED else None)
    outcomes = []
    for _ in range(2):
        try:
            outcomes.append(transition(rec, ev, 0.0))
        except ProtocolError as exc:
            outcomes.append(type(exc))
    assert outcomes[0] == outcomes[1]
    if state in TERMINAL_STATES:
        assert outcomes[0] is ProtocolError
    elif isinstance(outcomes[0], AISessionRecord) and outcomes[0].state is SessionState.FAILED:
        assert outcomes[0].cause is not None


class LifecycleMachine(RuleBasedStateMachine):
    """Random interleavings of sessions on shared managers; the domain
    snapshot invariant is checked after every applied event."""

    def __init__(self):
        super().__init__()
        cat = edge_catalog()
        mgr = Managers({e.site_id: ComputeSite(e.site_id, 2) for e in cat}, QosPlane(3))
        from neaiaas.contract import TimerConfig

        self.domain = Domain(cat, mgr, TimerConfig(10, 20, 50, 100, 250, 400), on_snapshot=check_domain)
        self.drivers = []

    def _pick(self, i, states):
        live = [d for d in self.drivers if d.state in states]
        return live[i % len(live)] if live else None

    @rule(fault=st.none() | st.tuples(st.sampled_from(STAGES), st.sampled_from(list(FailureCause))))
    def open_and_establish(self, fault):
        plan = FaultPlan({fault[0]: fault[1]} if fault else {})
        asp = AIServiceProfile(100, 150, 200, 0.99, 500, quality_tier=2)
        d = self.domain.open_session(asp, plan, seed=len(self.drivers))
        d.establish("m")
        self.drivers.append(d)

    @precondition(lambda self: any(d.state is SessionState.SERVING for d in self.drivers))
    @rule(i=st.integers(0, 50))
    def serve(self, i):
        d = self._pick(i, {SessionState.SERVING})
        before = d.record.served_requests
        d.serve_request()
        assert d.record.served_requests <= before + 1

    @rule(dt=st.floats(min_value=0, max_value=300))
    def advance(self, dt):
        self.domain.advance(dt)

    @precondition(lambda self: any(d.state is SessionState.SERVING for d in self.drivers))
    @rule(i=st.integers(0, 50), load=st.sampled_from([0.1, 0.5, 0.95]))
    def migrate(self, i, load):
        d = self._pick(i, {SessionState.SERVING})
        out = d.migrate(ContextSummary(default_load=load))
        if not out.migrated and not out.source_lost:
            assert d.state is SessionState.SERVING and d.record.leases_valid

    @precondition(lambda self: any(d.state not in TERMINAL_STATES for d in self.drivers))
    @rule(i=st.integers(0, 50))
    def revoke(self, i):
        d = self._pick(i, set(SessionState) - set(TERMINAL_STATES))
        d.revoke_consent()
        assert not d.record.serving_enabled and d.serve_request() is None

    @precondition(lambda self: any(d.state not in TERMINAL_STATES for d in self.drivers))
    @rule(i=st.integers(0, 50))
    def release(self, i):
        d = self._pick(i, set(SessionState) - set(TERMINAL_STATES))
        d.release()
        assert not self.domain.managers.held_by(d.record.session_id)

    @invariant()
    def atomic(self):
        for d in self.drivers:
            assert atomicity_holds(d.record)
            if d.state is SessionState.FAILED:
                assert d.record.cause is not None
        self.domain.managers.check()


LifecycleMachine.TestCase.settings = settings(
    max_examples=200, stateful_step_count=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
TestLifecycleMachine = LifecycleMachine.TestCase


@given(st.floats(min_value=0.0, max_value=0.999), st.floats(min_value=0.0, max_value=0.999))
@settings(max_examples=50, deadline=None)
def test_profile_digest_stable(a, b):
    pa, pb = 0.5 + a / 2, 0.5 + b / 2
    p = AIServiceProfile(100, 150, 200, pa, 500)
    assert p.digest() == replace(p).digest()
    assert (p.digest() == replace(p, completion_prob_min=pb).digest()) == (pa == pb)
