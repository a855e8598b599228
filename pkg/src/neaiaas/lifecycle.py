"""Session driver: runs one AI session through the full lifecycle on a shared
discrete-event clock, with optional fault injection at any stage.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from neaiaas.anchoring import AnalyticPredictor, ContextSummary, RiskWeights, select_anchor
from neaiaas.catalog import CandidateBinding, CatalogEntry, discover
from neaiaas.contract import (
    AIServiceProfile,
    AISessionRecord,
    ContractFailure,
    EventKind,
    FailureCause,
    LifecycleEvent,
    Phase,
    ProtocolError,
    SessionState,
    TERMINAL_STATES,
    TimerConfig,
    TraceLog,
    ValidatedASP,
    atomicity_holds,
    transition,
    validate_asp,
    validate_timers,
)
from neaiaas.latency import LatencyModel, sample_infer, sample_wq
from neaiaas.migration import MigrationOutcome, MigrationResult, Stage, StepDurations, migrate
from neaiaas.telemetry import RequestSample, TelemetryWindow, ingest
from neaiaas.txn import LeaseExpired, Managers, PreparedPair, commit, lease_tick, prepare, rollback

STAGES = (
    "validate",
    "discover",
    "page",
    "prepare",
    "commit",
    "serve",
    "migrate.discover",
    "migrate.page",
    "migrate.prepare",
    "migrate.commit",
    "migrate.transfer",
)

DEFAULT_STAGE = {
    FailureCause.POLICY_DENIAL: "validate",
    FailureCause.MODEL_UNAVAILABLE: "discover",
    FailureCause.SOVEREIGNTY_VIOLATION: "discover",
    FailureCause.NO_FEASIBLE_BINDING: "discover",
    FailureCause.COMPUTE_SCARCITY: "prepare",
    FailureCause.QOS_SCARCITY: "prepare",
    FailureCause.DEADLINE_EXPIRY: "commit",
    FailureCause.CONSENT_VIOLATION: "serve",
    FailureCause.STATE_TRANSFER_FAILURE: "migrate.transfer",
}


class _Preempted(Exception):
    """Raised inside a migration observer when the session was terminated."""


def parse_injection(item: str) -> tuple[str, FailureCause]:
    """``CAUSE[@STAGE]`` or ``CAUSE_at_STAGE`` -> (stage, cause)."""
    if "@" in item:
        cause_s, stage = item.split("@", 1)
    elif "_at_" in item:
        cause_s, stage = item.split("_at_", 1)
    else:
        cause_s, stage = item, None
    try:
        cause = FailureCause(cause_s)
    except ValueError:
        raise ValueError(f"unknown failure cause {cause_s!r}") from None
    stage = stage or DEFAULT_STAGE[cause]
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    return stage, cause


@dataclass
class FaultPlan:
    """Faults keyed by stage; each fires once."""

    faults: dict[str, FailureCause] = field(default_factory=dict)

    @classmethod
    def parse(cls, items: Sequence[str]) -> "FaultPlan":
        plan = cls()
        for item in items:
            stage, cause = parse_injection(item)
            plan.faults[stage] = cause
        return plan

    def take(self, stage: str) -> Optional[FailureCause]:
        return self.faults.pop(stage, None)

    def migration_injector(self) -> Callable[[Stage], Optional[FailureCause]]:
        return lambda st: self.take(f"migrate.{st.value}")


@dataclass
class Domain:
    """One operator domain: catalog, resource managers and the shared clock."""

    catalog: list[CatalogEntry]
    managers: Managers
    timers: TimerConfig
    model: LatencyModel = field(default_factory=LatencyModel)
    ctx: ContextSummary = field(default_factory=ContextSummary)
    weights: RiskWeights = field(default_factory=RiskWeights)
    lam: float = 0.0
    durations: StepDurations = field(default_factory=StepDurations)
    window_ms: float = 1000.0
    now: float = 0.0
    sessions: dict[str, "SessionDriver"] = field(default_factory=dict)
    # called after every applied event with the domain; used by invariant harnesses
    on_snapshot: Optional[Callable[["Domain"], None]] = None
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1), repr=False)
    _in_tick: bool = field(default=False, repr=False)

    def predictor(self, ctx: Optional[ContextSummary] = None) -> AnalyticPredictor:
        return AnalyticPredictor(self.model, ctx or self.ctx)

    def open_session(
        self,
        asp: AIServiceProfile,
        faults: Optional[FaultPlan] = None,
        trace: Optional[TraceLog] = None,
        seed: int = 0,
    ) -> "SessionDriver":
        sid = f"ais-{next(self._ids):06d}"
        driver = SessionDriver(self, sid, asp, faults or FaultPlan(), trace or TraceLog(), seed)
        self.sessions[sid] = driver
        return driver

    def advance(self, dt: float) -> list[LeaseExpired]:
        if dt < 0:
            raise ValueError("the clock only moves forward")
        self.now += dt
        # every expiry due at this instant is one step: observers see the
        # domain before the tick or after all resulting transitions
        self._in_tick = True
        try:
            expired = lease_tick(self.managers, self.now)
            for ev in expired:
                driver = self.sessions.get(ev.owner)
                if driver is not None:
                    driver.on_lease_expired(ev)
        finally:
            self._in_tick = False
        self.snapshot()
        return expired

    def snapshot(self) -> None:
        if self.on_snapshot is not None and not self._in_tick:
            self.on_snapshot(self)


def check_domain(domain: Domain) -> None:
    """Global snapshot: per-session atomicity and per-manager bookkeeping."""
    domain.managers.check()
    for driver in domain.sessions.values():
        assert atomicity_holds(driver.record), driver.record.state_label()


class SessionDriver:
    def __init__(
        self,
        domain: Domain,
        session_id: str,
        asp: AIServiceProfile,
        faults: FaultPlan,
        trace: TraceLog,
        seed: int = 0,
    ):
        self.domain = domain
        self.profile = asp
        self.asp: Optional[ValidatedASP] = None
        self.faults = faults
        self.trace = trace
        self.rng = np.random.default_rng(seed)
        self.record = AISessionRecord(
            session_id=session_id,
            asp_digest=asp.digest(),
            authz_ref=f"authz-{session_id}",
            charging_ref=f"chg-{session_id}",
        )
        self.pair: Optional[PreparedPair] = None
        self.anchor: Optional[CandidateBinding] = None
        self.window = TelemetryWindow(0.0, domain.window_ms)
        self.windows: list[TelemetryWindow] = []
        self.migrations: list[MigrationOutcome] = []

    # -- bookkeeping ---------------------------------------------------------

    @property
    def state(self) -> SessionState:
        return self.record.state

    def _log(self, before: AISessionRecord, event, cause: Optional[FailureCause] = None) -> None:
        self.trace.record(self.domain.now, before, event, self.record, cause)

    def apply(self, event: LifecycleEvent) -> AISessionRecord:
        before = self.record
        self.record = transition(before, event, self.domain.now)
        self._log(before, event)
        if self.record.state in TERMINAL_STATES:
            self._release_all()
        self.domain.snapshot()
        return self.record

    def _release_all(self) -> None:
        managers = self.domain.managers
        for token in managers.held_by(self.record.session_id):
            managers.release(token)

    def _fail(self, exc: ContractFailure, phase: Optional[Phase] = None) -> AISessionRecord:
        if exc.cause is FailureCause.DEADLINE_EXPIRY and phase is not None:
            return self.apply(LifecycleEvent(EventKind.TIMER_EXPIRED, phase=phase))
        return self.apply(LifecycleEvent(EventKind.FAIL, cause=exc.cause))

    # -- establishment -------------------------------------------------------

    def establish(self, model_id: Optional[str] = None) -> AISessionRecord:
        """DISCOVER, PAGE, PREPARE, COMMIT, then start serving.

        Returns the record; a failed phase leaves it in Failed(cause).
        """
        d = self.domain
        try:
            fault = self.faults.take("validate")
            if fault is FailureCause.POLICY_DENIAL:
                self.profile = replace(self.profile, completion_prob_min=0.0)
            elif fault is not None:
                raise ContractFailure(fault, "injected at validate")
            self.asp = validate_asp(self.profile)
            validate_timers(d.timers, self.asp)
        except ContractFailure as exc:
            return self._fail(exc)

        phases = (
            ("discover", Phase.DISC, self._discover),
            ("page", Phase.PAGE, self._page),
            ("prepare", Phase.PREP, self._prepare),
            ("commit", Phase.COM, self._commit),
        )
        for stage, phase, run in phases:
            fault = self.faults.take(stage)
            try:
                run(fault, model_id)
            except ContractFailure as exc:
                return self._fail(exc, phase)
        return self.apply(LifecycleEvent(EventKind.SERVE))

    def _elapsed(self, fault: Optional[FailureCause], tau: float, nominal: float) -> float:
        return tau + 1.0 if fault is FailureCause.DEADLINE_EXPIRY else nominal

    def _raise_injected(self, fault: Optional[FailureCause], stage: str, handled=()) -> None:
        if fault is not None and fault not in handled and fault is not FailureCause.DEADLINE_EXPIRY:
            raise ContractFailure(fault, f"injected at {stage}")

    def _discover(self, fault, model_id) -> None:
        d = self.domain
        if fault is FailureCause.MODEL_UNAVAILABLE:
            model_id = "__absent_model__"
        self._raise_injected(fault, "discover", (FailureCause.MODEL_UNAVAILABLE,))
        cands = discover(self.asp, d.catalog, d.predictor(), d.lam, model_id=model_id)
        if self._elapsed(fault, d.timers.tau_disc, d.durations.discover) > d.timers.tau_disc:
            raise ContractFailure(FailureCause.DEADLINE_EXPIRY, "tau_disc exceeded")
        self.candidates = cands
        self.apply(LifecycleEvent(EventKind.DISCOVER_DONE))

    def _page(self, fault, _model_id) -> None:
        d = self.domain
        self._raise_injected(fault, "page")
        spent = self._elapsed(fault, d.timers.tau_page, d.durations.page)
        choice, risk = select_anchor(
            self.candidates, d.ctx, self.asp, d.weights, d.predictor(),
            clock=lambda: spent, deadline=d.timers.tau_page,
        )
        self.anchor = choice
        self.apply(LifecycleEvent(EventKind.ANCHOR_DONE))

    def _prepare(self, fault, _model_id) -> None:
        d = self.domain
        site = d.managers.sites[self.anchor.entry.site_id]
        saturate = None
        if fault is FailureCause.COMPUTE_SCARCITY:
            saturate = site
        elif fault is FailureCause.QOS_SCARCITY:
            saturate = d.managers.qos
        self._raise_injected(fault, "prepare", (FailureCause.COMPUTE_SCARCITY, FailureCause.QOS_SCARCITY))
        saved = None
        if saturate is not None:
            saved = saturate.background
            saturate.background += saturate.free
        try:
            self.pair = prepare(
                self.record, self.anchor, site, d.managers.qos, d.timers, d.now,
                elapsed=self._elapsed(fault, d.timers.tau_prep, d.durations.prepare),
            )
        except ContractFailure as exc:
            self.trace.record(d.now, self.record, "Rollback", self.record, exc.cause)
            raise
        finally:
            if saturate is not None:
                saturate.background = saved
        self.apply(LifecycleEvent(EventKind.PREPARE_DONE))

    def _commit(self, fault, _model_id) -> None:
        d = self.domain
        self._raise_injected_with_rollback(fault, "commit")
        before = self.record
        try:
            self.record = commit(
                self.record, self.pair, d.timers, d.now,
                elapsed=self._elapsed(fault, d.timers.tau_com, d.durations.commit),
            )
        except ContractFailure as exc:
            self.trace.record(d.now, self.record, "Rollback", self.record, exc.cause)
            raise
        self._log(before, LifecycleEvent(EventKind.COMMIT_DONE))
        d.snapshot()

    def _raise_injected_with_rollback(self, fault, stage: str) -> None:
        if fault is not None and fault is not FailureCause.DEADLINE_EXPIRY:
            rollback(self.pair)
            self.trace.record(self.domain.now, self.record, "Rollback", self.record, fault)
            raise ContractFailure(fault, f"injected at {stage}")

    # -- serving -------------------------------------------------------------

    def serve_request(self) -> Optional[RequestSample]:
        """Serve one request on the current binding and ingest its telemetry.

        Returns None (and serves nothing) if serving is disabled.
        """
        d = self.domain
        if self.faults.take("serve") is FailureCause.CONSENT_VIOLATION:
            self.revoke_consent()
        if not self.record.serving_enabled:
            return None
        sample = self._draw_sample()
        if d.now >= self.window.window_end:
            self.windows.append(self.window)
            start = d.now - (d.now % d.window_ms)
            self.window = TelemetryWindow(start, start + d.window_ms)
        try:
            self.window = ingest(self.window, sample, self.record)
        except ContractFailure:
            return None
        self.apply(LifecycleEvent(EventKind.REQUEST_SERVED))
        return sample

    def _draw_sample(self) -> RequestSample:
        d, m = self.domain, self.domain.model
        site_id = self.record.anchor_site
        entry = next(e for e in d.catalog if e.site_id == site_id)
        load = d.ctx.load_of(site_id)
        wq = sample_wq(min(load, 0.999), m.service_mean, self.rng)
        infer = float(sample_infer(m, self.rng, 1)[0])
        net = (
            m.net_qos_base
            + m.site_offsets[entry.site_class]
            + d.ctx.rtt_of(entry.site_class)
            + float(self.rng.uniform(-m.net_qos_jitter, m.net_qos_jitter))
        )
        total = wq + infer + net
        ttfb = wq + net + m.ttfb_fraction * infer
        done = total <= self.asp.hard_timeout
        return RequestSample(
            timestamp=d.now,
            ttfb=ttfb,
            total_latency=total,
            completed=done,
            queue_delay_proxy=wq,
            delivered_rate=1000.0 / infer if done else 0.0,
        )

    def revoke_consent(self) -> AISessionRecord:
        if self.record.state in TERMINAL_STATES:
            return self.record
        return self.apply(LifecycleEvent(EventKind.CONSENT_REVOKED))

    def release(self) -> AISessionRecord:
        return self.apply(LifecycleEvent(EventKind.RELEASE))

    def timer_expired(self, phase: Phase) -> AISessionRecord:
        return self.apply(LifecycleEvent(EventKind.TIMER_EXPIRED, phase=phase))

    def on_lease_expired(self, ev: LeaseExpired) -> None:
        rec = self.record
        mine = {t.lease_id for t in (rec.compute_lease, rec.qos_lease) if t is not None}
        if ev.lease_id not in mine or rec.state in TERMINAL_STATES:
            return
        try:
            self.apply(ev.as_event())
        except ProtocolError:
            pass

    # -- migration -----------------------------------------------------------

    def migrate(self, ctx: Optional[ContextSummary] = None, observer=None) -> MigrationOutcome:
        d = self.domain
        ctx = ctx or d.ctx
        before = self.record
        start_clock = d.now

        last = {"target": None, "now": start_clock}

        def snap(now, record, target, label):
            self.record = record
            last.update(target=target, now=now)
            if observer is not None:
                observer(now, record, target, label)
            d.snapshot()
            # an event applied from outside (consent revocation) ended the
            # session; the pipeline must not carry on and revive it
            if self.record.state in TERMINAL_STATES:
                raise _Preempted

        try:
            self.record, outcome = migrate(
                before, d.catalog, ctx, d.managers, d.timers, start_clock,
                asp=self.asp, predictor=d.predictor(ctx), weights=d.weights, lam=d.lam,
                durations=d.durations, inject=self.faults.migration_injector(),
                observer=snap, trace=self.trace,
            )
        except _Preempted:
            if last["target"] is not None:
                rollback(last["target"])
            outcome = MigrationOutcome(
                MigrationResult.ABORTED_PRESERVING_OLD, self.record.cause, last["target"],
                last["now"] - start_clock, source_lost=True,
            )
        self.migrations.append(outcome)
        if outcome.migrated:
            self.pair = outcome.target
            self.anchor = outcome.target.anchor
        d.advance(outcome.elapsed)
        return outcome
