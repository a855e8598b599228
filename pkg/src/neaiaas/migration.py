"""Risk-triggered, make-before-break re-anchoring of a serving session."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

from neaiaas.anchoring import AnalyticPredictor, ContextSummary, RiskEstimate, RiskWeights, select_anchor
from neaiaas.catalog import CatalogEntry, discover
from neaiaas.contract import (
    AISessionRecord,
    ContractFailure,
    EventKind,
    FailureCause,
    LifecycleEvent,
    Phase,
    SessionState,
    TimerConfig,
    TraceLog,
    ValidatedASP,
    transition,
)
from neaiaas.latency import LatencyModel
from neaiaas.txn import Managers, PreparedPair, confirm_pair, prepare, rollback


@dataclass(frozen=True)
class MigrationPolicy:
    delta: float = 0.2
    delta_prime: float = 0.2
    tau_mig: float = 250.0

    def __post_init__(self) -> None:
        if not (0 < self.delta <= 1 and 0 < self.delta_prime <= 1):
            raise ValueError("trigger thresholds must lie in (0, 1]")


def check_trigger(r: RiskEstimate, pol: MigrationPolicy) -> bool:
    return bool(r.p_tail_violation >= pol.delta or r.p_ff_violation >= pol.delta_prime)


class Stage(str, Enum):
    DISCOVER = "discover"
    PAGE = "page"
    PREPARE = "prepare"
    COMMIT = "commit"
    TRANSFER = "transfer"


@dataclass(frozen=True)
class StepDurations:
    """Simulated time (ms) each pipeline stage consumes."""

    discover: float = 2.0
    page: float = 1.0
    prepare: float = 5.0
    commit: float = 5.0
    transfer: float = 20.0

    def of(self, stage: Stage) -> float:
        return getattr(self, stage.value)


class MigrationResult(str, Enum):
    MIGRATED = "Migrated"
    ABORTED_PRESERVING_OLD = "AbortedPreservingOld"


@dataclass
class MigrationOutcome:
    result: MigrationResult
    cause: Optional[FailureCause] = None
    target: Optional[PreparedPair] = None
    elapsed: float = 0.0
    source_lost: bool = False

    @property
    def migrated(self) -> bool:
        return self.result is MigrationResult.MIGRATED


# inject(stage) -> cause to raise at that stage, or None
Injector = Callable[[Stage], Optional[FailureCause]]
# observer(now, session, target_pair, label) is called at every step boundary
Observer = Callable[[float, AISessionRecord, Optional[PreparedPair], str], None]


def migrate(
    session: AISessionRecord,
    catalog: Sequence[CatalogEntry],
    ctx: ContextSummary,
    managers: Managers,
    timers: TimerConfig,
    now: float,
    *,
    asp: ValidatedASP,
    predictor: Optional[AnalyticPredictor] = None,
    weights: RiskWeights = RiskWeights(),
    lam: float = 0.0,
    durations: StepDurations = StepDurations(),
    inject: Optional[Injector] = None,
    observer: Optional[Observer] = None,
    trace: Optional[TraceLog] = None,
) -> tuple[AISessionRecord, MigrationOutcome]:
    """Discover, page, prepare and commit a target, then release the source.

    The source binding stays confirmed until the target is confirmed, so the
    session always holds at least one committed binding. Any failure rolls
    the target back and returns the session to Serving on the source.
    """
    if session.state is not SessionState.SERVING:
        raise ValueError(f"migrate requires a serving session, got {session.state.value}")
    predictor = predictor or AnalyticPredictor(LatencyModel(), ctx)
    t = now
    target: Optional[PreparedPair] = None

    def emit(before: AISessionRecord, ev, after: AISessionRecord, cause=None) -> None:
        if trace is not None:
            trace.record(t, before, ev, after, cause)

    def observe(label: str) -> None:
        if observer is not None:
            observer(t, sess, target, label)

    start = LifecycleEvent(EventKind.MIGRATION_START)
    sess = transition(session, start, t)
    emit(session, start, sess)
    observe("start")

    def step(stage: Stage) -> None:
        nonlocal t
        t += durations.of(stage)
        cause = inject(stage) if inject is not None else None
        if cause is FailureCause.DEADLINE_EXPIRY:
            t = max(t, now + timers.tau_mig) + 1.0
        elif cause is not None:
            raise ContractFailure(cause, f"injected at {stage.value}")
        if t - now > timers.tau_mig:
            raise ContractFailure(FailureCause.DEADLINE_EXPIRY, f"tau_mig exceeded at {stage.value}")

    try:
        current = (sess.model_id, sess.model_version, sess.anchor_site)
        cands = discover(asp, catalog, predictor, lam, exclude=[current])
        step(Stage.DISCOVER)
        choice, _ = select_anchor(cands, ctx, asp, weights, predictor)
        step(Stage.PAGE)
        target = prepare(sess, choice, managers.sites[choice.entry.site_id], managers.qos, timers, t)
        step(Stage.PREPARE)
        observe("target_prepared")
        confirm_pair(target, timers, t)
        step(Stage.COMMIT)
        observe("target_committed")
        step(Stage.TRANSFER)
        observe("state_transferred")
    except ContractFailure as exc:
        if target is not None:
            rollback(target)
        if exc.cause is FailureCause.DEADLINE_EXPIRY:
            ev = LifecycleEvent(EventKind.TIMER_EXPIRED, phase=Phase.MIG)
        else:
            ev = LifecycleEvent(EventKind.MIGRATION_ABORT, cause=exc.cause)
        before, sess = sess, transition(sess, ev, t)
        emit(before, ev, sess, exc.cause)
        observe("aborted")
        lost = sess.compute_lease.expires_at <= t or sess.qos_lease.expires_at <= t
        return sess, MigrationOutcome(
            MigrationResult.ABORTED_PRESERVING_OLD, exc.cause, target, t - now, source_lost=lost
        )

    source = (sess.compute_lease, sess.qos_lease)
    cut = LifecycleEvent(EventKind.MIGRATION_COMMIT, binding=target.binding_fields())
    before, sess = sess, transition(sess, cut, t)
    emit(before, cut, sess)
    observe("cutover")
    for token in source:
        managers.release(token)
    observe("source_released")
    return sess, MigrationOutcome(MigrationResult.MIGRATED, None, target, t - now)

