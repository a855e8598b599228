"""Randomized lifecycle and transaction traces with invariant counters.

The harness never asserts; it counts. Callers decide what a failure is, so
the same runs back the unit tests, the acceptance suite and ad-hoc soak runs.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from neaiaas.anchoring import ContextSummary
from neaiaas.catalog import CatalogEntry
from neaiaas.contract import (
    AIServiceProfile,
    AISessionRecord,
    ContractFailure,
    FailureCause,
    PrivacyScope,
    SessionState,
    TERMINAL_STATES,
    TimerConfig,
    atomicity_holds,
    lease_valid,
)
from neaiaas.lifecycle import Domain, FaultPlan, SessionDriver
from neaiaas.txn import (
    ComputeSite,
    Managers,
    PreparedPair,
    QosPlane,
    confirm_pair,
    lease_tick,
    prepare,
    rollback,
)

_C = FailureCause
_MIGRATION_CAUSES = (
    _C.NO_FEASIBLE_BINDING,
    _C.COMPUTE_SCARCITY,
    _C.QOS_SCARCITY,
    _C.DEADLINE_EXPIRY,
    _C.STATE_TRANSFER_FAILURE,
)
FAULT_MENU: dict[str, tuple[FailureCause, ...]] = {
    "validate": (_C.POLICY_DENIAL,),
    "discover": (_C.MODEL_UNAVAILABLE, _C.SOVEREIGNTY_VIOLATION, _C.NO_FEASIBLE_BINDING, _C.DEADLINE_EXPIRY),
    "page": (_C.NO_FEASIBLE_BINDING, _C.DEADLINE_EXPIRY),
    "prepare": (_C.COMPUTE_SCARCITY, _C.QOS_SCARCITY, _C.DEADLINE_EXPIRY),
    "commit": (_C.COMPUTE_SCARCITY, _C.QOS_SCARCITY, _C.DEADLINE_EXPIRY),
    "serve": (_C.CONSENT_VIOLATION,),
    **{f"migrate.{s}": _MIGRATION_CAUSES for s in ("discover", "page", "prepare", "commit", "transfer")},
}

FUZZ_CATALOG = (
    CatalogEntry("assist", "2", "edge-a", "edge", 2, "domestic", 2.0),
    CatalogEntry("assist", "2", "edge-b", "edge", 2, "domestic", 2.0),
    CatalogEntry("assist", "2", "regional", "regional", 2, "allied", 1.5),
    CatalogEntry("assist", "1", "central", "central", 1, "domestic", 1.0),
    CatalogEntry("assist", "2", "offshore", "central", 3, "foreign", 0.5),
)

FUZZ_PROFILES = (
    AIServiceProfile(100.0, 150.0, 200.0, 0.99, 500.0, quality_tier=2, fallback_ladder=(1,)),
    AIServiceProfile(100.0, 150.0, 200.0, 0.99, 500.0, quality_tier=1,
                     privacy_scope=PrivacyScope.REGIONAL),
    AIServiceProfile(80.0, 150.0, 250.0, 0.95, 500.0, quality_tier=2,
                     privacy_scope=PrivacyScope.STRICT),
)


@dataclass
class FuzzReport:
    traces: int = 0
    events: int = 0
    snapshots: int = 0
    atomicity_violations: int = 0
    half_bound_states: int = 0
    ledger_violations: int = 0
    consent_traces: int = 0
    served_after_revocation: int = 0
    migrations: int = 0
    migration_aborts: int = 0
    migration_boundaries: int = 0
    uncovered_instants: int = 0
    aborts_not_preserving: int = 0
    lease_count_violations: int = 0
    deadline_overruns: int = 0
    unclassified_failures: int = 0
    final_states: Counter = field(default_factory=Counter)
    causes: Counter = field(default_factory=Counter)
    injected: Counter = field(default_factory=Counter)

    @property
    def clean(self) -> bool:
        return not (
            self.atomicity_violations
            or self.half_bound_states
            or self.ledger_violations
            or self.served_after_revocation
            or self.uncovered_instants
            or self.aborts_not_preserving
            or self.lease_count_violations
            or self.deadline_overruns
            or self.unclassified_failures
        )


def _half_bound(rec: AISessionRecord) -> bool:
    if rec.state not in (SessionState.COMMITTED, SessionState.SERVING):
        return False
    return lease_valid(rec.compute_lease) != lease_valid(rec.qos_lease)


class _Checker:
    def __init__(self, report: FuzzReport):
        self.report = report

    def __call__(self, domain: Domain) -> None:
        r = self.report
        r.snapshots += 1
        try:
            domain.managers.check()
        except AssertionError:
            r.ledger_violations += 1
        for driver in domain.sessions.values():
            rec = driver.record
            if not atomicity_holds(rec):
                r.atomicity_violations += 1
            if _half_bound(rec):
                r.half_bound_states += 1
            # leases of terminal sessions must be back with their managers
            if rec.state in TERMINAL_STATES and domain.managers.held_by(rec.session_id):
                r.ledger_violations += 1


def _random_faults(rng: np.random.Generator, p_fault: float) -> FaultPlan:
    plan = FaultPlan()
    if rng.random() < p_fault:
        stages = list(FAULT_MENU)
        stage = stages[int(rng.integers(len(stages)))]
        menu = FAULT_MENU[stage]
        plan.faults[stage] = menu[int(rng.integers(len(menu)))]
    return plan


def _random_ctx(rng: np.random.Generator) -> ContextSummary:
    # loads and speeds on a coarse grid keep the analytic tail cache warm
    loads = {e.site_id: 0.05 * int(rng.integers(1, 20)) for e in FUZZ_CATALOG}
    return ContextSummary(load_estimate=loads, mobility_speed=5.0 * int(rng.integers(0, 7)))


def _migrate_checked(
    driver: SessionDriver, ctx: ContextSummary, report: FuzzReport, revoke_at: Optional[str] = None
) -> None:
    """Migrate under observation; ``revoke_at`` revokes consent at that step boundary."""
    source = (driver.record.compute_lease, driver.record.qos_lease)

    def observe(now, rec, target: Optional[PreparedPair], label):
        if label == revoke_at:
            driver.revoke_consent()
            if managers.held_by(rec.session_id):
                report.lease_count_violations += 1
            return
        report.migration_boundaries += 1
        src_ok = lease_valid(rec.compute_lease) and lease_valid(rec.qos_lease)
        tgt_ok = target is not None and target.both_confirmed
        if not (src_ok or tgt_ok):
            report.uncovered_instants += 1
        if label == "aborted":
            kept = rec.compute_lease is source[0] and rec.qos_lease is source[1]
            if not (kept and src_ok and rec.state is SessionState.SERVING):
                report.aborts_not_preserving += 1
        if label in ("aborted", "source_released"):
            planes = sorted(t.plane.value for t in managers.held_by(rec.session_id))
            if planes != ["compute", "qos"]:
                report.lease_count_violations += 1

    managers = driver.domain.managers
    outcome = driver.migrate(ctx, observer=observe)
    report.migrations += 1
    if not outcome.migrated:
        report.migration_aborts += 1
    tau = driver.domain.timers.tau_mig
    if outcome.elapsed > tau and outcome.cause is not FailureCause.DEADLINE_EXPIRY:
        report.deadline_overruns += 1


_REVOKE_POINTS = ("start", "target_prepared", "target_committed", "state_transferred")


def _consent_audit(lines: list[str]) -> tuple[bool, int]:
    revoked, after = False, 0
    for line in lines:
        ev = json.loads(line)["event"]
        if ev == "ConsentRevoked":
            revoked = True
        elif revoked and ev == "RequestServed":
            after += 1
    return revoked, after


def fuzz_lifecycle(
    n_traces: int,
    seed: int = 0,
    *,
    concurrency: int = 6,
    steps: int = 10,
    p_fault: float = 0.8,
    p_migrate: float = 0.25,
) -> FuzzReport:
    """Run ``n_traces`` sessions, ``concurrency`` at a time on shared managers.

    Faults are drawn from every (stage, cause) pair in :data:`FAULT_MENU`;
    capacity is small and leases short, so scarcity and expiry also occur
    without injection.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF022]))
    report = FuzzReport()
    checker = _Checker(report)
    done = 0
    while done < n_traces:
        batch = min(concurrency, n_traces - done)
        sites = {s: ComputeSite(s, int(rng.integers(1, 4))) for s in sorted({e.site_id for e in FUZZ_CATALOG})}
        managers = Managers(sites, QosPlane(int(rng.integers(2, 7))))
        lease = float(rng.uniform(300.0, 3000.0))
        timers = TimerConfig(10.0, 20.0, 50.0, 100.0, 250.0, lease)
        domain = Domain(list(FUZZ_CATALOG), managers, timers, ctx=_random_ctx(rng), on_snapshot=checker)
        drivers = []
        for _ in range(batch):
            plan = _random_faults(rng, p_fault)
            report.injected.update(f"{c.value}@{s}" for s, c in plan.faults.items())
            profile = FUZZ_PROFILES[int(rng.integers(len(FUZZ_PROFILES)))]
            d = domain.open_session(profile, plan, seed=int(rng.integers(2**32)))
            d.establish()
            drivers.append(d)
            domain.advance(float(rng.exponential(20.0)))

        for _ in range(steps * batch):
            live = [d for d in drivers if d.state not in TERMINAL_STATES]
            if not live:
                break
            d = live[int(rng.integers(len(live)))]
            u = rng.random()
            if u < 0.45:
                d.serve_request()
            elif u < 0.45 + p_migrate:
                if d.state is SessionState.SERVING:
                    revoke_at = None
                    if rng.random() < 0.1:
                        revoke_at = _REVOKE_POINTS[int(rng.integers(len(_REVOKE_POINTS)))]
                    _migrate_checked(d, _random_ctx(rng), report, revoke_at)
            elif u < 0.85:
                domain.advance(float(rng.exponential(lease / 4)))
            elif u < 0.93:
                d.revoke_consent()
            else:
                d.release()

        for d in drivers:
            if d.state not in TERMINAL_STATES:
                d.release()
            rec = d.record
            report.final_states[rec.state.value] += 1
            if rec.cause is not None:
                report.causes[rec.cause.value] += 1
            elif rec.state is SessionState.FAILED:
                report.unclassified_failures += 1
            revoked, after = _consent_audit(d.trace.lines)
            report.consent_traces += revoked
            report.served_after_revocation += after
            report.events += len(d.trace.lines)
        checker(domain)
        report.traces += batch
        done += batch
    return report


def fuzz_migrations(n_migrations: int, seed: int = 0, *, concurrency: int = 4, p_fault: float = 0.7) -> FuzzReport:
    """Serving sessions re-anchored over and over, with a fault drawn for a
    random pipeline stage before most attempts."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x3160]))
    report = FuzzReport()
    checker = _Checker(report)
    stages = [s for s in FAULT_MENU if s.startswith("migrate.")]
    while report.migrations < n_migrations:
        sites = {s: ComputeSite(s, int(rng.integers(1, 5))) for s in sorted({e.site_id for e in FUZZ_CATALOG})}
        managers = Managers(sites, QosPlane(int(rng.integers(concurrency, 2 * concurrency + 2))))
        timers = TimerConfig(10.0, 20.0, 50.0, 100.0, 250.0, float(rng.uniform(2_000.0, 20_000.0)))
        domain = Domain(list(FUZZ_CATALOG), managers, timers, ctx=_random_ctx(rng), on_snapshot=checker)
        drivers = []
        for _ in range(concurrency):
            d = domain.open_session(FUZZ_PROFILES[0], seed=int(rng.integers(2**32)))
            d.establish()
            drivers.append(d)
        for _ in range(40):
            live = [d for d in drivers if d.state is SessionState.SERVING]
            if not live or report.migrations >= n_migrations:
                break
            d = live[int(rng.integers(len(live)))]
            if rng.random() < p_fault:
                stage = stages[int(rng.integers(len(stages)))]
                cause = _MIGRATION_CAUSES[int(rng.integers(len(_MIGRATION_CAUSES)))]
                d.faults.faults[stage] = cause
                report.injected[f"{cause.value}@{stage}"] += 1
            _migrate_checked(d, _random_ctx(rng), report)
            d.faults.faults.clear()
            if rng.random() < 0.5:
                d.serve_request()
            domain.advance(float(rng.exponential(100.0)))
        for d in drivers:
            if d.state not in TERMINAL_STATES:
                d.release()
            report.final_states[d.record.state.value] += 1
            report.events += len(d.trace.lines)
        checker(domain)
        report.traces += len(drivers)
    return report


# --------------------------------------------------------------------------
# prepare / commit / rollback / expiry conservation


@dataclass
class ConservationReport:
    sequences: int = 0
    operations: int = 0
    leaks: int = 0
    confirmed_at_end: int = 0
    op_counts: Counter = field(default_factory=Counter)


def fuzz_conservation(n_sequences: int, seed: int = 0, ops: int = 40) -> ConservationReport:
    """Random prepare/confirm/rollback/release/expiry sequences.

    At quiescence (all provisionals rolled back) each manager's free count
    must equal its initial value minus the confirmed leases still held, and
    the lease table must hold exactly those leases.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0C0]))
    rep = ConservationReport()
    timers = TimerConfig(10.0, 20.0, 50.0, 100.0, 250.0, 600.0)
    for seq in range(n_sequences):
        sites = [ComputeSite(f"s{i}", int(rng.integers(1, 5))) for i in range(3)]
        qos = QosPlane(int(rng.integers(1, 6)))
        for m in (*sites, qos):
            m.background = int(rng.integers(0, 2))
        initial = {id(m): m.free for m in (*sites, qos)}
        now = 0.0
        pending: list[PreparedPair] = []
        confirmed: list[PreparedPair] = []
        for k in range(ops):
            op = ("prepare", "prepare", "confirm", "rollback", "release", "tick")[int(rng.integers(6))]
            rep.op_counts[op] += 1
            rep.operations += 1
            if op == "prepare":
                rec = AISessionRecord(f"q{seq}-{k}", "", state=SessionState.ANCHORED)
                site = sites[int(rng.integers(len(sites)))]
                try:
                    pending.append(prepare(rec, None, site, qos, timers, now, elapsed=float(rng.uniform(0, 60))))
                except ContractFailure:
                    pass
            elif op == "confirm" and pending:
                pair = pending.pop(int(rng.integers(len(pending))))
                try:
                    confirm_pair(pair, timers, now, elapsed=float(rng.uniform(0, 120)))
                    confirmed.append(pair)
                except ContractFailure:
                    pass
            elif op == "rollback" and pending:
                rollback(pending.pop(int(rng.integers(len(pending)))))
            elif op == "release" and confirmed:
                pair = confirmed.pop(int(rng.integers(len(confirmed))))
                rollback(pair)
            elif op == "tick":
                now += float(rng.exponential(200.0))
                lease_tick([*sites, qos], now)
                # a pair with an expired half is no longer a holding
                for pair in [p for p in confirmed if not p.both_confirmed]:
                    rollback(pair)
                    confirmed.remove(pair)
        for pair in pending:
            rollback(pair)
            rollback(pair)  # idempotent
        held = Counter()
        for pair in confirmed:
            held[id(pair.site)] += 1
            held[id(pair.plane)] += 1
        for m in (*sites, qos):
            live = set(m.leases.values())
            expected = {p.compute for p in confirmed if p.site is m} | {p.qos for p in confirmed if p.plane is m}
            ok = m.free == initial[id(m)] - held[id(m)] and live == expected and m.provisional == 0
            try:
                m.check()
            except AssertionError:
                ok = False
            rep.leaks += not ok
        rep.confirmed_at_end += len(confirmed)
        rep.sequences += 1
    return rep
