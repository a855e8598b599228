"""Contract objects for AI sessions: service profiles, timers, the closed
failure-cause taxonomy, the session lifecycle automaton and compliance checks.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Optional

if TYPE_CHECKING:  # pragma: no cover
    from neaiaas.telemetry import WindowStats
    from neaiaas.txn import LeaseToken


class FailureCause(str, Enum):
    CONSENT_VIOLATION = "consent_violation"
    POLICY_DENIAL = "policy_denial"
    SOVEREIGNTY_VIOLATION = "sovereignty_violation"
    MODEL_UNAVAILABLE = "model_unavailable"
    NO_FEASIBLE_BINDING = "no_feasible_binding"
    COMPUTE_SCARCITY = "compute_scarcity"
    QOS_SCARCITY = "qos_scarcity"
    STATE_TRANSFER_FAILURE = "state_transfer_failure"
    DEADLINE_EXPIRY = "deadline_expiry"


class ContractFailure(Exception):
    """A lifecycle step failed with exactly one diagnosable cause."""

    def __init__(self, cause: FailureCause, detail: str = ""):
        self.cause = FailureCause(cause)
        self.detail = detail
        super().__init__(f"{self.cause.value}: {detail}" if detail else self.cause.value)


class ProtocolError(Exception):
    """An event arrived in a state where the automaton does not define it."""


class Modality(str, Enum):
    TEXT = "text"
    VISION = "vision"
    STREAM = "stream"


class MobilityClass(str, Enum):
    STATIC = "static"
    NOMADIC = "nomadic"
    MOBILE = "mobile"


class PrivacyScope(str, Enum):
    """Sovereignty class of a profile; each class admits a fixed zone set."""

    STRICT = "strict"
    REGIONAL = "regional"
    OPEN = "open"

    @property
    def allowed_zones(self) -> frozenset[str]:
        return _ALLOWED_ZONES[self]


SOVEREIGNTY_ZONES = ("domestic", "allied", "foreign")

_ALLOWED_ZONES = {
    PrivacyScope.STRICT: frozenset({"domestic"}),
    PrivacyScope.REGIONAL: frozenset({"domestic", "allied"}),
    PrivacyScope.OPEN: frozenset(SOVEREIGNTY_ZONES),
}


@dataclass(frozen=True)
class AIServiceProfile:
    """Measurable objectives (all durations in ms) plus admissibility terms."""

    ttfb_bound: float
    p95_bound: float
    p99_bound: float
    completion_prob_min: float
    hard_timeout: float
    rate_min: float = 0.0
    modality: Modality = Modality.TEXT
    quality_tier: int = 1
    privacy_scope: PrivacyScope = PrivacyScope.OPEN
    mobility_class: MobilityClass = MobilityClass.STATIC
    cost_envelope: float = math.inf
    fallback_ladder: tuple[int, ...] = ()

    def digest(self) -> str:
        payload = asdict(self)
        payload["fallback_ladder"] = list(self.fallback_ladder)
        raw = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(raw.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ValidatedASP:
    """A profile that passed :func:`validate_asp`. Attribute access is forwarded."""

    profile: AIServiceProfile

    def __post_init__(self) -> None:
        # cache the profile's fields locally so hot paths skip __getattr__
        for f in fields(self.profile):
            object.__setattr__(self, f.name, getattr(self.profile, f.name))

    def __getattr__(self, name: str) -> Any:
        if name.startswith("__") or name == "profile":
            raise AttributeError(name)
        return getattr(self.profile, name)

    def with_tier(self, tier: int) -> "ValidatedASP":
        return ValidatedASP(replace(self.profile, quality_tier=tier))


def validate_asp(asp: AIServiceProfile) -> ValidatedASP:
    """Check profile invariants; raise ``policy_denial`` with the broken rule."""

    def deny(detail: str) -> None:
        raise ContractFailure(FailureCause.POLICY_DENIAL, detail)

    bounds = (asp.ttfb_bound, asp.p95_bound, asp.p99_bound, asp.hard_timeout)
    if not all(b > 0 for b in bounds):
        deny("latency bounds must be strictly positive")
    if not asp.ttfb_bound <= asp.p95_bound:
        deny("ttfb_bound must not exceed p95_bound")
    if not asp.p95_bound <= asp.p99_bound:
        deny("p95_bound must not exceed p99_bound")
    if not asp.p99_bound <= asp.hard_timeout:
        deny("p99_bound must not exceed hard_timeout")
    if not 0 < asp.completion_prob_min <= 1:
        deny("completion_prob_min must lie in (0, 1]")
    if asp.rate_min < 0:
        deny("rate_min must be non-negative")
    if asp.cost_envelope < 0:
        deny("cost_envelope must be non-negative")
    prev = asp.quality_tier
    for tier in asp.fallback_ladder:
        if tier >= prev:
            deny("fallback_ladder tiers must be strictly decreasing below quality_tier")
        prev = tier
    return ValidatedASP(asp)


@dataclass(frozen=True)
class TimerConfig:
    """Per-phase deadlines and lease validity, all in ms."""

    tau_disc: float
    tau_page: float
    tau_prep: float
    tau_com: float
    tau_mig: float
    lease_duration: float


def validate_timers(t: TimerConfig, asp: ValidatedASP) -> None:
    if not t.tau_disc <= t.tau_page <= t.tau_prep <= t.tau_com:
        raise ContractFailure(
            FailureCause.POLICY_DENIAL,
            "timer order violated: require tau_disc <= tau_page <= tau_prep <= tau_com",
        )
    if t.tau_mig > min(asp.hard_timeout, t.lease_duration):
        raise ContractFailure(
            FailureCause.POLICY_DENIAL,
            "timer order violated: require tau_mig <= min(hard_timeout, lease_duration)",
        )
    if t.lease_duration <= 0:
        raise ContractFailure(FailureCause.POLICY_DENIAL, "lease_duration must be positive")


# --------------------------------------------------------------------------
# lifecycle automaton


class SessionState(str, Enum):
    IDLE = "Idle"
    DISCOVERING = "Discovering"
    ANCHORED = "Anchored"
    PREPARING = "Preparing"
    COMMITTED = "Committed"
    SERVING = "Serving"
    MIGRATING = "Migrating"
    RELEASED = "Released"
    FAILED = "Failed"


# States in which the session holds a confirmed binding on both planes.
BOUND_STATES = frozenset({SessionState.COMMITTED, SessionState.SERVING, SessionState.MIGRATING})
TERMINAL_STATES = frozenset({SessionState.RELEASED, SessionState.FAILED})


class EventKind(str, Enum):
    DISCOVER_DONE = "DiscoverDone"
    ANCHOR_DONE = "AnchorDone"
    PREPARE_DONE = "PrepareDone"
    COMMIT_DONE = "CommitDone"
    SERVE = "Serve"
    REQUEST_SERVED = "RequestServed"
    LEASE_EXPIRED = "LeaseExpired"
    CONSENT_REVOKED = "ConsentRevoked"
    MIGRATION_START = "MigrationStart"
    MIGRATION_COMMIT = "MigrationCommit"
    MIGRATION_ABORT = "MigrationAbort"
    RELEASE = "Release"
    TIMER_EXPIRED = "TimerExpired"
    FAIL = "Fail"


class Plane(str, Enum):
    COMPUTE = "compute"
    QOS = "qos"


class Phase(str, Enum):
    DISC = "disc"
    PAGE = "page"
    PREP = "prep"
    COM = "com"
    MIG = "mig"


@dataclass(frozen=True)
class LifecycleEvent:
    kind: EventKind
    plane: Optional[Plane] = None
    phase: Optional[Phase] = None
    cause: Optional[FailureCause] = None
    # payload for AnchorDone / PrepareDone / CommitDone / MigrationCommit
    binding: Optional[dict] = None

    def label(self) -> str:
        arg = self.plane or self.phase or self.cause
        if arg is None:
            return self.kind.value
        return f"{self.kind.value}({arg.value})"


@dataclass(frozen=True)
class AISessionRecord:
    session_id: str
    asp_digest: str
    model_id: Optional[str] = None
    model_version: Optional[str] = None
    anchor_site: Optional[str] = None
    service_endpoint: Optional[str] = None
    compute_lease: Optional["LeaseToken"] = None
    qos_lease: Optional["LeaseToken"] = None
    qfi_handle: Optional[str] = None
    steering_handle: Optional[str] = None
    authz_ref: str = ""
    authz_valid: bool = True
    charging_ref: str = ""
    state: SessionState = SessionState.IDLE
    cause: Optional[FailureCause] = None
    migration_cause: Optional[FailureCause] = None
    served_requests: int = 0

    @property
    def leases_valid(self) -> bool:
        return lease_valid(self.compute_lease) and lease_valid(self.qos_lease)

    @property
    def serving_enabled(self) -> bool:
        return self.state in (SessionState.SERVING, SessionState.MIGRATING) and self.authz_valid

    def state_label(self) -> str:
        if self.state is SessionState.FAILED:
            return f"Failed({self.cause.value})"
        return self.state.value


def lease_valid(lease: Optional["LeaseToken"]) -> bool:
    from neaiaas.txn import LeaseState

    return lease is not None and lease.state is LeaseState.CONFIRMED


def atomicity_holds(session: AISessionRecord) -> bool:
    """Bound state if and only if both planes hold a confirmed lease."""
    return (session.state in BOUND_STATES) == session.leases_valid


S = SessionState
E = EventKind

_FORWARD = {
    (S.IDLE, E.DISCOVER_DONE): S.DISCOVERING,
    (S.DISCOVERING, E.ANCHOR_DONE): S.ANCHORED,
    (S.ANCHORED, E.PREPARE_DONE): S.PREPARING,
    (S.PREPARING, E.COMMIT_DONE): S.COMMITTED,
    (S.COMMITTED, E.SERVE): S.SERVING,
    (S.SERVING, E.REQUEST_SERVED): S.SERVING,
    (S.MIGRATING, E.REQUEST_SERVED): S.MIGRATING,
    (S.SERVING, E.MIGRATION_START): S.MIGRATING,
}

_PRE_BIND = (S.IDLE, S.DISCOVERING, S.ANCHORED, S.PREPARING)


def transition(session: AISessionRecord, event: LifecycleEvent, now: float) -> AISessionRecord:
    """Return the unique successor record; undefined pairs raise ProtocolError.

    Resource side effects (releasing leases left behind by a failure) are the
    caller's job; the returned record only reflects the contract state.
    """
    st, kind = session.state, event.kind
    if st in TERMINAL_STATES:
        raise ProtocolError(f"{kind.value} after terminal state {session.state_label()}")

    def fail(cause: FailureCause) -> AISessionRecord:
        return replace(session, state=S.FAILED, cause=cause)

    nxt = _FORWARD.get((st, kind))
    if nxt is not None:
        if kind is E.REQUEST_SERVED:
            if not session.authz_valid:
                raise ProtocolError("serving attempted after consent revocation")
            return replace(session, served_requests=session.served_requests + 1)
        out = replace(session, state=nxt, **(event.binding or {}))
        if kind is E.COMMIT_DONE and not out.leases_valid:
            raise ProtocolError("CommitDone without both leases confirmed")
        return out

    if kind is E.FAIL:
        if event.cause is None:
            raise ProtocolError("Fail event requires a cause")
        if st in BOUND_STATES:
            raise ProtocolError("bound sessions fail through lease, timer or consent events")
        return fail(event.cause)

    if kind is E.TIMER_EXPIRED:
        if st is S.MIGRATING:
            return replace(session, state=S.SERVING, migration_cause=FailureCause.DEADLINE_EXPIRY)
        return fail(FailureCause.DEADLINE_EXPIRY)

    if kind is E.LEASE_EXPIRED:
        if st in BOUND_STATES or st is S.PREPARING:
            return fail(FailureCause.DEADLINE_EXPIRY)
        raise ProtocolError(f"LeaseExpired in {st.value}: no lease held")

    if kind is E.CONSENT_REVOKED:
        if st in (S.SERVING, S.MIGRATING):
            return replace(
                session, state=S.RELEASED, cause=FailureCause.CONSENT_VIOLATION, authz_valid=False
            )
        return replace(
            session, state=S.FAILED, cause=FailureCause.CONSENT_VIOLATION, authz_valid=False
        )

    if kind is E.MIGRATION_COMMIT and st is S.MIGRATING:
        out = replace(session, state=S.SERVING, migration_cause=None, **(event.binding or {}))
        if not out.leases_valid:
            raise ProtocolError("MigrationCommit onto a binding without both leases confirmed")
        return out

    if kind is E.MIGRATION_ABORT and st is S.MIGRATING:
        return replace(session, state=S.SERVING, migration_cause=event.cause)

    if kind is E.RELEASE:
        return replace(session, state=S.RELEASED)

    raise ProtocolError(f"event {event.label()} undefined in state {st.value}")


# --------------------------------------------------------------------------
# compliance


@dataclass(frozen=True)
class ComplianceVerdict:
    p95_ok: bool
    p99_ok: bool
    ttfb_ok: bool
    completion_ok: bool
    rate_ok: bool

    @property
    def compliant(self) -> bool:
        return self.p95_ok and self.p99_ok and self.ttfb_ok and self.completion_ok and self.rate_ok


def is_violation(latency: float, asp: ValidatedASP | AIServiceProfile) -> bool:
    """Per-request verdict: late past the tail bound or past the hard timeout."""
    return latency > asp.p99_bound or latency > asp.hard_timeout


def evaluate_compliance(stats: "WindowStats", asp: ValidatedASP) -> ComplianceVerdict:
    if stats.n_samples < 1:
        raise ValueError("compliance needs at least one sample")
    return ComplianceVerdict(
        p95_ok=stats.q95_hat <= asp.p95_bound,
        p99_ok=stats.q99_hat <= asp.p99_bound,
        ttfb_ok=stats.ttfb_hat <= asp.ttfb_bound,
        completion_ok=stats.rho_hat >= asp.completion_prob_min,
        rate_ok=stats.nu_hat >= asp.rate_min,
    )


# --------------------------------------------------------------------------
# trace log


@dataclass
class TraceLog:
    """Line-delimited JSON log, one record per applied lifecycle event."""

    lines: list[str] = field(default_factory=list)

    def record(
        self,
        now: float,
        before: AISessionRecord,
        event: LifecycleEvent | str,
        after: AISessionRecord,
        cause: Optional[FailureCause] = None,
        **extra: Any,
    ) -> None:
        if cause is None and isinstance(event, LifecycleEvent):
            cause = event.cause
        if cause is None and after.cause is not None and before.cause is None:
            cause = after.cause
        entry = {
            "timestamp": round(float(now), 6),
            "session_id": after.session_id,
            "state_before": before.state_label(),
            "event": event.label() if isinstance(event, LifecycleEvent) else event,
            "state_after": after.state_label(),
            "cause": cause.value if cause is not None else None,
        }
        entry.update(extra)
        self.lines.append(json.dumps(entry, sort_keys=False))

    def extend(self, lines: Iterable[str]) -> None:
        self.lines.extend(lines)

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines)
