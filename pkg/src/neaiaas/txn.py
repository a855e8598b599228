"""Two-phase co-reservation of compute slots and QoS flows.

Both resource managers count capacity in integer units. A provisional lease
holds capacity exactly like a confirmed one, so nothing can be over-admitted
between prepare and commit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable, Optional, Union

from neaiaas.contract import (
    AISessionRecord,
    ContractFailure,
    EventKind,
    FailureCause,
    LifecycleEvent,
    Plane,
    SessionState,
    TimerConfig,
    transition,
)


class LeaseState(str, Enum):
    PROVISIONAL = "Provisional"
    CONFIRMED = "Confirmed"
    RELEASED = "Released"
    EXPIRED = "Expired"


_LIVE = (LeaseState.PROVISIONAL, LeaseState.CONFIRMED)


@dataclass(eq=False)
class LeaseToken:
    lease_id: str
    plane: Plane
    site_or_flow: str
    granted_at: float
    expires_at: float
    state: LeaseState = LeaseState.PROVISIONAL
    owner: str = ""

    @property
    def live(self) -> bool:
        return self.state in _LIVE


class _CountingManager:
    """Shared bookkeeping for a capacity-counting resource manager."""

    plane: Plane
    name: str

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        # slots held by traffic outside this coordinator (other tenants)
        self.background = 0
        self.committed = 0
        self.provisional = 0
        self.leases: dict[str, LeaseToken] = {}
        self._ids = itertools.count(1)

    @property
    def free(self) -> int:
        return self.capacity - self.background - self.committed - self.provisional

    def _grant(self, now: float, duration: float, owner: str = "") -> Optional[LeaseToken]:
        if self.free <= 0:
            return None
        token = LeaseToken(
            lease_id=f"{self.plane.value}:{self.name}:{next(self._ids)}",
            plane=self.plane,
            site_or_flow=self.name,
            granted_at=now,
            expires_at=now + duration,
            owner=owner,
        )
        self.provisional += 1
        self.leases[token.lease_id] = token
        return token

    def confirm(self, token: LeaseToken) -> None:
        if token.state is not LeaseState.PROVISIONAL:
            raise ValueError(f"cannot confirm lease in state {token.state.value}")
        token.state = LeaseState.CONFIRMED
        self.provisional -= 1
        self.committed += 1

    def _retire(self, token: LeaseToken, final: LeaseState) -> bool:
        if token.state is LeaseState.PROVISIONAL:
            self.provisional -= 1
        elif token.state is LeaseState.CONFIRMED:
            self.committed -= 1
        else:
            return False
        token.state = final
        del self.leases[token.lease_id]
        return True

    def release(self, token: LeaseToken) -> bool:
        """Release a live lease; returns False if it was already retired."""
        return self._retire(token, LeaseState.RELEASED)

    def expire_due(self, now: float) -> list[LeaseToken]:
        due = [t for t in self.leases.values() if t.expires_at <= now]
        for token in due:
            self._retire(token, LeaseState.EXPIRED)
        return due

    def check(self) -> None:
        """Assert the counters agree with the live lease table."""
        prov = sum(t.state is LeaseState.PROVISIONAL for t in self.leases.values())
        conf = sum(t.state is LeaseState.CONFIRMED for t in self.leases.values())
        assert self.provisional == prov and self.committed == conf, (self.name, prov, conf)
        assert self.committed >= 0 and self.provisional >= 0 and self.background >= 0
        assert self.committed + self.provisional + self.background <= self.capacity
        assert self.background + self.committed + self.provisional + self.free == self.capacity

    def held_by(self, owner: str) -> list[LeaseToken]:
        return [t for t in self.leases.values() if t.owner == owner]


class ComputeSite(_CountingManager):
    plane = Plane.COMPUTE

    def __init__(self, site_id: str, capacity: int):
        self.site_id = site_id
        self.name = site_id
        super().__init__(capacity)

    committed_slots = property(lambda self: self.committed)
    provisional_slots = property(lambda self: self.provisional)

    def __repr__(self) -> str:
        return f"ComputeSite({self.site_id!r}, {self.committed}+{self.provisional}/{self.capacity})"


class QosPlane(_CountingManager):
    plane = Plane.QOS

    def __init__(self, flow_budget: int, name: str = "qos"):
        self.name = name
        super().__init__(flow_budget)

    flow_budget = property(lambda self: self.capacity)
    committed_flows = property(lambda self: self.committed)
    provisional_flows = property(lambda self: self.provisional)

    def __repr__(self) -> str:
        return f"QosPlane({self.committed}+{self.provisional}/{self.capacity})"


Manager = Union[ComputeSite, QosPlane]


@dataclass
class Managers:
    """All resource managers of one operator domain."""

    sites: dict[str, ComputeSite]
    qos: QosPlane

    def all(self) -> list[Manager]:
        return [*self.sites.values(), self.qos]

    def manager_for(self, token: LeaseToken) -> Manager:
        if token.plane is Plane.QOS:
            return self.qos
        return self.sites[token.site_or_flow]

    def release(self, token: Optional[LeaseToken]) -> bool:
        if token is None:
            return False
        return self.manager_for(token).release(token)

    def check(self) -> None:
        for m in self.all():
            m.check()

    def held_by(self, owner: str) -> list[LeaseToken]:
        return [t for m in self.all() for t in m.held_by(owner)]


@dataclass
class PreparedPair:
    compute: LeaseToken
    qos: LeaseToken
    site: ComputeSite
    plane: QosPlane
    qfi_handle: str = ""
    steering_handle: str = ""
    anchor: Any = None  # CandidateBinding the pair was prepared for

    @property
    def tokens(self) -> tuple[LeaseToken, LeaseToken]:
        return (self.compute, self.qos)

    @property
    def both_confirmed(self) -> bool:
        return all(t.state is LeaseState.CONFIRMED for t in self.tokens)

    def binding_fields(self) -> dict:
        fields = {
            "compute_lease": self.compute,
            "qos_lease": self.qos,
            "qfi_handle": self.qfi_handle,
            "steering_handle": self.steering_handle,
        }
        if self.anchor is not None:
            entry = self.anchor.entry
            fields.update(
                model_id=entry.model_id,
                model_version=entry.model_version,
                anchor_site=entry.site_id,
                service_endpoint=f"{entry.site_id}/{entry.model_id}:{entry.model_version}",
            )
        return fields


@dataclass(frozen=True)
class LeaseExpired:
    lease_id: str
    plane: Plane
    site_or_flow: str
    at: float
    owner: str = ""

    def as_event(self) -> LifecycleEvent:
        return LifecycleEvent(EventKind.LEASE_EXPIRED, plane=self.plane)


def prepare(
    session: AISessionRecord,
    anchor,
    site: ComputeSite,
    qos: QosPlane,
    timers: TimerConfig,
    now: float,
    elapsed: float = 0.0,
) -> PreparedPair:
    """Take a provisional lease on each plane or none at all.

    ``elapsed`` is the time the phase has already consumed on the caller's
    clock; past ``tau_prep`` every provisional is dropped.
    """
    if session.state not in (SessionState.ANCHORED, SessionState.MIGRATING):
        raise ValueError(f"prepare requires an anchored session, got {session.state.value}")
    compute = site._grant(now, timers.lease_duration, session.session_id)
    if compute is None:
        raise ContractFailure(FailureCause.COMPUTE_SCARCITY, f"site {site.site_id} has no free slot")
    flow = qos._grant(now, timers.lease_duration, session.session_id)
    if flow is None:
        site.release(compute)
        raise ContractFailure(FailureCause.QOS_SCARCITY, "QoS flow budget exhausted")
    pair = PreparedPair(
        compute=compute,
        qos=flow,
        site=site,
        plane=qos,
        qfi_handle=f"qfi-{flow.lease_id.rsplit(':', 1)[-1]}",
        steering_handle=f"steer-{session.session_id}-{site.site_id}",
        anchor=anchor,
    )
    if elapsed > timers.tau_prep:
        rollback(pair)
        raise ContractFailure(FailureCause.DEADLINE_EXPIRY, "tau_prep exceeded during prepare")
    return pair


def confirm_pair(pair: PreparedPair, timers: TimerConfig, now: float, elapsed: float = 0.0) -> None:
    """Confirm both provisionals in one step, or release both and raise."""
    if not all(t.state is LeaseState.PROVISIONAL for t in pair.tokens):
        rollback(pair)
        raise ContractFailure(FailureCause.DEADLINE_EXPIRY, "lease no longer provisional at commit")
    if any(t.expires_at <= now for t in pair.tokens):
        rollback(pair)
        raise ContractFailure(FailureCause.DEADLINE_EXPIRY, "lease expired before commit")
    if elapsed > timers.tau_com:
        rollback(pair)
        raise ContractFailure(FailureCause.DEADLINE_EXPIRY, "tau_com exceeded during commit")
    pair.site.confirm(pair.compute)
    pair.plane.confirm(pair.qos)


def commit(
    session: AISessionRecord,
    pair: PreparedPair,
    timers: TimerConfig,
    now: float,
    elapsed: float = 0.0,
) -> AISessionRecord:
    """Confirm the pair and move the session to Committed in the same step."""
    if session.state is not SessionState.PREPARING:
        raise ValueError(f"commit requires a preparing session, got {session.state.value}")
    confirm_pair(pair, timers, now, elapsed)
    return transition(
        session, LifecycleEvent(EventKind.COMMIT_DONE, binding=pair.binding_fields()), now
    )


def rollback(pair: PreparedPair) -> None:
    """Release every live lease in the pair. Idempotent."""
    pair.site.release(pair.compute)
    pair.plane.release(pair.qos)


def release_binding(session: AISessionRecord, managers: Managers) -> None:
    managers.release(session.compute_lease)
    managers.release(session.qos_lease)


def lease_tick(managers: Managers | Iterable[Manager], now: float) -> list[LeaseExpired]:
    """Expire every live lease with ``expires_at <= now``; one event per lease."""
    pool = managers.all() if isinstance(managers, Managers) else list(managers)
    events = []
    for m in pool:
        for token in m.expire_due(now):
            events.append(LeaseExpired(token.lease_id, token.plane, token.site_or_flow, now, token.owner))
    return events


def detach(session: AISessionRecord) -> AISessionRecord:
    """Drop lease references from a record whose leases were retired."""
    return replace(session, compute_lease=None, qos_lease=None)
