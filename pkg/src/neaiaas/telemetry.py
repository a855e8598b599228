"""Boundary telemetry: request samples, windows and their summary statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

from neaiaas.contract import (
    AISessionRecord,
    ContractFailure,
    FailureCause,
    ProtocolError,
    SessionState,
    ValidatedASP,
)


def nearest_rank(p: float, n: int) -> int:
    """1-based rank ceil(p*n), with p read as the decimal it was written as."""
    if n < 1:
        raise ValueError("quantile of an empty sample")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    return max(1, math.ceil(Fraction(str(p)) * n))


def quantile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank order statistic: the ceil(p*n)-th smallest sample."""
    return sorted(samples)[nearest_rank(p, len(samples)) - 1]


@dataclass(frozen=True)
class RequestSample:
    timestamp: float
    ttfb: float
    total_latency: float
    completed: bool
    queue_delay_proxy: float = 0.0
    delivered_rate: float = 0.0

    def check(self) -> None:
        values = (self.ttfb, self.total_latency, self.queue_delay_proxy, self.delivered_rate)
        if any(v < 0 for v in values):
            raise ValueError("sample durations and rates must be non-negative")
        if self.completed and self.ttfb > self.total_latency:
            raise ValueError("completed sample with ttfb > total_latency")


@dataclass(frozen=True)
class TelemetryWindow:
    window_start: float
    window_end: float
    samples: tuple[RequestSample, ...] = ()


@dataclass(frozen=True)
class WindowStats:
    ttfb_hat: float
    q95_hat: float
    q99_hat: float
    rho_hat: float
    q_hat: float
    nu_hat: float
    n_samples: int


def window_stats(w: TelemetryWindow, asp: ValidatedASP) -> WindowStats:
    """Summarize a window. Timed-out requests enter the latency list at T_max."""
    samples = w.samples
    if not samples:
        raise ValueError("window has no samples")
    t_max = asp.hard_timeout
    latencies = [s.total_latency if s.completed else t_max for s in samples]
    completed = [s for s in samples if s.completed]
    return WindowStats(
        ttfb_hat=quantile([s.ttfb for s in samples], 0.5),
        q95_hat=quantile(latencies, 0.95),
        q99_hat=quantile(latencies, 0.99),
        rho_hat=len(completed) / len(samples),
        q_hat=sum(s.queue_delay_proxy for s in samples) / len(samples),
        nu_hat=(sum(s.delivered_rate for s in completed) / len(completed)) if completed else 0.0,
        n_samples=len(samples),
    )


def ingest(w: TelemetryWindow, s: RequestSample, session: AISessionRecord) -> TelemetryWindow:
    """Append a sample from a serving session; revoked consent refuses it."""
    if not session.authz_valid:
        raise ContractFailure(FailureCause.CONSENT_VIOLATION, "authorization revoked")
    if session.state not in (SessionState.SERVING, SessionState.MIGRATING):
        raise ProtocolError(f"telemetry from a session in state {session.state_label()}")
    if not w.window_start <= s.timestamp < w.window_end:
        raise ValueError("sample timestamp outside window")
    s.check()
    return replace(w, samples=w.samples + (s,))


_CSV_FIELDS = ("timestamp", "ttfb", "total_latency", "completed", "queue_delay_proxy", "delivered_rate")


def window_to_csv(w: TelemetryWindow) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for s in w.samples:
        writer.writerow(
            [
                f"{s.timestamp:.6g}",
                f"{s.ttfb:.6g}",
                f"{s.total_latency:.6g}",
                int(s.completed),
                f"{s.queue_delay_proxy:.6g}",
                f"{s.delivered_rate:.6g}",
            ]
        )
    return buf.getvalue()
