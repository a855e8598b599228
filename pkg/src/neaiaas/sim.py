"""Monte-Carlo load and mobility sweeps: endpoint baseline vs. session-based
service with compute-aware admission and make-before-break migration.

Every (sweep, grid index) cell draws from its own generator seeded by
``SeedSequence([seed, sweep_tag, index])``, so tables do not depend on the
number of worker processes or on cells added later in the grid.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from neaiaas.anchoring import AnalyticPredictor, ContextSummary, select_anchor
from neaiaas.catalog import CatalogEntry, discover
from neaiaas.contract import (
    AIServiceProfile,
    AISessionRecord,
    ContractFailure,
    EventKind,
    FailureCause,
    LifecycleEvent,
    SessionState,
    TimerConfig,
    ValidatedASP,
    transition,
    validate_asp,
)
from neaiaas.latency import (
    LatencyModel,
    sample_infer,
    sample_net_best_effort,
    sample_net_qos,
    sample_wq,
)
from neaiaas.migration import Stage, StepDurations, migrate
from neaiaas.telemetry import nearest_rank
from neaiaas.txn import ComputeSite, Managers, QosPlane, confirm_pair, prepare

LOAD_TAG = 1
MOBILITY_TAG = 2
ADMISSION_SLOTS = 1_000_000

DEFAULT_ASP = AIServiceProfile(
    ttfb_bound=100.0,
    p95_bound=150.0,
    p99_bound=200.0,
    completion_prob_min=0.99,
    hard_timeout=500.0,
)


@dataclass(frozen=True)
class SweepConfig:
    rho_grid: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))
    samples_per_point: int = 100_000
    seed: int = 0
    asp: ValidatedASP = field(default_factory=lambda: validate_asp(DEFAULT_ASP))
    admission_cap: float = 0.8
    speed_grid: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    session_window: float = 60.0
    handover_rate_per_speed: float = 0.002
    teardown_interrupt_prob: float = 0.3
    mbb_fail_prob: float = 0.01
    # "abort_with_lease_loss": an abort interrupts only if the source lease
    # ran out meanwhile; "abort": every aborted migration interrupts
    mbb_interrupt: str = "abort_with_lease_loss"

    def __post_init__(self) -> None:
        grid = self.rho_grid
        if not grid or any(not 0 < r < 1 for r in grid):
            raise ValueError("rho_grid points must lie in (0, 1)")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("rho_grid must be strictly increasing")
        if self.samples_per_point < 1:
            raise ValueError("samples_per_point must be >= 1")
        if not 0 < self.admission_cap < 1:
            raise ValueError("admission_cap must lie in (0, 1)")
        if any(v < 0 for v in self.speed_grid):
            raise ValueError("speeds must be non-negative")
        if self.session_window <= 0 or self.handover_rate_per_speed < 0:
            raise ValueError("session_window must be positive and handover rate non-negative")
        for p in (self.teardown_interrupt_prob, self.mbb_fail_prob):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.mbb_interrupt not in ("abort", "abort_with_lease_loss"):
            raise ValueError("mbb_interrupt must be 'abort' or 'abort_with_lease_loss'")


def cell_rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), tag, index]))


def nearest_rank_quantile(values: np.ndarray, p: float) -> float:
    if values.size == 0:
        return math.nan
    k = nearest_rank(p, values.size) - 1
    return float(np.partition(values, k)[k])


# --------------------------------------------------------------------------
# per-request samplers


def sample_latency_endpoint(rho: float, model: LatencyModel, rng: np.random.Generator, size=None):
    """W_q(rho) + lognormal runtime + best-effort lognormal transport."""
    n = 1 if size is None else size
    out = sample_wq(rho, model.service_mean, rng, n) + sample_infer(model, rng, n)
    out = out + sample_net_best_effort(model, rng, n)
    return float(out[0]) if size is None else out


class AdmissionGate:
    """Compute-aware admission through a real PREPARE against a sized site.

    The site holds ``cap * SLOTS`` slots; an arriving request finds the slots
    ahead of it (uniform over the offered load ``rho * SLOTS``) occupied by
    other traffic and is admitted iff its prepare finds a free slot.
    """

    def __init__(self, cap: float, timers: Optional[TimerConfig] = None, slots: int = ADMISSION_SLOTS):
        self.slots = slots
        self.site = ComputeSite("admission", int(round(cap * slots)))
        self.qos = QosPlane(1)
        self.timers = timers or TimerConfig(10, 20, 50, 100, 250, 600_000)
        self.session = AISessionRecord("gate", "", state=SessionState.ANCHORED)
        self.rejections: dict[FailureCause, int] = {}

    def admit(self, occupancy: int, now: float = 0.0) -> bool:
        self.site.background = min(int(occupancy), self.site.capacity)
        try:
            pair = prepare(self.session, None, self.site, self.qos, self.timers, now)
        except ContractFailure as exc:
            self.rejections[exc.cause] = self.rejections.get(exc.cause, 0) + 1
            return False
        confirm_pair(pair, self.timers, now)
        self.site.release(pair.compute)
        self.qos.release(pair.qos)
        return True

    def admit_many(self, rho: float, u: np.ndarray) -> np.ndarray:
        occupancy = np.floor(u * rho * self.slots).astype(np.int64)
        return np.fromiter((self.admit(o) for o in occupancy), dtype=bool, count=occupancy.size)


def sample_latency_neaiaas(
    rho: float,
    model: LatencyModel,
    cap: float,
    rng: np.random.Generator,
    size=None,
    gate: Optional[AdmissionGate] = None,
):
    """Return (admitted, latency). Rejected requests carry NaN latency.

    Admitted requests queue at load min(rho, cap) and ride the QoS transport.
    """
    if not 0 < rho < 1:
        raise ValueError("offered load must lie in (0, 1)")
    n = 1 if size is None else size
    gate = gate or AdmissionGate(cap)
    admitted = gate.admit_many(rho, rng.random(n))
    eff = min(rho, cap)
    lat = sample_wq(eff, model.service_mean, rng, n) + sample_infer(model, rng, n)
    lat = lat + sample_net_qos(model, rng, n)
    lat = np.where(admitted, lat, np.nan)
    if size is None:
        return bool(admitted[0]), (float(lat[0]) if admitted[0] else None)
    return admitted, lat


# --------------------------------------------------------------------------
# load sweep


@dataclass(frozen=True)
class LoadSweepRow:
    rho: float
    p99_endpoint_ms: float
    p99_neaiaas_ms: float
    viol_endpoint: float
    viol_neaiaas: float
    admit_rate: float
    n_offered: int
    n_admitted: int
    n_viol_neaiaas: int


LOAD_COLUMNS = ("rho", "p99_endpoint_ms", "p99_neaiaas_ms", "viol_endpoint", "viol_neaiaas", "admit_rate")


def _violations(lat: np.ndarray, asp) -> np.ndarray:
    return (lat > asp.p99_bound) | (lat > asp.hard_timeout)


def load_cell(cfg: SweepConfig, model: LatencyModel, index: int) -> LoadSweepRow:
    rho = cfg.rho_grid[index]
    n = cfg.samples_per_point
    ep_rng, ne_rng = cell_rng(cfg.seed, LOAD_TAG, index).spawn(2)
    ep = sample_latency_endpoint(rho, model, ep_rng, n)
    admitted, ne = sample_latency_neaiaas(rho, model, cfg.admission_cap, ne_rng, n)
    served = ne[admitted]
    n_viol = int(_violations(served, cfg.asp).sum())
    return LoadSweepRow(
        rho=rho,
        p99_endpoint_ms=nearest_rank_quantile(ep, 0.99),
        p99_neaiaas_ms=nearest_rank_quantile(served, 0.99),
        viol_endpoint=float(_violations(ep, cfg.asp).mean()),
        viol_neaiaas=(n_viol / served.size) if served.size else math.nan,
        admit_rate=float(admitted.mean()),
        n_offered=n,
        n_admitted=int(served.size),
        n_viol_neaiaas=n_viol,
    )


def _run_cells(fn, cfg, model, count: int, workers: int):
    idx = range(count)
    if workers <= 1 or count <= 1:
        return [fn(cfg, model, i) for i in idx]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, [cfg] * count, [model] * count, idx))


def run_load_sweep(cfg: SweepConfig, model: LatencyModel, workers: int = 1) -> list[LoadSweepRow]:
    return _run_cells(load_cell, cfg, model, len(cfg.rho_grid), workers)


# --------------------------------------------------------------------------
# mobility sweep


@dataclass(frozen=True)
class MobilitySweepRow:
    speed_mps: float
    p_interrupt_teardown: float
    p_interrupt_mbb: float
    expected_handovers: float
    analytic_teardown: float
    n_migrations: int
    n_aborts: int


MOBILITY_COLUMNS = ("speed_mps", "p_interrupt_teardown", "p_interrupt_mbb")


def teardown_interruption(x: float, q: float) -> float:
    """1 - exp(-x q): P[at least one of Poisson(x) handovers interrupts]."""
    return -math.expm1(-x * q)


def mobility_catalog(n_cells: int = 4) -> list[CatalogEntry]:
    """A corridor of edge cells hosting the same model, plus one regional site."""
    entries = [
        CatalogEntry("assist", "1", f"edge-{i}", "edge", 2, "domestic", 1.0)
        for i in range(n_cells)
    ]
    entries.append(CatalogEntry("assist", "1", "regional-0", "regional", 2, "domestic", 1.0))
    return entries


class MobilityHarness:
    """Runs the real migrate() pipeline once per handover of a session."""

    def __init__(self, cfg: SweepConfig, model: LatencyModel, timers: Optional[TimerConfig] = None,
                 durations: StepDurations = StepDurations()):
        self.cfg = cfg
        self.model = model
        self.asp = cfg.asp
        self.digest = cfg.asp.digest()
        self.timers = timers or TimerConfig(10, 20, 50, 100, 250, 600_000)
        self.durations = durations
        self.catalog = mobility_catalog()
        sites = {e.site_id: ComputeSite(e.site_id, 1_000) for e in self.catalog}
        self.managers = Managers(sites, QosPlane(10_000))
        self.n_migrations = 0
        self.n_aborts = 0

    def _open(self, sid: str, ctx: ContextSummary, predictor: AnalyticPredictor) -> AISessionRecord:
        cands = discover(self.asp, self.catalog, predictor)
        choice, _ = select_anchor(cands, ctx, self.asp, predictor=predictor)
        rec = AISessionRecord(sid, self.digest, state=SessionState.ANCHORED)
        site = self.managers.sites[choice.entry.site_id]
        pair = prepare(rec, choice, site, self.managers.qos, self.timers, 0.0)
        rec = transition(rec, LifecycleEvent(EventKind.PREPARE_DONE), 0.0)
        confirm_pair(pair, self.timers, 0.0)
        rec = transition(rec, LifecycleEvent(EventKind.COMMIT_DONE, binding=pair.binding_fields()), 0.0)
        return transition(rec, LifecycleEvent(EventKind.SERVE), 0.0)

    def run_session(self, sid: str, times_ms: Sequence[float], fail: Sequence[bool],
                    ctx: ContextSummary, predictor: AnalyticPredictor) -> bool:
        """True if the session was interrupted."""
        rec = self._open(sid, ctx, predictor)
        interrupted = False
        for now, inject_fail in zip(times_ms, fail):
            cause = FailureCause.STATE_TRANSFER_FAILURE if inject_fail else None
            rec, out = migrate(
                rec, self.catalog, ctx, self.managers, self.timers, now,
                asp=self.asp, predictor=predictor, durations=self.durations,
                inject=(lambda st, c=cause: c if st is Stage.TRANSFER else None),
            )
            self.n_migrations += 1
            if not out.migrated:
                self.n_aborts += 1
                if self.cfg.mbb_interrupt == "abort" or out.source_lost:
                    interrupted = True
                    break
        for token in self.managers.held_by(sid):
            self.managers.release(token)
        return interrupted


def teardown_arm(cfg: SweepConfig, x: float, rng: np.random.Generator) -> float:
    """Fraction of sessions where some handover interrupts (break-before-make)."""
    k = rng.poisson(x, cfg.samples_per_point)
    hits = rng.binomial(k, cfg.teardown_interrupt_prob)
    return float((hits > 0).mean())


def mbb_arm(cfg: SweepConfig, model: LatencyModel, v: float, x: float, rng: np.random.Generator,
            tag: str = "m") -> tuple[float, MobilityHarness]:
    """Fraction of sessions interrupted when every handover runs migrate()."""
    n = cfg.samples_per_point
    k = rng.poisson(x, n)
    total = int(k.sum())
    times = rng.uniform(0.0, cfg.session_window * 1000.0, total)
    fails = rng.random(total) < cfg.mbb_fail_prob
    harness = MobilityHarness(cfg, model)
    ctx = ContextSummary(mobility_speed=v, default_load=0.3)
    predictor = AnalyticPredictor(model, ctx)
    interrupted = 0
    offset = 0
    for i in range(n):
        ki = int(k[i])
        if ki == 0:
            continue
        sl = slice(offset, offset + ki)
        offset += ki
        order = np.argsort(times[sl], kind="stable")
        if harness.run_session(f"{tag}-{i}", times[sl][order], fails[sl][order], ctx, predictor):
            interrupted += 1
    return interrupted / n, harness


def mobility_rngs(cfg: SweepConfig, index: int) -> list[np.random.Generator]:
    return cell_rng(cfg.seed, MOBILITY_TAG, index).spawn(2)


def mobility_cell(cfg: SweepConfig, model: LatencyModel, index: int) -> MobilitySweepRow:
    v = cfg.speed_grid[index]
    x = v * cfg.handover_rate_per_speed * cfg.session_window
    td_rng, mbb_rng = mobility_rngs(cfg, index)
    p_td = teardown_arm(cfg, x, td_rng)
    p_mbb, harness = mbb_arm(cfg, model, v, x, mbb_rng, tag=f"m{index}")
    return MobilitySweepRow(
        speed_mps=v,
        p_interrupt_teardown=p_td,
        p_interrupt_mbb=p_mbb,
        expected_handovers=x,
        analytic_teardown=teardown_interruption(x, cfg.teardown_interrupt_prob),
        n_migrations=harness.n_migrations,
        n_aborts=harness.n_aborts,
    )


def run_mobility_sweep(cfg: SweepConfig, model: LatencyModel, workers: int = 1) -> list[MobilitySweepRow]:
    return _run_cells(mobility_cell, cfg, model, len(cfg.speed_grid), workers)


# --------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.6g}"


def to_csv(rows, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(getattr(row, c)) for c in columns])
    return buf.getvalue()


def load_sweep_csv(rows: Sequence[LoadSweepRow]) -> str:
    return to_csv(rows, LOAD_COLUMNS)


def mobility_sweep_csv(rows: Sequence[MobilitySweepRow]) -> str:
    return to_csv(rows, MOBILITY_COLUMNS)
