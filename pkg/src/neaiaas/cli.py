"""neaiaas command line: sweeps, lifecycle trace, config check, traceability.

Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from neaiaas import sim
from neaiaas.anchoring import ContextSummary
from neaiaas.config import ConfigError, ExperimentConfig, parse_config
from neaiaas.contract import ContractFailure, FailureCause, SessionState, TraceLog
from neaiaas.lifecycle import Domain, FaultPlan, SessionDriver, check_domain
from neaiaas.migration import MigrationOutcome, check_trigger
from neaiaas.telemetry import TelemetryWindow, window_to_csv
from neaiaas.traceability import report_csv
from neaiaas.txn import ComputeSite, Managers, QosPlane

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
REQUEST_GAP_MS = 50.0


class RuntimeFailure(Exception):
    def __init__(self, cause: FailureCause, message: str):
        self.cause = cause
        super().__init__(f"{cause.value}: {message}")


@dataclass
class TraceRun:
    trace: TraceLog
    driver: SessionDriver
    migration: Optional[MigrationOutcome]
    triggered: bool

    @property
    def windows(self) -> list[TelemetryWindow]:
        return [*self.driver.windows, self.driver.window]


def run_lifecycle_trace(cfg: ExperimentConfig, faults: FaultPlan, seed: int) -> TraceRun:
    """One session: establish, serve, re-anchor after the anchor's load rises,
    serve again, release."""
    ts = cfg.trace
    site_ids = sorted({e.site_id for e in cfg.catalog})
    managers = Managers({s: ComputeSite(s, ts.site_capacity) for s in site_ids}, QosPlane(ts.flow_budget))
    ctx = ContextSummary(mobility_speed=ts.mobility_speed, default_load=ts.default_load)
    domain = Domain(
        list(cfg.catalog), managers, cfg.timers, cfg.model, ctx, cfg.weights, cfg.lam,
        on_snapshot=check_domain,
    )
    trace = TraceLog()
    driver = domain.open_session(cfg.asp.profile, faults, trace, seed)
    driver.establish(ts.model_id)

    def serve(n: int) -> None:
        for _ in range(n):
            if driver.state is not SessionState.SERVING:
                return
            domain.advance(REQUEST_GAP_MS)
            driver.serve_request()

    serve(ts.requests)
    outcome, triggered = None, False
    if driver.state is SessionState.SERVING:
        anchor = driver.record.anchor_site
        loaded = ContextSummary(
            load_estimate={anchor: ts.anchor_load_after},
            mobility_speed=ts.mobility_speed,
            default_load=ts.default_load,
        )
        entry = driver.anchor.entry
        risk = domain.predictor(loaded).risk(entry, driver.asp)
        triggered = check_trigger(risk, cfg.policy)
        trace.record(
            domain.now, driver.record, "MigrationTrigger", driver.record,
            p_tail_violation=round(risk.p_tail_violation, 6),
            p_ff_violation=round(risk.p_ff_violation, 6),
            triggered=triggered,
        )
        if triggered:
            domain.ctx = loaded
            outcome = driver.migrate(loaded)
        serve(ts.requests)
    if driver.state not in (SessionState.FAILED, SessionState.RELEASED):
        driver.release()
    return TraceRun(trace, driver, outcome, triggered)


# --------------------------------------------------------------------------


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    sweep = cfg.sweep
    if args.seed is not None:
        sweep = replace(sweep, seed=args.seed)
    if args.samples is not None:
        if args.samples < 1:
            raise ConfigError("sweep.samples_per_point", "must be >= 1")
        sweep = replace(sweep, samples_per_point=args.samples)
    workers = args.workers if args.workers is not None else cfg.workers
    if workers < 1:
        raise ConfigError("experiment.workers", "must be >= 1")
    out = Path(args.out) if args.out is not None else cfg.out_dir
    return replace(cfg, sweep=sweep, workers=workers, out_dir=out)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def cmd_load_sweep(cfg: ExperimentConfig) -> int:
    rows = sim.run_load_sweep(cfg.sweep, cfg.model, workers=cfg.workers)
    print(_write(cfg.out_dir, "load_sweep.csv", sim.load_sweep_csv(rows)))
    return EXIT_OK


def cmd_mobility_sweep(cfg: ExperimentConfig) -> int:
    rows = sim.run_mobility_sweep(cfg.sweep, cfg.model, workers=cfg.workers)
    print(_write(cfg.out_dir, "mobility_sweep.csv", sim.mobility_sweep_csv(rows)))
    return EXIT_OK


def cmd_lifecycle_trace(cfg: ExperimentConfig, inject: Sequence[str]) -> int:
    try:
        faults = FaultPlan.parse(inject)
    except ValueError as exc:
        raise ConfigError("inject", str(exc)) from None
    run = run_lifecycle_trace(cfg, faults, cfg.seed)
    print(_write(cfg.out_dir, "lifecycle_trace.jsonl", run.trace.dumps()))
    csv_text = "".join(
        window_to_csv(w) if i == 0 else window_to_csv(w).split("\n", 1)[1]
        for i, w in enumerate(run.windows)
    )
    print(_write(cfg.out_dir, "telemetry.csv", csv_text))
    rec = run.driver.record
    if rec.state is SessionState.FAILED:
        raise RuntimeFailure(rec.cause, f"session {rec.session_id} ended in Failed")
    if rec.cause is not None:
        raise RuntimeFailure(rec.cause, f"session {rec.session_id} released early")
    if run.migration is not None and not run.migration.migrated:
        raise RuntimeFailure(run.migration.cause, "migration aborted, source binding preserved")
    return EXIT_OK


def cmd_validate_config(cfg: ExperimentConfig) -> int:
    print(
        f"ok: {cfg.source} ({len(cfg.catalog)} catalog entries, "
        f"{len(cfg.sweep.rho_grid)} load points, {len(cfg.sweep.speed_grid)} speeds)"
    )
    return EXIT_OK


def cmd_traceability(cfg: Optional[ExperimentConfig], out: Optional[str]) -> int:
    text = report_csv()
    if out is None:
        sys.stdout.write(text)
    else:
        print(_write(Path(out), "traceability.csv", text))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neaiaas", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("load-sweep", "mobility-sweep", "lifecycle-trace", "validate-config", "traceability"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None if name == "traceability" else "configs/example.toml")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--inject", action="append", default=[], metavar="CAUSE[@STAGE]")
        sp.add_argument("--samples", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "traceability":
            return cmd_traceability(None, args.out)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("experiment.seed", "must be an unsigned 64-bit integer")
        cfg = _load(args)
        if args.command == "load-sweep":
            return cmd_load_sweep(cfg)
        if args.command == "mobility-sweep":
            return cmd_mobility_sweep(cfg)
        if args.command == "lifecycle-trace":
            return cmd_lifecycle_trace(cfg, args.inject)
        return cmd_validate_config(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, ContractFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
