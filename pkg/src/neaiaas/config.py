"""TOML experiment configuration with fail-fast validation.

Every error is a :class:`ConfigError` naming the offending field path, and
carries the originating failure cause when a contract validator rejected it.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema

from neaiaas.anchoring import RiskWeights
from neaiaas.catalog import CatalogEntry, load_catalog
from neaiaas.contract import (
    AIServiceProfile,
    ContractFailure,
    FailureCause,
    MobilityClass,
    Modality,
    PrivacyScope,
    TimerConfig,
    ValidatedASP,
    validate_asp,
    validate_timers,
)
from neaiaas.latency import LatencyModel
from neaiaas.migration import MigrationPolicy
from neaiaas.sim import SweepConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(Exception):
    def __init__(self, path: str, message: str, cause: Optional[FailureCause] = None):
        self.path = path
        self.cause = cause
        self.message = message
        prefix = f"{cause.value}: " if cause is not None else ""
        super().__init__(f"{prefix}config error at {path}: {message}")


@dataclass(frozen=True)
class TraceSettings:
    """Knobs for the single-session lifecycle trace."""

    model_id: Optional[str] = None
    requests: int = 3
    default_load: float = 0.3
    # load the anchor site reports after serving starts; drives the migration
    anchor_load_after: float = 0.95
    mobility_speed: float = 0.0
    site_capacity: int = 16
    flow_budget: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    source: Optional[Path]
    asp: ValidatedASP
    timers: TimerConfig
    model: LatencyModel
    sweep: SweepConfig
    policy: MigrationPolicy
    weights: RiskWeights
    lam: float
    catalog_path: Path
    catalog: list[CatalogEntry]
    out_dir: Path = Path("out")
    workers: int = 1
    trace: TraceSettings = field(default_factory=TraceSettings)

    @property
    def seed(self) -> int:
        return self.sweep.seed


def config_schema() -> dict:
    return json.loads(resources.files("neaiaas").joinpath("schema/config.schema.json").read_text())


def _path(parts) -> str:
    return ".".join(str(p) for p in parts) or "<root>"


def _build(section: str, fn, *args, **kwargs):
    """Run a constructor; re-raise its complaint against ``section``."""
    try:
        return fn(*args, **kwargs)
    except ContractFailure as exc:
        raise ConfigError(section, exc.detail, exc.cause) from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(section, str(exc)) from None


def build_config(data: dict, base_dir: Path = Path("."), source: Optional[Path] = None) -> ExperimentConfig:
    try:
        jsonschema.validate(data, config_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(_path(exc.absolute_path), exc.message) from None

    exp = data["experiment"]
    raw_asp = dict(data["asp"])
    for key, enum in (("modality", Modality), ("privacy_scope", PrivacyScope), ("mobility_class", MobilityClass)):
        if key in raw_asp:
            raw_asp[key] = enum(raw_asp[key])
    if "fallback_ladder" in raw_asp:
        raw_asp["fallback_ladder"] = tuple(raw_asp["fallback_ladder"])
    asp = _build("asp", lambda: validate_asp(AIServiceProfile(**raw_asp)))

    timers = TimerConfig(**data["timers"])
    _build("timers", validate_timers, timers, asp)

    model = _build("latency", LatencyModel, **data.get("latency", {}))

    raw_sweep: dict[str, Any] = dict(data.get("sweep", {}))
    for key in ("rho_grid", "speed_grid"):
        if key in raw_sweep:
            raw_sweep[key] = tuple(float(v) for v in raw_sweep[key])
    sweep = _build("sweep", SweepConfig, seed=int(exp.get("seed", 0)), asp=asp, **raw_sweep)

    policy = _build("migration", MigrationPolicy, tau_mig=timers.tau_mig, **data.get("migration", {}))
    anch = dict(data.get("anchoring", {}))
    lam = float(anch.pop("lambda", 0.0))
    weights = _build("anchoring", RiskWeights, **anch)
    trace = _build("trace", TraceSettings, **data.get("trace", {}))

    catalog_path = (base_dir / exp["catalog"]).resolve()
    if not catalog_path.is_file():
        raise ConfigError("experiment.catalog", f"file not found: {catalog_path}")
    try:
        catalog = load_catalog(catalog_path)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"catalog[{_path(exc.absolute_path)}]", exc.message) from None
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError("experiment.catalog", str(exc)) from None

    return ExperimentConfig(
        source=source,
        asp=asp,
        timers=timers,
        model=model,
        sweep=sweep,
        policy=policy,
        weights=weights,
        lam=lam,
        catalog_path=catalog_path,
        catalog=catalog,
        out_dir=Path(exp.get("out_dir", "out")),
        workers=int(exp.get("workers", 1)),
        trace=trace,
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from None
    return build_config(data, path.parent, source=path)
