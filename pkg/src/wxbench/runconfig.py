"""Run parameterization: domains, horizon, boundary-data source, physics.

A RunConfig is the complete, reproducible description of one simulation.
Canonical JSON serialization (sorted keys, compact separators) makes the
content digests used for task-level caching stable across processes and
key orderings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import ValidationFailed
from .griddef import DomainSpec, ValidationReport, validate_nesting

MAX_HORIZON_HOURS = 240

ICBC_SOURCES = ("GFS", "ECMWF", "SYNTH-A", "SYNTH-B")

SCHEME_CATALOGS: dict[str, tuple[str, ...]] = {
    # WRF-style scheme names, used purely as labels for surrogate coefficients.
    "microphysics": ("Kessler", "Lin", "WSM6", "Thompson"),
    "cumulus": ("KF", "BMJ", "Grell"),
    "land_surface": ("Noah", "RUC", "TD"),
    "surface_layer": ("MM5", "Eta", "MYNN"),
    "pbl": ("YSU", "MYJ", "MYNN"),
}


@dataclass(frozen=True)
class PhysicsSelection:
    """One scheme identifier per parameterized physical process."""

    microphysics: str = "WSM6"
    cumulus: str = "KF"
    land_surface: str = "Noah"
    surface_layer: str = "MM5"
    pbl: str = "YSU"

    def as_dict(self) -> dict[str, str]:
        return {k: getattr(self, k) for k in SCHEME_CATALOGS}

    def invalid_entries(self) -> list[str]:
        return [
            f"{process}={getattr(self, process)!r} not in {catalog}"
            for process, catalog in SCHEME_CATALOGS.items()
            if getattr(self, process) not in catalog
        ]


def parse_utc(ts: str | datetime) -> datetime:
    if isinstance(ts, datetime):
        dt = ts
    else:
        dt = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_utc(dt: datetime) -> str:
    return parse_utc(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RunConfig:
    domains: tuple[DomainSpec, ...]
    start: datetime
    end: datetime
    icbc_source: str = "GFS"
    physics: PhysicsSelection = PhysicsSelection()

    @property
    def horizon_hours(self) -> int:
        return int(round((self.end - self.start).total_seconds() / 3600.0))

    @property
    def root_domain(self) -> DomainSpec:
        return self.domains[0]

    def domain(self, domain_id: int) -> DomainSpec:
        for d in self.domains:
            if d.domain_id == domain_id:
                return d
        raise KeyError(f"no domain {domain_id} in config")

    def with_physics(self, physics: PhysicsSelection) -> "RunConfig":
        return RunConfig(self.domains, self.start, self.end, self.icbc_source, physics)

    def to_dict(self) -> dict:
        return {
            "domains": [vars(d) | {} for d in self.domains],
            "start": format_utc(self.start),
            "end": format_utc(self.end),
            "icbc_source": self.icbc_source,
            "physics": self.physics.as_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            domains = tuple(DomainSpec(**d) for d in data["domains"])
            physics = PhysicsSelection(**data.get("physics", {}))
            return cls(
                domains=domains,
                start=parse_utc(data["start"]),
                end=parse_utc(data["end"]),
                icbc_source=data.get("icbc_source", "GFS"),
                physics=physics,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationFailed(f"malformed run config: {exc}") from exc


def canonical_json(payload) -> str:
    """Stable serialization: sorted keys, no insignificant whitespace."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def content_digest(payload) -> str:
    """Hex sha256 of the canonical serialization of ``payload``."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def validate_config(config: RunConfig) -> ValidationReport:
    """Nesting validation plus horizon/source/physics checks."""
    report = validate_nesting(list(config.domains))

    seconds = (config.end - config.start).total_seconds()
    if seconds <= 0:
        report.add(0, "horizon", "end must be after start")
    elif seconds % 3600 != 0:
        report.add(0, "horizon", "horizon must be a whole number of hours")
    elif seconds / 3600 > MAX_HORIZON_HOURS:
        report.add(0, "horizon", f"horizon {seconds / 3600:.0f} h exceeds {MAX_HORIZON_HOURS} h")

    if config.icbc_source not in ICBC_SOURCES:
        report.add(0, "icbc", f"unknown ICBC source {config.icbc_source!r}; expected one of {ICBC_SOURCES}")

    for problem in config.physics.invalid_entries():
        report.add(0, "physics", problem)

    return report


def require_valid(config: RunConfig) -> None:
    report = validate_config(config)
    if not report.ok:
        raise ValidationFailed(str(report), report=report)
