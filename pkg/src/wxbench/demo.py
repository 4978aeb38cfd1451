"""Seed projects that exercise the whole system at case-study scale.

Builds two ready-to-explore projects: an extreme-rain study with three
nested domains (18/6/2 km), 72 hours and eight runs varying only physics
(so seven of them plan as cache-maximal DAG6), and a frontal-system study
with two domains, 96 hours and six runs crossing three parameterization
combos with two boundary-data sources, grouped into per-combo ensembles.
"""

from __future__ import annotations

from datetime import datetime, timezone

from .engine import Engine
from .errors import DataDirNotEmpty
from .griddef import DomainSpec, GeoRect, frac_to_lonlat, snap_child_domain
from .runconfig import PhysicsSelection, RunConfig


def _brush(parent: DomainSpec, i0: int, j0: int, i1: int, j1: int) -> GeoRect:
    min_lon, min_lat = frac_to_lonlat(parent, i0, j0)
    max_lon, max_lat = frac_to_lonlat(parent, i1, j1)
    return GeoRect(min_lon, min_lat, max_lon, max_lat)


def _marica_domains() -> tuple[DomainSpec, ...]:
    root = DomainSpec(
        domain_id=1, parent_id=0, resolution_m=18000.0,
        center_lon=-43.3, center_lat=-22.8, nx=52, ny=43,
    )
    mid = snap_child_domain(root, _brush(root, 14, 12, 37, 30), 3)
    inner = snap_child_domain(mid, _brush(mid, 24, 20, 46, 37), 3)
    return (root, mid, inner)


def _sao_paulo_domains() -> tuple[DomainSpec, ...]:
    root = DomainSpec(
        domain_id=1, parent_id=0, resolution_m=18000.0,
        center_lon=-46.6, center_lat=-23.6, nx=50, ny=40,
    )
    nest = snap_child_domain(root, _brush(root, 13, 11, 36, 28), 3)
    return (root, nest)


_MARICA_PHYSICS = [
    PhysicsSelection(microphysics="WSM6", cumulus="KF"),
    PhysicsSelection(microphysics="Thompson", cumulus="KF"),
    PhysicsSelection(microphysics="Lin", cumulus="KF"),
    PhysicsSelection(microphysics="Kessler", cumulus="KF"),
    PhysicsSelection(microphysics="WSM6", cumulus="BMJ"),
    PhysicsSelection(microphysics="WSM6", cumulus="Grell"),
    PhysicsSelection(microphysics="Thompson", cumulus="Grell"),
    PhysicsSelection(microphysics="Lin", cumulus="BMJ"),
]

_SAO_PAULO_COMBOS = [
    PhysicsSelection(microphysics="WSM6", cumulus="KF", pbl="YSU"),
    PhysicsSelection(microphysics="Thompson", cumulus="BMJ", pbl="MYJ"),
    PhysicsSelection(microphysics="Lin", cumulus="Grell", pbl="MYNN"),
]


def build_demo(engine: Engine, pacing_ms: int = 0) -> dict:
    """Populate a fresh data dir with both demo projects; returns a summary."""
    if engine.store.list_projects():
        raise DataDirNotEmpty("demo fixtures require an empty data directory")

    summary = {"projects": []}

    # Extreme-rain study: 8 runs on 3 nested domains over 72 h, one ensemble.
    p1 = engine.create_project("marica-extreme-rain")["project_id"]
    domains = _marica_domains()
    base = RunConfig(
        domains=domains,
        start=datetime(2022, 3, 31, tzinfo=timezone.utc),
        end=datetime(2022, 4, 3, tzinfo=timezone.utc),
        icbc_source="GFS",
        physics=_MARICA_PHYSICS[0],
    )
    root_rec = engine.create_run(p1, base, pacing_ms=pacing_ms)
    engine.run_blocking(root_rec.run_id)
    run_ids = [root_rec.run_id]
    for physics in _MARICA_PHYSICS[1:]:
        child = engine.create_run(
            p1, base.with_physics(physics), parent_run_id=root_rec.run_id, pacing_ms=pacing_ms
        )
        engine.run_blocking(child.run_id)
        run_ids.append(child.run_id)
    ens1 = engine.create_ensemble(p1, "all-members")
    for rid in run_ids:
        engine.set_ensemble_membership(ens1.ensemble_id, rid, True)
    summary["projects"].append(
        {"project_id": p1, "name": "marica-extreme-rain", "runs": run_ids, "ensembles": [ens1.ensemble_id]}
    )

    # Frontal-system study: 6 runs on 2 domains over 96 h, three 2-member ensembles.
    p2 = engine.create_project("sao-paulo-frontal")["project_id"]
    sp_domains = _sao_paulo_domains()
    sp_base = RunConfig(
        domains=sp_domains,
        start=datetime(2018, 6, 1, tzinfo=timezone.utc),
        end=datetime(2018, 6, 5, tzinfo=timezone.utc),
        icbc_source="ECMWF",
        physics=_SAO_PAULO_COMBOS[0],
    )
    # Odd-numbered runs use ECMWF, even-numbered GFS; pairs share physics.
    plan = []
    for combo in _SAO_PAULO_COMBOS:
        plan.append((combo, "ECMWF"))
        plan.append((combo, "GFS"))
    sp_runs: list[int] = []
    parent_for = [None, 0, 0, 1, 2, 4]  # index into sp_runs, mirroring a small lineage tree
    for k, (combo, source) in enumerate(plan):
        cfg = RunConfig(sp_domains, sp_base.start, sp_base.end, source, combo)
        parent = sp_runs[parent_for[k]] if parent_for[k] is not None else None
        rec = engine.create_run(p2, cfg, parent_run_id=parent, pacing_ms=pacing_ms)
        engine.run_blocking(rec.run_id)
        sp_runs.append(rec.run_id)
    ensembles = []
    for k in range(3):
        ens = engine.create_ensemble(p2, f"combo-{k + 1}")
        engine.set_ensemble_membership(ens.ensemble_id, sp_runs[2 * k], True)
        engine.set_ensemble_membership(ens.ensemble_id, sp_runs[2 * k + 1], True)
        ensembles.append(ens.ensemble_id)
    summary["projects"].append(
        {"project_id": p2, "name": "sao-paulo-frontal", "runs": sp_runs, "ensembles": ensembles}
    )
    return summary
