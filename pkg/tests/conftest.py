from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from wxbench.engine import Engine, EngineConfig
from wxbench.frameio import FIELD_NAMES, FieldFrame, write_frame
from wxbench.griddef import DomainSpec, GeoRect, frac_to_lonlat, snap_child_domain
from wxbench.runconfig import PhysicsSelection, RunConfig

START = datetime(2022, 3, 31, tzinfo=timezone.utc)


def make_root(nx=50, ny=40, resolution_m=18000.0, center=(-46.0, -23.5)) -> DomainSpec:
    return DomainSpec(
        domain_id=1, parent_id=0, resolution_m=resolution_m,
        center_lon=center[0], center_lat=center[1], nx=nx, ny=ny,
    )


def brush_cells(parent: DomainSpec, i0: int, j0: int, i1: int, j1: int) -> GeoRect:
    lon0, lat0 = frac_to_lonlat(parent, i0, j0)
    lon1, lat1 = frac_to_lonlat(parent, i1, j1)
    return GeoRect(lon0, lat0, lon1, lat1)


def make_child(parent: DomainSpec, i0=12, j0=10, i1=39, j1=31, ratio=3) -> DomainSpec:
    return snap_child_domain(parent, brush_cells(parent, i0, j0, i1, j1), ratio)


def make_config(domains, hours=24, source="GFS", physics=None, start=START) -> RunConfig:
    return RunConfig(
        domains=tuple(domains),
        start=start,
        end=start + timedelta(hours=hours),
        icbc_source=source,
        physics=physics or PhysicsSelection(),
    )


def crafted_frame(run_id, domain_id, step_hour, nx=12, ny=10, seed=None, constants=None) -> FieldFrame:
    """Frame with controllable content for oracle tests.

    ``constants`` maps field -> value; remaining fields are seeded noise
    (or zero when seed is None).
    """
    rng = np.random.default_rng(None if seed is None else (seed, domain_id, step_hour))
    grids = {}
    for name in FIELD_NAMES:
        if constants and name in constants:
            g = np.full((ny, nx), constants[name], np.float32)
        elif seed is None:
            g = np.zeros((ny, nx), np.float32)
        else:
            g = rng.normal(12, 4, size=(ny, nx)).astype(np.float32)
            if name == "precip":
                g = np.abs(g)
            if name == "rh850":
                g = np.clip(np.abs(g) * 5, 0, 100)
        grids[name] = g
    return FieldFrame(run_id, domain_id, step_hour, nx, ny, grids)


def write_frames(out_dir, run_id, domain_ids, hours, nx=12, ny=10, seed=7):
    frames = []
    for domain_id in domain_ids:
        for hour in range(1, hours + 1):
            frame = crafted_frame(run_id, domain_id, hour, nx=nx, ny=ny, seed=seed)
            write_frame(frame, str(out_dir))
            frames.append(frame)
    return frames


@pytest.fixture
def engine(tmp_path):
    eng = Engine(EngineConfig(data_dir=str(tmp_path / "data"), poll_interval_ms=25))
    yield eng
    eng.shutdown()


@pytest.fixture(scope="session")
def completed_run(tmp_path_factory):
    """A fully executed and ingested 2-domain, 48 h run (read-only for tests)."""
    data_dir = tmp_path_factory.mktemp("completed")
    eng = Engine(EngineConfig(data_dir=str(data_dir), poll_interval_ms=25))
    root = make_root(nx=36, ny=30)
    child = make_child(root, 10, 9, 25, 21)
    config = make_config([root, child], hours=48)
    project = eng.create_project("fixtures")["project_id"]
    rec = eng.create_run(project, config)
    final = eng.run_blocking(rec.run_id)
    assert final.status == "success"
    yield eng, final
    eng.shutdown()
