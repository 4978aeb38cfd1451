#!/usr/bin/env python3
"""Measure analytics endpoint latency on a synthetic 8-member, 96 h store.

Builds the store in a temp directory (unless --data-dir points at an
existing one), then times each GET several times and reports min/median.
The interface budget is 1 s per query.
"""

import argparse
import statistics
import sys
import tempfile
import time

import numpy as np

from fastapi.testclient import TestClient

from wxbench import pipeline
from wxbench.engine import Engine, EngineConfig
from wxbench.frameio import FIELD_NAMES, FieldFrame, write_frame
from wxbench.griddef import DomainSpec
from wxbench.ingest import poll_run_outputs
from wxbench.runconfig import PhysicsSelection, RunConfig
from wxbench.server import create_app
from datetime import datetime, timedelta, timezone


def synthetic_frame(run_id, hour, nx, ny, seed):
    rng = np.random.default_rng((seed, hour))
    grids = {}
    for name in FIELD_NAMES:
        g = rng.normal(15, 6, size=(ny, nx)).astype(np.float32)
        if name == "precip":
            g = np.abs(g)
        if name == "rh850":
            g = np.clip(np.abs(g) * 5, 0, 100)
        grids[name] = g
    return FieldFrame(run_id, 1, hour, nx, ny, grids)


def build_store(engine, members=8, hours=96, nx=50, ny=40):
    project = engine.create_project("bench")["project_id"]
    root = DomainSpec(1, 0, 18000.0, -46.0, -23.5, nx, ny)
    start = datetime(2022, 3, 31, tzinfo=timezone.utc)
    config = RunConfig((root,), start, start + timedelta(hours=hours), "GFS", PhysicsSelection())
    run_ids = []
    for k in range(members):
        rec = engine.create_run(project, config)
        engine.store.set_run_status(rec.run_id, "running")
        pipeline.ensure_run_dirs(engine.data_dir, rec.run_id)
        out = pipeline.out_dir(engine.data_dir, rec.run_id)
        for hour in range(1, hours + 1):
            write_frame(synthetic_frame(rec.run_id, hour, nx, ny, seed=k), out)
        poll_run_outputs(engine.store, rec.run_id, out)
        engine.store.set_run_status(rec.run_id, "success")
        run_ids.append(rec.run_id)
    ens = engine.create_ensemble(project, "all")
    for rid in run_ids:
        engine.set_ensemble_membership(ens.ensemble_id, rid, True)
    return project, run_ids[0], ens.ensemble_id


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        engine = Engine(EngineConfig(data_dir=tmp, poll_interval_ms=60_000))
        print("building synthetic store (8 members x 96 h x 50x40)...")
        project, run_id, eid = build_store(engine)
        queries = [
            f"/runs/{run_id}/series?domain=1&field=precip&agg=max",
            f"/runs/{run_id}/sunburst?domain=1&agg=avg",
            f"/runs/{run_id}/map?domain=1&field=precip&t0=24&t1=36",
            f"/ensembles/{eid}/map?domain=1&field=precip&t0=24&t1=36&agg=max",
            f"/ensembles/{eid}/heatmatrix?domain=1&field=precip&agg=max",
            f"/ensembles/{eid}/sunburst?domain=1&agg=avg&ensemble_agg=avg",
            f"/ensembles/{eid}/probability?domain=1&cond=precip:ge:40&window=1&t0=1&t1=96",
            f"/projects/{project}/projection?domain=1",
        ]
        app = create_app(engine)
        with TestClient(app) as client:
            for url in queries:
                times = []
                for _ in range(args.repeats):
                    begin = time.perf_counter()
                    response = client.get(url)
                    times.append(time.perf_counter() - begin)
                    assert response.status_code == 200, response.text
                print(f"{min(times)*1000:7.1f} ms min {statistics.median(times)*1000:7.1f} ms median  {url}")
        engine.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
