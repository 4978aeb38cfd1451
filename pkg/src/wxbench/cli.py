"""Operator entry point: serve the API, run headless simulations, export
analytics to files, and seed the demo projects.

Exit codes: 0 success, 2 validation problem (bad flags, malformed or
invalid config), 3 execution failure, 4 unknown id. Errors print one
machine-readable JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import analytics, errors, ingest
from .engine import Engine, EngineConfig
from .frameio import FIELD_NAMES
from .runconfig import RunConfig, canonical_json

EXIT_VALIDATION = 2
EXIT_EXECUTION = 3
EXIT_UNKNOWN_ID = 4


def _fail(code: int, error: str, detail: str) -> int:
    print(canonical_json({"error": error, "detail": detail}), file=sys.stderr)
    return code


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wxbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve_p = sub.add_parser("serve", help="run the HTTP/WebSocket service")
    serve_p.add_argument("--port", type=int, default=8040)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--data-dir", default="./wxdata")
    serve_p.add_argument("--poll-ms", type=int, default=60_000)
    serve_p.add_argument("--workers", type=int, default=2)
    serve_p.add_argument("--pacing-ms", type=int, default=0)

    run_p = sub.add_parser("run", help="execute one simulation synchronously")
    run_p.add_argument("--config", required=True, help="JSON run config file")
    run_p.add_argument("--data-dir", default="./wxdata")
    run_p.add_argument("--project", type=int, default=None, help="project id (default: a 'cli' project)")
    run_p.add_argument("--parent", type=int, default=None, help="parent run id")
    run_p.add_argument("--no-pace", action="store_true", help="force pacing_ms to 0")
    run_p.add_argument("--pacing-ms", type=int, default=0)

    export_p = sub.add_parser("export", help="write analytics to CSV/GeoJSON files")
    export_p.add_argument("--kind", required=True,
                          choices=["series", "sunburst", "map", "probability", "projection", "heatmatrix"])
    export_p.add_argument("--data-dir", default="./wxdata")
    export_p.add_argument("--out", required=True)
    export_p.add_argument("--run", type=int, default=None)
    export_p.add_argument("--ensemble", type=int, default=None)
    export_p.add_argument("--project", type=int, default=None)
    export_p.add_argument("--domain", type=int, default=1)
    export_p.add_argument("--field", default="precip", choices=list(FIELD_NAMES))
    export_p.add_argument("--agg", default=None, choices=["min", "max", "avg"])
    export_p.add_argument("--i", dest="i", type=int, default=None)
    export_p.add_argument("--j", dest="j", type=int, default=None)
    export_p.add_argument("--hour", type=int, default=None)
    export_p.add_argument("--t0", type=int, default=None)
    export_p.add_argument("--t1", type=int, default=None)
    export_p.add_argument("--levels", default=None, help="comma-separated contour levels")
    export_p.add_argument("--cond", action="append", default=[], help="scenario condition field:ge|le:value")
    export_p.add_argument("--window", type=int, default=1, help="precip accumulation window (hours)")
    export_p.add_argument("--ensemble-agg", default="avg", choices=["min", "max", "avg"])

    demo_p = sub.add_parser("demo", help="seed the two demo projects")
    demo_p.add_argument("--data-dir", default="./wxdata")
    demo_p.add_argument("--pacing-ms", type=int, default=0)

    return parser


def _cmd_serve(args) -> int:
    from .server import serve

    serve(
        EngineConfig(
            data_dir=args.data_dir,
            poll_interval_ms=args.poll_ms,
            worker_slots=args.workers,
            pacing_ms_default=args.pacing_ms,
        ),
        port=args.port,
        host=args.host,
    )
    return 0


def _cmd_run(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            payload = json.load(fh)
        config = RunConfig.from_dict(payload)
    except (OSError, json.JSONDecodeError, errors.ValidationFailed) as exc:
        return _fail(EXIT_VALIDATION, "InvalidConfig", str(exc))

    engine = Engine(EngineConfig(data_dir=args.data_dir, poll_interval_ms=100))
    try:
        if args.parent is not None:
            try:
                project_id = engine.store.get_run(args.parent).project_id
            except errors.UnknownRun as exc:
                return _fail(EXIT_UNKNOWN_ID, "UnknownRun", str(exc))
        elif args.project is not None:
            project_id = args.project
        else:
            existing = [p for p in engine.store.list_projects() if p["name"] == "cli"]
            project_id = existing[0]["project_id"] if existing else engine.create_project("cli")["project_id"]

        pacing = 0 if args.no_pace else args.pacing_ms
        try:
            rec = engine.create_run(project_id, config, parent_run_id=args.parent, pacing_ms=pacing)
        except errors.ValidationFailed as exc:
            return _fail(EXIT_VALIDATION, "ValidationFailed", str(exc))
        except (errors.UnknownProject, errors.UnknownParent) as exc:
            return _fail(EXIT_UNKNOWN_ID, type(exc).__name__, str(exc))

        final = engine.run_blocking(rec.run_id)
        print(f"run_id: {final.run_id}")
        print(f"dag_id: {final.dag_id}")
        for row in engine.store.task_executions(final.run_id, attempt=final.attempt):
            if row["status"] == "reused":
                print(f"  {row['task']:<14} reused from run {row['reused_from_run']}")
            else:
                print(f"  {row['task']:<14} {row['status']} ({row['started_at']} -> {row['ended_at']})")
        frames = sum(len(engine.store.ingested_hours(final.run_id, d)) for d in engine.store.ingested_domains(final.run_id))
        print(f"frames ingested: {frames}")
        print(f"status: {final.status}")
        if final.status != "success":
            return _fail(EXIT_EXECUTION, "RunFailed", final.error or final.status)
        return 0
    finally:
        engine.shutdown()


def _export_rows(engine: Engine, args) -> tuple[list[str], list[list]]:
    spatial = ("point", args.i, args.j) if args.i is not None and args.j is not None else (args.agg or "avg")

    if args.kind == "series":
        if args.run is None:
            raise errors.UnknownRun("export series requires --run")
        hours, values = ingest.query_series(engine.store, args.run, args.domain, args.field, spatial)
        return ["hour", "value"], [[h, v] for h, v in zip(hours, values)]

    if args.kind == "sunburst":
        if args.run is not None:
            chart = analytics.sunburst(engine.store, [args.run], args.domain, spatial)
        elif args.ensemble is not None:
            members = engine.ensemble_members(args.ensemble)
            chart = analytics.sunburst(engine.store, members, args.domain, spatial, args.ensemble_agg)
        else:
            raise errors.UnknownRun("export sunburst requires --run or --ensemble")
        return ["kind", "index", "t0", "t1", "value"], [
            [c.kind, c.index, c.t0, c.t1, c.value] for c in chart.cells
        ]

    if args.kind == "heatmatrix":
        if args.ensemble is None:
            raise errors.UnknownEnsemble("export heatmatrix requires --ensemble")
        members = engine.ensemble_members(args.ensemble)
        matrix = analytics.heatmatrix_series(engine.store, members, args.domain, args.field, spatial)
        rows = []
        for rid, series in zip(matrix["run_ids"], matrix["cells"]):
            rows += [[rid, hour + 1, value] for hour, value in enumerate(series)]
        return ["run_id", "hour", "value"], rows

    if args.kind == "probability":
        if args.ensemble is None:
            raise errors.UnknownEnsemble("export probability requires --ensemble")
        members = engine.ensemble_members(args.ensemble)
        conditions = []
        for token in args.cond:
            field, comparator, value = token.split(":")
            conditions.append(analytics.FieldCondition(field, comparator, float(value)))
        scenario = analytics.ScenarioSpec(
            conditions=tuple(conditions),
            precip_window_h=args.window,
            eval_t0=args.t0 or 1,
            eval_t1=args.t1 or 1,
        )
        at = ("hour", args.hour) if args.hour is not None else ("window",)
        grid = analytics.scenario_probability_map(engine.store, members, args.domain, scenario, at)
        rec = engine.store.get_run(members[0])
        dom = rec.config.domain(args.domain)
        from .griddef import frac_to_lonlat

        rows = []
        for j in range(grid.shape[0]):
            for i in range(grid.shape[1]):
                lon, lat = frac_to_lonlat(dom, i, j)
                rows.append([i, j, lon, lat, float(grid[j, i])])
        return ["i", "j", "lon", "lat", "probability"], rows

    if args.kind == "projection":
        if args.project is None:
            raise errors.UnknownProject("export projection requires --project")
        data = engine.projection(args.project, args.domain)
        rows = [
            [
                p["run_id"], p["name"], p["x"], p["y"], p["status"], p["icbc_source"],
                p["physics"]["microphysics"], p["physics"]["cumulus"], p["physics"]["land_surface"],
                p["physics"]["surface_layer"], p["physics"]["pbl"],
                ";".join(str(e) for e in p["ensembles"]),
            ]
            for p in data["points"]
        ]
        header = ["run_id", "name", "x", "y", "status", "icbc_source",
                  "microphysics", "cumulus", "land_surface", "surface_layer", "pbl", "ensembles"]
        return header, rows

    raise ValueError(f"unhandled kind {args.kind}")


def _cmd_export(args) -> int:
    engine = Engine(EngineConfig(data_dir=args.data_dir))
    try:
        if args.kind == "map":
            try:
                payload = _export_map_geojson(engine, args)
            except (errors.UnknownRun, errors.UnknownEnsemble, errors.UnknownProject) as exc:
                return _fail(EXIT_UNKNOWN_ID, type(exc).__name__, str(exc))
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
            print(f"wrote {args.out}")
            return 0
        try:
            header, rows = _export_rows(engine, args)
        except (errors.UnknownRun, errors.UnknownEnsemble, errors.UnknownProject) as exc:
            return _fail(EXIT_UNKNOWN_ID, type(exc).__name__, str(exc))
        except (errors.WxError, ValueError) as exc:
            return _fail(EXIT_VALIDATION, type(exc).__name__, str(exc))
        _write_rows(args.out, header, rows)
        print(f"wrote {args.out}")
        return 0
    finally:
        engine.shutdown()


def _export_map_geojson(engine: Engine, args) -> dict:
    import numpy as np

    from .contours import extract_contours

    if args.run is not None:
        members = [args.run]
        rec = engine.store.get_run(args.run)
    elif args.ensemble is not None:
        members = engine.ensemble_members(args.ensemble)
        rec = engine.store.get_run(members[0])
    else:
        raise errors.UnknownRun("export map requires --run or --ensemble")
    dom = rec.config.domain(args.domain)
    time_sel = ("hour", args.hour) if args.hour is not None else ("window", args.t0, args.t1)
    if len(members) == 1 and time_sel[0] == "hour":
        grid = engine.store.field_grid(members[0], args.domain, args.hour, args.field)
        if grid is None:
            raise errors.RangeNotIngested(f"hour {args.hour} not ingested")
        grid = grid.astype(np.float64)
    elif len(members) == 1:
        grid = ingest.accumulate_precip(engine.store, members[0], args.domain, args.t0, args.t1)
    else:
        grid = analytics.ensemble_field_map(
            engine.store, members, args.domain, args.field, time_sel, args.agg or "avg"
        )
    if args.levels:
        levels = [float(t) for t in args.levels.split(",")]
    else:
        lo, hi = float(grid.min()), float(grid.max())
        levels = [lo + (hi - lo) * (k + 1) / 6 for k in range(5)] if hi > lo else []
    features = []
    for cs in extract_contours(grid, dom, levels):
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "MultiLineString",
                    "coordinates": [[[lon, lat] for lon, lat in line] for line in cs.polylines],
                },
                "properties": {"level": cs.level},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def _cmd_demo(args) -> int:
    from .demo import build_demo

    engine = Engine(EngineConfig(data_dir=args.data_dir, pacing_ms_default=args.pacing_ms))
    try:
        try:
            summary = build_demo(engine, pacing_ms=args.pacing_ms)
        except errors.DataDirNotEmpty as exc:
            return _fail(EXIT_VALIDATION, "DataDirNotEmpty", str(exc))
        print(canonical_json(summary))
        return 0
    finally:
        engine.shutdown()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on unknown flags, matching our validation code
        return int(exc.code or 0)
    handlers = {"serve": _cmd_serve, "run": _cmd_run, "export": _cmd_export, "demo": _cmd_demo}
    try:
        return handlers[args.command](args)
    except errors.WxError as exc:
        return _fail(EXIT_EXECUTION, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
