"""HTTP + WebSocket facade over the engine.

All mutations go through REST; one server-push channel per client streams
frame/run-status/ensemble events for a project so views can refresh
without polling. Analytics endpoints return JSON payloads that are pure
functions of the store snapshot.
"""

from __future__ import annotations

import asyncio
import queue
from contextlib import asynccontextmanager

import numpy as np
from fastapi import Body, FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import analytics, errors, ingest
from .contours import extract_contours
from .engine import Engine, EngineConfig
from .frameio import FIELD_NAMES
from .griddef import DomainSpec, frac_to_lonlat

_STATUS_FOR = [
    ((errors.ValidationFailed, errors.EmptyScenario, errors.UnknownField, errors.IndexOutOfRange,
      errors.InvalidInterval, errors.HorizonTooLong, errors.BrushOutsideParent, errors.MarginViolation,
      errors.TooSmall, ValueError), 400),
    ((errors.UnknownProject, errors.UnknownRun, errors.UnknownParent, errors.UnknownEnsemble, KeyError), 404),
    ((errors.InvalidState, errors.RunActive, errors.IncompatibleMember, errors.NothingIngested,
      errors.RangeNotIngested, errors.MemberNotIngested, errors.RunIncomplete, errors.DataDirNotEmpty), 409),
]


def _error_response(exc: Exception) -> JSONResponse:
    for types, status in _STATUS_FOR:
        if isinstance(exc, types):
            payload = {"error": type(exc).__name__, "detail": str(exc)}
            report = getattr(exc, "report", None)
            if report is not None:
                payload["violations"] = report.as_dicts()
            return JSONResponse(status_code=status, content=payload)
    return JSONResponse(status_code=500, content={"error": type(exc).__name__, "detail": str(exc)})


def _spatial_param(agg: str | None, i: int | None, j: int | None):
    if i is not None and j is not None:
        return ("point", i, j)
    return agg or "avg"


def _time_param(hour: int | None, t0: int | None, t1: int | None) -> tuple:
    if hour is not None:
        return ("hour", hour)
    if t0 is not None and t1 is not None:
        return ("window", t0, t1)
    raise ValueError("provide either hour= or t0=&t1=")


def _domain_axes(domain: DomainSpec) -> dict:
    lons = [frac_to_lonlat(domain, i, 0)[0] for i in range(domain.nx)]
    lats = [frac_to_lonlat(domain, 0, j)[1] for j in range(domain.ny)]
    return {"lon": lons, "lat": lats}


def _contours_geojson(grid: np.ndarray, domain: DomainSpec, levels: list[float]) -> dict:
    features = []
    for cs in extract_contours(grid, domain, levels):
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


def _auto_levels(grid: np.ndarray, n: int = 5) -> list[float]:
    lo, hi = float(grid.min()), float(grid.max())
    if hi <= lo:
        return []
    step = (hi - lo) / (n + 1)
    return [lo + step * (k + 1) for k in range(n)]


def _parse_levels(levels: str | None, grid: np.ndarray) -> list[float]:
    if not levels:
        return _auto_levels(grid)
    return [float(tok) for tok in levels.split(",") if tok.strip()]


def _parse_scenario(cond: list[str], window: int, t0: int, t1: int) -> analytics.ScenarioSpec:
    conditions = []
    for token in cond:
        try:
            field, comparator, value = token.split(":")
            conditions.append(analytics.FieldCondition(field, comparator, float(value)))
        except ValueError as exc:
            raise ValueError(f"bad condition {token!r}; expected field:ge|le:value") from exc
    spec = analytics.ScenarioSpec(
        conditions=tuple(conditions), precip_window_h=window, eval_t0=t0, eval_t1=t1
    )
    spec.validate()
    return spec


def _map_payload(engine: Engine, run_ids, domain: DomainSpec, field: str, time_sel, agg, levels):
    if len(run_ids) == 1 and time_sel[0] == "hour":
        grid = engine.store.field_grid(run_ids[0], domain.domain_id, time_sel[1], field)
        if grid is None:
            raise errors.RangeNotIngested(f"hour {time_sel[1]} not ingested")
        grid = grid.astype(np.float64)
    elif len(run_ids) == 1:
        grid = ingest.accumulate_precip(engine.store, run_ids[0], domain.domain_id, time_sel[1], time_sel[2])
        if field != "precip":
            raise ValueError("window queries only apply to precip accumulation")
    else:
        grid = analytics.ensemble_field_map(engine.store, run_ids, domain.domain_id, field, time_sel, agg or "avg")
    lv = _parse_levels(levels, grid)
    return {
        "domain_id": domain.domain_id,
        "field": field,
        "time": list(time_sel),
        "nx": domain.nx,
        "ny": domain.ny,
        "axes": _domain_axes(domain),
        "values": grid.tolist(),
        "levels": lv,
        "contours": _contours_geojson(grid, domain, lv),
    }


def create_app(engine: Engine) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        engine.shutdown()

    app = FastAPI(title="wxbench", lifespan=lifespan)
    app.state.engine = engine

    @app.exception_handler(errors.WxError)
    @app.exception_handler(ValueError)
    @app.exception_handler(KeyError)
    async def handle_domain_error(_request: Request, exc: Exception):
        return _error_response(exc)

    @app.exception_handler(RequestValidationError)
    async def handle_request_validation(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "RequestValidation", "detail": str(exc)})

    def _domain_of(run_id: int, domain_id: int) -> DomainSpec:
        rec = engine.store.get_run(run_id)
        try:
            return rec.config.domain(domain_id)
        except KeyError as exc:
            raise errors.UnknownRun(f"run {run_id} has no domain {domain_id}") from exc

    @app.get("/health")
    def health():
        return {"status": "ok"}

    # --- projects / lineage -------------------------------------------------

    @app.post("/projects", status_code=201)
    def create_project(payload: dict = Body(...)):
        return engine.create_project(payload.get("name", "project"))

    @app.get("/projects")
    def list_projects():
        return engine.store.list_projects()

    @app.get("/projects/{project_id}/lineage")
    def lineage(project_id: int):
        return engine.store.lineage_graph(project_id)

    @app.get("/projects/{project_id}/projection")
    def projection(project_id: int, domain: int = Query(1)):
        return engine.projection(project_id, domain)

    @app.get("/projects/{project_id}/ensembles")
    def list_ensembles(project_id: int):
        return [e.as_dict() for e in engine.store.list_ensembles(project_id)]

    @app.get("/projects/{project_id}/export")
    def export_project(project_id: int):
        return engine.store.export_project(project_id)

    # --- runs ---------------------------------------------------------------

    @app.post("/projects/{project_id}/runs", status_code=201)
    def create_run(project_id: int, payload: dict = Body(...)):
        rec = engine.create_run(
            project_id,
            payload.get("config", {}),
            parent_run_id=payload.get("parent_run_id"),
            name=payload.get("name"),
            user_label=payload.get("user_label", ""),
            pacing_ms=payload.get("pacing_ms"),
        )
        return rec.as_dict()

    @app.post("/projects/{project_id}/domains/snap")
    def snap_domain(project_id: int, payload: dict = Body(...)):
        # Brush-to-child helper for the setup view.
        from .griddef import GeoRect, snap_child_domain

        engine.store.get_project(project_id)
        parent = DomainSpec(**payload["parent"])
        brush = GeoRect(**payload["brush"])
        child = snap_child_domain(parent, brush, int(payload.get("ratio", 3)))
        return vars(child)

    @app.get("/runs/{run_id}")
    def get_run(run_id: int):
        rec = engine.store.get_run(run_id)
        ingested = {
            str(dom): engine.store.ingested_hours(run_id, dom)
            for dom in engine.store.ingested_domains(run_id)
        }
        return {"run": rec.as_dict(), "ingested": ingested}

    @app.get("/runs/{run_id}/tasks")
    def run_tasks(run_id: int):
        return engine.store.task_executions(run_id)

    @app.post("/runs/{run_id}/start")
    def start_run(run_id: int):
        return engine.start_run(run_id).as_dict()

    @app.post("/runs/{run_id}/abort")
    def abort_run(run_id: int):
        engine.abort_run(run_id)
        return {"acknowledged": True, "run_id": run_id}

    @app.post("/runs/{run_id}/restart")
    def restart_run(run_id: int):
        return engine.restart_run(run_id).as_dict()

    @app.delete("/runs/{run_id}")
    def delete_run(run_id: int):
        engine.delete_run(run_id)
        return {"deleted": run_id}

    # --- single-run analytics -------------------------------------------

    @app.get("/runs/{run_id}/series")
    def run_series(
        run_id: int,
        domain: int = Query(...),
        field: str = Query(...),
        agg: str | None = None,
        i: int | None = None,
        j: int | None = None,
    ):
        hours, values = ingest.query_series(engine.store, run_id, domain, field, _spatial_param(agg, i, j))
        return {"run_id": run_id, "domain_id": domain, "field": field, "hours": hours, "values": values}

    @app.get("/runs/{run_id}/sunburst")
    def run_sunburst(
        run_id: int,
        domain: int = Query(...),
        agg: str | None = None,
        i: int | None = None,
        j: int | None = None,
    ):
        chart = analytics.sunburst(engine.store, [run_id], domain, _spatial_param(agg, i, j))
        return chart.as_dict()

    @app.get("/runs/{run_id}/map")
    def run_map(
        run_id: int,
        domain: int = Query(...),
        field: str = Query(...),
        hour: int | None = None,
        t0: int | None = None,
        t1: int | None = None,
        levels: str | None = None,
    ):
        if field not in FIELD_NAMES:
            raise errors.UnknownField(f"unknown field {field!r}")
        spec = _domain_of(run_id, domain)
        return _map_payload(engine, [run_id], spec, field, _time_param(hour, t0, t1), None, levels)

    # --- ensembles ------------------------------------------------------

    @app.post("/projects/{project_id}/ensembles", status_code=201)
    def create_ensemble(project_id: int, payload: dict = Body(...)):
        return engine.create_ensemble(project_id, payload.get("name", "ensemble")).as_dict()

    @app.get("/ensembles/{ensemble_id}")
    def get_ensemble(ensemble_id: int):
        return engine.store.get_ensemble(ensemble_id).as_dict()

    @app.put("/ensembles/{ensemble_id}/members/{run_id}")
    def add_member(ensemble_id: int, run_id: int):
        return engine.set_ensemble_membership(ensemble_id, run_id, True).as_dict()

    @app.delete("/ensembles/{ensemble_id}/members/{run_id}")
    def remove_member(ensemble_id: int, run_id: int):
        return engine.set_ensemble_membership(ensemble_id, run_id, False).as_dict()

    def _members_and_domain(ensemble_id: int, domain_id: int) -> tuple[list[int], DomainSpec]:
        members = engine.ensemble_members(ensemble_id)
        if not members:
            raise errors.MemberNotIngested(f"ensemble {ensemble_id} has no members")
        return members, _domain_of(members[0], domain_id)

    @app.get("/ensembles/{ensemble_id}/map")
    def ensemble_map(
        ensemble_id: int,
        domain: int = Query(...),
        field: str = Query(...),
        agg: str = Query("avg"),
        hour: int | None = None,
        t0: int | None = None,
        t1: int | None = None,
        levels: str | None = None,
    ):
        members, spec = _members_and_domain(ensemble_id, domain)
        payload = _map_payload(engine, members, spec, field, _time_param(hour, t0, t1), agg, levels)
        payload["ensemble_id"] = ensemble_id
        payload["agg"] = agg
        return payload

    @app.get("/ensembles/{ensemble_id}/heatmatrix")
    def ensemble_heatmatrix(
        ensemble_id: int,
        domain: int = Query(...),
        field: str = Query(...),
        agg: str | None = None,
        i: int | None = None,
        j: int | None = None,
    ):
        members, _spec = _members_and_domain(ensemble_id, domain)
        matrix = analytics.heatmatrix_series(engine.store, members, domain, field, _spatial_param(agg, i, j))
        matrix["ensemble_id"] = ensemble_id
        matrix["field"] = field
        return matrix

    @app.get("/ensembles/{ensemble_id}/sunburst")
    def ensemble_sunburst(
        ensemble_id: int,
        domain: int = Query(...),
        agg: str | None = None,
        i: int | None = None,
        j: int | None = None,
        ensemble_agg: str = Query("avg"),
    ):
        members, _spec = _members_and_domain(ensemble_id, domain)
        chart = analytics.sunburst(engine.store, members, domain, _spatial_param(agg, i, j), ensemble_agg)
        payload = chart.as_dict()
        payload["ensemble_id"] = ensemble_id
        return payload

    @app.get("/ensembles/{ensemble_id}/probability")
    def ensemble_probability(
        ensemble_id: int,
        domain: int = Query(...),
        cond: list[str] = Query(...),
        window: int = Query(1),
        t0: int = Query(1),
        t1: int = Query(1),
        hour: int | None = None,
        levels: str | None = None,
    ):
        members, spec = _members_and_domain(ensemble_id, domain)
        scenario = _parse_scenario(cond, window, t0, t1)
        at = ("hour", hour) if hour is not None else ("window",)
        grid = analytics.scenario_probability_map(engine.store, members, domain, scenario, at)
        lv = [float(tok) for tok in levels.split(",")] if levels else [0.25, 0.5, 0.75]
        return {
            "ensemble_id": ensemble_id,
            "domain_id": domain,
            "members": members,
            "scenario": {
                "conditions": [vars(c) for c in scenario.conditions],
                "precip_window_h": scenario.precip_window_h,
                "eval_t0": scenario.eval_t0,
                "eval_t1": scenario.eval_t1,
            },
            "at": list(at),
            "nx": spec.nx,
            "ny": spec.ny,
            "axes": _domain_axes(spec),
            "values": grid.tolist(),
            "contours": _contours_geojson(grid, spec, lv),
        }

    @app.get("/ensembles/{ensemble_id}/scenario_matrix")
    def ensemble_scenario_matrix(
        ensemble_id: int,
        domain: int = Query(...),
        cond: list[str] = Query(...),
        window: int = Query(1),
        t0: int = Query(1),
        t1: int = Query(1),
    ):
        members, _spec = _members_and_domain(ensemble_id, domain)
        scenario = _parse_scenario(cond, window, t0, t1)
        matrix = analytics.scenario_matrix(engine.store, members, domain, scenario)
        matrix["ensemble_id"] = ensemble_id
        return matrix

    # --- events -----------------------------------------------------------

    @app.websocket("/events")
    async def events(ws: WebSocket, project: int = Query(...)):
        await ws.accept()
        try:
            sub = engine.subscribe(project)
        except errors.UnknownProject:
            await ws.close(code=4004)
            return
        try:
            while True:
                try:
                    event = await asyncio.to_thread(sub.get, 0.25)
                except queue.Empty:
                    # Surface client disconnects between events.
                    await asyncio.sleep(0)
                    continue
                await ws.send_json(event)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            engine.unsubscribe(sub)

    return app


def serve(config: EngineConfig, port: int = 8040, host: str = "127.0.0.1") -> None:
    """Run the service until interrupted; drains runs and pollers on shutdown."""
    import uvicorn

    engine = Engine(config)
    app = create_app(engine)
    uvicorn.run(app, host=host, port=port, log_level="info")
