"""The eight pipeline tasks and the per-run executor.

Tasks run strictly sequentially within a run. Preprocessing artifacts are
content-addressed by their task signatures: the executor consults the
project's cache of prior successful executions (artifact integrity
re-verified) to pick one of the six plan shapes, records reused tasks
with their provenance, executes the rest, and streams simulation frames
to the run's output directory where the poller finds them.

Artifact layout per run: <data_dir>/runs/<run_id>/{wps/, icbc/, metgrid/, out/},
plus tasks.jsonl with one UTF-8 JSON log line per task event.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import surrogate
from .errors import AbortRequested, TaskFailed
from .frameio import blob_intact, read_blob, write_blob, write_frame
from .icbc import generate_icbc
from .planner import CACHEABLE_TASKS, CacheEntry, DagPlan, select_dag, sign_task
from .runconfig import RunConfig, canonical_json, format_utc
from .store import RunRecord, Store, utcnow

ARTIFACT_FILES = {
    "wps_setup": "wps/namelist_wps.json",
    "geogrid": "wps/geogrid.bin",
    "download_icbc": "icbc/source.bin",
    "ungrib": "icbc/ungrib.bin",
    "metgrid": "metgrid/metgrid.bin",
    "prc_setup": "metgrid/namelist_prc.json",
    "real": "metgrid/real.bin",
    "wrf_sim": "out",
}

_TASK_BLOB_KIND = {
    "geogrid": "geogrid",
    "download_icbc": "icbc",
    "ungrib": "ungrib",
    "metgrid": "metgrid",
    "real": "real",
}


def run_dir(data_dir: str, run_id: int) -> str:
    return os.path.join(data_dir, "runs", str(run_id))


def out_dir(data_dir: str, run_id: int) -> str:
    return os.path.join(run_dir(data_dir, run_id), "out")


def ensure_run_dirs(data_dir: str, run_id: int) -> str:
    base = run_dir(data_dir, run_id)
    for sub in ("wps", "icbc", "metgrid", "out"):
        os.makedirs(os.path.join(base, sub), exist_ok=True)
    return base


def artifact_intact(task: str, path: str) -> bool:
    """File exists and its magic matches the task's artifact kind."""
    kind = _TASK_BLOB_KIND.get(task)
    if kind is None:
        return os.path.exists(path)
    return blob_intact(path, kind)


def build_cache_index(store: Store, project_id: int) -> dict[str, CacheEntry]:
    """Digest -> newest successful execution whose artifact is still intact."""
    index: dict[str, CacheEntry] = {}
    for row in store.cache_candidates(project_id):
        if row["digest"] in index:
            continue
        if not artifact_intact(row["task"], row["artifact_path"]):
            continue
        index[row["digest"]] = CacheEntry(
            task=row["task"],
            digest=row["digest"],
            run_id=row["run_id"],
            exec_id=row["exec_id"],
            artifact_path=row["artifact_path"],
        )
    return index


@dataclass
class TaskContext:
    store: Store
    data_dir: str
    rec: RunRecord
    plan: DagPlan
    pacing_ms: int
    abort: object | None  # threading.Event-like
    on_event: Callable[[dict], None] | None = None

    @property
    def config(self) -> RunConfig:
        return self.rec.config

    def own_path(self, task: str) -> str:
        return os.path.join(run_dir(self.data_dir, self.rec.run_id), ARTIFACT_FILES[task])

    def input_path(self, task: str) -> str:
        """Where this run reads the named task's artifact (reused or own)."""
        entry = self.plan.reuse.get(task)
        return entry.artifact_path if entry else self.own_path(task)

    def log_line(self, task: str, event: str) -> None:
        line = canonical_json({"ts": utcnow(), "run_id": self.rec.run_id, "task": task, "event": event})
        path = os.path.join(run_dir(self.data_dir, self.rec.run_id), "tasks.jsonl")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


# --- task bodies ----------------------------------------------------------

def _task_wps_setup(ctx: TaskContext) -> str:
    path = ctx.own_path("wps_setup")
    payload = {
        "domains": [vars(d) for d in ctx.config.domains],
        "start": format_utc(ctx.config.start),
        "end": format_utc(ctx.config.end),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload))
    return path


def _task_geogrid(ctx: TaskContext) -> str:
    domains = list(ctx.config.domains)
    seed = int(sign_task("geogrid", ctx.config).digest[:16], 16)
    terrain = surrogate.terrain_maps(domains, seed)
    arrays = {f"terrain_d{d.domain_id}": terrain[d.domain_id] for d in domains}
    meta = {"seed": seed, "domains": [vars(d) for d in domains]}
    return write_blob(ctx.own_path("geogrid"), "geogrid", meta, arrays)


def _task_download_icbc(ctx: TaskContext) -> str:
    cfg = ctx.config
    return generate_icbc(cfg.icbc_source, cfg.start, cfg.end, cfg.root_domain, ctx.own_path("download_icbc"))


def _task_ungrib(ctx: TaskContext) -> str:
    meta, arrays = read_blob(ctx.input_path("download_icbc"), "icbc")
    meta["decoded"] = True
    return write_blob(ctx.own_path("ungrib"), "ungrib", meta, arrays)


def _task_metgrid(ctx: TaskContext) -> str:
    geo_meta, geo_arrays = read_blob(ctx.input_path("geogrid"), "geogrid")
    ub_meta, ub_arrays = read_blob(ctx.input_path("ungrib"), "ungrib")
    domains = list(ctx.config.domains)
    terrain = {d.domain_id: geo_arrays[f"terrain_d{d.domain_id}"] for d in domains}
    q0, t0 = surrogate.initial_fields(
        domains, terrain, ub_meta["t_mean"], ub_meta["q_mean"], ub_meta["wind_seed"]
    )
    arrays: dict[str, np.ndarray] = {"bq": ub_arrays["bq"], "bt": ub_arrays["bt"]}
    for d in domains:
        arrays[f"q0_d{d.domain_id}"] = q0[d.domain_id]
        arrays[f"t0_d{d.domain_id}"] = t0[d.domain_id]
        arrays[f"msrc_d{d.domain_id}"] = surrogate.moisture_source(terrain[d.domain_id])
    meta = {
        "hours": ub_meta["hours"],
        "wind_seed": ub_meta["wind_seed"],
        "start_hour": ub_meta["start_hour"],
        "t_mean": ub_meta["t_mean"],
        "q_mean": ub_meta["q_mean"],
    }
    return write_blob(ctx.own_path("metgrid"), "metgrid", meta, arrays)


def _task_prc_setup(ctx: TaskContext) -> str:
    path = ctx.own_path("prc_setup")
    payload = {
        "run_id": ctx.rec.run_id,
        "physics": ctx.config.physics.as_dict(),
        "hours": ctx.config.horizon_hours,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload))
    return path


def _task_real(ctx: TaskContext) -> str:
    met_meta, met_arrays = read_blob(ctx.input_path("metgrid"), "metgrid")
    arrays = {}
    for d in ctx.config.domains:
        did = d.domain_id
        arrays[f"q_d{did}"] = surrogate.smooth_pass(met_arrays[f"q0_d{did}"])
        arrays[f"t_d{did}"] = surrogate.smooth_pass(met_arrays[f"t0_d{did}"])
    return write_blob(ctx.own_path("real"), "real", dict(met_meta), arrays)


def _task_wrf_sim(ctx: TaskContext) -> str:
    met_meta, met_arrays = read_blob(ctx.input_path("metgrid"), "metgrid")
    _real_meta, real_arrays = read_blob(ctx.own_path("real"), "real")
    target = ctx.own_path("wrf_sim")

    def sink(frame):
        write_frame(frame, target)

    surrogate.run_model(
        ctx.config,
        ctx.rec.run_id,
        met_meta,
        met_arrays,
        real_arrays,
        sink,
        pacing_ms=ctx.pacing_ms,
        abort=ctx.abort,
    )
    return target


_TASK_BODIES = {
    "wps_setup": _task_wps_setup,
    "geogrid": _task_geogrid,
    "download_icbc": _task_download_icbc,
    "ungrib": _task_ungrib,
    "metgrid": _task_metgrid,
    "prc_setup": _task_prc_setup,
    "real": _task_real,
    "wrf_sim": _task_wrf_sim,
}


def execute_run(
    store: Store,
    data_dir: str,
    run_id: int,
    pacing_ms: int = 0,
    abort=None,
    on_event: Callable[[dict], None] | None = None,
) -> str:
    """Plan and execute one attempt of a run already marked running.

    Returns the terminal status it stored: success, failed or aborted.
    Reused tasks get provenance rows; a failing task stops the chain.
    """
    rec = store.get_run(run_id)
    ensure_run_dirs(data_dir, run_id)
    index = build_cache_index(store, rec.project_id)
    plan = select_dag(rec.config, index)
    store.set_run_dag(run_id, plan.dag_id)
    ctx = TaskContext(
        store=store,
        data_dir=data_dir,
        rec=rec,
        plan=plan,
        pacing_ms=pacing_ms,
        abort=abort,
        on_event=on_event,
    )

    for task in CACHEABLE_TASKS:
        entry = plan.reuse.get(task)
        if entry is not None:
            store.record_task(
                run_id,
                rec.attempt,
                task,
                digest=entry.digest,
                status="reused",
                artifact_path=entry.artifact_path,
                reused_from_run=entry.run_id,
                reused_from_exec=entry.exec_id,
            )
            ctx.log_line(task, "reused")

    for task in plan.tasks:
        sig = sign_task(task, rec.config, run_id=run_id)
        started = utcnow()
        ctx.log_line(task, "started")
        try:
            if abort is not None and abort.is_set():
                raise AbortRequested(f"aborted before task {task}")
            artifact = _TASK_BODIES[task](ctx)
        except AbortRequested:
            store.record_task(run_id, rec.attempt, task, sig.digest, "aborted", started, utcnow())
            ctx.log_line(task, "aborted")
            store.set_run_status(run_id, "aborted")
            return "aborted"
        except Exception as exc:
            store.record_task(
                run_id, rec.attempt, task, sig.digest, "failed", started, utcnow(), error=str(exc)
            )
            ctx.log_line(task, "failed")
            store.set_run_status(run_id, "failed", error=str(TaskFailed(task, exc)))
            return "failed"
        store.record_task(
            run_id, rec.attempt, task, sig.digest, "success", started, utcnow(), artifact_path=artifact
        )
        ctx.log_line(task, "finished")

    store.set_run_status(run_id, "success")
    return "success"
