"""Service engine: runs the store, worker pool, pollers and event bus.

One engine per data directory. Run execution happens on a bounded worker
pool (runs are sequential inside, parallel across workers); every running
run gets its own output poller. Aborts are cooperative write-once flags
observed at simulated-hour boundaries. On startup, runs left in state
"running" by a previous process are marked aborted so the store is
consistent after a crash or hard shutdown.
"""

from __future__ import annotations

import logging
import os
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import analytics, errors, ingest, pipeline
from .events import EventBus, Subscription, make_event
from .runconfig import RunConfig
from .store import EnsembleSpec, RunRecord, Store

log = logging.getLogger(__name__)

_STARTABLE = ("configured", "failed", "aborted")


@dataclass
class EngineConfig:
    data_dir: str
    poll_interval_ms: int = 60_000
    worker_slots: int = 2
    pacing_ms_default: int = 0


class Engine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self.data_dir = config.data_dir
        os.makedirs(self.data_dir, exist_ok=True)
        self.store = Store(os.path.join(self.data_dir, "meta", "store.sqlite"))
        self.bus = EventBus()
        self._pool = ThreadPoolExecutor(max_workers=config.worker_slots, thread_name_prefix="run-worker")
        self._aborts: dict[int, threading.Event] = {}
        self._pollers: dict[int, ingest.Poller] = {}
        self._lock = threading.RLock()
        self._shutting_down = False
        self._recover()

    def _recover(self) -> None:
        for project in self.store.list_projects():
            for rec in self.store.list_runs(project["project_id"]):
                if rec.status == "running":
                    log.warning("marking orphaned running run %s as aborted", rec.run_id)
                    self.store.set_run_status(rec.run_id, "aborted", error="process terminated")

    # --- events -----------------------------------------------------------

    def subscribe(self, project_id: int) -> Subscription:
        self.store.get_project(project_id)
        return self.bus.subscribe(project_id)

    def unsubscribe(self, sub: Subscription) -> None:
        self.bus.unsubscribe(sub)

    def _emit_status(self, rec: RunRecord) -> None:
        self.bus.publish(rec.project_id, make_event("run_status", run_id=rec.run_id, status=rec.status))

    # --- projects / runs ----------------------------------------------------

    def create_project(self, name: str) -> dict:
        return self.store.create_project(name)

    def create_run(
        self,
        project_id: int,
        config: RunConfig | dict,
        parent_run_id: int | None = None,
        name: str | None = None,
        user_label: str = "",
        pacing_ms: int | None = None,
    ) -> RunRecord:
        if isinstance(config, dict):
            config = RunConfig.from_dict(config)
        if pacing_ms is None:
            pacing_ms = self.config.pacing_ms_default
        return self.store.create_run(
            project_id,
            config,
            parent_run_id=parent_run_id,
            name=name,
            user_label=user_label,
            pacing_ms=pacing_ms,
        )

    def _begin_attempt(self, run_id: int) -> RunRecord:
        with self._lock:
            rec = self.store.get_run(run_id)
            if rec.status not in _STARTABLE:
                raise errors.InvalidState(f"run {run_id} is {rec.status}; cannot start")
            if rec.status in ("failed", "aborted"):
                self.store.bump_attempt(run_id)
            rec = self.store.set_run_status(run_id, "running")
            self._aborts[run_id] = threading.Event()
            pipeline.ensure_run_dirs(self.data_dir, run_id)
        self._emit_status(rec)
        return rec

    def _start_poller(self, rec: RunRecord) -> None:
        project_id = rec.project_id

        def on_frame(event: dict) -> None:
            self.bus.publish(project_id, event)

        def is_terminal() -> bool:
            return self.store.get_run(rec.run_id).status != "running"

        poller = ingest.Poller(
            self.store,
            rec.run_id,
            pipeline.out_dir(self.data_dir, rec.run_id),
            interval_s=self.config.poll_interval_ms / 1000.0,
            on_event=on_frame,
            is_terminal=is_terminal,
        )
        with self._lock:
            self._pollers[rec.run_id] = poller
        poller.start()

    def _execute_attempt(self, run_id: int, rec: RunRecord) -> RunRecord:
        abort = self._aborts[run_id]
        try:
            pipeline.execute_run(
                self.store, self.data_dir, run_id, pacing_ms=rec.pacing_ms, abort=abort
            )
        except Exception as exc:  # defensive: executor handles task errors itself
            log.exception("run %s crashed outside task scope", run_id)
            try:
                self.store.set_run_status(run_id, "failed", error=str(exc))
            except errors.InvalidState:
                pass
        finally:
            with self._lock:
                self._aborts.pop(run_id, None)
        final = self.store.get_run(run_id)
        self._emit_status(final)
        return final

    def start_run(self, run_id: int) -> RunRecord:
        """Schedule execution on the worker pool; returns the running record."""
        rec = self._begin_attempt(run_id)
        self._start_poller(rec)
        self._pool.submit(self._execute_attempt, run_id, rec)
        return rec

    def run_blocking(self, run_id: int) -> RunRecord:
        """Execute synchronously in the calling thread, then ingest everything."""
        rec = self._begin_attempt(run_id)
        final = self._execute_attempt(run_id, rec)
        ingest.ingest_until_quiet(
            self.store,
            run_id,
            pipeline.out_dir(self.data_dir, run_id),
            on_event=lambda e: self.bus.publish(final.project_id, e),
        )
        return final

    def abort_run(self, run_id: int) -> RunRecord:
        """Raise the cooperative flag; resolves within one simulated hour."""
        with self._lock:
            rec = self.store.get_run(run_id)
            if rec.status != "running":
                raise errors.InvalidState(f"run {run_id} is {rec.status}; only running runs can be aborted")
            flag = self._aborts.get(run_id)
            if flag is not None:
                flag.set()
                return rec
        # Running in the store but not owned by this process: recover directly.
        rec = self.store.set_run_status(run_id, "aborted", error="aborted without live worker")
        self._emit_status(rec)
        return rec

    def restart_run(self, run_id: int) -> RunRecord:
        rec = self.store.get_run(run_id)
        if rec.status not in ("failed", "aborted"):
            raise errors.InvalidState(f"run {run_id} is {rec.status}; only failed/aborted runs restart")
        return self.start_run(run_id)

    def delete_run(self, run_id: int) -> None:
        rec = self.store.get_run(run_id)
        self.store.delete_run(run_id)
        shutil.rmtree(pipeline.run_dir(self.data_dir, run_id), ignore_errors=True)
        self.bus.publish(rec.project_id, make_event("run_status", run_id=run_id, status="deleted"))

    def wait_runs_idle(self, timeout: float = 60.0) -> None:
        """Block until no poller thread is alive (tests and the CLI use this)."""
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                pollers = list(self._pollers.values())
            alive = [p for p in pollers if p.is_alive()]
            if not alive and not self._aborts:
                return
            time.sleep(0.01)

    # --- ensembles ------------------------------------------------------

    def create_ensemble(self, project_id: int, name: str) -> EnsembleSpec:
        return self.store.create_ensemble(project_id, name)

    def set_ensemble_membership(self, ensemble_id: int, run_id: int, member: bool) -> EnsembleSpec:
        spec = self.store.set_ensemble_membership(ensemble_id, run_id, member)
        self.bus.publish(
            spec.project_id,
            make_event("ensemble_changed", ensemble_id=ensemble_id, run_id=run_id, member=member),
        )
        return spec

    # --- analytics helpers ----------------------------------------------

    def ensemble_members(self, ensemble_id: int) -> list[int]:
        return self.store.get_ensemble(ensemble_id).members

    def projection(self, project_id: int, domain_id: int) -> dict:
        """PCA scatter of every fully ingested run plus coloring metadata."""
        graph = self.store.lineage_graph(project_id)
        vectors = []
        rows = []
        skipped = []
        for node in graph["nodes"]:
            try:
                vectors.append(analytics.feature_vector(self.store, node["run_id"], domain_id))
                rows.append(node)
            except (errors.RunIncomplete, errors.RangeNotIngested, errors.NothingIngested):
                skipped.append(node["run_id"])
        points = analytics.pca_project(vectors) if vectors else []
        out = []
        for node, vec, (x, y) in zip(rows, vectors, points):
            out.append(
                {
                    "run_id": node["run_id"],
                    "name": node["name"],
                    "x": x,
                    "y": y,
                    "status": node["status"],
                    "icbc_source": node["icbc_source"],
                    "physics": node["physics"],
                    "ensembles": node["ensembles"],
                    "features": vec.as_dict(),
                }
            )
        return {"project_id": project_id, "domain_id": domain_id, "points": out, "skipped": skipped}

    # --- lifecycle --------------------------------------------------------

    def shutdown(self) -> None:
        """Abort in-flight runs cooperatively, drain pollers, close the store."""
        with self._lock:
            if self._shutting_down:
                return
            self._shutting_down = True
            for flag in self._aborts.values():
                flag.set()
            pollers = list(self._pollers.values())
        self._pool.shutdown(wait=True)
        for poller in pollers:
            poller.stop()
        for poller in pollers:
            poller.join(timeout=10)
        self.store.close()
