"""Embedded single-file store: projects, runs, lineage, task executions,
ensembles, ingested field grids and their interval aggregates.

One sqlite database under <data_dir>/meta/ holds everything queryable.
Access is serialized through one connection guarded by a re-entrant lock;
every mutating method commits before returning, so acknowledged writes
are durable. At desk scale (a few dozen runs of ~100 hours on 50x40
grids) every interface query stays well under the 1 s budget.
"""

from __future__ import annotations

import json
import os
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import errors
from .frameio import FIELD_NAMES, FieldFrame
from .runconfig import RunConfig, require_valid

RUN_STATUSES = ("configured", "running", "success", "failed", "aborted")

_LEGAL_TRANSITIONS = {
    "configured": {"running"},
    "running": {"success", "failed", "aborted"},
    "failed": {"running"},
    "aborted": {"running"},
    "success": set(),
}

AGG_KINDS = ("h1", "h3", "h24", "full")
AGG_STATS = ("min", "max", "avg")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS projects (
    project_id  INTEGER PRIMARY KEY AUTOINCREMENT,
    name        TEXT NOT NULL,
    created_at  TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS runs (
    run_id        INTEGER PRIMARY KEY AUTOINCREMENT,
    project_id    INTEGER NOT NULL REFERENCES projects(project_id),
    parent_run_id INTEGER,
    name          TEXT NOT NULL,
    user_label    TEXT NOT NULL DEFAULT '',
    config        TEXT NOT NULL,
    status        TEXT NOT NULL,
    dag_id        INTEGER,
    attempt       INTEGER NOT NULL DEFAULT 1,
    pacing_ms     INTEGER NOT NULL DEFAULT 0,
    horizon_hours INTEGER NOT NULL,
    created_at    TEXT NOT NULL,
    started_at    TEXT,
    ended_at      TEXT,
    error         TEXT
);
CREATE TABLE IF NOT EXISTS task_execs (
    exec_id          INTEGER PRIMARY KEY AUTOINCREMENT,
    run_id           INTEGER NOT NULL REFERENCES runs(run_id),
    attempt          INTEGER NOT NULL,
    task             TEXT NOT NULL,
    digest           TEXT NOT NULL,
    status           TEXT NOT NULL,
    started_at       TEXT,
    ended_at         TEXT,
    artifact_path    TEXT,
    reused_from_run  INTEGER,
    reused_from_exec INTEGER,
    error            TEXT
);
CREATE TABLE IF NOT EXISTS ensembles (
    ensemble_id INTEGER PRIMARY KEY AUTOINCREMENT,
    project_id  INTEGER NOT NULL REFERENCES projects(project_id),
    name        TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS ensemble_members (
    ensemble_id INTEGER NOT NULL REFERENCES ensembles(ensemble_id),
    run_id      INTEGER NOT NULL REFERENCES runs(run_id),
    position    INTEGER NOT NULL,
    PRIMARY KEY (ensemble_id, run_id)
);
CREATE TABLE IF NOT EXISTS frame_hours (
    run_id      INTEGER NOT NULL,
    domain_id   INTEGER NOT NULL,
    step_hour   INTEGER NOT NULL,
    nx          INTEGER NOT NULL,
    ny          INTEGER NOT NULL,
    ingested_at TEXT NOT NULL,
    PRIMARY KEY (run_id, domain_id, step_hour)
);
CREATE TABLE IF NOT EXISTS frames (
    run_id    INTEGER NOT NULL,
    domain_id INTEGER NOT NULL,
    step_hour INTEGER NOT NULL,
    field     TEXT NOT NULL,
    data      BLOB NOT NULL,
    PRIMARY KEY (run_id, domain_id, step_hour, field)
);
CREATE TABLE IF NOT EXISTS aggregates (
    run_id    INTEGER NOT NULL,
    domain_id INTEGER NOT NULL,
    field     TEXT NOT NULL,
    kind      TEXT NOT NULL,
    idx       INTEGER NOT NULL,
    vmin      REAL NOT NULL,
    vmax      REAL NOT NULL,
    vsum      REAL NOT NULL,
    vcount    INTEGER NOT NULL,
    hours     INTEGER NOT NULL,
    PRIMARY KEY (run_id, domain_id, field, kind, idx)
);
CREATE TABLE IF NOT EXISTS precip_acc (
    run_id    INTEGER NOT NULL,
    domain_id INTEGER NOT NULL,
    kind      TEXT NOT NULL,
    idx       INTEGER NOT NULL,
    acc       BLOB NOT NULL,
    hours     INTEGER NOT NULL,
    PRIMARY KEY (run_id, domain_id, kind, idx)
);
CREATE TABLE IF NOT EXISTS quarantine (
    run_id  INTEGER NOT NULL,
    path    TEXT NOT NULL,
    reason  TEXT NOT NULL,
    ts      TEXT NOT NULL,
    PRIMARY KEY (run_id, path)
);
"""


def utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunRecord:
    run_id: int
    project_id: int
    parent_run_id: int | None
    name: str
    user_label: str
    config: RunConfig
    status: str
    dag_id: int | None
    attempt: int
    pacing_ms: int
    horizon_hours: int
    created_at: str
    started_at: str | None
    ended_at: str | None
    error: str | None

    def as_dict(self) -> dict:
        d = vars(self).copy()
        d["config"] = self.config.to_dict()
        return d


@dataclass
class EnsembleSpec:
    ensemble_id: int
    project_id: int
    name: str
    members: list[int]  # run ids in insertion order

    def as_dict(self) -> dict:
        return vars(self).copy()


def _interval_index(kind: str, hour: int) -> int:
    if kind == "h1":
        return hour - 1
    if kind == "h3":
        return (hour - 1) // 3
    if kind == "h24":
        return (hour - 1) // 24
    return 0


class Store:
    def __init__(self, path: str):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=FULL")
        self._conn.executescript(_SCHEMA)
        self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # --- projects ---------------------------------------------------------

    def create_project(self, name: str) -> dict:
        with self._lock:
            cur = self._conn.execute(
                "INSERT INTO projects (name, created_at) VALUES (?, ?)", (name, utcnow())
            )
            self._conn.commit()
            return {"project_id": cur.lastrowid, "name": name}

    def get_project(self, project_id: int) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM projects WHERE project_id = ?", (project_id,)
            ).fetchone()
        if row is None:
            raise errors.UnknownProject(f"no project {project_id}")
        return dict(row)

    def list_projects(self) -> list[dict]:
        with self._lock:
            rows = self._conn.execute("SELECT * FROM projects ORDER BY project_id").fetchall()
        return [dict(r) for r in rows]

    # --- runs ---------------------------------------------------------------

    def create_run(
        self,
        project_id: int,
        config: RunConfig,
        parent_run_id: int | None = None,
        name: str | None = None,
        user_label: str = "",
        pacing_ms: int = 0,
    ) -> RunRecord:
        require_valid(config)
        with self._lock:
            self.get_project(project_id)
            if parent_run_id is not None:
                parent = self._conn.execute(
                    "SELECT project_id FROM runs WHERE run_id = ?", (parent_run_id,)
                ).fetchone()
                if parent is None or parent["project_id"] != project_id:
                    raise errors.UnknownParent(f"parent run {parent_run_id} not in project {project_id}")
            if name is None:
                count = self._conn.execute(
                    "SELECT COUNT(*) AS n FROM runs WHERE project_id = ?", (project_id,)
                ).fetchone()["n"]
                name = f"run-{count + 1}"
            cur = self._conn.execute(
                "INSERT INTO runs (project_id, parent_run_id, name, user_label, config, status,"
                " attempt, pacing_ms, horizon_hours, created_at)"
                " VALUES (?, ?, ?, ?, ?, 'configured', 1, ?, ?, ?)",
                (
                    project_id,
                    parent_run_id,
                    name,
                    user_label,
                    json.dumps(config.to_dict()),
                    pacing_ms,
                    config.horizon_hours,
                    utcnow(),
                ),
            )
            self._conn.commit()
            return self.get_run(cur.lastrowid)

    def _run_from_row(self, row: sqlite3.Row) -> RunRecord:
        return RunRecord(
            run_id=row["run_id"],
            project_id=row["project_id"],
            parent_run_id=row["parent_run_id"],
            name=row["name"],
            user_label=row["user_label"],
            config=RunConfig.from_dict(json.loads(row["config"])),
            status=row["status"],
            dag_id=row["dag_id"],
            attempt=row["attempt"],
            pacing_ms=row["pacing_ms"],
            horizon_hours=row["horizon_hours"],
            created_at=row["created_at"],
            started_at=row["started_at"],
            ended_at=row["ended_at"],
            error=row["error"],
        )

    def get_run(self, run_id: int) -> RunRecord:
        with self._lock:
            row = self._conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
        if row is None:
            raise errors.UnknownRun(f"no run {run_id}")
        return self._run_from_row(row)

    def list_runs(self, project_id: int) -> list[RunRecord]:
        with self._lock:
            self.get_project(project_id)
            rows = self._conn.execute(
                "SELECT * FROM runs WHERE project_id = ? ORDER BY run_id", (project_id,)
            ).fetchall()
        return [self._run_from_row(r) for r in rows]

    def set_run_status(
        self, run_id: int, status: str, dag_id: int | None = None, error: str | None = None
    ) -> RunRecord:
        """Transition enforcing the configured->running->terminal automaton."""
        with self._lock:
            rec = self.get_run(run_id)
            if status not in _LEGAL_TRANSITIONS.get(rec.status, set()):
                raise errors.InvalidState(f"run {run_id}: {rec.status} -> {status} is not a legal transition")
            sets = ["status = ?"]
            args: list = [status]
            if status == "running":
                sets.append("started_at = ?")
                args.append(utcnow())
                sets.append("error = NULL")
            if status in ("success", "failed", "aborted"):
                sets.append("ended_at = ?")
                args.append(utcnow())
            if dag_id is not None:
                sets.append("dag_id = ?")
                args.append(dag_id)
            if error is not None:
                sets.append("error = ?")
                args.append(error)
            args.append(run_id)
            self._conn.execute(f"UPDATE runs SET {', '.join(sets)} WHERE run_id = ?", args)
            self._conn.commit()
            return self.get_run(run_id)

    def set_run_dag(self, run_id: int, dag_id: int) -> None:
        with self._lock:
            self.get_run(run_id)
            self._conn.execute("UPDATE runs SET dag_id = ? WHERE run_id = ?", (dag_id, run_id))
            self._conn.commit()

    def bump_attempt(self, run_id: int) -> int:
        with self._lock:
            self.get_run(run_id)
            self._conn.execute("UPDATE runs SET attempt = attempt + 1 WHERE run_id = ?", (run_id,))
            self._conn.commit()
            return self.get_run(run_id).attempt

    def delete_run(self, run_id: int) -> None:
        """Remove a run and everything derived from it; re-parent children."""
        with self._lock:
            rec = self.get_run(run_id)
            if rec.status == "running":
                raise errors.RunActive(f"run {run_id} is running")
            self._conn.execute(
                "UPDATE runs SET parent_run_id = ? WHERE parent_run_id = ?",
                (rec.parent_run_id, run_id),
            )
            for table in ("task_execs", "frame_hours", "frames", "aggregates", "precip_acc", "quarantine"):
                self._conn.execute(f"DELETE FROM {table} WHERE run_id = ?", (run_id,))
            self._conn.execute("DELETE FROM ensemble_members WHERE run_id = ?", (run_id,))
            self._conn.execute("DELETE FROM runs WHERE run_id = ?", (run_id,))
            self._conn.commit()

    def lineage_graph(self, project_id: int) -> dict:
        """Nodes with hover-card metadata plus parent edges for one project."""
        runs = self.list_runs(project_id)
        with self._lock:
            member_rows = self._conn.execute(
                "SELECT em.run_id, em.ensemble_id FROM ensemble_members em"
                " JOIN ensembles e ON e.ensemble_id = em.ensemble_id WHERE e.project_id = ?",
                (project_id,),
            ).fetchall()
        ensembles_by_run: dict[int, list[int]] = {}
        for row in member_rows:
            ensembles_by_run.setdefault(row["run_id"], []).append(row["ensemble_id"])
        nodes = []
        for rec in runs:
            nodes.append(
                {
                    "run_id": rec.run_id,
                    "parent_run_id": rec.parent_run_id,
                    "name": rec.name,
                    "status": rec.status,
                    "dag_id": rec.dag_id,
                    "attempt": rec.attempt,
                    "created_at": rec.created_at,
                    "started_at": rec.started_at,
                    "ended_at": rec.ended_at,
                    "start": rec.config.to_dict()["start"],
                    "end": rec.config.to_dict()["end"],
                    "icbc_source": rec.config.icbc_source,
                    "physics": rec.config.physics.as_dict(),
                    "domain_ids": [d.domain_id for d in rec.config.domains],
                    "ensembles": sorted(ensembles_by_run.get(rec.run_id, [])),
                }
            )
        edges = [
            {"child": n["run_id"], "parent": n["parent_run_id"]}
            for n in nodes
            if n["parent_run_id"] is not None
        ]
        return {"project_id": project_id, "nodes": nodes, "edges": edges}

    # --- task executions ------------------------------------------------

    def record_task(
        self,
        run_id: int,
        attempt: int,
        task: str,
        digest: str,
        status: str,
        started_at: str | None = None,
        ended_at: str | None = None,
        artifact_path: str | None = None,
        reused_from_run: int | None = None,
        reused_from_exec: int | None = None,
        error: str | None = None,
    ) -> int:
        with self._lock:
            self.get_run(run_id)
            cur = self._conn.execute(
                "INSERT INTO task_execs (run_id, attempt, task, digest, status, started_at,"
                " ended_at, artifact_path, reused_from_run, reused_from_exec, error)"
                " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    run_id,
                    attempt,
                    task,
                    digest,
                    status,
                    started_at,
                    ended_at,
                    artifact_path,
                    reused_from_run,
                    reused_from_exec,
                    error,
                ),
            )
            self._conn.commit()
            return cur.lastrowid

    def task_executions(self, run_id: int, attempt: int | None = None) -> list[dict]:
        with self._lock:
            self.get_run(run_id)
            if attempt is None:
                rows = self._conn.execute(
                    "SELECT * FROM task_execs WHERE run_id = ? ORDER BY exec_id", (run_id,)
                ).fetchall()
            else:
                rows = self._conn.execute(
                    "SELECT * FROM task_execs WHERE run_id = ? AND attempt = ? ORDER BY exec_id",
                    (run_id, attempt),
                ).fetchall()
        return [dict(r) for r in rows]

    def cache_candidates(self, project_id: int) -> list[dict]:
        """Successful cacheable executions in the project, newest first."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT te.exec_id, te.run_id, te.task, te.digest, te.artifact_path"
                " FROM task_execs te JOIN runs r ON r.run_id = te.run_id"
                " WHERE r.project_id = ? AND te.status = 'success'"
                "   AND te.task IN ('geogrid', 'download_icbc', 'ungrib', 'metgrid')"
                " ORDER BY te.exec_id DESC",
                (project_id,),
            ).fetchall()
        return [dict(r) for r in rows]

    # --- ensembles ------------------------------------------------------

    def create_ensemble(self, project_id: int, name: str) -> EnsembleSpec:
        with self._lock:
            self.get_project(project_id)
            cur = self._conn.execute(
                "INSERT INTO ensembles (project_id, name) VALUES (?, ?)", (project_id, name)
            )
            self._conn.commit()
            return self.get_ensemble(cur.lastrowid)

    def get_ensemble(self, ensemble_id: int) -> EnsembleSpec:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM ensembles WHERE ensemble_id = ?", (ensemble_id,)
            ).fetchone()
            if row is None:
                raise errors.UnknownEnsemble(f"no ensemble {ensemble_id}")
            members = self._conn.execute(
                "SELECT run_id FROM ensemble_members WHERE ensemble_id = ? ORDER BY position",
                (ensemble_id,),
            ).fetchall()
        return EnsembleSpec(
            ensemble_id=row["ensemble_id"],
            project_id=row["project_id"],
            name=row["name"],
            members=[m["run_id"] for m in members],
        )

    def list_ensembles(self, project_id: int) -> list[EnsembleSpec]:
        with self._lock:
            self.get_project(project_id)
            rows = self._conn.execute(
                "SELECT ensemble_id FROM ensembles WHERE project_id = ? ORDER BY ensemble_id",
                (project_id,),
            ).fetchall()
        return [self.get_ensemble(r["ensemble_id"]) for r in rows]

    @staticmethod
    def _compatible(a: RunConfig, b: RunConfig) -> bool:
        ra, rb = a.root_domain, b.root_domain
        geometry_equal = (
            ra.resolution_m == rb.resolution_m
            and ra.center_lon == rb.center_lon
            and ra.center_lat == rb.center_lat
            and ra.nx == rb.nx
            and ra.ny == rb.ny
        )
        return geometry_equal and a.horizon_hours == b.horizon_hours

    def set_ensemble_membership(self, ensemble_id: int, run_id: int, member: bool) -> EnsembleSpec:
        """Idempotent add/remove; adding enforces the compatibility invariant."""
        with self._lock:
            spec = self.get_ensemble(ensemble_id)
            rec = self.get_run(run_id)
            if not member:
                self._conn.execute(
                    "DELETE FROM ensemble_members WHERE ensemble_id = ? AND run_id = ?",
                    (ensemble_id, run_id),
                )
                self._conn.commit()
                return self.get_ensemble(ensemble_id)

            if rec.project_id != spec.project_id:
                raise errors.IncompatibleMember(f"run {run_id} belongs to another project")
            if rec.status not in ("success", "running"):
                raise errors.IncompatibleMember(f"run {run_id} is {rec.status}; members must be success or running")
            if spec.members:
                first = self.get_run(spec.members[0])
                if not self._compatible(first.config, rec.config):
                    raise errors.IncompatibleMember(
                        f"run {run_id} does not share the ensemble's root geometry and horizon"
                    )
            if run_id not in spec.members:
                pos = self._conn.execute(
                    "SELECT COALESCE(MAX(position), 0) + 1 AS p FROM ensemble_members WHERE ensemble_id = ?",
                    (ensemble_id,),
                ).fetchone()["p"]
                self._conn.execute(
                    "INSERT INTO ensemble_members (ensemble_id, run_id, position) VALUES (?, ?, ?)",
                    (ensemble_id, run_id, pos),
                )
                self._conn.commit()
            return self.get_ensemble(ensemble_id)

    # --- frames and aggregates ----------------------------------------------

    def ingest_frame(self, frame: FieldFrame) -> bool:
        """Store one frame's grids and fold it into every affected aggregate.

        Returns False without changes when the (domain, hour) was already
        ingested. The whole update is one transaction, so concurrent readers
        never observe a half-ingested frame.
        """
        key = (frame.run_id, frame.domain_id, frame.step_hour)
        with self._lock:
            exists = self._conn.execute(
                "SELECT 1 FROM frame_hours WHERE run_id = ? AND domain_id = ? AND step_hour = ?",
                key,
            ).fetchone()
            if exists:
                return False
            try:
                self._conn.execute(
                    "INSERT INTO frame_hours (run_id, domain_id, step_hour, nx, ny, ingested_at)"
                    " VALUES (?, ?, ?, ?, ?, ?)",
                    key + (frame.nx, frame.ny, utcnow()),
                )
                for field in FIELD_NAMES:
                    grid = np.ascontiguousarray(frame.grids[field], dtype="<f4")
                    self._conn.execute(
                        "INSERT INTO frames (run_id, domain_id, step_hour, field, data)"
                        " VALUES (?, ?, ?, ?, ?)",
                        key + (field, grid.tobytes()),
                    )
                    self._update_aggregates(frame, field)
                self._conn.commit()
            except BaseException:
                self._conn.rollback()
                raise
            return True

    def _update_aggregates(self, frame: FieldFrame, field: str) -> None:
        grid = frame.grids[field]
        grid64 = grid.astype(np.float64)
        n = grid.size
        fmin, fmax, fsum = float(grid.min()), float(grid.max()), float(grid64.sum())
        base = (frame.run_id, frame.domain_id)
        for kind in AGG_KINDS:
            idx = _interval_index(kind, frame.step_hour)
            if field == "precip" and kind != "h1":
                row = self._conn.execute(
                    "SELECT acc, hours FROM precip_acc WHERE run_id = ? AND domain_id = ?"
                    " AND kind = ? AND idx = ?",
                    base + (kind, idx),
                ).fetchone()
                if row is None:
                    acc = grid64.copy()
                    hours = 1
                else:
                    acc = np.frombuffer(row["acc"], dtype="<f8").reshape(grid.shape).copy()
                    acc += grid64
                    hours = row["hours"] + 1
                self._conn.execute(
                    "INSERT OR REPLACE INTO precip_acc (run_id, domain_id, kind, idx, acc, hours)"
                    " VALUES (?, ?, ?, ?, ?, ?)",
                    base + (kind, idx, acc.astype("<f8").tobytes(), hours),
                )
                # Aggregate stats for precip describe the per-point accumulation map.
                self._conn.execute(
                    "INSERT OR REPLACE INTO aggregates"
                    " (run_id, domain_id, field, kind, idx, vmin, vmax, vsum, vcount, hours)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    base + (field, kind, idx, float(acc.min()), float(acc.max()), float(acc.sum()), n, hours),
                )
                continue

            row = self._conn.execute(
                "SELECT vmin, vmax, vsum, vcount, hours FROM aggregates"
                " WHERE run_id = ? AND domain_id = ? AND field = ? AND kind = ? AND idx = ?",
                base + (field, kind, idx),
            ).fetchone()
            if row is None:
                vals = (fmin, fmax, fsum, n, 1)
            else:
                vals = (
                    min(row["vmin"], fmin),
                    max(row["vmax"], fmax),
                    row["vsum"] + fsum,
                    row["vcount"] + n,
                    row["hours"] + 1,
                )
            self._conn.execute(
                "INSERT OR REPLACE INTO aggregates"
                " (run_id, domain_id, field, kind, idx, vmin, vmax, vsum, vcount, hours)"
                " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                base + (field, kind, idx) + vals,
            )

    def ingested_hours(self, run_id: int, domain_id: int) -> list[int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT step_hour FROM frame_hours WHERE run_id = ? AND domain_id = ? ORDER BY step_hour",
                (run_id, domain_id),
            ).fetchall()
        return [r["step_hour"] for r in rows]

    def ingested_domains(self, run_id: int) -> list[int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT DISTINCT domain_id FROM frame_hours WHERE run_id = ? ORDER BY domain_id",
                (run_id,),
            ).fetchall()
        return [r["domain_id"] for r in rows]

    def grid_shape(self, run_id: int, domain_id: int) -> tuple[int, int] | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT nx, ny FROM frame_hours WHERE run_id = ? AND domain_id = ? LIMIT 1",
                (run_id, domain_id),
            ).fetchone()
        return (row["nx"], row["ny"]) if row else None

    def field_grid(self, run_id: int, domain_id: int, step_hour: int, field: str) -> np.ndarray | None:
        if field not in FIELD_NAMES:
            raise errors.UnknownField(f"unknown field {field!r}")
        with self._lock:
            row = self._conn.execute(
                "SELECT f.data, h.nx, h.ny FROM frames f JOIN frame_hours h"
                " ON (h.run_id, h.domain_id, h.step_hour) = (f.run_id, f.domain_id, f.step_hour)"
                " WHERE f.run_id = ? AND f.domain_id = ? AND f.step_hour = ? AND f.field = ?",
                (run_id, domain_id, step_hour, field),
            ).fetchone()
        if row is None:
            return None
        return np.frombuffer(row["data"], dtype="<f4").reshape(row["ny"], row["nx"]).copy()

    def aggregate_rows(self, run_id: int, domain_id: int, field: str, kind: str) -> list[dict]:
        if field not in FIELD_NAMES:
            raise errors.UnknownField(f"unknown field {field!r}")
        with self._lock:
            rows = self._conn.execute(
                "SELECT idx, vmin, vmax, vsum, vcount, hours FROM aggregates"
                " WHERE run_id = ? AND domain_id = ? AND field = ? AND kind = ? ORDER BY idx",
                (run_id, domain_id, field, kind),
            ).fetchall()
        return [dict(r) for r in rows]

    def precip_accumulation(self, run_id: int, domain_id: int, kind: str, idx: int) -> tuple[np.ndarray, int] | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT acc, hours FROM precip_acc WHERE run_id = ? AND domain_id = ? AND kind = ? AND idx = ?",
                (run_id, domain_id, kind, idx),
            ).fetchone()
            if row is None:
                return None
            shape = self.grid_shape(run_id, domain_id)
        return np.frombuffer(row["acc"], dtype="<f8").reshape(shape[1], shape[0]).copy(), row["hours"]

    # --- quarantine -------------------------------------------------------

    def quarantine_path(self, run_id: int, path: str, reason: str) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR IGNORE INTO quarantine (run_id, path, reason, ts) VALUES (?, ?, ?, ?)",
                (run_id, path, reason, utcnow()),
            )
            self._conn.commit()

    def quarantined_paths(self, run_id: int) -> set[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT path FROM quarantine WHERE run_id = ?", (run_id,)
            ).fetchall()
        return {r["path"] for r in rows}

    # --- export ------------------------------------------------------------

    def export_project(self, project_id: int) -> dict:
        """Archival JSON bundle: project, runs (verbatim configs), tasks, ensembles."""
        project = self.get_project(project_id)
        runs = [r.as_dict() for r in self.list_runs(project_id)]
        tasks = {r["run_id"]: self.task_executions(r["run_id"]) for r in runs}
        ensembles = [e.as_dict() for e in self.list_ensembles(project_id)]
        return {"project": project, "runs": runs, "tasks": tasks, "ensembles": ensembles}
