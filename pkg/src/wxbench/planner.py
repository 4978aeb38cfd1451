"""Task signatures and reuse-driven plan selection for the 8-task pipeline.

Each cacheable preprocessing task is identified by a content hash of its
canonical parameter tuple, chained through upstream digests (ungrib hashes
the boundary-data digest, metgrid hashes both upstream digests). A prior
successful execution with an equal digest and an intact artifact makes the
task reusable, and the six known plan shapes are picked to skip the
longest reusable prefix:

    DAG1  everything from scratch
    DAG2  boundary data reused, all grid work redone
    DAG3  domain grids reused, boundary data refetched
    DAG4  grids and boundary data reused, interpolation redone
    DAG5  everything up to ungrib reused
    DAG6  all preprocessing reused; only the simulation stage runs

Setup/simulation tasks (wps_setup, prc_setup, real, wrf_sim) are never
cached; their signatures include the run id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .runconfig import RunConfig, content_digest, format_utc

TASK_ORDER = (
    "wps_setup",
    "geogrid",
    "download_icbc",
    "ungrib",
    "metgrid",
    "prc_setup",
    "real",
    "wrf_sim",
)

#: Preprocessing tasks whose artifacts may be reused across runs.
CACHEABLE_TASKS = ("geogrid", "download_icbc", "ungrib", "metgrid")

DAG_TASKS: dict[int, tuple[str, ...]] = {
    1: TASK_ORDER,
    2: ("wps_setup", "geogrid", "ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
    3: ("download_icbc", "ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
    4: ("ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
    5: ("metgrid", "prc_setup", "real", "wrf_sim"),
    6: ("prc_setup", "real", "wrf_sim"),
}


@dataclass(frozen=True)
class TaskSignature:
    task: str
    digest: str


@dataclass(frozen=True)
class CacheEntry:
    """A reusable prior execution: where its artifact lives and who made it."""

    task: str
    digest: str
    run_id: int
    exec_id: int
    artifact_path: str


@dataclass
class DagPlan:
    dag_id: int
    tasks: tuple[str, ...]
    reuse: dict[str, CacheEntry] = field(default_factory=dict)


def _root_geometry(config: RunConfig) -> dict:
    root = config.root_domain
    return {
        "resolution_m": root.resolution_m,
        "center_lon": root.center_lon,
        "center_lat": root.center_lat,
        "nx": root.nx,
        "ny": root.ny,
    }


def sign_task(task: str, config: RunConfig, run_id: int | None = None) -> TaskSignature:
    """Content digest of the task's canonical parameter tuple.

    Grid work hashes the ordered domain list; the boundary-data fetch
    hashes (source, interval, root geometry) because the generated series
    depends on all of them; downstream tasks hash their upstream digests.
    Non-cacheable tasks fold in the run id so they never collide.
    """
    if task == "geogrid":
        payload = {"task": task, "domains": [vars(d) for d in config.domains]}
    elif task == "download_icbc":
        payload = {
            "task": task,
            "source": config.icbc_source,
            "start": format_utc(config.start),
            "end": format_utc(config.end),
            "root": _root_geometry(config),
        }
    elif task == "ungrib":
        payload = {"task": task, "download": sign_task("download_icbc", config).digest}
    elif task == "metgrid":
        payload = {
            "task": task,
            "geogrid": sign_task("geogrid", config).digest,
            "ungrib": sign_task("ungrib", config).digest,
        }
    elif task in TASK_ORDER:
        payload = {
            "task": task,
            "run_id": run_id,
            "config": content_digest(config.to_dict()),
        }
    else:
        raise ValueError(f"unknown task {task!r}")
    return TaskSignature(task, content_digest(payload))


def signatures(config: RunConfig, run_id: int | None = None) -> dict[str, TaskSignature]:
    return {task: sign_task(task, config, run_id) for task in TASK_ORDER}


def select_dag(config: RunConfig, cache_index: dict[str, CacheEntry]) -> DagPlan:
    """Pick the maximal-reuse plan among the six known shapes.

    ``cache_index`` maps signature digests to reusable executions and must
    contain only successful entries with intact artifacts. Reuse is only
    taken for a contiguous upstream chain: an entry whose upstream would
    have to be regenerated is conservatively ignored, so every plan
    regenerates exactly the artifacts it does not reuse.
    """
    sigs = {task: sign_task(task, config) for task in CACHEABLE_TASKS}
    hits = {task: cache_index.get(sig.digest) for task, sig in sigs.items()}

    geo, dl, ung, met = (hits[t] is not None for t in CACHEABLE_TASKS)
    if geo and dl and ung and met:
        dag_id, reused = 6, CACHEABLE_TASKS
    elif geo and dl and ung:
        dag_id, reused = 5, ("geogrid", "download_icbc", "ungrib")
    elif geo and dl:
        dag_id, reused = 4, ("geogrid", "download_icbc")
    elif geo:
        dag_id, reused = 3, ("geogrid",)
    elif dl:
        dag_id, reused = 2, ("download_icbc",)
    else:
        dag_id, reused = 1, ()

    plan = DagPlan(dag_id=dag_id, tasks=DAG_TASKS[dag_id])
    for task in reused:
        plan.reuse[task] = hits[task]
    return plan
