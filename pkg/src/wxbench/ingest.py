"""Automatic storage: watch run output directories and load new frames.

A poller per running run scans the output directory on a fixed interval,
ingests every complete frame it has not seen (ascending domain and hour,
so aggregate summation order is stable), skips files still being written
(retried next poll) and quarantines structurally corrupt ones (never
retried). Query helpers read the precomputed interval aggregates or the
stored point data.
"""

from __future__ import annotations

import logging
import os
import threading
from typing import Callable

import numpy as np

from . import errors
from .frameio import inspect_frame_file, parse_frame_filename
from .store import Store, utcnow

log = logging.getLogger(__name__)

EventCallback = Callable[[dict], None]


def _scan_outputs(
    store: Store, run_id: int, out_dir: str, on_event: EventCallback | None
) -> tuple[list[tuple[int, int]], int]:
    """One polling pass. Returns (newly ingested (domain, hour) keys, pending partial count)."""
    if not os.path.isdir(out_dir):
        raise errors.UnknownRun(f"output directory {out_dir} does not exist")
    quarantined = store.quarantined_paths(run_id)
    candidates = []
    for name in os.listdir(out_dir):
        key = parse_frame_filename(name)
        if key is None:
            continue
        path = os.path.join(out_dir, name)
        if path in quarantined:
            continue
        candidates.append((key, path))
    # Ascending hour fixes per-domain summation order and keeps frame
    # events monotone in step_hour at the run level.
    candidates.sort(key=lambda item: (item[0][1], item[0][0]))

    ingested: list[tuple[int, int]] = []
    pending = 0
    seen_hours = {
        dom: set(store.ingested_hours(run_id, dom)) for dom in store.ingested_domains(run_id)
    }
    for (domain_id, step_hour), path in candidates:
        if step_hour in seen_hours.get(domain_id, set()):
            continue
        status, frame, reason = inspect_frame_file(path)
        if status == "partial":
            pending += 1
            continue
        if status == "corrupt":
            log.warning("quarantining corrupt frame %s: %s", path, reason)
            store.quarantine_path(run_id, path, reason)
            continue
        if frame.run_id != run_id:
            store.quarantine_path(run_id, path, f"frame claims run {frame.run_id}")
            continue
        if store.ingest_frame(frame):
            ingested.append((domain_id, step_hour))
            if on_event is not None:
                on_event(
                    {
                        "type": "frame",
                        "run_id": run_id,
                        "domain_id": domain_id,
                        "step_hour": step_hour,
                        "ts": utcnow(),
                    }
                )
    return ingested, pending


def poll_run_outputs(
    store: Store, run_id: int, out_dir: str, on_event: EventCallback | None = None
) -> list[tuple[int, int]]:
    """Detect, validate and store frames not yet ingested; one event per frame."""
    ingested, _pending = _scan_outputs(store, run_id, out_dir, on_event)
    return ingested


def ingest_until_quiet(
    store: Store, run_id: int, out_dir: str, on_event: EventCallback | None = None
) -> int:
    """Poll repeatedly until a pass finds nothing new and nothing pending."""
    total = 0
    while True:
        ingested, pending = _scan_outputs(store, run_id, out_dir, on_event)
        total += len(ingested)
        if not ingested and pending == 0:
            return total


class Poller(threading.Thread):
    """Background poller for one run; stops after a quiet pass once the run is terminal."""

    def __init__(
        self,
        store: Store,
        run_id: int,
        out_dir: str,
        interval_s: float,
        on_event: EventCallback | None = None,
        is_terminal: Callable[[], bool] | None = None,
    ):
        super().__init__(name=f"poller-run{run_id}", daemon=True)
        self.store = store
        self.run_id = run_id
        self.out_dir = out_dir
        self.interval_s = interval_s
        self.on_event = on_event
        self.is_terminal = is_terminal or (lambda: False)
        self._stop_evt = threading.Event()

    def stop(self) -> None:
        self._stop_evt.set()

    def run(self) -> None:
        while True:
            terminal = self.is_terminal()
            try:
                ingested, pending = _scan_outputs(self.store, self.run_id, self.out_dir, self.on_event)
            except Exception:
                log.exception("poll failed for run %s", self.run_id)
                ingested, pending = [], 0
            if self._stop_evt.is_set():
                return
            if terminal and not ingested and pending == 0:
                return
            if self._stop_evt.wait(self.interval_s):
                # Final sweep so a stopped poller never strands completed frames.
                try:
                    _scan_outputs(self.store, self.run_id, self.out_dir, self.on_event)
                except Exception:
                    log.exception("final poll failed for run %s", self.run_id)
                return


# --- queries ------------------------------------------------------------

def query_series(
    store: Store,
    run_id: int,
    domain_id: int,
    field: str,
    spatial: str | tuple = "avg",
) -> tuple[list[int], list[float]]:
    """One value per ingested hour, in hour order.

    ``spatial`` is "min"/"max"/"avg" (read from the h1 aggregate records)
    or ("point", i, j) (computed from stored point data).
    """
    store.get_run(run_id)  # raises UnknownRun
    hours = store.ingested_hours(run_id, domain_id)
    if not hours:
        raise errors.NothingIngested(f"run {run_id} domain {domain_id} has no ingested frames")

    if isinstance(spatial, tuple) and spatial and spatial[0] == "point":
        _, i, j = spatial
        nx, ny = store.grid_shape(run_id, domain_id)
        if not (0 <= i < nx and 0 <= j < ny):
            raise errors.IndexOutOfRange(f"point ({i}, {j}) outside {nx}x{ny} grid")
        values = []
        for hour in hours:
            grid = store.field_grid(run_id, domain_id, hour, field)
            values.append(float(grid[j, i]))
        return hours, values

    if spatial not in ("min", "max", "avg"):
        raise ValueError(f"spatial must be min/max/avg or ('point', i, j), got {spatial!r}")
    rows = {r["idx"]: r for r in store.aggregate_rows(run_id, domain_id, field, "h1")}
    values = []
    for hour in hours:
        row = rows[hour - 1]
        if spatial == "min":
            values.append(row["vmin"])
        elif spatial == "max":
            values.append(row["vmax"])
        else:
            values.append(row["vsum"] / row["vcount"])
    return hours, values


def accumulate_precip(
    store: Store,
    run_id: int,
    domain_id: int,
    t0: int,
    t1: int,
    spatial: str | tuple | None = None,
):
    """Per-point precipitation total over hours t0..t1 (inclusive).

    Temporal accumulation happens first; any spatial reduction applies to
    the accumulated map (max-of-accumulation, not accumulation-of-max).
    Returns a float64 grid, or a scalar when ``spatial`` is given.
    """
    if not (1 <= t0 <= t1):
        raise errors.RangeNotIngested(f"bad hour range [{t0}, {t1}]")
    have = set(store.ingested_hours(run_id, domain_id))
    missing = [t for t in range(t0, t1 + 1) if t not in have]
    if missing:
        raise errors.RangeNotIngested(
            f"run {run_id} domain {domain_id}: hours {missing[:5]}{'...' if len(missing) > 5 else ''} not ingested"
        )
    acc = None
    for hour in range(t0, t1 + 1):
        grid = store.field_grid(run_id, domain_id, hour, "precip").astype(np.float64)
        acc = grid if acc is None else acc + grid
    if spatial is None:
        return acc
    if isinstance(spatial, tuple) and spatial and spatial[0] == "point":
        _, i, j = spatial
        if not (0 <= i < acc.shape[1] and 0 <= j < acc.shape[0]):
            raise errors.IndexOutOfRange(f"point ({i}, {j}) outside grid")
        return float(acc[j, i])
    if spatial == "min":
        return float(acc.min())
    if spatial == "max":
        return float(acc.max())
    if spatial == "avg":
        return float(acc.mean())
    raise ValueError(f"bad spatial {spatial!r}")
