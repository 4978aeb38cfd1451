"""Derived analytics over ingested runs and ensembles.

Everything here is a pure computation over a store snapshot: sunburst
time hierarchies of accumulated precipitation, per-point ensemble
aggregation and scenario probabilities, member-by-hour heat matrices,
rainfall feature vectors with their 2-D projection, and the scenario
occurrence matrix. Ensemble aggregations are dynamic: they read whatever
members are passed in, with no precomputation tied to membership.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .ingest import accumulate_precip, query_series
from .store import Store

FEATURE_WINDOWS = ("h3", "h24", "full")
FEATURE_NAMES = tuple(f"{w}_{s}" for w in FEATURE_WINDOWS for s in ("max", "avg", "std"))

SUNBURST_LAYERS = ("full", "h24", "h3", "h1")
_LAYER_WIDTH = {"h1": 1, "h3": 3, "h24": 24}


# --- sunburst -----------------------------------------------------------

@dataclass
class SunburstCell:
    kind: str
    index: int
    t0: int  # first hour covered (1-based, inclusive)
    t1: int
    value: float
    parent: tuple[str, int] | None

    def as_dict(self) -> dict:
        d = vars(self).copy()
        d["parent"] = list(self.parent) if self.parent else None
        return d


@dataclass
class Sunburst:
    hours: int
    cells: list[SunburstCell] = field(default_factory=list)

    def layer(self, kind: str) -> list[SunburstCell]:
        return [c for c in self.cells if c.kind == kind]

    def as_dict(self) -> dict:
        return {"hours": self.hours, "cells": [c.as_dict() for c in self.cells]}


def _member_hours(store: Store, run_ids: list[int], domain_id: int) -> int:
    """Common contiguous ingested prefix across members; 0-length rejected."""
    hours = None
    for run_id in run_ids:
        store.get_run(run_id)  # raises UnknownRun
        got = store.ingested_hours(run_id, domain_id)
        contiguous = 0
        for k, hour in enumerate(got, start=1):
            if hour != k:
                break
            contiguous = k
        hours = contiguous if hours is None else min(hours, contiguous)
    if not hours:
        raise errors.NothingIngested(f"no complete leading hours for domain {domain_id}")
    return hours


def _hourly_values(store: Store, run_id: int, domain_id: int, hours: int, spatial) -> list:
    """Per-hour precip cell values: scalars in point mode, float64 maps otherwise."""
    out = []
    for hour in range(1, hours + 1):
        grid = store.field_grid(run_id, domain_id, hour, "precip")
        if grid is None:
            raise errors.NothingIngested(f"hour {hour} missing for run {run_id}")
        grid = grid.astype(np.float64)
        if isinstance(spatial, tuple) and spatial[0] == "point":
            out.append(float(grid[spatial[2], spatial[1]]))
        else:
            out.append(grid)
    return out


def _roll_up(values: list, width: int) -> list:
    """Sum consecutive groups; works for scalars and maps alike."""
    groups = []
    for k in range(0, len(values), width):
        chunk = values[k : k + width]
        total = chunk[0]
        for item in chunk[1:]:
            total = total + item
        groups.append(total)
    return groups


def _reduce_cell(value, spatial) -> float:
    if isinstance(value, float):
        return value
    if spatial == "min":
        return float(value.min())
    if spatial == "max":
        return float(value.max())
    return float(value.mean())


def sunburst(
    store: Store,
    run_ids: list[int],
    domain_id: int,
    spatial: str | tuple = "avg",
    ensemble_agg: str | None = None,
) -> Sunburst:
    """Nested time buckets (full -> 24 h -> 3 h -> 1 h) of accumulated rain.

    Cell values roll up hierarchically, so in point mode a parent equals
    the exact sum of its children. Multi-run input requires ensemble_agg
    and aggregates each cell across members.
    """
    if len(run_ids) > 1 and ensemble_agg not in ("min", "max", "avg"):
        raise ValueError("ensemble_agg (min/max/avg) is required for ensembles")
    hours = _member_hours(store, run_ids, domain_id)

    per_member_layers = []
    for run_id in run_ids:
        h1 = _hourly_values(store, run_id, domain_id, hours, spatial)
        h3 = _roll_up(h1, 3)
        h24 = _roll_up(h3, 8)  # 8 three-hour cells per 24 h
        full = _roll_up(h24, len(h24))
        per_member_layers.append(
            {
                "h1": [_reduce_cell(v, spatial) for v in h1],
                "h3": [_reduce_cell(v, spatial) for v in h3],
                "h24": [_reduce_cell(v, spatial) for v in h24],
                "full": [_reduce_cell(v, spatial) for v in full],
            }
        )

    def combine(kind: str, index: int) -> float:
        vals = [m[kind][index] for m in per_member_layers]
        if len(vals) == 1:
            return vals[0]
        if ensemble_agg == "min":
            return min(vals)
        if ensemble_agg == "max":
            return max(vals)
        return float(np.mean(vals))

    chart = Sunburst(hours=hours)
    counts = {
        "full": 1,
        "h24": math.ceil(hours / 24),
        "h3": math.ceil(hours / 3),
        "h1": hours,
    }
    parent_of = {"full": None, "h24": "full", "h3": "h24", "h1": "h3"}
    for kind in SUNBURST_LAYERS:
        for index in range(counts[kind]):
            width = _LAYER_WIDTH.get(kind)
            if kind == "full":
                t0, t1 = 1, hours
                parent = None
            else:
                t0 = index * width + 1
                t1 = min((index + 1) * width, hours)
                up = parent_of[kind]
                up_width = _LAYER_WIDTH.get(up)
                parent = (up, 0 if up == "full" else index * width // up_width)
            chart.cells.append(
                SunburstCell(kind=kind, index=index, t0=t0, t1=t1, value=combine(kind, index), parent=parent)
            )
    return chart


# --- ensemble maps ----------------------------------------------------------

def _member_grid(store: Store, run_id: int, domain_id: int, field_name: str, time_sel) -> np.ndarray:
    """One member's map: hourly field values or a precip accumulation window."""
    if time_sel[0] == "hour":
        grid = store.field_grid(run_id, domain_id, time_sel[1], field_name)
        if grid is None:
            raise errors.MemberNotIngested(f"run {run_id} missing domain {domain_id} hour {time_sel[1]}")
        return grid.astype(np.float64)
    if field_name != "precip":
        raise ValueError("window queries only apply to precip accumulation")
    try:
        return accumulate_precip(store, run_id, domain_id, time_sel[1], time_sel[2])
    except errors.RangeNotIngested as exc:
        raise errors.MemberNotIngested(str(exc)) from exc


def ensemble_field_map(
    store: Store,
    run_ids: list[int],
    domain_id: int,
    field_name: str,
    time_sel: tuple,
    agg: str,
) -> np.ndarray:
    """Per grid point, min/max/avg across members of the selected field map.

    ``time_sel`` is ("hour", t) or ("window", t0, t1) for accumulated precip.
    """
    if agg not in ("min", "max", "avg"):
        raise ValueError(f"agg must be min/max/avg, got {agg!r}")
    if not run_ids:
        raise errors.MemberNotIngested("ensemble has no members")
    stack = np.stack([_member_grid(store, rid, domain_id, field_name, time_sel) for rid in run_ids])
    if agg == "min":
        return stack.min(axis=0)
    if agg == "max":
        return stack.max(axis=0)
    return stack.mean(axis=0)


# --- scenarios ----------------------------------------------------------

@dataclass(frozen=True)
class FieldCondition:
    field: str
    comparator: str  # "ge" or "le"
    value: float

    def test(self, grid: np.ndarray) -> np.ndarray:
        if self.comparator == "ge":
            return grid >= self.value
        if self.comparator == "le":
            return grid <= self.value
        raise ValueError(f"comparator must be 'ge' or 'le', got {self.comparator!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    """Thresholds defining a weather scenario of interest.

    The precip condition, when present, is judged on accumulations over a
    sliding window of ``precip_window_h`` hours ending at the evaluation
    hour; all other conditions read the instantaneous hourly field.
    """

    conditions: tuple[FieldCondition, ...]
    precip_window_h: int = 1
    eval_t0: int = 1
    eval_t1: int = 1

    def validate(self) -> None:
        if not self.conditions:
            raise errors.EmptyScenario("scenario defines no field condition")
        for cond in self.conditions:
            cond.test(np.zeros((1, 1)))
        if any(c.field == "precip" for c in self.conditions) and self.precip_window_h < 1:
            raise errors.EmptyScenario("precip condition requires a window of at least 1 hour")
        if self.eval_t0 < 1 or self.eval_t0 > self.eval_t1:
            raise errors.EmptyScenario(f"bad evaluation window [{self.eval_t0}, {self.eval_t1}]")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        return cls(
            conditions=tuple(
                FieldCondition(c["field"], c["comparator"], float(c["value"]))
                for c in data.get("conditions", [])
            ),
            precip_window_h=int(data.get("precip_window_h", 1)),
            eval_t0=int(data.get("eval_t0", 1)),
            eval_t1=int(data.get("eval_t1", 1)),
        )


def _satisfaction_grid(
    store: Store, run_id: int, domain_id: int, scenario: ScenarioSpec, hour: int
) -> np.ndarray:
    """Boolean grid: all conditions hold simultaneously at this hour.

    The precip window [hour - w + 1, hour] must fit inside the horizon;
    otherwise the scenario cannot hold at this hour.
    """
    result = None
    for cond in scenario.conditions:
        if cond.field == "precip":
            w = scenario.precip_window_h
            if hour - w + 1 < 1:
                shape = store.grid_shape(run_id, domain_id)
                return np.zeros((shape[1], shape[0]), dtype=bool)
            try:
                grid = accumulate_precip(store, run_id, domain_id, hour - w + 1, hour)
            except errors.RangeNotIngested as exc:
                raise errors.MemberNotIngested(str(exc)) from exc
        else:
            grid = store.field_grid(run_id, domain_id, hour, cond.field)
            if grid is None:
                raise errors.MemberNotIngested(f"run {run_id} missing domain {domain_id} hour {hour}")
        mask = cond.test(grid)
        result = mask if result is None else (result & mask)
    return result


def scenario_probability_map(
    store: Store,
    run_ids: list[int],
    domain_id: int,
    scenario: ScenarioSpec,
    at: tuple = ("window",),
) -> np.ndarray:
    """Fraction of members in which the scenario holds at each grid point.

    ``at`` is ("hour", t) for one evaluation hour, or ("window",) to ask
    whether the scenario holds at any hour of the scenario's evaluation
    window. Values are multiples of 1/len(run_ids).
    """
    scenario.validate()
    if not run_ids:
        raise errors.MemberNotIngested("ensemble has no members")
    count = None
    for run_id in run_ids:
        if at[0] == "hour":
            sat = _satisfaction_grid(store, run_id, domain_id, scenario, at[1])
        else:
            sat = None
            for hour in range(scenario.eval_t0, scenario.eval_t1 + 1):
                hit = _satisfaction_grid(store, run_id, domain_id, scenario, hour)
                sat = hit if sat is None else (sat | hit)
        count = sat.astype(np.float64) if count is None else count + sat
    return count / len(run_ids)


def scenario_matrix(
    store: Store, run_ids: list[int], domain_id: int, scenario: ScenarioSpec
) -> dict:
    """member x hour booleans: scenario held at >= 1 grid point that hour."""
    scenario.validate()
    hours = _member_hours(store, run_ids, domain_id)
    rows = []
    for run_id in run_ids:
        rows.append(
            [bool(_satisfaction_grid(store, run_id, domain_id, scenario, hour).any()) for hour in range(1, hours + 1)]
        )
    return {"run_ids": list(run_ids), "hours": hours, "cells": rows}


def heatmatrix_series(
    store: Store, run_ids: list[int], domain_id: int, field_name: str, spatial: str | tuple = "avg"
) -> dict:
    """member x hour reals: each row is the member's spatially aggregated series."""
    if not run_ids:
        raise errors.MemberNotIngested("ensemble has no members")
    hours = _member_hours(store, run_ids, domain_id)
    rows = []
    for run_id in run_ids:
        got_hours, values = query_series(store, run_id, domain_id, field_name, spatial)
        by_hour = dict(zip(got_hours, values))
        rows.append([by_hour[h] for h in range(1, hours + 1)])
    return {"run_ids": list(run_ids), "hours": hours, "cells": rows}


# --- feature vectors and projection ----------------------------------------

@dataclass(frozen=True)
class FeatureVector:
    """Rainfall statistics over per-point accumulation windows.

    For each window kind (3 h, 24 h, full horizon) the population is every
    grid point's accumulation in every non-overlapping window of that
    length; the statistics are max, mean, and population std, in that
    order.
    """

    run_id: int
    values: tuple[float, ...]

    def as_dict(self) -> dict:
        return {"run_id": self.run_id, **dict(zip(FEATURE_NAMES, self.values))}


def feature_vector(store: Store, run_id: int, domain_id: int) -> FeatureVector:
    rec = store.get_run(run_id)
    horizon = rec.horizon_hours
    got = store.ingested_hours(run_id, domain_id)
    if got != list(range(1, horizon + 1)):
        raise errors.RunIncomplete(
            f"run {run_id} domain {domain_id}: {len(got)}/{horizon} hours ingested"
        )
    grids = [
        store.field_grid(run_id, domain_id, hour, "precip").astype(np.float64)
        for hour in range(1, horizon + 1)
    ]
    values: list[float] = []
    for kind in FEATURE_WINDOWS:
        width = {"h3": 3, "h24": 24, "full": horizon}[kind]
        pools = []
        for start in range(0, horizon, width):
            chunk = grids[start : start + width]
            acc = chunk[0].copy()
            for grid in chunk[1:]:
                acc += grid
            pools.append(acc.ravel())
        population = np.concatenate(pools)
        values.extend(
            [float(population.max()), float(population.mean()), float(population.std(ddof=0))]
        )
    return FeatureVector(run_id=run_id, values=tuple(values))


def pca_project(vectors: list[FeatureVector]) -> list[tuple[float, float]]:
    """Project feature vectors to 2-D via PCA of the z-scored features.

    Zero-variance features are dropped to 0; eigenvectors follow the sign
    convention that their largest-magnitude component is positive. A
    single run maps to the origin.
    """
    if not vectors:
        raise ValueError("need at least one feature vector")
    x = np.array([v.values for v in vectors], dtype=np.float64)
    n = x.shape[0]
    if n == 1:
        return [(0.0, 0.0)]
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=0)
    # Relative threshold: the mean of n identical floats can be off by an
    # ulp, which would otherwise turn a constant feature into +-1 z-scores.
    degenerate = std <= np.maximum(np.abs(mean), 1.0) * 1e-12
    z = np.where(degenerate, 0.0, (x - mean) / np.where(degenerate, 1.0, std))
    cov = (z.T @ z) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    coords = np.zeros((n, 2))
    for col, idx in enumerate(order):
        vec = eigvecs[:, idx]
        pivot = int(np.argmax(np.abs(vec)))
        if vec[pivot] < 0:
            vec = -vec
        coords[:, col] = z @ vec
    return [(float(px), float(py)) for px, py in coords]
