"""Marching-squares isocontour extraction from a 2-D scalar grid.

Standard 16-case cell lookup with linear interpolation along crossed
edges. The two saddle cases are disambiguated by comparing the cell
center average against the level. Segments are keyed by the grid edge
they cross, so chaining them into polylines is exact: every interior
edge is shared by two cells, which makes each polyline either closed or
terminated on the grid boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .griddef import DomainSpec, frac_to_lonlat

# Edge keys within cell (i, j): bottom/top are horizontal edges starting
# at (i, j)/(i, j+1); left/right are vertical edges at i/(i+1).
_B, _R, _T, _L = 0, 1, 2, 3

# Segment table: case index (corner "above" bits a=1, b=2, c=4, d=8 for
# corners (i,j), (i+1,j), (i+1,j+1), (i,j+1)) -> list of edge pairs.
_SEGMENTS: dict[int, list[tuple[int, int]]] = {
    0: [],
    1: [(_L, _B)],
    2: [(_B, _R)],
    3: [(_L, _R)],
    4: [(_R, _T)],
    6: [(_B, _T)],
    7: [(_L, _T)],
    8: [(_T, _L)],
    9: [(_B, _T)],
    11: [(_R, _T)],
    12: [(_R, _L)],
    13: [(_B, _R)],
    14: [(_L, _B)],
    15: [],
}
_SADDLE_5_ABOVE = [(_B, _R), (_T, _L)]   # diagonal band joins a and c
_SADDLE_5_BELOW = [(_L, _B), (_R, _T)]   # a and c isolated
_SADDLE_10_ABOVE = [(_L, _B), (_R, _T)]  # band joins b and d
_SADDLE_10_BELOW = [(_B, _R), (_T, _L)]


@dataclass
class ContourSet:
    """Isolines of one level: (lon, lat) polylines plus their grid-space twins."""

    level: float
    polylines: list[list[tuple[float, float]]]
    polylines_grid: list[list[tuple[float, float]]]


def _edge_key(i: int, j: int, edge: int) -> tuple[str, int, int]:
    if edge == _B:
        return ("h", i, j)
    if edge == _T:
        return ("h", i, j + 1)
    if edge == _L:
        return ("v", i, j)
    return ("v", i + 1, j)


def _edge_vertex(grid: np.ndarray, key: tuple[str, int, int], level: float) -> tuple[float, float]:
    kind, i, j = key
    if kind == "h":
        v0, v1 = float(grid[j, i]), float(grid[j, i + 1])
        t = (level - v0) / (v1 - v0)
        return (i + t, float(j))
    v0, v1 = float(grid[j, i]), float(grid[j + 1, i])
    t = (level - v0) / (v1 - v0)
    return (float(i), j + t)


def _trace_level(grid: np.ndarray, level: float) -> list[list[tuple[float, float]]]:
    ny, nx = grid.shape
    above = grid > level
    a = above[:-1, :-1]
    b = above[:-1, 1:]
    c = above[1:, 1:]
    d = above[1:, :-1]
    case = a + 2 * b + 4 * c + 8 * d

    adjacency: dict[tuple, list[tuple]] = {}
    for j, i in np.argwhere((case != 0) & (case != 15)):
        j, i = int(j), int(i)
        code = int(case[j, i])
        if code == 5 or code == 10:
            center = (float(grid[j, i]) + float(grid[j, i + 1]) + float(grid[j + 1, i + 1]) + float(grid[j + 1, i])) / 4.0
            if code == 5:
                pairs = _SADDLE_5_ABOVE if center > level else _SADDLE_5_BELOW
            else:
                pairs = _SADDLE_10_ABOVE if center > level else _SADDLE_10_BELOW
        else:
            pairs = _SEGMENTS[code]
        for e0, e1 in pairs:
            k0, k1 = _edge_key(i, j, e0), _edge_key(i, j, e1)
            adjacency.setdefault(k0, []).append(k1)
            adjacency.setdefault(k1, []).append(k0)

    polylines = []
    visited: set[tuple] = set()

    def walk(start: tuple) -> list[tuple]:
        path = [start]
        visited.add(start)
        cur = start
        while True:
            nxt = next((n for n in adjacency[cur] if n not in visited), None)
            if nxt is None:
                # Every edge has degree <= 2, so hitting only visited
                # neighbors means either an open end or a closed loop.
                if len(path) > 2 and start in adjacency[cur]:
                    path.append(start)
                return path
            visited.add(nxt)
            path.append(nxt)
            cur = nxt

    # Open paths first (their endpoints have degree 1), then leftover loops.
    for key in sorted(k for k, nbrs in adjacency.items() if len(nbrs) == 1):
        if key not in visited:
            polylines.append(walk(key))
    for key in sorted(adjacency):
        if key not in visited:
            polylines.append(walk(key))

    return [[_edge_vertex(grid, k, level) for k in path] for path in polylines]


def extract_contours(grid: np.ndarray, domain: DomainSpec, levels: list[float]) -> list[ContourSet]:
    """Contour polylines for strictly increasing levels, mapped to lon/lat."""
    grid = np.asarray(grid, dtype=np.float64)
    if not np.isfinite(grid).all():
        raise ValueError("grid contains non-finite values")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    out = []
    for level in levels:
        grid_paths = _trace_level(grid, float(level))
        lonlat_paths = [
            [frac_to_lonlat(domain, fi, fj) for fi, fj in path] for path in grid_paths
        ]
        out.append(ContourSet(level=float(level), polylines=lonlat_paths, polylines_grid=grid_paths))
    return out
