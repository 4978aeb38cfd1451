"""Nested simulation domains and the lat/lon placement of grid points.

Domains are rectangular grids on an equirectangular projection: one
degree of latitude is a fixed 111320 m and longitude spacing is widened
by 1/cos(center latitude). Children are aligned to their parent purely
through integer cell offsets and an integer resolution ratio, so nesting
arithmetic is exact; geometry only matters for display and brushing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import BrushOutsideParent, IndexOutOfRange, MarginViolation, TooSmall

METERS_PER_DEGREE_LAT = 111320.0

#: Minimum grid points along each axis of any domain.
MIN_POINTS = 10

#: Required clearance, in parent cells, between a child and its parent's edge.
NEST_MARGIN_CELLS = 5

#: Default child:parent resolution ratio (an 18 km root yields 6 km and 2 km nests).
DEFAULT_NESTING_RATIO = 3

# Tolerance (in parent cells) for treating a brushed corner as already on a
# cell corner, which makes snapping idempotent under float round-trips.
_SNAP_TOL = 1e-7


@dataclass(frozen=True)
class GeoRect:
    """Axis-aligned lat/lon rectangle (degrees, WGS84-style)."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if not (self.min_lon < self.max_lon and self.min_lat < self.max_lat):
            raise ValueError("degenerate rectangle: min must be < max on both axes")
        if not (-90.0 <= self.min_lat and self.max_lat <= 90.0):
            raise ValueError("latitude outside [-90, 90]")
        if not (-180.0 <= self.min_lon and self.max_lon <= 180.0):
            raise ValueError("longitude outside [-180, 180]")


@dataclass(frozen=True)
class DomainSpec:
    """One simulation grid, possibly nested inside a parent grid.

    ``parent_i_off``/``parent_j_off`` place the child's lower-left grid
    point on a parent grid point; the child spans ``(nx-1)/nesting_ratio``
    parent cells in i and ``(ny-1)/nesting_ratio`` in j. Root domains use
    parent_id 0, nesting_ratio 0 and zero offsets.
    """

    domain_id: int
    parent_id: int
    resolution_m: float
    center_lon: float
    center_lat: float
    nx: int
    ny: int
    parent_i_off: int = 0
    parent_j_off: int = 0
    nesting_ratio: int = 0

    @property
    def is_root(self) -> bool:
        return self.parent_id == 0

    def lat_step(self) -> float:
        return self.resolution_m / METERS_PER_DEGREE_LAT

    def lon_step(self) -> float:
        return self.lat_step() / math.cos(math.radians(self.center_lat))

    def parent_cells_i(self) -> int:
        return (self.nx - 1) // self.nesting_ratio if self.nesting_ratio else 0

    def parent_cells_j(self) -> int:
        return (self.ny - 1) // self.nesting_ratio if self.nesting_ratio else 0


def frac_to_lonlat(d: DomainSpec, fi: float, fj: float) -> tuple[float, float]:
    """Map fractional grid coordinates to (lon, lat); no range check."""
    lon = d.center_lon + (fi - (d.nx - 1) / 2.0) * d.lon_step()
    lat = d.center_lat + (fj - (d.ny - 1) / 2.0) * d.lat_step()
    return lon, lat


def lonlat_to_frac(d: DomainSpec, lon: float, lat: float) -> tuple[float, float]:
    """Inverse of :func:`frac_to_lonlat` (exact up to float round-trip)."""
    fi = (lon - d.center_lon) / d.lon_step() + (d.nx - 1) / 2.0
    fj = (lat - d.center_lat) / d.lat_step() + (d.ny - 1) / 2.0
    return fi, fj


def grid_to_lonlat(d: DomainSpec, i: int, j: int) -> tuple[float, float]:
    """(lon, lat) of grid point (i, j).

    Raises IndexOutOfRange unless 0 <= i < nx and 0 <= j < ny.
    """
    if not (0 <= i < d.nx and 0 <= j < d.ny):
        raise IndexOutOfRange(f"point ({i}, {j}) outside {d.nx}x{d.ny} grid")
    return frac_to_lonlat(d, float(i), float(j))


def child_extent_rect(parent: DomainSpec, child: DomainSpec) -> GeoRect:
    """The child's footprint as a rectangle in the parent's frame.

    This is the rectangle brushing works with: its corners sit exactly on
    parent grid points, so re-snapping it reproduces the child.
    """
    i0, j0 = child.parent_i_off, child.parent_j_off
    i1 = i0 + child.parent_cells_i()
    j1 = j0 + child.parent_cells_j()
    min_lon, min_lat = frac_to_lonlat(parent, i0, j0)
    max_lon, max_lat = frac_to_lonlat(parent, i1, j1)
    return GeoRect(min_lon, min_lat, max_lon, max_lat)


def domain_extent_rect(d: DomainSpec) -> GeoRect:
    """The domain's own footprint in its own frame (display helper)."""
    min_lon, min_lat = frac_to_lonlat(d, 0, 0)
    max_lon, max_lat = frac_to_lonlat(d, d.nx - 1, d.ny - 1)
    return GeoRect(min_lon, min_lat, max_lon, max_lat)


def _snap_down(x: float) -> int:
    r = round(x)
    return int(r) if abs(x - r) <= _SNAP_TOL else math.floor(x)


def _snap_up(x: float) -> int:
    r = round(x)
    return int(r) if abs(x - r) <= _SNAP_TOL else math.ceil(x)


def snap_child_domain(parent: DomainSpec, brush: GeoRect, ratio: int = DEFAULT_NESTING_RATIO) -> DomainSpec:
    """Turn a brushed rectangle on the parent map into a valid child domain.

    Corners are snapped outward to the nearest parent cell corners, so the
    brushed region is always covered; a brush already on cell corners is a
    fixed point. Deterministic for identical inputs.

    Raises BrushOutsideParent, MarginViolation or TooSmall.
    """
    if int(ratio) != ratio or ratio < 2:
        raise ValueError(f"nesting ratio must be an integer >= 2, got {ratio!r}")
    ratio = int(ratio)

    fi0, fj0 = lonlat_to_frac(parent, brush.min_lon, brush.min_lat)
    fi1, fj1 = lonlat_to_frac(parent, brush.max_lon, brush.max_lat)
    if fi1 <= 0 or fj1 <= 0 or fi0 >= parent.nx - 1 or fj0 >= parent.ny - 1:
        raise BrushOutsideParent("brush does not intersect the parent grid interior")

    i0, j0 = _snap_down(fi0), _snap_down(fj0)
    i1, j1 = _snap_up(fi1), _snap_up(fj1)

    lo = NEST_MARGIN_CELLS
    if i0 < lo or j0 < lo or i1 > parent.nx - 1 - lo or j1 > parent.ny - 1 - lo:
        raise MarginViolation(
            f"snapped extent [{i0}..{i1}]x[{j0}..{j1}] breaches the "
            f"{NEST_MARGIN_CELLS}-cell margin of the {parent.nx}x{parent.ny} parent"
        )

    nx = (i1 - i0) * ratio + 1
    ny = (j1 - j0) * ratio + 1
    if nx < MIN_POINTS or ny < MIN_POINTS:
        raise TooSmall(f"snapped child would be {nx}x{ny}; minimum is {MIN_POINTS} points per axis")

    center_lon, center_lat = frac_to_lonlat(parent, (i0 + i1) / 2.0, (j0 + j1) / 2.0)
    return DomainSpec(
        domain_id=parent.domain_id + 1,
        parent_id=parent.domain_id,
        resolution_m=parent.resolution_m / ratio,
        center_lon=center_lon,
        center_lat=center_lat,
        nx=nx,
        ny=ny,
        parent_i_off=i0,
        parent_j_off=j0,
        nesting_ratio=ratio,
    )


@dataclass(frozen=True)
class Violation:
    domain_id: int
    code: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, domain_id: int, code: str, message: str) -> None:
        self.violations.append(Violation(domain_id, code, message))

    def as_dicts(self) -> list[dict]:
        return [vars(v) for v in self.violations]

    def __str__(self) -> str:
        if self.ok:
            return "nesting OK"
        return "; ".join(f"d{v.domain_id} {v.code}: {v.message}" for v in self.violations)


def validate_nesting(domains: list[DomainSpec]) -> ValidationReport:
    """Check every domain invariant over an ordered root-first list.

    Violations are report entries, never exceptions, so a UI can show all
    of them at once.
    """
    report = ValidationReport()
    if not domains:
        report.add(0, "empty", "domain list is empty")
        return report

    by_id: dict[int, DomainSpec] = {}
    for d in domains:
        if d.domain_id in by_id:
            report.add(d.domain_id, "duplicate-id", f"domain id {d.domain_id} repeated")
        else:
            by_id[d.domain_id] = d

    root = domains[0]
    if root.domain_id != 1 or not root.is_root:
        report.add(root.domain_id, "bad-root", "first domain must be id 1 with parent_id 0")

    for d in domains:
        if d.domain_id < 1:
            report.add(d.domain_id, "bad-id", "domain_id must be >= 1")
        if d.nx < MIN_POINTS or d.ny < MIN_POINTS:
            report.add(d.domain_id, "grid-too-small", f"{d.nx}x{d.ny} is below {MIN_POINTS} points per axis")
        if not (-90.0 <= d.center_lat <= 90.0 and -180.0 <= d.center_lon <= 180.0):
            report.add(d.domain_id, "center-out-of-range", f"center ({d.center_lon}, {d.center_lat}) outside lat/lon bounds")
        if d.resolution_m <= 0:
            report.add(d.domain_id, "bad-resolution", "resolution must be positive")

        if d.is_root:
            if d is not root:
                report.add(d.domain_id, "multiple-roots", "only the first domain may be a root")
            if d.nesting_ratio != 0 or d.parent_i_off != 0 or d.parent_j_off != 0:
                report.add(d.domain_id, "bad-root", "root must have zero ratio and offsets")
            continue

        parent = by_id.get(d.parent_id)
        if parent is None or parent is d:
            report.add(d.domain_id, "unknown-parent", f"parent {d.parent_id} not in list")
            continue
        if d.nesting_ratio < 2:
            report.add(d.domain_id, "ratio-too-small", f"nesting ratio {d.nesting_ratio} must be >= 2")
            continue
        if d.resolution_m * d.nesting_ratio != parent.resolution_m:
            report.add(
                d.domain_id,
                "ratio-not-integral",
                f"{parent.resolution_m} m / {d.resolution_m} m is not the declared integer ratio {d.nesting_ratio}",
            )
        if (d.nx - 1) % d.nesting_ratio or (d.ny - 1) % d.nesting_ratio:
            report.add(
                d.domain_id,
                "extent-not-integral",
                f"(nx-1, ny-1) = ({d.nx - 1}, {d.ny - 1}) not divisible by ratio {d.nesting_ratio}",
            )
            continue
        lo = NEST_MARGIN_CELLS
        i1 = d.parent_i_off + d.parent_cells_i()
        j1 = d.parent_j_off + d.parent_cells_j()
        if (
            d.parent_i_off < lo
            or d.parent_j_off < lo
            or i1 > parent.nx - 1 - lo
            or j1 > parent.ny - 1 - lo
        ):
            report.add(
                d.domain_id,
                "margin",
                f"extent [{d.parent_i_off}..{i1}]x[{d.parent_j_off}..{j1}] breaches the "
                f"{lo}-cell margin of the {parent.nx}x{parent.ny} parent",
            )

    # Parent pointers must form a tree rooted at domain 1.
    for d in domains:
        seen = set()
        cur = d
        while not cur.is_root:
            if cur.domain_id in seen:
                report.add(d.domain_id, "cycle", "parent chain does not reach a root")
                break
            seen.add(cur.domain_id)
            nxt = by_id.get(cur.parent_id)
            if nxt is None:
                break  # already reported as unknown-parent
            cur = nxt

    return report
