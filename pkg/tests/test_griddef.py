import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wxbench.errors import BrushOutsideParent, IndexOutOfRange, MarginViolation, TooSmall
from wxbench.griddef import (
    DomainSpec,
    GeoRect,
    METERS_PER_DEGREE_LAT,
    child_extent_rect,
    frac_to_lonlat,
    grid_to_lonlat,
    lonlat_to_frac,
    snap_child_domain,
    validate_nesting,
)

from conftest import brush_cells, make_child, make_root


class TestGeoRect:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            GeoRect(-46.0, -23.5, -46.0, -20.0)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GeoRect(-46.0, -95.0, -40.0, -20.0)


class TestGridToLonlat:
    def test_center_point_of_odd_grid(self):
        d = make_root(nx=51, ny=41)
        assert grid_to_lonlat(d, 25, 20) == (d.center_lon, d.center_lat)

    def test_lon_step_at_equator(self):
        d = DomainSpec(1, 0, 18000.0, 10.0, 0.0, 51, 41)
        lon0, _ = grid_to_lonlat(d, 25, 20)
        lon1, _ = grid_to_lonlat(d, 26, 20)
        assert lon1 - lon0 == pytest.approx(18000.0 / METERS_PER_DEGREE_LAT, abs=1e-12)

    def test_corner_against_scalar_recomputation(self):
        d = make_root(nx=50, ny=40, resolution_m=18000.0, center=(-46.0, -23.5))
        lat_step = 18000.0 / METERS_PER_DEGREE_LAT
        lon_step = lat_step / math.cos(math.radians(-23.5))
        expect_lon = -46.0 + (0 - 49 / 2) * lon_step
        expect_lat = -23.5 + (0 - 39 / 2) * lat_step
        assert grid_to_lonlat(d, 0, 0) == pytest.approx((expect_lon, expect_lat), abs=1e-12)

    def test_out_of_range_index(self):
        d = make_root()
        with pytest.raises(IndexOutOfRange):
            grid_to_lonlat(d, d.nx, 0)
        with pytest.raises(IndexOutOfRange):
            grid_to_lonlat(d, 0, -1)

    def test_round_trip(self):
        d = make_root()
        for i, j in [(0, 0), (13, 27), (49, 39)]:
            lon, lat = grid_to_lonlat(d, i, j)
            fi, fj = lonlat_to_frac(d, lon, lat)
            assert fi == pytest.approx(i, abs=1e-9)
            assert fj == pytest.approx(j, abs=1e-9)

    @given(
        i1=st.integers(0, 48), j1=st.integers(0, 38),
        i2=st.integers(0, 48), j2=st.integers(0, 38),
    )
    def test_strictly_monotone(self, i1, j1, i2, j2):
        d = make_root()
        lon1, lat1 = grid_to_lonlat(d, i1, j1)
        lon2, lat2 = grid_to_lonlat(d, i2, j2)
        if i1 < i2:
            assert lon1 < lon2
        if j1 < j2:
            assert lat1 < lat2


class TestSnapChildDomain:
    def test_aligned_brush_is_fixed_point(self):
        root = make_root()
        child = snap_child_domain(root, brush_cells(root, 12, 10, 39, 31), 3)
        assert child.resolution_m == 6000.0
        assert (child.parent_i_off, child.parent_j_off) == (12, 10)
        assert (child.nx, child.ny) == (27 * 3 + 1, 21 * 3 + 1)

    def test_snap_grows_unaligned_brush(self):
        root = make_root()
        rect = brush_cells(root, 12, 10, 39, 31)
        nudged = GeoRect(
            rect.min_lon + 0.01, rect.min_lat + 0.01, rect.max_lon + 0.01, rect.max_lat + 0.01
        )
        child = snap_child_domain(root, nudged, 3)
        # Snapped extent must cover the brush.
        covered = child_extent_rect(root, child)
        assert covered.min_lon <= nudged.min_lon and covered.max_lon >= nudged.max_lon
        assert covered.min_lat <= nudged.min_lat and covered.max_lat >= nudged.max_lat

    def test_18_6_2_chain(self):
        root = make_root(nx=52, ny=43, center=(-46.0, -23.5))
        mid = make_child(root, 14, 12, 37, 30)
        inner = snap_child_domain(mid, brush_cells(mid, 24, 20, 46, 37), 3)
        assert [d.resolution_m for d in (root, mid, inner)] == [18000.0, 6000.0, 2000.0]
        assert validate_nesting([root, mid, inner]).ok

    def test_tiny_brush_too_small(self):
        root = make_root()
        lon0, lat0 = frac_to_lonlat(root, 20.2, 20.2)
        lon1, lat1 = frac_to_lonlat(root, 20.5, 20.6)
        with pytest.raises(TooSmall):
            snap_child_domain(root, GeoRect(lon0, lat0, lon1, lat1), 3)

    def test_brush_outside_parent(self):
        root = make_root()
        lon0, lat0 = frac_to_lonlat(root, 60.0, 50.0)
        lon1, lat1 = frac_to_lonlat(root, 70.0, 60.0)
        with pytest.raises(BrushOutsideParent):
            snap_child_domain(root, GeoRect(lon0, lat0, lon1, lat1), 3)

    def test_margin_violation(self):
        root = make_root()
        with pytest.raises(MarginViolation):
            snap_child_domain(root, brush_cells(root, 2, 10, 30, 31), 3)

    def test_snap_idempotent(self):
        root = make_root()
        rect = brush_cells(root, 11, 9, 40, 30)
        nudged = GeoRect(rect.min_lon - 0.02, rect.min_lat - 0.03, rect.max_lon + 0.04, rect.max_lat + 0.01)
        child = snap_child_domain(root, nudged, 3)
        again = snap_child_domain(root, child_extent_rect(root, child), 3)
        assert again == child

    @given(
        i0=st.integers(5, 30), j0=st.integers(5, 20),
        di=st.integers(4, 14), dj=st.integers(4, 14),
        ratio=st.integers(2, 4),
    )
    @settings(max_examples=60)
    def test_snapped_child_always_validates(self, i0, j0, di, dj, ratio):
        root = make_root(nx=52, ny=43)
        i1, j1 = i0 + di, j0 + dj
        if i1 > 52 - 1 - 5 or j1 > 43 - 1 - 5:
            return
        if di * ratio + 1 < 10 or dj * ratio + 1 < 10:
            return  # legitimately TooSmall
        child = snap_child_domain(root, brush_cells(root, i0, j0, i1, j1), ratio)
        report = validate_nesting([root, child])
        assert report.ok, str(report)


class TestValidateNesting:
    def test_single_root_ok(self):
        assert validate_nesting([make_root()]).ok

    def test_non_integral_resolution(self):
        root = make_root()
        bad = DomainSpec(2, 1, 7000.0, -46.0, -23.5, 31, 31, parent_i_off=10, parent_j_off=10, nesting_ratio=3)
        report = validate_nesting([root, bad])
        assert any(v.code == "ratio-not-integral" for v in report.violations)

    def test_small_grid_flagged(self):
        root = make_root()
        bad = DomainSpec(2, 1, 6000.0, -46.0, -23.5, 7, 31, parent_i_off=10, parent_j_off=10, nesting_ratio=3)
        report = validate_nesting([root, bad])
        assert any(v.code == "grid-too-small" for v in report.violations)

    def test_unknown_parent(self):
        root = make_root()
        stray = DomainSpec(3, 9, 6000.0, -46.0, -23.5, 31, 31, parent_i_off=10, parent_j_off=10, nesting_ratio=3)
        report = validate_nesting([root, stray])
        assert any(v.code == "unknown-parent" for v in report.violations)

    def test_margin_checked_via_offsets(self):
        root = make_root()
        bad = DomainSpec(2, 1, 6000.0, -46.0, -23.5, 31, 31, parent_i_off=2, parent_j_off=10, nesting_ratio=3)
        report = validate_nesting([root, bad])
        assert any(v.code == "margin" for v in report.violations)

    def test_empty_list(self):
        assert not validate_nesting([]).ok

    @given(
        seed_i=st.integers(6, 20), seed_j=st.integers(6, 16),
        w1=st.integers(8, 16), w2=st.integers(5, 9),
    )
    @settings(max_examples=40)
    def test_random_depth3_chains_validate(self, seed_i, seed_j, w1, w2):
        root = make_root(nx=60, ny=52)
        mid = make_child(root, seed_i, seed_j, seed_i + w1 + 12, seed_j + w1 + 10)
        inner_hi_i = min(6 + w2 * 3 + 6, mid.nx - 7)
        inner_hi_j = min(6 + w2 * 3 + 4, mid.ny - 7)
        inner = snap_child_domain(mid, brush_cells(mid, 6, 6, inner_hi_i, inner_hi_j), 3)
        report = validate_nesting([root, mid, inner])
        assert report.ok, str(report)
