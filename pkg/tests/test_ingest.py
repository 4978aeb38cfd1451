import math
import os

import numpy as np
import pytest

from wxbench import errors
from wxbench.frameio import FIELD_NAMES, encode_frame, read_frame
from wxbench.ingest import accumulate_precip, ingest_until_quiet, poll_run_outputs, query_series
from wxbench.store import Store

from conftest import crafted_frame, make_config, make_root, write_frames


@pytest.fixture
def env(tmp_path):
    """(store, run record, out_dir) with a 12x10 root config over 30 h."""
    store = Store(str(tmp_path / "meta.sqlite"))
    project = store.create_project("p")["project_id"]
    rec = store.create_run(project, make_config([make_root(nx=12, ny=10)], hours=30))
    out = tmp_path / "out"
    out.mkdir()
    yield store, rec, out
    store.close()


class TestPolling:
    def test_empty_dir_no_events(self, env):
        store, rec, out = env
        events = []
        assert poll_run_outputs(store, rec.run_id, str(out), events.append) == []
        assert events == []

    def test_three_new_frames_three_events(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=3)
        events = []
        ingested = poll_run_outputs(store, rec.run_id, str(out), events.append)
        assert ingested == [(1, 1), (1, 2), (1, 3)]
        assert [e["step_hour"] for e in events] == [1, 2, 3]
        assert all(e["type"] == "frame" for e in events)
        assert store.aggregate_rows(rec.run_id, 1, "t2", "h1")[0]["hours"] == 1
        assert len(store.aggregate_rows(rec.run_id, 1, "t2", "h1")) == 3

    def test_second_poll_is_quiet(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=3)
        poll_run_outputs(store, rec.run_id, str(out))
        assert poll_run_outputs(store, rec.run_id, str(out)) == []

    def test_truncated_file_retried_after_completion(self, env):
        store, rec, out = env
        frame = crafted_frame(rec.run_id, 1, 1, seed=3)
        data = encode_frame(frame)
        path = out / "dom1_t001.pwf"
        path.write_bytes(data[: len(data) // 2])
        assert poll_run_outputs(store, rec.run_id, str(out)) == []
        path.write_bytes(data)  # writer finished
        assert poll_run_outputs(store, rec.run_id, str(out)) == [(1, 1)]

    def test_corrupt_file_quarantined_not_retried(self, env):
        store, rec, out = env
        good = crafted_frame(rec.run_id, 1, 2, seed=3)
        bad_path = out / "dom1_t001.pwf"
        bad_path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        from wxbench.frameio import write_frame

        write_frame(good, str(out))
        ingested = poll_run_outputs(store, rec.run_id, str(out))
        assert ingested == [(1, 2)]
        assert str(bad_path) in store.quarantined_paths(rec.run_id)
        # never retried, even though the file now looks fine
        bad_path.write_bytes(encode_frame(crafted_frame(rec.run_id, 1, 1, seed=3)))
        assert poll_run_outputs(store, rec.run_id, str(out)) == []

    def test_foreign_run_id_quarantined(self, env):
        store, rec, out = env
        from wxbench.frameio import write_frame

        write_frame(crafted_frame(rec.run_id + 7, 1, 1, seed=1), str(out))
        assert poll_run_outputs(store, rec.run_id, str(out)) == []
        assert len(store.quarantined_paths(rec.run_id)) == 1

    def test_ingest_until_quiet(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1, 2], hours=4)
        assert ingest_until_quiet(store, rec.run_id, str(out)) == 8


def brute_force_aggregates(frames, field, kind):
    """Recompute every interval aggregate from raw frames, independently."""
    width = {"h1": 1, "h3": 3, "h24": 24}.get(kind)
    hours = max(f.step_hour for f in frames)
    count = 1 if kind == "full" else math.ceil(hours / width)
    out = {}
    for idx in range(count):
        if kind == "full":
            members = frames
        else:
            members = [f for f in frames if (f.step_hour - 1) // width == idx]
        if not members:
            continue
        members = sorted(members, key=lambda f: f.step_hour)
        if field == "precip":
            acc = np.zeros_like(members[0].grids[field], dtype=np.float64)
            for f in members:
                acc = acc + f.grids[field].astype(np.float64)
            out[idx] = (acc.min(), acc.max(), acc.mean())
        else:
            stack = np.stack([f.grids[field] for f in members]).astype(np.float64)
            out[idx] = (stack.min(), stack.max(), stack.mean())
    return out


class TestAggregates:
    def test_oracle_equality_all_kinds(self, env):
        store, rec, out = env
        frames = write_frames(out, rec.run_id, [1, 2], hours=30, seed=11)
        poll_run_outputs(store, rec.run_id, str(out))
        raw = [read_frame(os.path.join(out, n)) for n in sorted(os.listdir(out))]
        for domain_id in (1, 2):
            dom_frames = [f for f in raw if f.domain_id == domain_id]
            for field in FIELD_NAMES:
                for kind in ("h1", "h3", "h24", "full"):
                    expected = brute_force_aggregates(dom_frames, field, kind)
                    rows = {r["idx"]: r for r in store.aggregate_rows(rec.run_id, domain_id, field, kind)}
                    assert set(rows) == set(expected)
                    for idx, (vmin, vmax, vavg) in expected.items():
                        row = rows[idx]
                        assert row["vmin"] == vmin, (field, kind, idx)
                        assert row["vmax"] == vmax, (field, kind, idx)
                        assert row["vsum"] / row["vcount"] == pytest.approx(vavg, rel=1e-6)

    def test_interval_index_counts(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=30, seed=2)
        poll_run_outputs(store, rec.run_id, str(out))
        assert len(store.aggregate_rows(rec.run_id, 1, "precip", "h1")) == 30
        assert len(store.aggregate_rows(rec.run_id, 1, "precip", "h3")) == 10
        assert len(store.aggregate_rows(rec.run_id, 1, "precip", "h24")) == 2
        assert len(store.aggregate_rows(rec.run_id, 1, "precip", "full")) == 1

    def test_precip_hierarchy_is_exact_per_point(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=9, seed=4)
        poll_run_outputs(store, rec.run_id, str(out))
        for k in range(3):
            h3_map, hours = store.precip_accumulation(rec.run_id, 1, "h3", k)
            assert hours == 3
            total = None
            for hour in range(3 * k + 1, 3 * k + 4):
                g = store.field_grid(rec.run_id, 1, hour, "precip").astype(np.float64)
                total = g if total is None else total + g
            np.testing.assert_array_equal(h3_map, total)

    def test_incremental_equals_batch_exactly(self, tmp_path):
        frames = []
        for hour in range(1, 13):
            frames.append(crafted_frame(1, 1, hour, seed=9))

        def build(mode):
            store = Store(str(tmp_path / f"{mode}.sqlite"))
            project = store.create_project("p")["project_id"]
            rec = store.create_run(project, make_config([make_root(nx=12, ny=10)], hours=12))
            out = tmp_path / mode
            out.mkdir()
            from wxbench.frameio import write_frame

            if mode == "incremental":
                for f in frames:
                    f.run_id = rec.run_id
                    write_frame(f, str(out))
                    poll_run_outputs(store, rec.run_id, str(out))
            else:
                for f in frames:
                    f.run_id = rec.run_id
                    write_frame(f, str(out))
                poll_run_outputs(store, rec.run_id, str(out))
            rows = {}
            for field in FIELD_NAMES:
                for kind in ("h1", "h3", "h24", "full"):
                    for r in store.aggregate_rows(rec.run_id, 1, field, kind):
                        rows[(field, kind, r["idx"])] = (r["vmin"], r["vmax"], r["vsum"], r["vcount"])
            store.close()
            return rows

        assert build("incremental") == build("batch")


class TestQuerySeries:
    def test_constant_field_avg(self, env):
        store, rec, out = env
        from wxbench.frameio import write_frame

        for hour in range(1, 5):
            write_frame(crafted_frame(rec.run_id, 1, hour, constants={"t2": 21.5}), str(out))
        poll_run_outputs(store, rec.run_id, str(out))
        hours, values = query_series(store, rec.run_id, 1, "t2", "avg")
        assert hours == [1, 2, 3, 4]
        assert values == [pytest.approx(21.5)] * 4

    def test_max_dominates_avg(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=8, seed=13)
        poll_run_outputs(store, rec.run_id, str(out))
        _, avg = query_series(store, rec.run_id, 1, "w500", "avg")
        _, vmax = query_series(store, rec.run_id, 1, "w500", "max")
        assert all(m >= a for m, a in zip(vmax, avg))

    def test_matches_brute_force_scan(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=8, seed=17)
        poll_run_outputs(store, rec.run_id, str(out))
        raw = {f.step_hour: f for f in (read_frame(os.path.join(out, n)) for n in sorted(os.listdir(out)))}
        for spatial, reducer in [("min", np.min), ("max", np.max), ("avg", np.mean)]:
            hours, values = query_series(store, rec.run_id, 1, "kindex", spatial)
            for hour, value in zip(hours, values):
                expected = float(reducer(raw[hour].grids["kindex"].astype(np.float64)))
                assert value == pytest.approx(expected, rel=1e-12), (spatial, hour)

    def test_point_mode(self, env):
        store, rec, out = env
        frames = write_frames(out, rec.run_id, [1], hours=5, seed=19)
        poll_run_outputs(store, rec.run_id, str(out))
        hours, values = query_series(store, rec.run_id, 1, "rh850", ("point", 3, 7))
        for hour, value in zip(hours, values):
            assert value == pytest.approx(float(frames[hour - 1].grids["rh850"][7, 3]))

    def test_errors(self, env):
        store, rec, out = env
        with pytest.raises(errors.NothingIngested):
            query_series(store, rec.run_id, 1, "t2", "avg")
        write_frames(out, rec.run_id, [1], hours=1)
        poll_run_outputs(store, rec.run_id, str(out))
        with pytest.raises(errors.UnknownField):
            query_series(store, rec.run_id, 1, "nope", "avg")
        with pytest.raises(errors.IndexOutOfRange):
            query_series(store, rec.run_id, 1, "t2", ("point", 100, 0))


class TestAccumulatePrecip:
    def test_single_hour_equals_frame(self, env):
        store, rec, out = env
        frames = write_frames(out, rec.run_id, [1], hours=3, seed=23)
        poll_run_outputs(store, rec.run_id, str(out))
        acc = accumulate_precip(store, rec.run_id, 1, 2, 2)
        np.testing.assert_array_equal(acc, frames[1].grids["precip"].astype(np.float64))

    def test_full_horizon_point_telescopes(self, env):
        store, rec, out = env
        frames = write_frames(out, rec.run_id, [1], hours=6, seed=29)
        poll_run_outputs(store, rec.run_id, str(out))
        value = accumulate_precip(store, rec.run_id, 1, 1, 6, spatial=("point", 2, 3))
        expected = sum(float(f.grids["precip"][3, 2]) for f in frames)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_window_domain_max_matches_brute_force(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=30, seed=31)
        poll_run_outputs(store, rec.run_id, str(out))
        got = accumulate_precip(store, rec.run_id, 1, 24, 30, spatial="max")
        raw = [read_frame(os.path.join(out, n)) for n in sorted(os.listdir(out))]
        acc = np.zeros((10, 12))
        for f in sorted(raw, key=lambda f: f.step_hour):
            if 24 <= f.step_hour <= 30:
                acc += f.grids["precip"].astype(np.float64)
        assert got == acc.max()

    def test_spatial_reduction_after_accumulation(self, env):
        store, rec, out = env
        # hour 1 rains at point A, hour 2 at point B: max-of-accumulation at
        # a single point must be lower than accumulated per-hour maxima.
        from wxbench.frameio import write_frame

        f1 = crafted_frame(rec.run_id, 1, 1)
        f1.grids["precip"][2, 2] = 10.0
        f2 = crafted_frame(rec.run_id, 1, 2)
        f2.grids["precip"][5, 5] = 10.0
        write_frame(f1, str(out))
        write_frame(f2, str(out))
        poll_run_outputs(store, rec.run_id, str(out))
        assert accumulate_precip(store, rec.run_id, 1, 1, 2, spatial="max") == 10.0

    def test_range_not_ingested(self, env):
        store, rec, out = env
        write_frames(out, rec.run_id, [1], hours=3)
        poll_run_outputs(store, rec.run_id, str(out))
        with pytest.raises(errors.RangeNotIngested):
            accumulate_precip(store, rec.run_id, 1, 2, 5)
        with pytest.raises(errors.RangeNotIngested):
            accumulate_precip(store, rec.run_id, 1, 0, 2)
