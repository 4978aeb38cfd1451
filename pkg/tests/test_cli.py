import json
import os

import pytest

from wxbench.cli import main
from wxbench.engine import Engine, EngineConfig

from conftest import make_config, make_root


@pytest.fixture
def workdir(tmp_path):
    return tmp_path


def config_file(tmp_path, hours=24, **kw):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(make_config([make_root(nx=24, ny=20)], hours=hours, **kw).to_dict()))
    return str(path)


def data_dir(tmp_path):
    return str(tmp_path / "data")


class TestRunCommand:
    def test_minimal_run_reports_dag1_and_frames(self, workdir, capsys):
        code = main(["run", "--config", config_file(workdir), "--data-dir", data_dir(workdir), "--no-pace"])
        out = capsys.readouterr().out
        assert code == 0
        assert "dag_id: 1" in out
        assert "frames ingested: 24" in out
        assert "status: success" in out

    def test_rerun_as_child_reports_dag6(self, workdir, capsys):
        cfg = config_file(workdir)
        dd = data_dir(workdir)
        assert main(["run", "--config", cfg, "--data-dir", dd, "--no-pace"]) == 0
        first_out = capsys.readouterr().out
        parent_id = first_out.split("run_id: ")[1].split()[0]
        alt = json.loads(open(cfg).read())
        alt["physics"]["cumulus"] = "Grell"
        alt_path = workdir / "child.json"
        alt_path.write_text(json.dumps(alt))
        assert main(["run", "--config", str(alt_path), "--data-dir", dd, "--parent", parent_id, "--no-pace"]) == 0
        out = capsys.readouterr().out
        assert "dag_id: 6" in out
        assert "reused from run" in out

    def test_malformed_json_exits_2(self, workdir, capsys):
        bad = workdir / "bad.json"
        bad.write_text("{nope")
        assert main(["run", "--config", str(bad), "--data-dir", data_dir(workdir)]) == 2
        err = capsys.readouterr().err
        assert json.loads(err)["error"] == "InvalidConfig"

    def test_invalid_nesting_exits_2(self, workdir):
        cfg = make_config([make_root(nx=24, ny=20)], hours=24).to_dict()
        cfg["domains"][0]["nx"] = 4
        path = workdir / "bad.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(path), "--data-dir", data_dir(workdir)]) == 2

    def test_unknown_parent_exits_4(self, workdir):
        assert main([
            "run", "--config", config_file(workdir), "--data-dir", data_dir(workdir), "--parent", "99",
        ]) == 4

    def test_unknown_flag_exits_2(self, workdir):
        assert main(["run", "--config", "x", "--frobnicate"]) == 2


class TestExportCommand:
    @pytest.fixture
    def populated(self, workdir):
        dd = data_dir(workdir)
        cfg = config_file(workdir, hours=12)
        assert main(["run", "--config", cfg, "--data-dir", dd, "--no-pace"]) == 0
        # duplicate configuration: identical frames, so projection collapses
        assert main(["run", "--config", cfg, "--data-dir", dd, "--no-pace"]) == 0
        return dd

    def test_series_export_is_byte_stable(self, populated, workdir):
        out1, out2 = str(workdir / "a.csv"), str(workdir / "b.csv")
        base = ["export", "--kind", "series", "--data-dir", populated, "--run", "1",
                "--domain", "1", "--field", "t2", "--agg", "avg"]
        assert main(base + ["--out", out1]) == 0
        assert main(base + ["--out", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()
        lines = open(out1).read().strip().splitlines()
        assert lines[0] == "hour,value"
        assert len(lines) == 13

    def test_series_matches_store(self, populated, workdir):
        out = str(workdir / "s.csv")
        assert main(["export", "--kind", "series", "--data-dir", populated, "--run", "1",
                     "--domain", "1", "--field", "precip", "--agg", "max", "--out", out]) == 0
        engine = Engine(EngineConfig(data_dir=populated))
        try:
            from wxbench.ingest import query_series

            hours, values = query_series(engine.store, 1, 1, "precip", "max")
        finally:
            engine.shutdown()
        rows = [line.split(",") for line in open(out).read().strip().splitlines()[1:]]
        assert [int(r[0]) for r in rows] == hours
        assert [float(r[1]) for r in rows] == values

    def test_projection_of_duplicates_is_origin(self, populated, workdir):
        out = str(workdir / "proj.csv")
        assert main(["export", "--kind", "projection", "--data-dir", populated,
                     "--project", "1", "--domain", "1", "--out", out]) == 0
        rows = [line.split(",") for line in open(out).read().strip().splitlines()[1:]]
        assert len(rows) == 2
        for row in rows:
            assert abs(float(row[2])) < 1e-9 and abs(float(row[3])) < 1e-9

    def test_sunburst_export(self, populated, workdir):
        out = str(workdir / "sb.csv")
        assert main(["export", "--kind", "sunburst", "--data-dir", populated, "--run", "1",
                     "--domain", "1", "--agg", "avg", "--out", out]) == 0
        lines = open(out).read().strip().splitlines()
        assert lines[0] == "kind,index,t0,t1,value"
        kinds = [line.split(",")[0] for line in lines[1:]]
        assert kinds.count("h1") == 12 and kinds.count("full") == 1

    def test_map_export_is_geojson(self, populated, workdir):
        out = str(workdir / "map.geojson")
        assert main(["export", "--kind", "map", "--data-dir", populated, "--run", "1",
                     "--domain", "1", "--field", "t2", "--hour", "6", "--out", out]) == 0
        payload = json.loads(open(out).read())
        assert payload["type"] == "FeatureCollection"
        assert all(f["geometry"]["type"] == "MultiLineString" for f in payload["features"])

    def test_unknown_run_exits_4(self, populated, workdir):
        assert main(["export", "--kind", "series", "--data-dir", populated, "--run", "42",
                     "--domain", "1", "--field", "t2", "--out", str(workdir / "x.csv")]) == 4


class TestDemoCommand:
    def test_demo_requires_empty_data_dir(self, workdir, capsys):
        dd = data_dir(workdir)
        engine = Engine(EngineConfig(data_dir=dd))
        engine.create_project("occupied")
        engine.shutdown()
        assert main(["demo", "--data-dir", dd]) == 2
        err = capsys.readouterr().err
        assert json.loads(err)["error"] == "DataDirNotEmpty"
