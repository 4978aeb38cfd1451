import itertools
import json

import pytest

from wxbench.planner import (
    CACHEABLE_TASKS,
    CacheEntry,
    DAG_TASKS,
    TASK_ORDER,
    select_dag,
    sign_task,
    signatures,
)
from wxbench.runconfig import PhysicsSelection, RunConfig

from conftest import make_child, make_config, make_root


def entry_for(task, digest, run_id=1):
    return CacheEntry(task=task, digest=digest, run_id=run_id, exec_id=run_id, artifact_path="unused")


@pytest.fixture
def base_config():
    root = make_root()
    return make_config([root, make_child(root)], hours=24)


class TestSignatures:
    def test_physics_change_keeps_preprocessing_signatures(self, base_config):
        other = base_config.with_physics(PhysicsSelection(pbl="MYJ"))
        for task in CACHEABLE_TASKS:
            assert sign_task(task, base_config) == sign_task(task, other)

    def test_icbc_change_invalidates_downstream_only(self, base_config):
        other = RunConfig(base_config.domains, base_config.start, base_config.end, "ECMWF", base_config.physics)
        assert sign_task("geogrid", base_config) == sign_task("geogrid", other)
        for task in ("download_icbc", "ungrib", "metgrid"):
            assert sign_task(task, base_config) != sign_task(task, other)

    def test_child_domain_change_keeps_download(self, base_config):
        root = base_config.domains[0]
        other = make_config([root, make_child(root, 13, 11, 37, 29)], hours=24)
        assert sign_task("geogrid", base_config) != sign_task("geogrid", other)
        assert sign_task("download_icbc", base_config) == sign_task("download_icbc", other)
        assert sign_task("ungrib", base_config) == sign_task("ungrib", other)
        assert sign_task("metgrid", base_config) != sign_task("metgrid", other)

    def test_serialization_key_order_irrelevant(self, base_config):
        payload = base_config.to_dict()
        scrambled = json.loads(json.dumps(payload, sort_keys=True))
        other = RunConfig.from_dict(scrambled)
        for task in CACHEABLE_TASKS:
            assert sign_task(task, base_config) == sign_task(task, other)

    def test_run_scoped_tasks_never_collide(self, base_config):
        a = sign_task("wrf_sim", base_config, run_id=1)
        b = sign_task("wrf_sim", base_config, run_id=2)
        assert a != b

    def test_signatures_cover_all_tasks(self, base_config):
        sigs = signatures(base_config, run_id=9)
        assert set(sigs) == set(TASK_ORDER)


class TestSelectDag:
    # Independent statement of the expected mapping: reuse the longest
    # chained prefix {geogrid} x {download -> ungrib -> metgrid}.
    @staticmethod
    def expected_dag(geo, dl, ung, met):
        if geo and dl and ung and met:
            return 6
        if geo and dl and ung:
            return 5
        if geo and dl:
            return 4
        if geo:
            return 3
        if dl:
            return 2
        return 1

    EXPECTED_TASKS = {
        1: ("wps_setup", "geogrid", "download_icbc", "ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
        2: ("wps_setup", "geogrid", "ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
        3: ("download_icbc", "ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
        4: ("ungrib", "metgrid", "prc_setup", "real", "wrf_sim"),
        5: ("metgrid", "prc_setup", "real", "wrf_sim"),
        6: ("prc_setup", "real", "wrf_sim"),
    }

    def test_dag_constants_match_stated_sets(self):
        assert DAG_TASKS == self.EXPECTED_TASKS

    def test_truth_table_all_16_combinations(self, base_config):
        sigs = {task: sign_task(task, base_config).digest for task in CACHEABLE_TASKS}
        for bits in itertools.product([False, True], repeat=4):
            geo, dl, ung, met = bits
            index = {
                sigs[task]: entry_for(task, sigs[task])
                for task, present in zip(CACHEABLE_TASKS, bits)
                if present
            }
            plan = select_dag(base_config, index)
            assert plan.dag_id == self.expected_dag(geo, dl, ung, met), bits
            assert plan.tasks == self.EXPECTED_TASKS[plan.dag_id], bits
            # Soundness: everything not reused is regenerated by the plan.
            not_reused = set(CACHEABLE_TASKS) - set(plan.reuse)
            assert not_reused <= set(plan.tasks), bits
            assert not (set(plan.reuse) & set(plan.tasks)), bits
            # Reuse entries must match the config's own signatures.
            for task, entry in plan.reuse.items():
                assert entry.digest == sigs[task]

    def test_fresh_project_runs_everything(self, base_config):
        plan = select_dag(base_config, {})
        assert plan.dag_id == 1
        assert plan.reuse == {}

    def test_full_cache_runs_only_simulation_stage(self, base_config):
        sigs = {task: sign_task(task, base_config).digest for task in CACHEABLE_TASKS}
        index = {d: entry_for(t, d) for t, d in sigs.items()}
        plan = select_dag(base_config, index)
        assert plan.dag_id == 6
        assert plan.tasks == ("prc_setup", "real", "wrf_sim")
        assert set(plan.reuse) == set(CACHEABLE_TASKS)

    def test_ungrib_without_geogrid_maps_to_dag2(self, base_config):
        # The conservative fallback: boundary data reusable but grids changed.
        sigs = {task: sign_task(task, base_config).digest for task in CACHEABLE_TASKS}
        index = {
            sigs["download_icbc"]: entry_for("download_icbc", sigs["download_icbc"]),
            sigs["ungrib"]: entry_for("ungrib", sigs["ungrib"]),
        }
        plan = select_dag(base_config, index)
        assert plan.dag_id == 2
        assert set(plan.reuse) == {"download_icbc"}
