import threading

import numpy as np
import pytest

from wxbench import surrogate
from wxbench.errors import AbortRequested, NumericFailure
from wxbench.frameio import FIELD_NAMES, encode_frame
from wxbench.icbc import boundary_series
from wxbench.runconfig import PhysicsSelection
from wxbench.surrogate import (
    CONV850_SCALE,
    DIV300_SCALE,
    KINDEX_RH,
    KINDEX_T,
    ModelState,
    W500_SCALE,
    derive_fields,
    qsat,
    run_model,
)

from conftest import make_child, make_config, make_root


def model_inputs(config, geo_seed=42):
    """Metgrid/real arrays wired exactly as the pipeline tasks build them."""
    meta, arrays = boundary_series(config.icbc_source, config.start, config.end, config.root_domain)
    domains = list(config.domains)
    terrain = surrogate.terrain_maps(domains, geo_seed)
    q0, t0 = surrogate.initial_fields(domains, terrain, meta["t_mean"], meta["q_mean"], meta["wind_seed"])
    met_arrays = {"bq": arrays["bq"], "bt": arrays["bt"]}
    real_arrays = {}
    for d in domains:
        met_arrays[f"msrc_d{d.domain_id}"] = surrogate.moisture_source(terrain[d.domain_id])
        real_arrays[f"q_d{d.domain_id}"] = surrogate.smooth_pass(q0[d.domain_id])
        real_arrays[f"t_d{d.domain_id}"] = surrogate.smooth_pass(t0[d.domain_id])
    return meta, met_arrays, real_arrays


def random_state(nx=16, ny=12, seed=5, mp_gain=13.0):
    rng = np.random.default_rng(seed)
    return ModelState(
        q=rng.uniform(5, 18, (ny, nx)).astype(np.float32),
        t=rng.uniform(15, 30, (ny, nx)).astype(np.float32),
        u=rng.uniform(-1, 1, (ny, nx)).astype(np.float32),
        v=rng.uniform(-1, 1, (ny, nx)).astype(np.float32),
        mp_gain=mp_gain,
    )


def finite_difference_divergence(u, v):
    """Independent scalar recomputation: central interior, one-sided edges."""
    ny, nx = u.shape
    div = np.zeros((ny, nx))
    for j in range(ny):
        for i in range(nx):
            if 0 < i < nx - 1:
                dudx = (float(u[j, i + 1]) - float(u[j, i - 1])) / 2.0
            elif i == 0:
                dudx = float(u[j, 1]) - float(u[j, 0])
            else:
                dudx = float(u[j, nx - 1]) - float(u[j, nx - 2])
            if 0 < j < ny - 1:
                dvdy = (float(v[j + 1, i]) - float(v[j - 1, i])) / 2.0
            elif j == 0:
                dvdy = float(v[1, i]) - float(v[0, i])
            else:
                dvdy = float(v[ny - 1, i]) - float(v[ny - 2, i])
            div[j, i] = dudx + dvdy
    return div


class TestDeriveFields:
    def test_uniform_dry_state_has_zero_precip(self):
        ny, nx = 10, 12
        state = ModelState(
            q=np.full((ny, nx), 5.0, np.float32),
            t=np.full((ny, nx), 25.0, np.float32),
            u=np.zeros((ny, nx), np.float32),
            v=np.zeros((ny, nx), np.float32),
            mp_gain=13.0,
        )
        fields = derive_fields(state)
        assert (fields["precip"] == 0).all()

    def test_supersaturated_cell_rains_exactly_there(self):
        state = random_state()
        state.q = np.full_like(state.q, 4.0)
        sat = qsat(state.t)
        state.q[4, 7] = sat[4, 7] + 2.0
        precip = derive_fields(state)["precip"]
        assert precip[4, 7] > 0
        mask = np.zeros_like(precip, dtype=bool)
        mask[4, 7] = True
        assert (precip[~mask] == 0).all()

    def test_divergence_pair_matches_finite_difference_oracle(self):
        state = random_state()
        fields = derive_fields(state)
        oracle = finite_difference_divergence(state.u, state.v)
        np.testing.assert_allclose(fields["div300"] / DIV300_SCALE, oracle, atol=1e-6)
        np.testing.assert_allclose(fields["conv850"] / -CONV850_SCALE, oracle, atol=1e-6)

    def test_w500_matches_moisture_convergence_oracle(self):
        state = random_state(seed=9)
        fields = derive_fields(state)
        oracle = finite_difference_divergence(state.q * state.u, state.q * state.v)
        np.testing.assert_allclose(fields["w500"], -W500_SCALE * oracle, atol=1e-4)

    def test_kindex_is_affine_in_t2_and_rh(self):
        state = random_state(seed=11)
        fields = derive_fields(state)
        expected = KINDEX_T * fields["t2"] + KINDEX_RH * fields["rh850"]
        np.testing.assert_allclose(fields["kindex"], expected, atol=1e-4)

    def test_rh_clamped(self):
        state = random_state()
        state.q = state.q * 4  # force supersaturation
        rh = derive_fields(state)["rh850"]
        assert rh.max() <= 100.0 and rh.min() >= 0.0


class TestRunModel:
    def test_frame_count_and_order_two_domains(self):
        root = make_root(nx=30, ny=24)
        child = make_child(root, 8, 7, 21, 16)
        config = make_config([root, child], hours=10)
        meta, met, real = model_inputs(config)
        frames = []
        status = run_model(config, 7, meta, met, real, frames.append)
        assert status == "success"
        assert len(frames) == 2 * 10
        hours_by_domain = {}
        for frame in frames:
            hours_by_domain.setdefault(frame.domain_id, []).append(frame.step_hour)
        for hours in hours_by_domain.values():
            assert hours == sorted(hours)  # never written before the prior hour
        # every frame encodes (validates invariants as a side effect)
        for frame in frames:
            encode_frame(frame)

    def test_bit_deterministic_and_pacing_independent(self):
        config = make_config([make_root(nx=24, ny=20)], hours=5)
        meta, met, real = model_inputs(config)
        runs = []
        for pacing in (0, 10):
            frames = []
            run_model(config, 3, meta, met, real, frames.append, pacing_ms=pacing)
            runs.append([encode_frame(f) for f in frames])
        assert runs[0] == runs[1]

    def test_every_scheme_changes_some_frame(self):
        config = make_config([make_root(nx=24, ny=20)], hours=6)
        meta, met, real = model_inputs(config)

        def run_with(physics):
            frames = []
            run_model(config.with_physics(physics), 1, meta, met, real, frames.append)
            return [encode_frame(f) for f in frames]

        base = run_with(PhysicsSelection())
        alternates = {
            "microphysics": "Thompson",
            "cumulus": "BMJ",
            "land_surface": "RUC",
            "surface_layer": "Eta",
            "pbl": "MYJ",
        }
        for process, scheme in alternates.items():
            changed = run_with(PhysicsSelection(**{process: scheme}))
            assert changed != base, f"{process} selection is a dead parameter"

    def test_abort_leaves_whole_hours(self):
        root = make_root(nx=24, ny=20)
        child = make_child(root, 7, 6, 16, 13)
        config = make_config([root, child], hours=12)
        meta, met, real = model_inputs(config)
        abort = threading.Event()
        frames = []

        def sink(frame):
            frames.append(frame)
            if frame.step_hour == 4 and frame.domain_id == child.domain_id:
                abort.set()

        with pytest.raises(AbortRequested):
            run_model(config, 1, meta, met, real, sink, abort=abort)
        by_domain = {}
        for frame in frames:
            by_domain.setdefault(frame.domain_id, set()).add(frame.step_hour)
        assert by_domain == {1: {1, 2, 3, 4}, 2: {1, 2, 3, 4}}

    def test_non_finite_state_raises(self):
        config = make_config([make_root(nx=24, ny=20)], hours=3)
        meta, met, real = model_inputs(config)
        real = dict(real)
        bad = real["q_d1"].copy()
        bad[5, 5] = np.nan
        real["q_d1"] = bad
        with pytest.raises(NumericFailure):
            run_model(config, 1, meta, met, real, lambda f: None)

    def test_icbc_source_changes_output(self):
        config_a = make_config([make_root(nx=24, ny=20)], hours=4, source="GFS")
        config_b = make_config([make_root(nx=24, ny=20)], hours=4, source="ECMWF")
        out = []
        for config in (config_a, config_b):
            meta, met, real = model_inputs(config)
            frames = []
            run_model(config, 1, meta, met, real, frames.append)
            out.append([encode_frame(f) for f in frames])
        assert out[0] != out[1]
