"""Deterministic surrogate for the numeric stages of a limited-area run.

Not a physical model: a cheap 2-D advection-diffusion system over
(humidity, temperature) whose only jobs are to be bit-deterministic for a
given configuration, sensitive to every physics scheme choice and to the
boundary-data source, and fast enough that full ensembles run in seconds.
Per simulated hour and domain it derives the seven output fields and
emits one frame, coarse domains before their nests, so the rest of the
system (caching, ingestion, analytics, monitoring) can be exercised
exactly as it would be against a real model.

All state arrays are float32 with a fixed operation order, so identical
inputs reproduce identical frame bytes regardless of pacing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AbortRequested, NumericFailure
from .frameio import FieldFrame
from .griddef import DomainSpec
from .icbc import ring_indices
from .runconfig import RunConfig

F32 = np.float32

#: Substeps per simulated hour; keeps upwind advection CFL-stable.
SUBSTEPS = 3

# Saturation humidity (g/kg) as a function of temperature (°C).
QSAT_BASE = 4.0
QSAT_RATE = 0.055

# Field derivation scales, sized so case-study style thresholds (40 mm/h,
# 30e-5/s divergence, 5 m/s updraft, K-index 27 °C) are crossed sometimes
# but not everywhere.
DIV300_SCALE = 150.0   # cell-divergence -> 1e-5/s at the upper level
CONV850_SCALE = 110.0  # same, opposite sign, at the lower level
W500_SCALE = 0.7       # moisture convergence -> m/s
KINDEX_T = 0.8
KINDEX_RH = 0.12

RAIN_REMOVAL = 0.9     # fraction of saturation excess removed after raining
LATENT_WARMING = 0.06  # °C per g/kg of rained-out excess

# Per-scheme surrogate coefficients. Labels follow common WRF scheme names
# but carry no physical meaning here; each process must influence the
# output so no configuration knob is dead.
MICROPHYSICS_GAIN = {"Kessler": 9.0, "Lin": 11.0, "WSM6": 13.0, "Thompson": 15.0}
CUMULUS_PARAMS = {"KF": (0.93, 2.2), "BMJ": (0.97, 1.2), "Grell": (0.95, 3.0)}  # (trigger, pump rate)
LAND_SURFACE_FLUX = {"Noah": 0.7, "RUC": 1.05, "TD": 1.4}      # moisture source multiplier
SURFACE_LAYER_COUPLING = {"MM5": 0.10, "Eta": 0.16, "MYNN": 0.22}  # T relaxation per hour
PBL_DIFFUSION = {"YSU": 0.10, "MYJ": 0.16, "MYNN": 0.22}       # Laplacian coefficient

_FLOW_MODES = 3
_TERRAIN_MODES = 5
_INIT_MODES = 4
_FLOW_SPEED = 1.3      # max |u|, cells per hour
_MERIDIONAL_T_SPAN = 5.0
_TERRAIN_LAPSE = 2.5
_MOISTURE_RATE = 1.0   # g/kg per hour over the wettest surface


def qsat(t: np.ndarray) -> np.ndarray:
    return QSAT_BASE * np.exp(np.float32(QSAT_RATE) * t)


# --- static geography -------------------------------------------------------

def root_unit_coords(domains: list[DomainSpec]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-domain meshes of each grid point's position in root units [0, 1].

    Nest positions compose exactly through integer offsets and ratios, so
    every domain samples the same analytic geography consistently.
    """
    frames: dict[int, tuple[float, float, float]] = {}
    coords: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    root = domains[0]
    for d in domains:
        if d.is_root:
            frames[d.domain_id] = (0.0, 0.0, 1.0)
        else:
            ox, oy, scale = frames[d.parent_id]
            frames[d.domain_id] = (ox + scale * d.parent_i_off, oy + scale * d.parent_j_off, scale / d.nesting_ratio)
        ox, oy, scale = frames[d.domain_id]
        gx = (ox + scale * np.arange(d.nx, dtype=np.float64)) / (root.nx - 1)
        gy = (oy + scale * np.arange(d.ny, dtype=np.float64)) / (root.ny - 1)
        coords[d.domain_id] = np.meshgrid(gx, gy)
    return coords


def _mode_field(gx: np.ndarray, gy: np.ndarray, rng: np.random.Generator, modes: int, amp: float) -> np.ndarray:
    out = np.zeros_like(gx)
    for k in range(modes):
        p = rng.integers(1, 5)
        q = rng.integers(1, 5)
        phase = rng.uniform(0, 2 * np.pi)
        out += (amp / (k + 1)) * np.sin(2 * np.pi * (p * gx + q * gy) + phase)
    return out


def terrain_maps(domains: list[DomainSpec], seed: int) -> dict[int, np.ndarray]:
    """Smooth synthetic terrain in [-1, 1]-ish units, coherent across nests."""
    coords = root_unit_coords(domains)
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 101])
    params = [
        (rng.integers(1, 5), rng.integers(1, 5), rng.uniform(0, 2 * np.pi), 1.0 / (k + 1))
        for k in range(_TERRAIN_MODES)
    ]
    out = {}
    for d in domains:
        gx, gy = coords[d.domain_id]
        field = np.zeros_like(gx)
        for p, q, phase, a in params:
            field += a * np.sin(2 * np.pi * (p * gx + q * gy) + phase)
        out[d.domain_id] = field.astype(F32)
    return out


def moisture_source(terrain: np.ndarray) -> np.ndarray:
    """Surface moisture availability in [0, 1]; valleys are wetter."""
    return ((1.0 - np.tanh(1.5 * terrain.astype(np.float64))) / 2.0).astype(F32)


def initial_fields(
    domains: list[DomainSpec],
    terrain: dict[int, np.ndarray],
    t_mean: float,
    q_mean: float,
    wind_seed: int,
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Analysis-time humidity/temperature grids for every domain."""
    coords = root_unit_coords(domains)
    rng = np.random.default_rng([wind_seed & 0x7FFFFFFF, 17])
    q0: dict[int, np.ndarray] = {}
    t0: dict[int, np.ndarray] = {}
    for d in domains:
        gx, gy = coords[d.domain_id]
        msrc = moisture_source(terrain[d.domain_id]).astype(np.float64)
        q = q_mean + _mode_field(gx, gy, rng, _INIT_MODES, 1.6) + 1.2 * (msrc - 0.5)
        t = (
            t_mean
            + _MERIDIONAL_T_SPAN * (0.5 - gy)
            + _mode_field(gx, gy, rng, _INIT_MODES, 1.1)
            - _TERRAIN_LAPSE * terrain[d.domain_id].astype(np.float64)
        )
        q0[d.domain_id] = np.clip(q, 0.5, None).astype(F32)
        t0[d.domain_id] = t.astype(F32)
    return q0, t0


# --- flow field ---------------------------------------------------------

class _FlowField:
    """Analytic, slowly rotating wind components in local cell units/hour.

    Spatial phases are precomputed per mode; evaluation at a time only
    costs one sine per mode.
    """

    def __init__(self, wind_seed: int, gx: np.ndarray, gy: np.ndarray):
        rng = np.random.default_rng([wind_seed & 0x7FFFFFFF, 23])
        self._modes: list[list[tuple[float, np.ndarray, float]]] = []
        for _component in range(2):
            modes = []
            for k in range(_FLOW_MODES):
                amp = _FLOW_SPEED * 0.9 / (2 ** (k + 1) if k < _FLOW_MODES - 1 else 2 ** (_FLOW_MODES - 1))
                p = float(rng.integers(1, 4))
                q = float(rng.integers(1, 4))
                omega = rng.uniform(0.05, 0.30)
                phase = rng.uniform(0, 2 * np.pi)
                modes.append((amp, 2 * np.pi * (p * gx + q * gy) + phase, 2 * np.pi * omega))
            self._modes.append(modes)

    def at(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for modes in self._modes:
            comp = np.zeros_like(modes[0][1])
            for amp, spatial, omega in modes:
                comp += amp * np.sin(spatial + omega * tau)
            out.append(comp.astype(F32))
        return out[0], out[1]


# --- field derivation -------------------------------------------------------

@dataclass
class ModelState:
    """Prognostic state of one domain at one instant."""

    q: np.ndarray  # humidity, g/kg
    t: np.ndarray  # temperature, °C
    u: np.ndarray  # zonal wind, cells/hour
    v: np.ndarray  # meridional wind, cells/hour
    mp_gain: float


def _ddx(f: np.ndarray) -> np.ndarray:
    out = np.empty_like(f)
    out[:, 1:-1] = (f[:, 2:] - f[:, :-2]) * F32(0.5)
    out[:, 0] = f[:, 1] - f[:, 0]
    out[:, -1] = f[:, -1] - f[:, -2]
    return out


def _ddy(f: np.ndarray) -> np.ndarray:
    out = np.empty_like(f)
    out[1:-1, :] = (f[2:, :] - f[:-2, :]) * F32(0.5)
    out[0, :] = f[1, :] - f[0, :]
    out[-1, :] = f[-1, :] - f[-2, :]
    return out


def derive_fields(state: ModelState) -> dict[str, np.ndarray]:
    """The seven output grids as a pure function of the model state.

    precip is the rained-out saturation excess scaled by the microphysics
    gain; the divergence pair reads the internal wind with opposite signs
    at the two levels; w500 follows moisture convergence; kindex is an
    affine blend of t2 and rh850.
    """
    sat = qsat(state.t)
    excess = np.maximum(state.q - sat, F32(0.0))
    precip = excess * F32(state.mp_gain)
    rh850 = np.clip(state.q / sat * F32(100.0), F32(0.0), F32(100.0))
    div = _ddx(state.u) + _ddy(state.v)
    moist_div = _ddx(state.q * state.u) + _ddy(state.q * state.v)
    return {
        "precip": precip.astype(F32),
        "t2": state.t.astype(F32),
        "div300": (F32(DIV300_SCALE) * div).astype(F32),
        "w500": (F32(-W500_SCALE) * moist_div).astype(F32),
        "conv850": (F32(-CONV850_SCALE) * div).astype(F32),
        "kindex": (F32(KINDEX_T) * state.t + F32(KINDEX_RH) * rh850).astype(F32),
        "rh850": rh850.astype(F32),
    }


# --- integration --------------------------------------------------------

def _shift(f: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Shift with edge clamping (no wraparound)."""
    if axis == 1:
        return np.concatenate([f[:, 1:], f[:, -1:]], axis=1) if step > 0 else np.concatenate([f[:, :1], f[:, :-1]], axis=1)
    return np.concatenate([f[1:, :], f[-1:, :]], axis=0) if step > 0 else np.concatenate([f[:1, :], f[:-1, :]], axis=0)


def _advect(f: np.ndarray, u: np.ndarray, v: np.ndarray, dt: np.float32) -> np.ndarray:
    dfdx = np.where(u > 0, f - _shift(f, 1, -1), _shift(f, 1, +1) - f)
    dfdy = np.where(v > 0, f - _shift(f, 0, -1), _shift(f, 0, +1) - f)
    return f - dt * (u * dfdx + v * dfdy)


def _laplacian(f: np.ndarray) -> np.ndarray:
    return _shift(f, 1, 1) + _shift(f, 1, -1) + _shift(f, 0, 1) + _shift(f, 0, -1) - F32(4.0) * f


def smooth_pass(f: np.ndarray) -> np.ndarray:
    """One light smoothing sweep; stands in for vertical interpolation."""
    f = f.astype(F32)
    return f + F32(0.125) * _laplacian(f)


def _bilinear(arr: np.ndarray, fi: np.ndarray, fj: np.ndarray) -> np.ndarray:
    i0 = np.clip(np.floor(fi).astype(int), 0, arr.shape[1] - 2)
    j0 = np.clip(np.floor(fj).astype(int), 0, arr.shape[0] - 2)
    ti = (fi - i0).astype(np.float64)
    tj = (fj - j0).astype(np.float64)
    a = arr.astype(np.float64)
    val = (
        a[j0, i0] * (1 - ti) * (1 - tj)
        + a[j0, i0 + 1] * ti * (1 - tj)
        + a[j0 + 1, i0] * (1 - ti) * tj
        + a[j0 + 1, i0 + 1] * ti * tj
    )
    return val.astype(F32)


@dataclass
class _DomainRun:
    spec: DomainSpec
    state: ModelState
    flow: _FlowField
    t_target_base: np.ndarray  # meridional temperature profile, f32
    msrc: np.ndarray
    ring: tuple[np.ndarray, np.ndarray]
    parent_ring_coords: tuple[np.ndarray, np.ndarray] | None  # fractional parent coords of the ring


def run_model(
    config: RunConfig,
    run_id: int,
    met_meta: dict,
    met_arrays: dict[str, np.ndarray],
    real_arrays: dict[str, np.ndarray],
    frame_sink: Callable[[FieldFrame], None],
    pacing_ms: int = 0,
    abort=None,
) -> str:
    """Advance all domains hour by hour, emitting one frame per (domain, hour).

    Coarse domains step before their nests within an hour; nests read
    their boundary ring from the parent's current state. Sleeps pacing_ms
    between hours (in small slices so an abort lands promptly) and checks
    the cooperative abort flag once per simulated hour.

    Raises AbortRequested or NumericFailure; already-written frames are
    left intact either way.
    """
    hours = int(met_meta["hours"])
    wind_seed = int(met_meta["wind_seed"])
    start_hour = float(met_meta["start_hour"])
    coords = root_unit_coords(list(config.domains))
    mp_gain = MICROPHYSICS_GAIN[config.physics.microphysics]
    cum_trigger, cum_rate = CUMULUS_PARAMS[config.physics.cumulus]
    lsm_flux = LAND_SURFACE_FLUX[config.physics.land_surface]
    sfc_coupling = SURFACE_LAYER_COUPLING[config.physics.surface_layer]
    pbl_k = PBL_DIFFUSION[config.physics.pbl]

    t_mean = float(met_meta["t_mean"])
    diurnal_amp = F32(2.5)
    dt = F32(1.0 / SUBSTEPS)

    domains: list[_DomainRun] = []
    by_id: dict[int, _DomainRun] = {}
    for spec in config.domains:
        did = spec.domain_id
        gx, gy = coords[did]
        ring_i, ring_j = ring_indices(spec.nx, spec.ny)
        parent_coords = None
        if not spec.is_root:
            ratio = float(spec.nesting_ratio)
            parent_coords = (
                spec.parent_i_off + ring_i / ratio,
                spec.parent_j_off + ring_j / ratio,
            )
        profile = (t_mean + _MERIDIONAL_T_SPAN * (0.5 - gy)).astype(F32)
        dom = _DomainRun(
            spec=spec,
            state=ModelState(
                q=real_arrays[f"q_d{did}"].copy(),
                t=real_arrays[f"t_d{did}"].copy(),
                u=np.zeros((spec.ny, spec.nx), F32),
                v=np.zeros((spec.ny, spec.nx), F32),
                mp_gain=mp_gain,
            ),
            flow=_FlowField(wind_seed + did, gx, gy),
            t_target_base=profile,
            msrc=met_arrays[f"msrc_d{did}"],
            ring=(ring_i, ring_j),
            parent_ring_coords=parent_coords,
        )
        domains.append(dom)
        by_id[did] = dom

    bq = met_arrays["bq"]
    bt = met_arrays["bt"]

    for hour in range(1, hours + 1):
        if abort is not None and abort.is_set():
            raise AbortRequested(f"aborted before hour {hour}")
        for dom in domains:
            st = dom.state
            ring_i, ring_j = dom.ring
            if dom.spec.is_root:
                st.q[ring_j, ring_i] = bq[hour - 1]
                st.t[ring_j, ring_i] = bt[hour - 1]
            else:
                parent = by_id[dom.spec.parent_id].state
                fi, fj = dom.parent_ring_coords
                st.q[ring_j, ring_i] = _bilinear(parent.q, fi, fj)
                st.t[ring_j, ring_i] = _bilinear(parent.t, fi, fj)

            st.u, st.v = dom.flow.at(float(hour))
            for sub in range(1, SUBSTEPS + 1):
                tau = (hour - 1) + sub / SUBSTEPS
                st.q = _advect(st.q, st.u, st.v, dt)
                st.t = _advect(st.t, st.u, st.v, dt)
                st.q = st.q + dt * F32(pbl_k) * _laplacian(st.q)
                st.t = st.t + dt * F32(pbl_k * 0.5) * _laplacian(st.t)
                diurnal = diurnal_amp * F32(np.sin(2 * np.pi * (tau + start_hour) / 24.0))
                st.t = st.t + dt * F32(sfc_coupling) * (dom.t_target_base + diurnal - st.t)
                st.q = st.q + dt * F32(lsm_flux * _MOISTURE_RATE) * dom.msrc
                instability = st.q / qsat(st.t)
                st.q = st.q + dt * F32(cum_rate) * np.maximum(instability - F32(cum_trigger), F32(0.0))
                st.q = np.maximum(st.q, F32(0.0))

            if not (np.isfinite(st.q).all() and np.isfinite(st.t).all()):
                raise NumericFailure(f"non-finite state in domain {dom.spec.domain_id} at hour {hour}")

            fields = derive_fields(st)
            frame_sink(
                FieldFrame(
                    run_id=run_id,
                    domain_id=dom.spec.domain_id,
                    step_hour=hour,
                    nx=dom.spec.nx,
                    ny=dom.spec.ny,
                    grids=fields,
                )
            )
            # Rain out most of the saturation excess, warming the column.
            excess = np.maximum(st.q - qsat(st.t), F32(0.0))
            st.q = st.q - F32(RAIN_REMOVAL) * excess
            st.t = st.t + F32(LATENT_WARMING) * excess

        if pacing_ms > 0 and hour < hours:
            _paced_sleep(pacing_ms, abort)

    return "success"


def _paced_sleep(pacing_ms: int, abort) -> None:
    remaining = pacing_ms / 1000.0
    while remaining > 0:
        if abort is not None and abort.is_set():
            return  # the per-hour check raises; just stop sleeping early
        step = min(0.005, remaining)
        time.sleep(step)
        remaining -= step
