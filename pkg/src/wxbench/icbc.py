"""Synthetic initial/boundary condition series for the root domain.

Stands in for downloading global-model data: each named source maps to a
deterministic pseudo-random series keyed by a content hash of (source,
start, end, root geometry), so repeated calls are byte-identical and any
change to those inputs yields a different series. Values are band-limited
noise around a source-specific climate plus a diurnal cycle, sampled on
the root grid's boundary ring once per simulated hour.
"""

from __future__ import annotations

from datetime import datetime

import numpy as np

from .errors import HorizonTooLong, InvalidInterval
from .frameio import write_blob
from .griddef import DomainSpec
from .runconfig import MAX_HORIZON_HOURS, content_digest, format_utc

# Source-specific climate offsets (°C, g/kg) so different ICBC choices
# produce visibly different weather.
_SOURCE_CLIMATE = {
    "GFS": (24.0, 11.0),
    "ECMWF": (22.5, 10.2),
    "SYNTH-A": (20.0, 8.5),
    "SYNTH-B": (27.0, 13.5),
}

_RING_MODES = 4


def ring_indices(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """(i, j) index arrays tracing the grid boundary counter-clockwise.

    Order: bottom row left-to-right, right column upward, top row
    right-to-left, left column downward; length 2*(nx + ny) - 4.
    """
    bottom_i = np.arange(nx)
    bottom_j = np.zeros(nx, dtype=int)
    right_i = np.full(ny - 1, nx - 1)
    right_j = np.arange(1, ny)
    top_i = np.arange(nx - 2, -1, -1)
    top_j = np.full(nx - 1, ny - 1)
    left_i = np.zeros(ny - 2, dtype=int)
    left_j = np.arange(ny - 2, 0, -1)
    return (
        np.concatenate([bottom_i, right_i, top_i, left_i]),
        np.concatenate([bottom_j, right_j, top_j, left_j]),
    )


def horizon_hours(start: datetime, end: datetime) -> int:
    """Whole-hour horizon; raises InvalidInterval / HorizonTooLong."""
    seconds = (end - start).total_seconds()
    if seconds <= 0:
        raise InvalidInterval("end must be after start")
    if seconds % 3600 != 0:
        raise InvalidInterval("horizon must be a whole number of hours")
    hours = int(seconds // 3600)
    if hours > MAX_HORIZON_HOURS:
        raise HorizonTooLong(f"{hours} h exceeds the {MAX_HORIZON_HOURS} h maximum")
    return hours


def series_seed(source: str, start: datetime, end: datetime, root: DomainSpec) -> int:
    digest = content_digest(
        {
            "source": source,
            "start": format_utc(start),
            "end": format_utc(end),
            "root": {
                "resolution_m": root.resolution_m,
                "center_lon": root.center_lon,
                "center_lat": root.center_lat,
                "nx": root.nx,
                "ny": root.ny,
            },
        }
    )
    return int(digest[:16], 16)


def boundary_series(
    source: str, start: datetime, end: datetime, root: DomainSpec
) -> tuple[dict, dict[str, np.ndarray]]:
    """Hourly boundary values on the root ring plus initial-state summary.

    Returns (meta, arrays) with arrays ``bt``/``bq`` of shape (H, ring)
    holding one record per simulated hour 1..H, and ``init_t_ring``/
    ``init_q_ring`` for the analysis time.
    """
    hours = horizon_hours(start, end)
    t_mean, q_mean = _SOURCE_CLIMATE[source]
    rng = np.random.default_rng(series_seed(source, start, end, root))

    ring = 2 * (root.nx + root.ny) - 4
    s = np.arange(ring, dtype=np.float64) / ring  # position around the ring
    # Records for hours 0..H; record 0 is the analysis (initial) time.
    t_axis = np.arange(hours + 1, dtype=np.float64)[:, None]
    start_hour = start.hour + start.minute / 60.0

    def field(mean: float, noise_amp: float, diurnal_amp: float) -> np.ndarray:
        vals = np.full((hours + 1, ring), mean, dtype=np.float64)
        for _ in range(_RING_MODES):
            wavenum = rng.integers(1, 6)
            omega = rng.uniform(0.02, 0.25)  # cycles per hour
            amp = noise_amp * rng.uniform(0.3, 1.0)
            phase = rng.uniform(0, 2 * np.pi)
            vals += amp * np.sin(2 * np.pi * (wavenum * s[None, :] + omega * t_axis) + phase)
        vals += diurnal_amp * np.sin(2 * np.pi * (t_axis + start_hour) / 24.0 + rng.uniform(0, 2 * np.pi))
        return vals

    bt = field(t_mean, noise_amp=2.2, diurnal_amp=3.0)
    bq = np.clip(field(q_mean, noise_amp=2.2, diurnal_amp=1.0), 0.5, None)
    wind_seed = int(rng.integers(0, 2**62))

    meta = {
        "source": source,
        "start": format_utc(start),
        "end": format_utc(end),
        "hours": hours,
        "nx": root.nx,
        "ny": root.ny,
        "start_hour": start_hour,
        "t_mean": t_mean,
        "q_mean": q_mean,
        "wind_seed": wind_seed,
    }
    arrays = {
        "bt": bt[1:].astype(np.float32),
        "bq": bq[1:].astype(np.float32),
        "init_t_ring": bt[0].astype(np.float32),
        "init_q_ring": bq[0].astype(np.float32),
    }
    return meta, arrays


def generate_icbc(source: str, start: datetime, end: datetime, root: DomainSpec, path: str) -> str:
    """Write the boundary series artifact; byte-identical for equal inputs."""
    meta, arrays = boundary_series(source, start, end, root)
    return write_blob(path, "icbc", meta, arrays)
