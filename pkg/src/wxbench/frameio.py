"""Binary containers for simulation output frames and pipeline artifacts.

Frame files (one domain x one hour of the seven output fields) are
bit-exact:

    magic "PWFRAME1" (8 bytes)
    header length, 4-byte little-endian unsigned
    UTF-8 JSON header {run_id, domain_id, step_hour, nx, ny, fields}
    seven nx*ny blocks of little-endian float32, one per field in header
    order, stored row by row (j ascending, nx values per row)

Pipeline artifacts (boundary data, interpolated fields, ...) reuse the
same layout under kind-specific magics, with the header describing named
arrays. Headers are canonical JSON so identical content yields identical
bytes. All writes go through a temp file + rename, so a reader never
observes a file that is both complete-length and half-written.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFrame
from .runconfig import canonical_json

FRAME_MAGIC = b"PWFRAME1"

#: Canonical output-field order used everywhere frames are written or read.
FIELD_NAMES = ("precip", "t2", "div300", "w500", "conv850", "kindex", "rh850")

ARTIFACT_MAGICS = {
    "geogrid": b"PWGEOG01",
    "icbc": b"PWICBC01",
    "ungrib": b"PWUNGR01",
    "metgrid": b"PWMETG01",
    "real": b"PWREAL01",
}

_LEN = struct.Struct("<I")


@dataclass
class FieldFrame:
    """One domain x one simulated hour of the seven output field grids."""

    run_id: int
    domain_id: int
    step_hour: int
    nx: int
    ny: int
    grids: dict[str, np.ndarray]  # field -> float32 array of shape (ny, nx)

    def validate(self) -> None:
        if self.step_hour < 1:
            raise CorruptFrame(f"step_hour {self.step_hour} must be >= 1")
        if set(self.grids) != set(FIELD_NAMES):
            raise CorruptFrame(f"fields {sorted(self.grids)} != {sorted(FIELD_NAMES)}")
        for name in FIELD_NAMES:
            g = self.grids[name]
            if g.shape != (self.ny, self.nx):
                raise CorruptFrame(f"{name} grid is {g.shape}, expected {(self.ny, self.nx)}")
            if not np.isfinite(g).all():
                raise CorruptFrame(f"{name} grid contains non-finite values")
        if (self.grids["precip"] < 0).any():
            raise CorruptFrame("precip contains negative values")
        rh = self.grids["rh850"]
        if (rh < 0).any() or (rh > 100).any():
            raise CorruptFrame("rh850 outside [0, 100]")


def frame_filename(domain_id: int, step_hour: int) -> str:
    return f"dom{domain_id}_t{step_hour:03d}.pwf"


def parse_frame_filename(name: str) -> tuple[int, int] | None:
    """(domain_id, step_hour) for a frame file name, else None."""
    if not (name.startswith("dom") and name.endswith(".pwf")):
        return None
    stem = name[3:-4]
    dom, sep, hour = stem.partition("_t")
    if not sep or not dom.isdigit() or not hour.isdigit():
        return None
    return int(dom), int(hour)


def encode_frame(frame: FieldFrame) -> bytes:
    frame.validate()
    header = canonical_json(
        {
            "run_id": frame.run_id,
            "domain_id": frame.domain_id,
            "step_hour": frame.step_hour,
            "nx": frame.nx,
            "ny": frame.ny,
            "fields": list(FIELD_NAMES),
        }
    ).encode("utf-8")
    parts = [FRAME_MAGIC, _LEN.pack(len(header)), header]
    for name in FIELD_NAMES:
        parts.append(np.ascontiguousarray(frame.grids[name], dtype="<f4").tobytes())
    return b"".join(parts)


def decode_frame(data: bytes) -> FieldFrame:
    """Parse a complete frame file; raises CorruptFrame on any structural problem."""
    if data[:8] != FRAME_MAGIC:
        raise CorruptFrame("bad magic")
    if len(data) < 12:
        raise CorruptFrame("truncated header length")
    (hlen,) = _LEN.unpack(data[8:12])
    if len(data) < 12 + hlen:
        raise CorruptFrame("truncated header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
        run_id = int(header["run_id"])
        domain_id = int(header["domain_id"])
        step_hour = int(header["step_hour"])
        nx, ny = int(header["nx"]), int(header["ny"])
        fields = list(header["fields"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFrame(f"bad header: {exc}") from exc
    if fields != list(FIELD_NAMES):
        raise CorruptFrame(f"unexpected field list {fields}")
    block = nx * ny * 4
    expected = 12 + hlen + block * len(fields)
    if len(data) != expected:
        raise CorruptFrame(f"payload is {len(data)} bytes, expected {expected}")
    grids = {}
    off = 12 + hlen
    for name in fields:
        arr = np.frombuffer(data[off : off + block], dtype="<f4").reshape(ny, nx)
        grids[name] = arr.copy()
        off += block
    frame = FieldFrame(run_id, domain_id, step_hour, nx, ny, grids)
    frame.validate()
    return frame


def expected_frame_size(data: bytes) -> int | None:
    """Total size a frame file with this prefix should have, if knowable yet."""
    if len(data) < 12:
        return None
    (hlen,) = _LEN.unpack(data[8:12])
    if len(data) < 12 + hlen:
        return None
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
        return 12 + hlen + int(header["nx"]) * int(header["ny"]) * 4 * 7
    except (ValueError, KeyError, TypeError):
        return None


def inspect_frame_file(path: str) -> tuple[str, FieldFrame | None, str]:
    """Classify a frame file as ('ok', frame, ''), ('partial', ...) or ('corrupt', ...).

    Partial means a well-formed prefix that is still growing (retry next
    poll); corrupt means structurally invalid content that will never
    become valid.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        return "partial", None, str(exc)
    if len(data) < 8:
        return "partial", None, "short prefix"
    if data[:8] != FRAME_MAGIC:
        return "corrupt", None, "bad magic"
    expected = expected_frame_size(data)
    if expected is None:
        if len(data) >= 12 and _LEN.unpack(data[8:12])[0] <= len(data) - 12:
            return "corrupt", None, "unparseable header"
        return "partial", None, "incomplete header"
    if len(data) < expected:
        return "partial", None, f"{len(data)}/{expected} bytes"
    try:
        return "ok", decode_frame(data), ""
    except CorruptFrame as exc:
        return "corrupt", None, str(exc)


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_frame(frame: FieldFrame, out_dir: str) -> str:
    path = os.path.join(out_dir, frame_filename(frame.domain_id, frame.step_hour))
    atomic_write(path, encode_frame(frame))
    return path


def read_frame(path: str) -> FieldFrame:
    with open(path, "rb") as fh:
        return decode_frame(fh.read())


# --- generic artifact container ---------------------------------------------

def encode_blob(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Deterministic binary container for a pipeline artifact."""
    magic = ARTIFACT_MAGICS[kind]
    manifest = []
    for name in sorted(arrays):
        arr = arrays[name]
        dtype = arr.dtype.newbyteorder("<").str
        manifest.append([name, list(arr.shape), dtype])
    header = canonical_json({"meta": meta, "arrays": manifest}).encode("utf-8")
    parts = [magic, _LEN.pack(len(header)), header]
    for name, shape, dtype in manifest:
        parts.append(np.ascontiguousarray(arrays[name], dtype=dtype).tobytes())
    return b"".join(parts)


def decode_blob(kind: str, data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    magic = ARTIFACT_MAGICS[kind]
    if data[:8] != magic:
        raise CorruptFrame(f"bad {kind} artifact magic")
    (hlen,) = _LEN.unpack(data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    arrays = {}
    off = 12 + hlen
    for name, shape, dtype in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        arrays[name] = np.frombuffer(data[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise CorruptFrame(f"{kind} artifact has trailing bytes")
    return header["meta"], arrays


def write_blob(path: str, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    atomic_write(path, encode_blob(kind, meta, arrays))
    return path


def read_blob(path: str, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode_blob(kind, fh.read())


def blob_intact(path: str, kind: str) -> bool:
    """Cheap integrity probe used before an artifact is offered for reuse."""
    try:
        with open(path, "rb") as fh:
            return fh.read(8) == ARTIFACT_MAGICS[kind]
    except OSError:
        return False
