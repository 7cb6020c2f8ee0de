"""3D volumes with physical-space metadata and world<->voxel conversions.

A volume is an axis-aligned scalar grid. Voxel ``(i, j, k)`` sits at world
position ``origin + (i*sx, j*sy, k*sz)`` mm. Intensities are stored x-fastest
(C-contiguous ``(nz, ny, nx)`` array), promoted to float32 on load so CT and
MR share one code path. Volumes are immutable after load and safe to share
across threads.

Two on-disk formats are supported:

* a minimal MetaImage subset (``.mha``, local raw payload, little-endian,
  uncompressed, identity orientation, element type short/ushort/float), and
* a native sidecar pair ``<name>.json`` + ``<name>.raw`` described in the
  README.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import CorruptHeader, PayloadSizeMismatch, UnsupportedFormat

MODALITIES = ("CT", "MR", "OTHER")

# MetaImage element types we accept, mapped to little-endian numpy dtypes.
_MHA_DTYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
}
_SIDECAR_DTYPES = {
    "int16": np.dtype("<i2"),
    "uint16": np.dtype("<u2"),
    "float32": np.dtype("<f4"),
}


class WorldPoint(NamedTuple):
    """Position in the volume's physical frame, millimetres."""

    x: float
    y: float
    z: float


class VoxelPoint(NamedTuple):
    """Integer voxel indices; bounds are checked at use sites."""

    i: int
    j: int
    k: int


def round_half_away(x):
    """Round to nearest integer with ties away from zero.

    Used for every mm->voxel conversion in the package so results are
    deterministic across platforms (numpy's default rounds ties to even).
    Accepts scalars or arrays; returns the same shape as float.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.trunc(x + np.copysign(0.5, x))


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar image with voxel spacing and world origin.

    ``data`` is float32 with shape ``(nz, ny, nx)``; its flat C-order layout
    is exactly the on-disk x-fastest order, so ``data.ravel()[k*nx*ny + j*nx
    + i]`` is the voxel ``(i, j, k)``. Slices are stored in ascending world z
    (guaranteed by positive spacing and axis-aligned orientation).
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray = field(repr=False)
    modality: str = "OTHER"
    intensity_offset: float = 0.0

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(self.dims) < 1:
            raise ValueError(f"dims must all be >= 1, got {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        if self.data.shape != (nz, ny, nx):
            raise ValueError(
                f"data shape {self.data.shape} != (nz, ny, nx) {(nz, ny, nx)}"
            )
        if self.data.dtype != np.float32 or not self.data.flags.c_contiguous:
            object.__setattr__(
                self, "data", np.ascontiguousarray(self.data, dtype=np.float32)
            )

    @property
    def flat(self) -> np.ndarray:
        """Flat x-fastest view of the intensities (length nx*ny*nz)."""
        return self.data.ravel()

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """World-size of the voxel-center bounding box per axis."""
        return tuple((n - 1) * s for n, s in zip(self.dims, self.spacing))

    def in_bounds(self, q: VoxelPoint) -> bool:
        return (
            0 <= q.i < self.dims[0]
            and 0 <= q.j < self.dims[1]
            and 0 <= q.k < self.dims[2]
        )

    def with_origin(self, origin: tuple[float, float, float]) -> "Volume":
        """Same intensities at a shifted world position (data is shared)."""
        return replace(self, origin=tuple(float(v) for v in origin))


def world_to_voxel(v: Volume, p: WorldPoint) -> VoxelPoint:
    """Nearest voxel of a world position; may land out of bounds."""
    idx = [
        int(math.trunc(d + math.copysign(0.5, d)))
        for d in (
            (p[0] - v.origin[0]) / v.spacing[0],
            (p[1] - v.origin[1]) / v.spacing[1],
            (p[2] - v.origin[2]) / v.spacing[2],
        )
    ]
    return VoxelPoint(*idx)


def voxel_to_world(v: Volume, q: VoxelPoint) -> WorldPoint:
    return WorldPoint(
        v.origin[0] + q.i * v.spacing[0],
        v.origin[1] + q.j * v.spacing[1],
        v.origin[2] + q.k * v.spacing[2],
    )


def sample_at(v: Volume, q: VoxelPoint) -> tuple[float, bool]:
    """Intensity at a voxel, or ``(0.0, False)`` outside the volume.

    Total function: out-of-volume locations read as 0 so descriptors built
    near edges stay in the same vector space as interior ones.
    """
    if not v.in_bounds(q):
        return 0.0, False
    return float(v.data[q.k, q.j, q.i]), True


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------


def load_volume(path, intensity_offset: float = 0.0) -> Volume:
    """Load a volume from ``.mha`` or the native ``.json``+``.raw`` sidecar.

    ``intensity_offset`` is added to every stored value on load (useful to
    shift signed CT data into an unsigned range); it is recorded on the
    returned Volume and never written back by :func:`write_volume`.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".mha":
        return _load_mha(path, intensity_offset)
    if suffix == ".json":
        return _load_sidecar(path, intensity_offset)
    raise UnsupportedFormat(f"unsupported volume format: {path}")


def write_volume(v: Volume, path, dtype: str = "float32") -> None:
    """Write a volume as ``.mha`` or native sidecar, chosen by extension.

    ``dtype`` selects the stored element type (int16/uint16/float32). The
    default float32 round-trips intensities bit-identically; integer dtypes
    round ties away from zero.
    """
    path = Path(path)
    if dtype not in _SIDECAR_DTYPES:
        raise UnsupportedFormat(f"unsupported element dtype: {dtype}")
    np_dtype = _SIDECAR_DTYPES[dtype]
    if dtype == "float32":
        payload = np.ascontiguousarray(v.data, dtype=np_dtype)
    else:
        payload = round_half_away(v.data).astype(np_dtype)

    suffix = path.suffix.lower()
    if suffix == ".mha":
        _write_mha(v, path, payload, dtype)
    elif suffix == ".json":
        _write_sidecar(v, path, payload, dtype)
    else:
        raise UnsupportedFormat(f"unsupported volume format: {path}")


def _fmt_mm(values) -> str:
    return " ".join(repr(float(x)) for x in values)


_MHA_ELEMENT_NAMES = {
    "int16": "MET_SHORT",
    "uint16": "MET_USHORT",
    "float32": "MET_FLOAT",
}


def _write_mha(v: Volume, path: Path, payload: np.ndarray, dtype: str) -> None:
    header = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "TransformMatrix = 1 0 0 0 1 0 0 0 1",
        f"Offset = {_fmt_mm(v.origin)}",
        f"ElementSpacing = {_fmt_mm(v.spacing)}",
        f"DimSize = {v.dims[0]} {v.dims[1]} {v.dims[2]}",
        f"ElementType = {_MHA_ELEMENT_NAMES[dtype]}",
    ]
    if v.modality != "OTHER":
        header.append(f"Modality = {v.modality}")
    header.append("ElementDataFile = LOCAL")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(payload.tobytes())


def _write_sidecar(v: Volume, path: Path, payload: np.ndarray, dtype: str) -> None:
    meta = {
        "dims": list(v.dims),
        "spacing": [float(s) for s in v.spacing],
        "origin": [float(o) for o in v.origin],
        "dtype": dtype,
        "modality": v.modality,
    }
    raw_path = path.with_suffix(".raw")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    with open(raw_path, "wb") as fh:
        fh.write(payload.tobytes())


def _parse_triple(text: str, kind, what: str):
    parts = text.split()
    if len(parts) != 3:
        raise CorruptHeader(f"{what} must have three components, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError as exc:
        raise CorruptHeader(f"cannot parse {what}: {text!r}") from exc


_IDENTITY_MATRIX = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


def _load_mha(path: Path, intensity_offset: float) -> Volume:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise UnsupportedFormat(f"cannot read {path}: {exc}") from exc

    fields: dict[str, str] = {}
    pos = 0
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise CorruptHeader(f"{path}: header ended without ElementDataFile")
        try:
            line = blob[pos:nl].decode("ascii").strip()
        except UnicodeDecodeError as exc:
            raise CorruptHeader(f"{path}: non-ascii header line") from exc
        pos = nl + 1
        if not line:
            continue
        m = re.match(r"^([A-Za-z0-9_]+)\s*=\s*(.*)$", line)
        if not m:
            raise CorruptHeader(f"{path}: malformed header line {line!r}")
        key, value = m.group(1), m.group(2).strip()
        fields[key] = value
        if key == "ElementDataFile":
            break

    if fields.get("NDims", "3") != "3":
        raise UnsupportedFormat(f"{path}: only NDims=3 is supported")
    if fields["ElementDataFile"] != "LOCAL":
        raise UnsupportedFormat(f"{path}: only local raw payloads are supported")
    if fields.get("CompressedData", "False").lower() == "true":
        raise UnsupportedFormat(f"{path}: compressed payloads are not supported")
    if fields.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise UnsupportedFormat(f"{path}: big-endian payloads are not supported")
    if "TransformMatrix" in fields:
        matrix = _parse_matrix(path, fields["TransformMatrix"])
        # Sampling offsets are rotation sensitive; only identity orientation
        # keeps world offsets aligned with voxel axes.
        if matrix != _IDENTITY_MATRIX:
            raise UnsupportedFormat(f"{path}: non-identity orientation is not supported")

    element_type = fields.get("ElementType")
    if element_type not in _MHA_DTYPES:
        raise UnsupportedFormat(f"{path}: unsupported ElementType {element_type!r}")

    if "DimSize" not in fields or "ElementSpacing" not in fields:
        raise CorruptHeader(f"{path}: DimSize and ElementSpacing are required")
    dims = _parse_triple(fields["DimSize"], int, "DimSize")
    spacing = _parse_triple(fields["ElementSpacing"], float, "ElementSpacing")
    if min(dims) < 1:
        raise CorruptHeader(f"{path}: non-positive DimSize {dims}")
    if min(spacing) <= 0:
        raise CorruptHeader(f"{path}: non-positive ElementSpacing {spacing}")
    origin = (
        _parse_triple(fields["Offset"], float, "Offset")
        if "Offset" in fields
        else (0.0, 0.0, 0.0)
    )
    modality = fields.get("Modality", "OTHER")
    if modality not in MODALITIES:
        modality = "OTHER"

    return _assemble(
        path, blob[pos:], _MHA_DTYPES[element_type], dims, spacing, origin,
        modality, intensity_offset,
    )


def _parse_matrix(path: Path, text: str):
    parts = text.split()
    if len(parts) != 9:
        raise CorruptHeader(f"{path}: TransformMatrix must have 9 entries")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise CorruptHeader(f"{path}: cannot parse TransformMatrix") from exc


def _load_sidecar(path: Path, intensity_offset: float) -> Volume:
    try:
        meta = json.loads(path.read_text(encoding="ascii"))
    except OSError as exc:
        raise UnsupportedFormat(f"cannot read {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptHeader(f"{path}: invalid JSON sidecar") from exc

    for key in ("dims", "spacing", "origin", "dtype"):
        if key not in meta:
            raise CorruptHeader(f"{path}: sidecar is missing {key!r}")
    dtype_name = meta["dtype"]
    if dtype_name not in _SIDECAR_DTYPES:
        raise UnsupportedFormat(f"{path}: unsupported dtype {dtype_name!r}")
    try:
        dims = tuple(int(d) for d in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        origin = tuple(float(o) for o in meta["origin"])
    except (TypeError, ValueError) as exc:
        raise CorruptHeader(f"{path}: malformed geometry fields") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise CorruptHeader(f"{path}: geometry fields must have three components")
    if min(dims) < 1:
        raise CorruptHeader(f"{path}: non-positive dims {dims}")
    if min(spacing) <= 0:
        raise CorruptHeader(f"{path}: non-positive spacing {spacing}")
    modality = meta.get("modality", "OTHER")
    if modality not in MODALITIES:
        modality = "OTHER"

    raw_path = path.with_suffix(".raw")
    try:
        payload = raw_path.read_bytes()
    except OSError as exc:
        raise UnsupportedFormat(f"cannot read {raw_path}: {exc}") from exc
    return _assemble(
        path, payload, _SIDECAR_DTYPES[dtype_name], dims, spacing, origin,
        modality, intensity_offset,
    )


def _assemble(path, payload, dtype, dims, spacing, origin, modality, offset):
    nx, ny, nz = dims
    expected = nx * ny * nz * dtype.itemsize
    if len(payload) != expected:
        raise PayloadSizeMismatch(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for dims {dims} ({dtype.name})"
        )
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if offset:
        data = data + np.float32(offset)
    data = data.reshape(nz, ny, nx)
    return Volume(
        dims=dims,
        spacing=spacing,
        origin=origin,
        data=data,
        modality=modality,
        intensity_offset=float(offset),
    )
