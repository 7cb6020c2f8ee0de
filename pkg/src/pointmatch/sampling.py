"""Multi-resolution sparse sampling pattern and descriptor extraction.

The sampling model is a fixed set of mm-space offsets: nested cubic grids
(default 7x7x7 at 8/20/48/128 mm spacing, 1372 dimensions total) that read
many samples near the query and few far away. Per search level the whole
pattern shrinks by 1/2, and per volume it is converted once into integer
voxel offsets, so extracting a descriptor is pure memory lookup.

Dimension ordering is fixed so descriptors are comparable across processes:
resolution-major (in the order given), then z slowest, y, x fastest, each
axis ascending from ``-half_extent`` to ``+half_extent``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .volume import Volume, VoxelPoint, round_half_away

DEFAULT_RESOLUTIONS_MM = (8.0, 20.0, 48.0, 128.0)


@dataclass(frozen=True)
class SamplingModel:
    """mm-space offset pattern: one cubic grid per resolution."""

    resolutions_mm: tuple[float, ...] = DEFAULT_RESOLUTIONS_MM
    half_extent: int = 3

    def __post_init__(self):
        if not self.resolutions_mm or min(self.resolutions_mm) <= 0:
            raise ValueError("resolutions_mm must be positive and non-empty")
        if self.half_extent < 1:
            raise ValueError("half_extent must be >= 1")
        object.__setattr__(
            self, "resolutions_mm", tuple(float(r) for r in self.resolutions_mm)
        )

    @property
    def grid_side(self) -> int:
        return 2 * self.half_extent + 1

    @property
    def dimension(self) -> int:
        """Descriptor length: one entry per (resolution, grid node)."""
        return len(self.resolutions_mm) * self.grid_side**3

    def level_scale(self, level: int) -> float:
        """Pattern shrink factor at a search level (1/2 per level)."""
        if level < 1:
            raise ValueError("level must be >= 1")
        return 0.5 ** (level - 1)

    def effective_resolutions_mm(self, level: int) -> tuple[float, ...]:
        s = self.level_scale(level)
        return tuple(r * s for r in self.resolutions_mm)

    def max_offset_mm(self, level: int = 1) -> float:
        """Largest per-axis offset magnitude; field of view of the pattern."""
        return self.half_extent * max(self.resolutions_mm) * self.level_scale(level)

    def mm_offsets(self) -> np.ndarray:
        """Level-1 offsets as an ``(dimension, 3)`` float array, fixed order."""
        steps = np.arange(-self.half_extent, self.half_extent + 1, dtype=np.float64)
        zz, yy, xx = np.meshgrid(steps, steps, steps, indexing="ij")
        unit = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
        return np.concatenate([unit * r for r in self.resolutions_mm], axis=0)


@dataclass(frozen=True)
class OffsetTable:
    """The sampling model realized as voxel offsets for one spacing+level."""

    level: int
    spacing: tuple[float, float, float]
    voxel_offsets: np.ndarray = field(repr=False)  # (dimension, 3) int64, x/y/z

    def __post_init__(self):
        self.voxel_offsets.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.voxel_offsets.shape[0]

    def positions_mm(self) -> np.ndarray:
        """World-space positions actually sampled, relative to the query.

        These are the post-rounding offsets (voxel offsets times spacing),
        i.e. where the lookups truly land for this volume.
        """
        return self.voxel_offsets.astype(np.float64) * np.asarray(self.spacing)


@dataclass(frozen=True)
class Descriptor:
    """Fixed-length intensity vector plus in-volume validity mask.

    ``values[d]`` is 0 wherever ``valid[d]`` is False, so all descriptors
    live in the same vector space regardless of how close the query sits to
    the volume edge.
    """

    values: np.ndarray = field(repr=False)  # (dimension,) float32
    valid: np.ndarray = field(repr=False)  # (dimension,) bool

    def __post_init__(self):
        if self.values.shape != self.valid.shape:
            raise ValueError("values and valid must have identical shape")
        self.values.setflags(write=False)
        self.valid.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


def build_offset_table(
    model: SamplingModel, spacing: tuple[float, float, float], level: int
) -> OffsetTable:
    """Convert the mm pattern into voxel offsets for one spacing and level.

    Component-wise ``round(mm * scale / spacing)`` with ties away from zero.
    Duplicate voxel offsets (possible at fine levels with coarse spacing)
    are kept so the dimensionality never changes.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    spacing = tuple(float(s) for s in spacing)
    if min(spacing) <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    scaled = model.mm_offsets() * model.level_scale(level)
    voxel = round_half_away(scaled / np.asarray(spacing)).astype(np.int64)
    return OffsetTable(level=level, spacing=spacing, voxel_offsets=voxel)


@lru_cache(maxsize=256)
def _cached_table(model: SamplingModel, spacing, level: int) -> OffsetTable:
    return build_offset_table(model, spacing, level)


def get_offset_table(
    model: SamplingModel, spacing: tuple[float, float, float], level: int
) -> OffsetTable:
    """Cached :func:`build_offset_table`; one build per (spacing, level).

    Keyed by spacing rather than volume identity so same-spacing volumes
    share tables.
    """
    return _cached_table(model, tuple(float(s) for s in spacing), int(level))


def extract_descriptor(v: Volume, table: OffsetTable, q: VoxelPoint) -> Descriptor:
    """Read the descriptor at a voxel: one lookup per table entry.

    No arithmetic beyond index addition; offsets landing outside the volume
    yield value 0 and valid=False.
    """
    off = table.voxel_offsets
    ci = q.i + off[:, 0]
    cj = q.j + off[:, 1]
    ck = q.k + off[:, 2]
    nx, ny, nz = v.dims
    valid = (
        (ci >= 0) & (ci < nx) & (cj >= 0) & (cj < ny) & (ck >= 0) & (ck < nz)
    )
    flat = (ck * ny + cj) * nx + ci
    values = v.flat[np.where(valid, flat, 0)]
    values = np.where(valid, values, np.float32(0.0))
    return Descriptor(values=values.astype(np.float32, copy=False), valid=valid)


def decode_descriptor(
    d: Descriptor,
    table: OffsetTable,
    canvas_dims: tuple[int, int, int],
    canvas_spacing_mm: float = 1.0,
) -> Volume:
    """Paint a descriptor back into an image for visual inspection.

    Every canvas voxel takes the value of its nearest sampled location
    (Euclidean distance in mm over the table's post-rounding positions;
    ties resolved by the lowest descriptor index). The canvas is centered
    on the query point, which maps to world (0, 0, 0) of the result.
    Debugging aid only; not used by the search.
    """
    nx, ny, nz = canvas_dims
    if min(canvas_dims) < 1:
        raise ValueError("canvas_dims must all be >= 1")
    if canvas_spacing_mm <= 0:
        raise ValueError("canvas_spacing_mm must be positive")
    positions = table.positions_mm()

    axes = [
        (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * canvas_spacing_mm
        for n in canvas_dims
    ]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    out = np.empty(pts.shape[0], dtype=np.float32)
    chunk = 4096  # bounds the (chunk x dimension) distance matrix
    for start in range(0, pts.shape[0], chunk):
        block = pts[start : start + chunk]
        d2 = ((block[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argmin(d2, axis=1)
        out[start : start + block.shape[0]] = d.values[nearest]

    origin = tuple(float(a[0]) for a in axes)
    return Volume(
        dims=canvas_dims,
        spacing=(canvas_spacing_mm,) * 3,
        origin=origin,
        data=out.reshape(nz, ny, nx),
    )
