"""Hierarchical coarse-to-fine correspondence search.

Level 1 scores the query descriptor against candidates on a world-aligned
16 mm grid covering the whole target volume. Each following level halves
the grid spacing and the sampling pattern, and searches only a shrinking
box centered on the previous best (96 mm down to 12 mm by default, five
levels, finishing on a 1 mm grid). Grid nodes at level 1 are anchored at
the volume origin; finer grids are anchored at the previous best point.

Within a level, candidate evaluations are partitioned by constant-z grid
planes across a bounded thread pool; each worker reduces its plane to a
local best and a final deterministic reduction applies the global
tie-break (smallest (z, y, x) world coordinate). Results are bit-identical
for any thread count, and one thread means a plain serial loop.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import EmptySearchSpace, InvalidConfig, QueryOutOfBounds
from .sampling import (
    Descriptor,
    OffsetTable,
    SamplingModel,
    extract_descriptor,
    get_offset_table,
)
from .similarity import HistogramSpec, SimilarityKind
from .volume import Volume, WorldPoint, round_half_away, world_to_voxel

_AXIS_EPS = 1e-9  # absolute guard for node-in-bounds float comparisons


@dataclass(frozen=True)
class SearchConfig:
    """Level/grid/box schedule and scoring knobs for the search."""

    levels: int = 5
    level1_grid_mm: float = 16.0
    box_schedule_mm: tuple[float, ...] = (96.0, 48.0, 24.0, 12.0)
    metric: SimilarityKind = SimilarityKind.COMBINED
    threads: int = 1
    mi_bins: int = 16
    cosine_weight: float = 1.0
    mi_weight: float = 1.0
    # Reserved knob: skip remaining candidates once a score clears this
    # threshold. Currently inert so default semantics stay exactly the
    # schedule above.
    early_exit_score: Optional[float] = None

    def grid_mm(self, level: int) -> float:
        """Grid spacing at a level; halves per level (16, 8, 4, 2, 1...)."""
        return self.level1_grid_mm * 0.5 ** (level - 1)

    def box_mm(self, level: int) -> Optional[float]:
        """Search-box half-width at a level (None at level 1).

        Levels beyond the configured schedule keep halving the last entry,
        consistent with the 1/2-per-level scaling everywhere else.
        """
        if level < 2:
            return None
        idx = level - 2
        sched = self.box_schedule_mm
        if idx < len(sched):
            return sched[idx]
        return sched[-1] * 0.5 ** (idx - (len(sched) - 1))

    def validate(self) -> None:
        if self.levels < 1:
            raise InvalidConfig(f"levels must be >= 1, got {self.levels}")
        if not math.isfinite(self.level1_grid_mm) or self.level1_grid_mm <= 0:
            raise InvalidConfig("level1_grid_mm must be positive")
        if not self.box_schedule_mm:
            raise InvalidConfig("box_schedule_mm must not be empty")
        if any(b <= 0 or not math.isfinite(b) for b in self.box_schedule_mm):
            raise InvalidConfig("box_schedule_mm entries must be positive")
        if any(
            b2 >= b1
            for b1, b2 in zip(self.box_schedule_mm, self.box_schedule_mm[1:])
        ):
            raise InvalidConfig("box_schedule_mm must be strictly decreasing")
        if self.threads < 1:
            raise InvalidConfig(f"threads must be >= 1, got {self.threads}")
        if self.mi_bins < 2:
            raise InvalidConfig(f"mi_bins must be >= 2, got {self.mi_bins}")
        if not isinstance(self.metric, SimilarityKind):
            raise InvalidConfig(f"metric must be a SimilarityKind, got {self.metric!r}")

    @property
    def histogram_spec(self) -> HistogramSpec:
        return HistogramSpec(bins=self.mi_bins)


@dataclass(frozen=True)
class LevelTrace:
    """Per-level record of where a search looked and what it found."""

    level: int
    grid_mm: float
    box_mm: Optional[float]
    best_point: WorldPoint
    best_score: float
    candidates_evaluated: int

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "grid_mm": self.grid_mm,
            "box_mm": self.box_mm,
            "point_mm": list(self.best_point),
            "score": self.best_score,
            "candidates": self.candidates_evaluated,
        }


@dataclass(frozen=True)
class MatchResult:
    """Final correspondence plus the full per-level trace."""

    point: WorldPoint
    score: float
    per_level: tuple[LevelTrace, ...]
    elapsed_s: float

    def to_dict(self) -> dict:
        return {
            "matched_point_mm": list(self.point),
            "score": self.score,
            "per_level": [t.to_dict() for t in self.per_level],
            "elapsed_ms": self.elapsed_s * 1000.0,
        }


@dataclass(frozen=True)
class SimilarityMap:
    """Dense score grid from one search step, for export and overlays."""

    level: int
    grid_mm: float
    origin: WorldPoint  # world position of scores[0, 0, 0]
    scores: np.ndarray = field(repr=False)  # (nz, ny, nx) float64

    def argmax_point(self) -> tuple[WorldPoint, float]:
        """Best node under the search tie-break (smallest (z, y, x))."""
        flat = int(np.argmax(self.scores))  # first max in C order
        nzg, nyg, nxg = self.scores.shape
        zi, rem = divmod(flat, nyg * nxg)
        yi, xi = divmod(rem, nxg)
        point = WorldPoint(
            self.origin.x + xi * self.grid_mm,
            self.origin.y + yi * self.grid_mm,
            self.origin.z + zi * self.grid_mm,
        )
        return point, float(self.scores.flat[flat])

    def to_volume(self) -> Volume:
        """Scores as a float32 volume in the target's world frame."""
        nzg, nyg, nxg = self.scores.shape
        return Volume(
            dims=(nxg, nyg, nzg),
            spacing=(self.grid_mm,) * 3,
            origin=tuple(self.origin),
            data=self.scores.astype(np.float32),
        )


def prewarm_tables(
    volumes, levels: int, model: SamplingModel = SamplingModel()
) -> None:
    """Build (and cache) offset tables for all levels of the given volumes.

    Call before timing matches: table construction happens once per
    (spacing, level) and should not pollute per-match latency figures.
    """
    for v in volumes:
        for level in range(1, levels + 1):
            get_offset_table(model, v.spacing, level)


def _full_axes(target: Volume, grid_mm: float) -> list[np.ndarray]:
    """Whole-volume grid nodes per axis, anchored at the volume origin."""
    axes = []
    for o, ext in zip(target.origin, target.extent_mm):
        n = int(math.floor(ext / grid_mm + _AXIS_EPS)) + 1
        axes.append(o + np.arange(n, dtype=np.float64) * grid_mm)
    return axes


def _box_axes(
    target: Volume, center: WorldPoint, grid_mm: float, half_width_mm: float
) -> list[np.ndarray]:
    """Grid nodes within a box around ``center``, anchored at the center.

    Nodes falling outside the volume are dropped (boxes are clipped, never
    an error, so searches near edges stay well-defined).
    """
    m = int(math.floor(half_width_mm / grid_mm + _AXIS_EPS))
    steps = np.arange(-m, m + 1, dtype=np.float64) * grid_mm
    axes = []
    for c, o, ext in zip(center, target.origin, target.extent_mm):
        nodes = c + steps
        keep = (nodes >= o - _AXIS_EPS) & (nodes <= o + ext + _AXIS_EPS)
        axes.append(nodes[keep])
    return axes


def _voxel_axis(nodes: np.ndarray, origin: float, spacing: float) -> np.ndarray:
    return round_half_away((nodes - origin) / spacing).astype(np.int64)


class _GridEvaluator:
    """Scores one level's grid; owns the shared thread pool for a search."""

    def __init__(self, cfg: SearchConfig):
        self.cfg = cfg
        self._pool = (
            ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
        )

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _plane_args(self, target: Volume, table: OffsetTable, query: Descriptor):
        off = table.voxel_offsets
        nx, ny, nz = target.dims
        off_i = np.ascontiguousarray(off[:, 0])
        off_j = np.ascontiguousarray(off[:, 1])
        off_k = np.ascontiguousarray(off[:, 2])
        off_flat = (off_k * ny + off_j) * nx + off_i
        return (
            target.flat, nx, ny, nz, off_i, off_j, off_k, off_flat,
            query.values, query.valid,
            self.cfg.metric.code, self.cfg.mi_bins,
            float(self.cfg.cosine_weight), float(self.cfg.mi_weight),
        )

    def _map_planes(self, fn, n_planes: int):
        if self._pool is None:
            return [fn(zi) for zi in range(n_planes)]
        return list(self._pool.map(fn, range(n_planes)))

    def best(
        self,
        target: Volume,
        table: OffsetTable,
        query: Descriptor,
        axes: list[np.ndarray],
    ) -> tuple[WorldPoint, float, int]:
        """Argmax over the grid; ties go to the smallest (z, y, x) node."""
        xs, ys, zs = axes
        if xs.size == 0 or ys.size == 0 or zs.size == 0:
            raise EmptySearchSpace("search region does not intersect the target")
        ci = _voxel_axis(xs, target.origin[0], target.spacing[0])
        cj = _voxel_axis(ys, target.origin[1], target.spacing[1])
        ck = _voxel_axis(zs, target.origin[2], target.spacing[2])
        vol, nx, ny, nz, *rest = self._plane_args(target, table, query)

        def plane_best(zi: int) -> tuple[float, int]:
            out = np.empty(ys.size * xs.size, dtype=np.float64)
            _kernels.evaluate_plane(
                vol, nx, ny, nz, ci, cj, int(ck[zi]), *rest, out
            )
            idx = int(np.argmax(out))  # first occurrence: smallest (y, x)
            return float(out[idx]), idx

        results = self._map_planes(plane_best, zs.size)
        best_score, best_idx = results[0]
        best_zi = 0
        for zi in range(1, zs.size):
            s, idx = results[zi]
            if s > best_score:  # strictly: earlier plane wins ties
                best_score, best_idx, best_zi = s, idx, zi
        yi, xi = divmod(best_idx, xs.size)
        point = WorldPoint(float(xs[xi]), float(ys[yi]), float(zs[best_zi]))
        return point, best_score, xs.size * ys.size * zs.size

    def map(
        self,
        target: Volume,
        table: OffsetTable,
        query: Descriptor,
        axes: list[np.ndarray],
        level: int,
        grid_mm: float,
    ) -> SimilarityMap:
        """Full dense score grid (same kernel, same scores as :meth:`best`)."""
        xs, ys, zs = axes
        if xs.size == 0 or ys.size == 0 or zs.size == 0:
            raise EmptySearchSpace("map region does not intersect the target")
        ci = _voxel_axis(xs, target.origin[0], target.spacing[0])
        cj = _voxel_axis(ys, target.origin[1], target.spacing[1])
        ck = _voxel_axis(zs, target.origin[2], target.spacing[2])
        vol, nx, ny, nz, *rest = self._plane_args(target, table, query)
        scores = np.empty((zs.size, ys.size, xs.size), dtype=np.float64)

        def plane_fill(zi: int) -> None:
            _kernels.evaluate_plane(
                vol, nx, ny, nz, ci, cj, int(ck[zi]), *rest,
                scores[zi].reshape(-1),
            )

        self._map_planes(plane_fill, zs.size)
        return SimilarityMap(
            level=level,
            grid_mm=grid_mm,
            origin=WorldPoint(float(xs[0]), float(ys[0]), float(zs[0])),
            scores=scores,
        )


def _check_degenerate(target: Volume, grid_mm: float) -> None:
    if all(ext < grid_mm for ext in target.extent_mm):
        raise EmptySearchSpace(
            f"target extent {target.extent_mm} mm is smaller than one "
            f"{grid_mm} mm grid cell in every axis"
        )


def match_point(
    source: Volume,
    target: Volume,
    query: WorldPoint,
    cfg: SearchConfig = SearchConfig(),
    model: SamplingModel = SamplingModel(),
) -> MatchResult:
    """Find the target-volume point corresponding to ``query`` in source.

    The query descriptor is re-extracted from the source at every level
    (the pattern shrinks per level); candidate descriptors come from the
    target. Deterministic for fixed inputs and config, independent of
    ``cfg.threads``.
    """
    cfg.validate()
    q_vox = world_to_voxel(source, query)
    if not source.in_bounds(q_vox):
        raise QueryOutOfBounds(
            f"query {tuple(query)} mm maps to voxel {tuple(q_vox)} outside "
            f"source dims {source.dims}"
        )
    _check_degenerate(target, cfg.level1_grid_mm)

    t0 = time.perf_counter()
    trace: list[LevelTrace] = []
    best_point: Optional[WorldPoint] = None
    best_score = -np.inf
    with _GridEvaluator(cfg) as ev:
        for level in range(1, cfg.levels + 1):
            grid = cfg.grid_mm(level)
            box = cfg.box_mm(level)
            src_table = get_offset_table(model, source.spacing, level)
            tgt_table = get_offset_table(model, target.spacing, level)
            qdesc = extract_descriptor(source, src_table, q_vox)
            if level == 1:
                axes = _full_axes(target, grid)
            else:
                axes = _box_axes(target, best_point, grid, box)
            best_point, best_score, n_eval = ev.best(target, tgt_table, qdesc, axes)
            trace.append(
                LevelTrace(
                    level=level,
                    grid_mm=grid,
                    box_mm=box,
                    best_point=best_point,
                    best_score=best_score,
                    candidates_evaluated=n_eval,
                )
            )
    return MatchResult(
        point=best_point,
        score=best_score,
        per_level=tuple(trace),
        elapsed_s=time.perf_counter() - t0,
    )


def exhaustive_match(
    source: Volume,
    target: Volume,
    query: WorldPoint,
    grid_mm: float = 16.0,
    level: int = 1,
    metric: SimilarityKind = SimilarityKind.COMBINED,
    *,
    model: SamplingModel = SamplingModel(),
    mi_bins: int = 16,
    cosine_weight: float = 1.0,
    mi_weight: float = 1.0,
    threads: int = 1,
) -> tuple[WorldPoint, float]:
    """Brute-force argmax over a full-volume grid at one descriptor level.

    Same grid anchoring, scoring and tie-break as the hierarchical search;
    with ``levels=1`` and equal grid/metric, :func:`match_point` returns
    exactly this result.
    """
    if grid_mm <= 0:
        raise InvalidConfig("grid_mm must be positive")
    q_vox = world_to_voxel(source, query)
    if not source.in_bounds(q_vox):
        raise QueryOutOfBounds(f"query {tuple(query)} mm outside source volume")
    cfg = SearchConfig(
        levels=1, level1_grid_mm=grid_mm, metric=metric, threads=threads,
        mi_bins=mi_bins, cosine_weight=cosine_weight, mi_weight=mi_weight,
    )
    src_table = get_offset_table(model, source.spacing, level)
    tgt_table = get_offset_table(model, target.spacing, level)
    qdesc = extract_descriptor(source, src_table, q_vox)
    with _GridEvaluator(cfg) as ev:
        point, score, _ = ev.best(target, tgt_table, qdesc, _full_axes(target, grid_mm))
    return point, score


def similarity_map(
    source: Volume,
    target: Volume,
    query: WorldPoint,
    level: int = 1,
    grid_mm: float = 16.0,
    region: Optional[tuple[WorldPoint, float]] = None,
    cfg: SearchConfig = SearchConfig(),
    model: SamplingModel = SamplingModel(),
) -> SimilarityMap:
    """Dense similarity heatmap of one search step.

    ``region=None`` maps the whole target on an origin-anchored grid
    (exactly the level-1 pass); ``region=(center, half_width_mm)`` maps a
    center-anchored box (exactly a refinement-level pass). The exported
    scores are the ones the search would rank, so the map argmax equals
    the corresponding search selection.
    """
    q_vox = world_to_voxel(source, query)
    if not source.in_bounds(q_vox):
        raise QueryOutOfBounds(f"query {tuple(query)} mm outside source volume")
    src_table = get_offset_table(model, source.spacing, level)
    tgt_table = get_offset_table(model, target.spacing, level)
    qdesc = extract_descriptor(source, src_table, q_vox)
    if region is None:
        axes = _full_axes(target, grid_mm)
    else:
        center, half_width = region
        axes = _box_axes(target, center, grid_mm, half_width)
    with _GridEvaluator(cfg) as ev:
        return ev.map(target, tgt_table, qdesc, axes, level, grid_mm)
