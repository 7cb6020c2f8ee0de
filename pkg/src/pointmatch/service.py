"""HTTP service for the interactive viewer: pair sessions, matching, slices.

Desk-scale tool: volumes are loaded from server-local paths into an LRU
cache of pair sessions (default capacity 8). All volumes and offset tables
are immutable after load, so any number of concurrent match/slice requests
may share a session; the cache lock guards only insert/evict bookkeeping.
Match responses are computed by the same engine the CLI uses and are
bit-identical to ``pointmatch match`` for the same inputs and config.

Endpoints:
  GET  /health
  POST /pairs                      {source_path, target_path} -> session
  POST /pairs/{id}/match           {point_mm, metric?, levels?} -> result
  POST /pairs/{id}/map             {point_mm, level?, ...} -> score grid
  GET  /pairs/{id}/slice?volume=source&axis=z&index=k&window=lo,hi

Errors: 400 malformed body/params, 404 unknown pair, 416 bad slice index,
422 unloadable volume or out-of-bounds point, 507 cache full with every
session busy (idle sessions are evicted LRU-first instead).
"""

from __future__ import annotations

import base64
import logging
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import EngineConfig
from .errors import PointMatchError, QueryOutOfBounds
from .search import match_point, prewarm_tables, similarity_map
from .similarity import SimilarityKind
from .volume import Volume, WorldPoint, load_volume, round_half_away

logger = logging.getLogger("pointmatch.service")


class CacheFull(PointMatchError):
    """Every cached pair is busy; nothing can be evicted."""


@dataclass
class SessionPair:
    pair_id: str
    source: Volume
    target: Volume
    created_at: float
    busy: int = field(default=0)


class PairCache:
    """LRU cache of pair sessions; only idle sessions are evictable."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._pairs: OrderedDict[str, SessionPair] = OrderedDict()

    def add(self, pair: SessionPair) -> None:
        with self._lock:
            while len(self._pairs) >= self.capacity:
                victim = next(
                    (pid for pid, p in self._pairs.items() if p.busy == 0), None
                )
                if victim is None:
                    raise CacheFull(
                        f"all {self.capacity} cached pairs are busy; retry later"
                    )
                del self._pairs[victim]
            self._pairs[pair.pair_id] = pair

    def checkout(self, pair_id: str) -> Optional[SessionPair]:
        with self._lock:
            pair = self._pairs.get(pair_id)
            if pair is None:
                return None
            pair.busy += 1
            self._pairs.move_to_end(pair_id)
            return pair

    def checkin(self, pair: SessionPair) -> None:
        with self._lock:
            pair.busy -= 1

    def __len__(self) -> int:
        with self._lock:
            return len(self._pairs)


class PairRequest(BaseModel):
    source_path: str
    target_path: str
    intensity_offset: Optional[float] = None


class MatchRequest(BaseModel):
    point_mm: list[float]
    metric: Optional[str] = None
    levels: Optional[int] = None


class MapRequest(BaseModel):
    point_mm: list[float]
    level: int = 1
    grid_mm: Optional[float] = None
    center_mm: Optional[list[float]] = None
    half_width_mm: Optional[float] = None
    metric: Optional[str] = None


def _volume_meta(v: Volume) -> dict:
    return {
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "origin": list(v.origin),
        "modality": v.modality,
        # lets viewers build min-max window presets without a data fetch
        "intensity_range": [float(v.data.min()), float(v.data.max())],
    }


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": detail})


_SLICE_AXES = {
    # axis -> (col world axis, row world axis) of the slice plane
    "z": (0, 1),
    "y": (0, 2),
    "x": (1, 2),
}
_AXIS_NAMES = ("x", "y", "z")


def window_slice(plane: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Linear [lo, hi] -> [0, 255] windowing, round-ties-away, clamped.

    Degenerate lo >= hi: 255 at/above lo, 0 below (hard threshold).
    """
    if lo >= hi:
        return np.where(plane >= lo, 255, 0).astype(np.uint8)
    # division last: (v-lo)*255/(hi-lo), so e.g. mid-window is exactly x.5
    scaled = (plane.astype(np.float64) - lo) * 255.0 / (hi - lo)
    return np.clip(round_half_away(scaled), 0, 255).astype(np.uint8)


def create_app(eng: EngineConfig = EngineConfig()) -> FastAPI:
    eng.validate()
    app = FastAPI(title="pointmatch", version="0.1.0")
    # desk-scale tool: the browser viewer is served from another origin
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    cache = PairCache(eng.cache_pairs)
    app.state.cache = cache
    app.state.engine = eng

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return _bad_request(str(exc.errors()))

    @app.middleware("http")
    async def access_log(request: Request, call_next):
        t0 = time.perf_counter()
        response = await call_next(request)
        logger.info(
            "method=%s path=%s status=%d ms=%.1f",
            request.method, request.url.path, response.status_code,
            (time.perf_counter() - t0) * 1e3,
        )
        return response

    @app.get("/health")
    def health():
        return {"status": "ok", "pairs_cached": len(cache)}

    @app.post("/pairs")
    def create_pair(body: PairRequest):
        offset = (
            body.intensity_offset
            if body.intensity_offset is not None
            else eng.intensity_offset
        )
        try:
            source = load_volume(body.source_path, offset)
            target = load_volume(body.target_path, offset)
        except (PointMatchError, OSError) as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        prewarm_tables((source, target), eng.search.levels, eng.model)
        pair = SessionPair(
            pair_id=uuid.uuid4().hex[:12],
            source=source,
            target=target,
            created_at=time.time(),
        )
        try:
            cache.add(pair)
        except CacheFull as exc:
            return JSONResponse(status_code=507, content={"detail": str(exc)})
        return {
            "pair_id": pair.pair_id,
            "source": _volume_meta(source),
            "target": _volume_meta(target),
        }

    def _search_config(metric: Optional[str], levels: Optional[int]):
        cfg = eng.search
        if metric is not None:
            try:
                cfg = replace(cfg, metric=SimilarityKind.parse(metric))
            except ValueError as exc:
                return None, _bad_request(str(exc))
        if levels is not None:
            cfg = replace(cfg, levels=levels)
        try:
            cfg.validate()
        except PointMatchError as exc:
            return None, _bad_request(str(exc))
        return cfg, None

    @app.post("/pairs/{pair_id}/match")
    def match(pair_id: str, body: MatchRequest):
        if len(body.point_mm) != 3:
            return _bad_request("point_mm must have three components")
        cfg, err = _search_config(body.metric, body.levels)
        if err is not None:
            return err
        pair = cache.checkout(pair_id)
        if pair is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown pair {pair_id}"})
        try:
            result = match_point(
                pair.source, pair.target, WorldPoint(*body.point_mm), cfg, eng.model
            )
        except QueryOutOfBounds as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        finally:
            cache.checkin(pair)
        return {"pair_id": pair_id, **result.to_dict()}

    @app.post("/pairs/{pair_id}/map")
    def score_map(pair_id: str, body: MapRequest):
        if len(body.point_mm) != 3:
            return _bad_request("point_mm must have three components")
        cfg, err = _search_config(body.metric, None)
        if err is not None:
            return err
        grid = body.grid_mm if body.grid_mm is not None else cfg.grid_mm(body.level)
        region = None
        if body.center_mm is not None:
            if len(body.center_mm) != 3 or body.half_width_mm is None:
                return _bad_request("center_mm needs three components and half_width_mm")
            region = (WorldPoint(*body.center_mm), body.half_width_mm)
        pair = cache.checkout(pair_id)
        if pair is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown pair {pair_id}"})
        try:
            smap = similarity_map(
                pair.source, pair.target, WorldPoint(*body.point_mm),
                body.level, grid, region, cfg, eng.model,
            )
        except QueryOutOfBounds as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})
        except PointMatchError as exc:
            return _bad_request(str(exc))
        finally:
            cache.checkin(pair)
        best_point, best_score = smap.argmax_point()
        nzg, nyg, nxg = smap.scores.shape
        return {
            "pair_id": pair_id,
            "level": smap.level,
            "grid_mm": smap.grid_mm,
            "origin_mm": list(smap.origin),
            "dims": [nxg, nyg, nzg],
            "argmax_point_mm": list(best_point),
            "max_score": best_score,
            "min_score": float(smap.scores.min()),
            # float32 little-endian, x-fastest, matches the volume layout
            "scores_b64": base64.b64encode(
                smap.scores.astype("<f4").tobytes()
            ).decode("ascii"),
        }

    @app.get("/pairs/{pair_id}/slice")
    def slice_view(pair_id: str, volume: str, index: int, axis: str = "z",
                   window: str = "0,1"):
        if volume not in ("source", "target"):
            return _bad_request("volume must be source or target")
        if axis not in _SLICE_AXES:
            return _bad_request("axis must be one of x, y, z")
        try:
            lo_s, hi_s = window.split(",")
            lo, hi = float(lo_s), float(hi_s)
        except ValueError:
            return _bad_request("window must be lo,hi")
        pair = cache.checkout(pair_id)
        if pair is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown pair {pair_id}"})
        try:
            vol = pair.source if volume == "source" else pair.target
            col_axis, row_axis = _SLICE_AXES[axis]
            fixed_axis = _AXIS_NAMES.index(axis)
            n = vol.dims[fixed_axis]
            if not 0 <= index < n:
                return JSONResponse(
                    status_code=416,
                    content={"detail": f"index {index} out of range 0..{n - 1}"},
                )
            if axis == "z":
                plane = vol.data[index]
            elif axis == "y":
                plane = vol.data[:, index, :]
            else:
                plane = vol.data[:, :, index]
            pixels = window_slice(plane, lo, hi)
            return {
                "pair_id": pair_id,
                "volume": volume,
                "axis": axis,
                "index": index,
                "width": int(pixels.shape[1]),
                "height": int(pixels.shape[0]),
                "col_axis": _AXIS_NAMES[col_axis],
                "row_axis": _AXIS_NAMES[row_axis],
                "col_spacing_mm": vol.spacing[col_axis],
                "row_spacing_mm": vol.spacing[row_axis],
                "col_origin_mm": vol.origin[col_axis],
                "row_origin_mm": vol.origin[row_axis],
                "plane_coord_mm": vol.origin[fixed_axis] + index * vol.spacing[fixed_axis],
                "window": [lo, hi],
                "modality": vol.modality,
                "pixels_b64": base64.b64encode(pixels.tobytes()).decode("ascii"),
            }
        finally:
            cache.checkin(pair)

    return app


def serve(eng: EngineConfig) -> None:
    """Run the service with uvicorn (blocking)."""
    import uvicorn

    logging.basicConfig(level=logging.INFO, format="%(name)s %(message)s")
    uvicorn.run(create_app(eng), host=eng.host, port=eng.port, log_level="warning")
