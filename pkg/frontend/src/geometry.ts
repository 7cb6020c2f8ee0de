/**
 * Slice geometry: the pixel <-> world(mm) <-> screen mapping.
 *
 * A slice pixel (u, v) is the voxel CENTER at world
 *   col = colOrigin + u * colSpacing,  row = rowOrigin + v * rowSpacing
 * on the plane `planeCoord` of the fixed axis. Screen coordinates add an
 * integer-free zoom/pan on top. All functions here are pure so the click
 * pipeline (screen -> pixel -> world -> service -> world -> pixel) is
 * testable without a DOM.
 */

import type { Axis, SliceResponse, WorldPoint } from './types.js';

export interface SliceGeometry {
  axis: Axis;
  colAxis: Axis;
  rowAxis: Axis;
  width: number;
  height: number;
  colSpacing: number;
  rowSpacing: number;
  colOrigin: number;
  rowOrigin: number;
  planeCoord: number;
}

export function geometryOf(slice: SliceResponse): SliceGeometry {
  return {
    axis: slice.axis,
    colAxis: slice.col_axis,
    rowAxis: slice.row_axis,
    width: slice.width,
    height: slice.height,
    colSpacing: slice.col_spacing_mm,
    rowSpacing: slice.row_spacing_mm,
    colOrigin: slice.col_origin_mm,
    rowOrigin: slice.row_origin_mm,
    planeCoord: slice.plane_coord_mm,
  };
}

/** Round to nearest with ties away from zero (matches the backend rule). */
export function roundHalfAway(x: number): number {
  return Math.trunc(x + Math.sign(x) * 0.5);
}

export function pixelToWorld(g: SliceGeometry, u: number, v: number): WorldPoint {
  const w: Record<Axis, number> = { x: 0, y: 0, z: 0 };
  w[g.colAxis] = g.colOrigin + u * g.colSpacing;
  w[g.rowAxis] = g.rowOrigin + v * g.rowSpacing;
  w[g.axis] = g.planeCoord;
  return { x: w.x, y: w.y, z: w.z };
}

/** Nearest pixel of a world point; may land outside the slice. */
export function worldToPixel(g: SliceGeometry, p: WorldPoint): { u: number; v: number } {
  const coords: Record<Axis, number> = { x: p.x, y: p.y, z: p.z };
  return {
    u: roundHalfAway((coords[g.colAxis] - g.colOrigin) / g.colSpacing),
    v: roundHalfAway((coords[g.rowAxis] - g.rowOrigin) / g.rowSpacing),
  };
}

export function pixelInBounds(g: SliceGeometry, u: number, v: number): boolean {
  return u >= 0 && u < g.width && v >= 0 && v < g.height;
}

/** Slice index along an axis for a world coordinate. */
export function sliceIndexFor(
  origin: number,
  spacing: number,
  count: number,
  coord: number,
): number {
  const idx = roundHalfAway((coord - origin) / spacing);
  return Math.min(Math.max(idx, 0), count - 1);
}

export interface ViewTransform {
  zoom: number; // screen px per slice px
  panX: number; // screen px offset of pixel (0,0)'s top-left corner
  panY: number;
}

export function pixelToScreen(
  t: ViewTransform,
  u: number,
  v: number,
): { sx: number; sy: number } {
  // pixel centers sit half a pixel into their cell
  return { sx: (u + 0.5) * t.zoom + t.panX, sy: (v + 0.5) * t.zoom + t.panY };
}

export function screenToPixel(
  t: ViewTransform,
  sx: number,
  sy: number,
): { u: number; v: number } {
  return {
    u: Math.floor((sx - t.panX) / t.zoom),
    v: Math.floor((sy - t.panY) / t.zoom),
  };
}
