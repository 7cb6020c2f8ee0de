/**
 * Similarity-map overlays: decode the service's score grid and rasterize it
 * onto a slice, aligned by world geometry. The map is a node lattice at
 * `origin_mm + index * grid_mm`; each slice pixel takes the score of its
 * nearest node, tinted through a heat ramp with score-proportional alpha.
 */

import type { MapResponse } from './types.js';
import type { SliceGeometry } from './geometry.js';
import { pixelToWorld, roundHalfAway } from './geometry.js';

export interface ScoreGrid {
  level: number;
  gridMm: number;
  origin: [number, number, number];
  dims: [number, number, number]; // nx, ny, nz nodes
  scores: Float32Array; // x-fastest
  minScore: number;
  maxScore: number;
}

export function decodeScores(b64: string): Float32Array {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  const view = new DataView(bytes.buffer);
  const out = new Float32Array(raw.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = view.getFloat32(i * 4, true);
  return out;
}

export function toScoreGrid(resp: MapResponse): ScoreGrid {
  const scores = decodeScores(resp.scores_b64);
  const [nx, ny, nz] = resp.dims;
  if (scores.length !== nx * ny * nz) {
    throw new Error(`score payload ${scores.length} != dims ${nx}x${ny}x${nz}`);
  }
  return {
    level: resp.level,
    gridMm: resp.grid_mm,
    origin: resp.origin_mm,
    dims: resp.dims,
    scores,
    minScore: resp.min_score,
    maxScore: resp.max_score,
  };
}

/** First maximum in (z, y, x) scan order, matching the search tie-break. */
export function argmaxCell(grid: ScoreGrid): {
  index: [number, number, number];
  point: [number, number, number];
  score: number;
} {
  const [nx, ny] = [grid.dims[0], grid.dims[1]];
  let best = -Infinity;
  let at = 0;
  for (let i = 0; i < grid.scores.length; i++) {
    const s = grid.scores[i] as number;
    if (s > best) {
      best = s;
      at = i;
    }
  }
  const k = Math.floor(at / (nx * ny));
  const j = Math.floor((at - k * nx * ny) / nx);
  const i = at - k * nx * ny - j * nx;
  return {
    index: [i, j, k],
    point: [
      grid.origin[0] + i * grid.gridMm,
      grid.origin[1] + j * grid.gridMm,
      grid.origin[2] + k * grid.gridMm,
    ],
    score: best,
  };
}

function nodeIndex(grid: ScoreGrid, world: [number, number, number]): number | null {
  const idx: number[] = [];
  for (let a = 0; a < 3; a++) {
    const i = roundHalfAway(((world[a] as number) - (grid.origin[a] as number)) / grid.gridMm);
    if (i < 0 || i >= (grid.dims[a] as number)) return null;
    idx.push(i);
  }
  const [nx, ny] = [grid.dims[0], grid.dims[1]];
  return (idx[2] as number) * nx * ny + (idx[1] as number) * nx + (idx[0] as number);
}

/**
 * RGBA buffer (width*height*4) for compositing over a slice; transparent
 * where the map has no node. `maxAlpha` caps the opacity of the hottest
 * cell.
 */
export function overlayRGBA(
  grid: ScoreGrid,
  g: SliceGeometry,
  maxAlpha = 160,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(g.width * g.height * 4));
  const span = grid.maxScore - grid.minScore;
  for (let v = 0; v < g.height; v++) {
    for (let u = 0; u < g.width; u++) {
      const w = pixelToWorld(g, u, v);
      const ni = nodeIndex(grid, [w.x, w.y, w.z]);
      if (ni === null) continue;
      const s = grid.scores[ni] as number;
      const t = span > 0 ? (s - grid.minScore) / span : 0;
      const o = (v * g.width + u) * 4;
      // heat ramp: black-red-yellow
      out[o] = Math.round(255 * Math.min(1, 2 * t));
      out[o + 1] = Math.round(255 * Math.max(0, 2 * t - 1));
      out[o + 2] = 0;
      out[o + 3] = Math.round(maxAlpha * t);
    }
  }
  return out;
}
