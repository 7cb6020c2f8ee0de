/** Wire types mirroring the pointmatch service JSON responses. */

export type Axis = 'x' | 'y' | 'z';

export interface VolumeMeta {
  dims: [number, number, number];
  spacing: [number, number, number];
  origin: [number, number, number];
  modality: 'CT' | 'MR' | 'OTHER';
  intensity_range: [number, number];
}

export interface PairSession {
  pair_id: string;
  source: VolumeMeta;
  target: VolumeMeta;
}

export interface LevelTrace {
  level: number;
  grid_mm: number;
  box_mm: number | null;
  point_mm: [number, number, number];
  score: number;
  candidates: number;
}

export interface MatchResponse {
  pair_id: string;
  matched_point_mm: [number, number, number];
  score: number;
  per_level: LevelTrace[];
  elapsed_ms: number;
}

export interface SliceResponse {
  pair_id: string;
  volume: 'source' | 'target';
  axis: Axis;
  index: number;
  width: number;
  height: number;
  col_axis: Axis;
  row_axis: Axis;
  col_spacing_mm: number;
  row_spacing_mm: number;
  col_origin_mm: number;
  row_origin_mm: number;
  plane_coord_mm: number;
  window: [number, number];
  modality: string;
  pixels_b64: string;
}

export interface MapResponse {
  pair_id: string;
  level: number;
  grid_mm: number;
  origin_mm: [number, number, number];
  dims: [number, number, number];
  argmax_point_mm: [number, number, number];
  max_score: number;
  min_score: number;
  scores_b64: string;
}

export interface WorldPoint {
  x: number;
  y: number;
  z: number;
}
