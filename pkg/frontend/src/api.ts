/** Thin fetch client for the pointmatch service. */

import type {
  Axis,
  MapResponse,
  MatchResponse,
  PairSession,
  SliceResponse,
  WorldPoint,
} from './types.js';

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: unknown };
      if (body.detail !== undefined) detail = String(body.detail);
    } catch {
      // non-JSON error body; keep statusText
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class PointMatchClient {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  async health(): Promise<{ status: string }> {
    return parseOrThrow(await fetch(this.url('/health')));
  }

  async createPair(sourcePath: string, targetPath: string): Promise<PairSession> {
    const resp = await fetch(this.url('/pairs'), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ source_path: sourcePath, target_path: targetPath }),
    });
    return parseOrThrow(resp);
  }

  async match(
    pairId: string,
    point: WorldPoint,
    opts: { metric?: string; levels?: number } = {},
  ): Promise<MatchResponse> {
    const resp = await fetch(this.url(`/pairs/${pairId}/match`), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({
        point_mm: [point.x, point.y, point.z],
        ...(opts.metric !== undefined ? { metric: opts.metric } : {}),
        ...(opts.levels !== undefined ? { levels: opts.levels } : {}),
      }),
    });
    return parseOrThrow(resp);
  }

  async map(pairId: string, point: WorldPoint, level: number): Promise<MapResponse> {
    const resp = await fetch(this.url(`/pairs/${pairId}/map`), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ point_mm: [point.x, point.y, point.z], level }),
    });
    return parseOrThrow(resp);
  }

  async slice(
    pairId: string,
    volume: 'source' | 'target',
    axis: Axis,
    index: number,
    window: [number, number],
  ): Promise<SliceResponse> {
    const params = new URLSearchParams({
      volume,
      axis,
      index: String(index),
      window: `${window[0]},${window[1]}`,
    });
    const resp = await fetch(this.url(`/pairs/${pairId}/slice?${params}`));
    return parseOrThrow(resp);
  }
}
