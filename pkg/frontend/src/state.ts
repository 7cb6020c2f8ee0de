/**
 * Viewer state and the click-to-match workflow, DOM-free for testability.
 *
 * One outstanding match request at a time per controller with last-write-
 * wins semantics: when a click supersedes an in-flight request, the stale
 * response is dropped when it arrives. Failures surface as a toast message
 * and leave pane state untouched, so a mistaken click (or a dead service)
 * never wedges the UI; clicking a neighboring point simply issues a fresh
 * request.
 */

import type { PointMatchClient } from './api.js';
import type { MapResponse, MatchResponse, PairSession, WorldPoint } from './types.js';
import type { SliceGeometry } from './geometry.js';
import { pixelInBounds, pixelToWorld, sliceIndexFor } from './geometry.js';

export interface PaneState {
  sliceIndex: number;
  window: [number, number];
  zoom: number;
  panX: number;
  panY: number;
  crosshair: WorldPoint | null;
}

export interface HistoryEntry {
  query: WorldPoint;
  matched: WorldPoint;
  score: number;
  elapsedMs: number;
}

export interface ViewerState {
  pair: PairSession | null;
  source: PaneState;
  target: PaneState;
  lastQuery: WorldPoint | null;
  lastResult: MatchResponse | null;
  overlay: { visible: boolean; level: number; map: MapResponse | null };
  history: HistoryEntry[];
  toast: string | null;
  busy: boolean;
}

function freshPane(): PaneState {
  return {
    sliceIndex: 0,
    window: [0, 1],
    zoom: 1,
    panX: 0,
    panY: 0,
    crosshair: null,
  };
}

export type Listener = (state: ViewerState) => void;

export class ViewerController {
  readonly state: ViewerState = {
    pair: null,
    source: freshPane(),
    target: freshPane(),
    lastQuery: null,
    lastResult: null,
    overlay: { visible: false, level: 1, map: null },
    history: [],
    toast: null,
    busy: false,
  };

  private matchSeq = 0;
  private listeners: Listener[] = [];

  constructor(private api: PointMatchClient) {}

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  async loadPair(sourcePath: string, targetPath: string): Promise<void> {
    try {
      const pair = await this.api.createPair(sourcePath, targetPath);
      this.state.pair = pair;
      this.state.source = freshPane();
      this.state.target = freshPane();
      this.state.source.sliceIndex = Math.floor(pair.source.dims[2] / 2);
      this.state.target.sliceIndex = Math.floor(pair.target.dims[2] / 2);
      this.state.history = [];
      this.state.lastResult = null;
      this.state.toast = null;
    } catch (err) {
      this.state.toast = `load failed: ${(err as Error).message}`;
    }
    this.notify();
  }

  /** Click handler: source-pane pixel -> world -> match -> target pane. */
  async clickSource(geometry: SliceGeometry, u: number, v: number): Promise<void> {
    if (this.state.pair === null) return;
    if (!pixelInBounds(geometry, u, v)) return;
    const query = pixelToWorld(geometry, u, v);
    await this.requestMatch(query);
  }

  async requestMatch(query: WorldPoint): Promise<void> {
    const pair = this.state.pair;
    if (pair === null) return;
    const seq = ++this.matchSeq;
    this.state.busy = true;
    this.state.lastQuery = query;
    this.state.source.crosshair = query;
    this.notify();
    try {
      const result = await this.api.match(pair.pair_id, query);
      if (seq !== this.matchSeq) return; // superseded by a newer click
      const [mx, my, mz] = result.matched_point_mm;
      this.state.lastResult = result;
      this.state.target.crosshair = { x: mx, y: my, z: mz };
      // jump the target pane to the matched slice
      this.state.target.sliceIndex = sliceIndexFor(
        pair.target.origin[2],
        pair.target.spacing[2],
        pair.target.dims[2],
        mz,
      );
      this.state.history.push({
        query,
        matched: { x: mx, y: my, z: mz },
        score: result.score,
        elapsedMs: result.elapsed_ms,
      });
      this.state.toast = null;
      if (this.state.overlay.visible) {
        await this.refreshOverlay();
      }
    } catch (err) {
      if (seq !== this.matchSeq) return;
      // pane state intentionally untouched on failure
      this.state.toast = `match failed: ${(err as Error).message}`;
    } finally {
      if (seq === this.matchSeq) {
        this.state.busy = false;
        this.notify();
      }
    }
  }

  async setOverlayVisible(visible: boolean): Promise<void> {
    this.state.overlay.visible = visible;
    if (visible) {
      await this.refreshOverlay();
    }
    this.notify();
  }

  async setOverlayLevel(level: number): Promise<void> {
    this.state.overlay.level = level;
    if (this.state.overlay.visible) {
      await this.refreshOverlay();
    }
    this.notify();
  }

  private async refreshOverlay(): Promise<void> {
    const pair = this.state.pair;
    const query = this.state.lastQuery;
    if (pair === null || query === null) return;
    try {
      this.state.overlay.map = await this.api.map(
        pair.pair_id,
        query,
        this.state.overlay.level,
      );
    } catch {
      this.state.overlay.map = null; // hidden when unavailable
    }
  }

  dismissToast(): void {
    this.state.toast = null;
    this.notify();
  }
}
