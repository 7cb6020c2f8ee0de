/** DOM bootstrap: wires panes, sliders, presets, and the click workflow. */

import { PointMatchClient } from './api.js';
import { ViewerController } from './state.js';
import { geometryOf, screenToPixel, worldToPixel, type SliceGeometry, type ViewTransform } from './geometry.js';
import { presetsFor, defaultWindow } from './windowing.js';
import { overlayRGBA, toScoreGrid } from './overlay.js';
import { drawPane, fitTransform, sliceToImageData } from './render.js';
import type { SliceResponse, VolumeMeta } from './types.js';

type PaneName = 'source' | 'target';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const api = new PointMatchClient(
  new URLSearchParams(location.search).get('service') ?? 'http://127.0.0.1:8008',
);
const controller = new ViewerController(api);

interface PaneView {
  canvas: HTMLCanvasElement;
  slider: HTMLInputElement;
  label: HTMLElement;
  presetSelect: HTMLSelectElement;
  slice: SliceResponse | null;
  geometry: SliceGeometry | null;
  transform: ViewTransform;
}

function paneView(name: PaneName): PaneView {
  return {
    canvas: el<HTMLCanvasElement>(`${name}-canvas`),
    slider: el<HTMLInputElement>(`${name}-slider`),
    label: el(`${name}-label`),
    presetSelect: el<HTMLSelectElement>(`${name}-preset`),
    slice: null,
    geometry: null,
    transform: { zoom: 1, panX: 0, panY: 0 },
  };
}

const panes: Record<PaneName, PaneView> = {
  source: paneView('source'),
  target: paneView('target'),
};

function meta(name: PaneName): VolumeMeta | null {
  const pair = controller.state.pair;
  if (pair === null) return null;
  return name === 'source' ? pair.source : pair.target;
}

async function refreshPane(name: PaneName): Promise<void> {
  const pair = controller.state.pair;
  const m = meta(name);
  if (pair === null || m === null) return;
  const pane = controller.state[name];
  const view = panes[name];
  try {
    const slice = await api.slice(pair.pair_id, name, 'z', pane.sliceIndex, pane.window);
    view.slice = slice;
    view.geometry = geometryOf(slice);
    view.transform = fitTransform(view.canvas, slice.width, slice.height);
    view.label.textContent =
      `${name} | slice ${slice.index + 1}/${m.dims[2]} | z=${slice.plane_coord_mm.toFixed(1)}mm` +
      ` | ${m.modality}`;
    render(name);
  } catch (err) {
    showToast(`slice load failed: ${(err as Error).message}`);
  }
}

function render(name: PaneName): void {
  const view = panes[name];
  if (view.slice === null || view.geometry === null) return;
  const image = sliceToImageData(view.slice);
  let overlayImage: ImageData | null = null;
  const ovl = controller.state.overlay;
  if (name === 'target' && ovl.visible && ovl.map !== null) {
    const rgba = overlayRGBA(toScoreGrid(ovl.map), view.geometry);
    overlayImage = new ImageData(rgba, view.geometry.width, view.geometry.height);
  }
  drawPane(
    view.canvas,
    image,
    view.transform,
    overlayImage,
    controller.state[name].crosshair,
    view.geometry,
  );
}

function showToast(message: string | null): void {
  const toast = el('toast');
  toast.textContent = message ?? '';
  toast.style.display = message === null ? 'none' : 'block';
}

function fillPresets(name: PaneName): void {
  const m = meta(name);
  if (m === null) return;
  const view = panes[name];
  view.presetSelect.innerHTML = '';
  for (const preset of presetsFor(m)) {
    const opt = document.createElement('option');
    opt.value = `${preset.lo},${preset.hi}`;
    opt.textContent = preset.name;
    view.presetSelect.appendChild(opt);
  }
}

function renderHistory(): void {
  const list = el('history');
  list.innerHTML = '';
  for (const entry of [...controller.state.history].reverse().slice(0, 12)) {
    const li = document.createElement('li');
    li.textContent =
      `(${entry.query.x.toFixed(1)}, ${entry.query.y.toFixed(1)}, ${entry.query.z.toFixed(1)})` +
      ` -> (${entry.matched.x.toFixed(1)}, ${entry.matched.y.toFixed(1)}, ${entry.matched.z.toFixed(1)})` +
      ` score ${entry.score.toFixed(3)} in ${entry.elapsedMs.toFixed(0)}ms`;
    list.appendChild(li);
  }
}

controller.subscribe(() => {
  showToast(controller.state.toast);
  const result = controller.state.lastResult;
  el('status').textContent = result
    ? `score ${result.score.toFixed(4)} | ${result.elapsed_ms.toFixed(0)} ms | ` +
      result.per_level.map((l) => `L${l.level}`).join(' ')
    : 'click a point in the source pane';
  renderHistory();
  for (const name of ['source', 'target'] as PaneName[]) {
    const pane = controller.state[name];
    panes[name].slider.value = String(pane.sliceIndex);
    void refreshPane(name);
  }
});

panes.source.canvas.addEventListener('click', (ev) => {
  const view = panes.source;
  if (view.geometry === null) return;
  const rect = view.canvas.getBoundingClientRect();
  const { u, v } = screenToPixel(
    view.transform,
    ev.clientX - rect.left,
    ev.clientY - rect.top,
  );
  void controller.clickSource(view.geometry, u, v);
});

for (const name of ['source', 'target'] as PaneName[]) {
  panes[name].slider.addEventListener('input', () => {
    controller.state[name].sliceIndex = Number(panes[name].slider.value);
    void refreshPane(name);
  });
  panes[name].presetSelect.addEventListener('change', () => {
    const [lo, hi] = panes[name].presetSelect.value.split(',').map(Number);
    controller.state[name].window = [lo ?? 0, hi ?? 1];
    void refreshPane(name);
  });
}

el<HTMLInputElement>('overlay-toggle').addEventListener('change', (ev) => {
  void controller.setOverlayVisible((ev.target as HTMLInputElement).checked);
});
el<HTMLSelectElement>('overlay-level').addEventListener('change', (ev) => {
  void controller.setOverlayLevel(Number((ev.target as HTMLSelectElement).value));
});

el<HTMLButtonElement>('load-btn').addEventListener('click', () => {
  void (async () => {
    await controller.loadPair(
      el<HTMLInputElement>('source-path').value,
      el<HTMLInputElement>('target-path').value,
    );
    const pair = controller.state.pair;
    if (pair === null) return;
    for (const name of ['source', 'target'] as PaneName[]) {
      const m = meta(name);
      if (m === null) continue;
      fillPresets(name);
      const w = defaultWindow(m);
      controller.state[name].window = [w.lo, w.hi];
      panes[name].slider.max = String(m.dims[2] - 1);
      panes[name].slider.value = String(controller.state[name].sliceIndex);
      await refreshPane(name);
    }
  })();
});

showToast(null);
