/** Canvas drawing: grayscale slice, heat overlay, crosshair. */

import type { SliceResponse } from './types.js';
import type { SliceGeometry, ViewTransform } from './geometry.js';
import { pixelToScreen, worldToPixel } from './geometry.js';
import type { WorldPoint } from './types.js';

export function decodePixels(b64: string): Uint8ClampedArray<ArrayBuffer> {
  const raw = atob(b64);
  const out = new Uint8ClampedArray(new ArrayBuffer(raw.length));
  for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
  return out;
}

export function sliceToImageData(slice: SliceResponse): ImageData {
  const gray = decodePixels(slice.pixels_b64);
  const rgba = new Uint8ClampedArray(new ArrayBuffer(gray.length * 4));
  for (let i = 0; i < gray.length; i++) {
    const g = gray[i] as number;
    rgba[i * 4] = g;
    rgba[i * 4 + 1] = g;
    rgba[i * 4 + 2] = g;
    rgba[i * 4 + 3] = 255;
  }
  return new ImageData(rgba, slice.width, slice.height);
}

export function drawPane(
  canvas: HTMLCanvasElement,
  image: ImageData,
  transform: ViewTransform,
  overlay: ImageData | null,
  crosshair: WorldPoint | null,
  geometry: SliceGeometry,
): void {
  const ctx = canvas.getContext('2d');
  if (ctx === null) return;
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = '#000';
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  const off = new OffscreenCanvas(image.width, image.height);
  const offCtx = off.getContext('2d');
  if (offCtx === null) return;
  offCtx.putImageData(image, 0, 0);
  if (overlay !== null) {
    const ovl = new OffscreenCanvas(overlay.width, overlay.height);
    const ovlCtx = ovl.getContext('2d');
    if (ovlCtx !== null) {
      ovlCtx.putImageData(overlay, 0, 0);
      offCtx.drawImage(ovl, 0, 0);
    }
  }
  ctx.drawImage(
    off,
    transform.panX,
    transform.panY,
    image.width * transform.zoom,
    image.height * transform.zoom,
  );

  if (crosshair !== null) {
    const p = worldToPixel(geometry, crosshair);
    const s = pixelToScreen(transform, p.u, p.v);
    ctx.strokeStyle = '#3df53d';
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(s.sx - 12, s.sy);
    ctx.lineTo(s.sx + 12, s.sy);
    ctx.moveTo(s.sx, s.sy - 12);
    ctx.lineTo(s.sx, s.sy + 12);
    ctx.stroke();
    ctx.strokeStyle = 'rgba(61, 245, 61, 0.5)';
    ctx.beginPath();
    ctx.arc(s.sx, s.sy, 8, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

export function fitTransform(
  canvas: HTMLCanvasElement,
  width: number,
  height: number,
): ViewTransform {
  const zoom = Math.min(canvas.width / width, canvas.height / height);
  return {
    zoom,
    panX: (canvas.width - width * zoom) / 2,
    panY: (canvas.height - height * zoom) / 2,
  };
}
