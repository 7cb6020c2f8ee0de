/** Per-modality window presets. Pure UI conveniences; the service does the
 * actual pixel windowing. CT presets are level/width pairs in stored units;
 * MR and unknown modalities get the volume's min-max range. */

import type { VolumeMeta } from './types.js';

export interface WindowPreset {
  name: string;
  lo: number;
  hi: number;
}

function levelWidth(name: string, level: number, width: number): WindowPreset {
  return { name, lo: level - width / 2, hi: level + width / 2 };
}

export function presetsFor(meta: VolumeMeta): WindowPreset[] {
  const [lo, hi] = meta.intensity_range;
  const fullRange: WindowPreset = { name: 'Full range', lo, hi };
  if (meta.modality === 'CT') {
    return [
      fullRange,
      levelWidth('Soft tissue', 40, 400),
      levelWidth('Lung', -600, 1500),
      levelWidth('Bone', 400, 1800),
    ];
  }
  if (meta.modality === 'MR') {
    return [{ name: 'Min-max', lo, hi }];
  }
  return [fullRange];
}

export function defaultWindow(meta: VolumeMeta): WindowPreset {
  const presets = presetsFor(meta);
  const first = presets[0];
  if (first === undefined) throw new Error('no presets');
  return first;
}
