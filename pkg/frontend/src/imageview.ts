/**
 * Image view rasterization: every pixel takes its superpixel's color,
 * selections brighten their pixels and dim the rest, and superpixel
 * boundaries overlay as dark lines. All functions are pure over flat
 * buffers so they can run and be tested without a DOM.
 */

/**
 * RGBA raster from a label map and per-superpixel colors. `selected`
 * ids keep full intensity while everything else dims; `universe`, when
 * given (a refinement subset), hard-dims pixels outside it.
 */
export function rasterizeLabels(
  labels: Uint32Array,
  width: number,
  height: number,
  colors: Uint8Array,
  selected: ReadonlySet<number> | null,
  universe: ReadonlySet<number> | null = null,
): Uint8ClampedArray<ArrayBuffer> {
  if (labels.length !== width * height) {
    throw new Error(`label map of ${labels.length} does not fill ${width}x${height}`);
  }
  const out = new Uint8ClampedArray(width * height * 4);
  const dimming = selected !== null && selected.size > 0;
  for (let p = 0; p < labels.length; p++) {
    const id = labels[p];
    const inUniverse = universe === null || universe.has(id);
    const active = inUniverse && (!dimming || selected.has(id));
    // outside the refinement subset: near-black; unselected: one third
    const factor = !inUniverse ? 0.12 : active ? 1 : 0.35;
    out[4 * p] = colors[3 * id] * factor;
    out[4 * p + 1] = colors[3 * id + 1] * factor;
    out[4 * p + 2] = colors[3 * id + 2] * factor;
    out[4 * p + 3] = 255;
  }
  return out;
}

/** 1 where a pixel's right or down 4-neighbor has a different label. */
export function boundaryMask(labels: Uint32Array, width: number, height: number): Uint8Array {
  const mask = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const p = y * width + x;
      if (x + 1 < width && labels[p] !== labels[p + 1]) {
        mask[p] = 1;
      }
      if (y + 1 < height && labels[p] !== labels[p + width]) {
        mask[p] = 1;
      }
    }
  }
  return mask;
}

/** Darken boundary pixels in place on an RGBA buffer. */
export function overlayBoundaries(
  rgba: Uint8ClampedArray,
  mask: Uint8Array,
  strength = 0.45,
): void {
  for (let p = 0; p < mask.length; p++) {
    if (mask[p] === 1) {
      rgba[4 * p] = rgba[4 * p] * strength;
      rgba[4 * p + 1] = rgba[4 * p + 1] * strength;
      rgba[4 * p + 2] = rgba[4 * p + 2] * strength;
    }
  }
}
