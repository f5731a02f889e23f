/**
 * Per-superpixel colors for the three coloring modes.
 *
 * The 2-D mode mirrors the server's raster colorization: a bilinear
 * blend of four corner colors over the embedding's bounding box, so the
 * scatterplot and the recolored image agree point for point.
 */

export type Rgb = [number, number, number];

// corner order: (min-x min-y, max-x min-y, min-x max-y, max-x max-y)
export const DEFAULT_CORNERS: Rgb[] = [
  [230, 25, 75],
  [255, 225, 25],
  [0, 130, 200],
  [60, 180, 75],
];

/** Flat RGB bytes, three per point, from embedding positions. */
export function colorsFromEmbedding(coords: Float32Array, corners: Rgb[] = DEFAULT_CORNERS): Uint8Array {
  if (corners.length !== 4) {
    throw new Error(`expected 4 corner colors, got ${corners.length}`);
  }
  const n = Math.floor(coords.length / 2);
  const out = new Uint8Array(n * 3);
  let loX = Infinity;
  let loY = Infinity;
  let hiX = -Infinity;
  let hiY = -Infinity;
  for (let i = 0; i < n; i++) {
    loX = Math.min(loX, coords[2 * i]);
    hiX = Math.max(hiX, coords[2 * i]);
    loY = Math.min(loY, coords[2 * i + 1]);
    hiY = Math.max(hiY, coords[2 * i + 1]);
  }
  // a degenerate axis pins its blend weight at 0 rather than dividing by 0
  const spanX = hiX > loX ? hiX - loX : 1;
  const spanY = hiY > loY ? hiY - loY : 1;
  for (let i = 0; i < n; i++) {
    const u = (coords[2 * i] - loX) / spanX;
    const v = (coords[2 * i + 1] - loY) / spanY;
    for (let c = 0; c < 3; c++) {
      const blend =
        (1 - u) * (1 - v) * corners[0][c] +
        u * (1 - v) * corners[1][c] +
        (1 - u) * v * corners[2][c] +
        u * v * corners[3][c];
      out[3 * i + c] = Math.max(0, Math.min(255, Math.round(blend)));
    }
  }
  return out;
}

/** Min-max gray ramp over per-superpixel scalar values (channel means). */
export function grayRamp(values: Float32Array): Uint8Array {
  let lo = Infinity;
  let hi = -Infinity;
  for (let i = 0; i < values.length; i++) {
    lo = Math.min(lo, values[i]);
    hi = Math.max(hi, values[i]);
  }
  const span = hi > lo ? hi - lo : 1;
  const out = new Uint8Array(values.length * 3);
  for (let i = 0; i < values.length; i++) {
    const g = Math.round(((values[i] - lo) / span) * 255);
    out[3 * i] = g;
    out[3 * i + 1] = g;
    out[3 * i + 2] = g;
  }
  return out;
}

/** Small deterministic PRNG for reproducible random grays. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** One random gray per superpixel, to tell adjacent regions apart. */
export function randomGrays(count: number, seed: number): Uint8Array {
  const rng = mulberry32(seed);
  const out = new Uint8Array(count * 3);
  for (let i = 0; i < count; i++) {
    const g = 40 + Math.floor(rng() * 176);
    out[3 * i] = g;
    out[3 * i + 1] = g;
    out[3 * i + 2] = g;
  }
  return out;
}
