/**
 * Hit-testing shared by both views.
 *
 * Every gesture, in either view, reduces to a set of superpixel ids.
 * Rendering then highlights that one set everywhere: selected points in
 * the scatterplot and the union of their pixels in the image. The two
 * directions are exact inverses over a label partition, which is what
 * keeps linked selections symmetric.
 */

export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Corner order does not matter; callers pass raw drag endpoints. */
export function normalizeRect(r: Rect): Rect {
  return {
    x0: Math.min(r.x0, r.x1),
    y0: Math.min(r.y0, r.y1),
    x1: Math.max(r.x0, r.x1),
    y1: Math.max(r.y0, r.y1),
  };
}

/** Even-odd ray cast; polygon is flat [x0, y0, x1, y1, ...]. */
export function pointInPolygon(x: number, y: number, polygon: ArrayLike<number>): boolean {
  const n = Math.floor(polygon.length / 2);
  let inside = false;
  for (let i = 0, j = n - 1; i < n; j = i++) {
    const xi = polygon[2 * i];
    const yi = polygon[2 * i + 1];
    const xj = polygon[2 * j];
    const yj = polygon[2 * j + 1];
    const crosses = yi > y !== yj > y && x < ((xj - xi) * (y - yi)) / (yj - yi) + xi;
    if (crosses) {
      inside = !inside;
    }
  }
  return inside;
}

/** Ids of embedding points inside a rectangle; coords are flat (x, y) pairs. */
export function idsFromEmbeddingRect(coords: Float32Array, rect: Rect): Set<number> {
  const r = normalizeRect(rect);
  const out = new Set<number>();
  for (let i = 0; i * 2 + 1 < coords.length; i++) {
    const x = coords[2 * i];
    const y = coords[2 * i + 1];
    if (x >= r.x0 && x <= r.x1 && y >= r.y0 && y <= r.y1) {
      out.add(i);
    }
  }
  return out;
}

/** Ids of embedding points inside a lasso polygon. */
export function idsFromEmbeddingLasso(coords: Float32Array, polygon: ArrayLike<number>): Set<number> {
  const out = new Set<number>();
  if (polygon.length < 6) {
    return out;
  }
  for (let i = 0; i * 2 + 1 < coords.length; i++) {
    if (pointInPolygon(coords[2 * i], coords[2 * i + 1], polygon)) {
      out.add(i);
    }
  }
  return out;
}

/** Ids whose superpixels intersect a pixel rectangle (inclusive cell coords). */
export function idsFromImageRect(
  labels: Uint32Array,
  width: number,
  height: number,
  rect: Rect,
): Set<number> {
  const r = normalizeRect(rect);
  const x0 = Math.max(0, Math.floor(r.x0));
  const y0 = Math.max(0, Math.floor(r.y0));
  const x1 = Math.min(width - 1, Math.floor(r.x1));
  const y1 = Math.min(height - 1, Math.floor(r.y1));
  const out = new Set<number>();
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      out.add(labels[y * width + x]);
    }
  }
  return out;
}

/** Ids touched by an explicit pixel index set. */
export function idsFromPixels(labels: Uint32Array, pixels: Iterable<number>): Set<number> {
  const out = new Set<number>();
  for (const p of pixels) {
    out.add(labels[p]);
  }
  return out;
}

/** Sorted pixel indices covered by a selection, for image highlighting. */
export function pixelsOfIds(labels: Uint32Array, ids: ReadonlySet<number>): Uint32Array {
  let count = 0;
  for (let p = 0; p < labels.length; p++) {
    if (ids.has(labels[p])) {
      count += 1;
    }
  }
  const out = new Uint32Array(count);
  let at = 0;
  for (let p = 0; p < labels.length; p++) {
    if (ids.has(labels[p])) {
      out[at++] = p;
    }
  }
  return out;
}
