/**
 * Hand-built three-level hierarchy over a 6x6 raster with known
 * cluster membership, for selection and state tests that need exact
 * expected id sets.
 *
 * level 0: every pixel its own superpixel (36 ids)
 * level 1: 2x2 blocks in row-major block order (9 ids)
 * level 2: block columns (3 ids), so parent of block b is b % 3
 *
 * The level-1 embedding places block i at (i % 3, floor(i / 3)).
 */

export const WIDTH = 6;
export const HEIGHT = 6;

export function labels0(): Uint32Array {
  return Uint32Array.from({ length: WIDTH * HEIGHT }, (_, p) => p);
}

export function labels1(): Uint32Array {
  const out = new Uint32Array(WIDTH * HEIGHT);
  for (let y = 0; y < HEIGHT; y++) {
    for (let x = 0; x < WIDTH; x++) {
      out[y * WIDTH + x] = (y >> 1) * 3 + (x >> 1);
    }
  }
  return out;
}

export function labels2(): Uint32Array {
  const out = new Uint32Array(WIDTH * HEIGHT);
  for (let y = 0; y < HEIGHT; y++) {
    for (let x = 0; x < WIDTH; x++) {
      out[y * WIDTH + x] = x >> 1;
    }
  }
  return out;
}

export function embedding1(): Float32Array {
  const out = new Float32Array(9 * 2);
  for (let i = 0; i < 9; i++) {
    out[2 * i] = i % 3;
    out[2 * i + 1] = Math.floor(i / 3);
  }
  return out;
}

export const LEVEL_SIZES = [36, 9, 3];

/** Pixel indices of one level-1 block, ascending. */
export function blockPixels(block: number): number[] {
  const bx = (block % 3) * 2;
  const by = Math.floor(block / 3) * 2;
  const out: number[] = [];
  for (let y = by; y < by + 2; y++) {
    for (let x = bx; x < bx + 2; x++) {
      out.push(y * WIDTH + x);
    }
  }
  return out.sort((a, b) => a - b);
}
