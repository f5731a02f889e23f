/**
 * Run-length codec for label rasters.
 *
 * The wire format is a flat u32 sequence of (run length, value) pairs
 * covering the raster in row-major order.
 */

export function rleDecode(pairs: Uint32Array, expectedSize?: number): Uint32Array {
  if (pairs.length % 2 !== 0) {
    throw new Error(`RLE stream has odd length ${pairs.length}`);
  }
  let total = 0;
  for (let i = 0; i < pairs.length; i += 2) {
    if (pairs[i] === 0) {
      throw new Error(`RLE run at pair ${i / 2} has zero length`);
    }
    total += pairs[i];
  }
  if (expectedSize !== undefined && total !== expectedSize) {
    throw new Error(`RLE decodes to ${total} values, expected ${expectedSize}`);
  }
  const out = new Uint32Array(total);
  let at = 0;
  for (let i = 0; i < pairs.length; i += 2) {
    out.fill(pairs[i + 1], at, at + pairs[i]);
    at += pairs[i];
  }
  return out;
}

export function rleEncode(values: ArrayLike<number>): Uint32Array {
  const pairs: number[] = [];
  let i = 0;
  while (i < values.length) {
    const value = values[i];
    let run = 1;
    while (i + run < values.length && values[i + run] === value) {
      run += 1;
    }
    pairs.push(run, value);
    i += run;
  }
  return Uint32Array.from(pairs);
}
