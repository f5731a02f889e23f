/**
 * Embedding scatterplot: canvas point sprites plus the data/screen
 * transform used for hit-testing. Rendering dims unselected points when
 * a selection is active so both views highlight the same set.
 */

export interface Transform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Fit the coords bounding box into a canvas, preserving aspect ratio. */
export function fitTransform(
  coords: Float32Array,
  width: number,
  height: number,
  pad = 16,
): Transform {
  const n = Math.floor(coords.length / 2);
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
  if (n === 0) {
    return { scale: 1, offsetX: 0, offsetY: 0 };
  }
  const spanX = hiX > loX ? hiX - loX : 1;
  const spanY = hiY > loY ? hiY - loY : 1;
  const scale = Math.min((width - 2 * pad) / spanX, (height - 2 * pad) / spanY);
  // center the data box in the canvas
  const offsetX = (width - scale * (loX + hiX)) / 2;
  const offsetY = (height - scale * (loY + hiY)) / 2;
  return { scale, offsetX, offsetY };
}

export function toScreen(t: Transform, x: number, y: number): [number, number] {
  return [t.scale * x + t.offsetX, t.scale * y + t.offsetY];
}

export function toData(t: Transform, sx: number, sy: number): [number, number] {
  return [(sx - t.offsetX) / t.scale, (sy - t.offsetY) / t.scale];
}

export interface ScatterStyle {
  radius?: number;
  dimmedAlpha?: number;
}

/**
 * Draw points with per-point RGB colors; `selected` is a set of point
 * indices (not superpixel ids, callers translate when the plot shows a
 * refinement subset).
 */
export function drawScatter(
  ctx: CanvasRenderingContext2D,
  coords: Float32Array,
  colors: Uint8Array,
  selected: ReadonlySet<number> | null,
  t: Transform,
  style: ScatterStyle = {},
): void {
  const radius = style.radius ?? 3;
  const dimmed = style.dimmedAlpha ?? 0.15;
  const n = Math.floor(coords.length / 2);
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  const dimming = selected !== null && selected.size > 0;
  for (let i = 0; i < n; i++) {
    const [sx, sy] = toScreen(t, coords[2 * i], coords[2 * i + 1]);
    const active = !dimming || selected.has(i);
    ctx.globalAlpha = active ? 1 : dimmed;
    ctx.fillStyle = `rgb(${colors[3 * i]},${colors[3 * i + 1]},${colors[3 * i + 2]})`;
    ctx.beginPath();
    ctx.arc(sx, sy, active && dimming ? radius + 1 : radius, 0, 2 * Math.PI);
    ctx.fill();
    if (active && dimming) {
      ctx.strokeStyle = "#111";
      ctx.lineWidth = 1;
      ctx.stroke();
    }
  }
  ctx.globalAlpha = 1;
}
