/**
 * Explorer application: wires the HTTP client, view state, and the two
 * coordinated canvases together. A drag in either view produces one id
 * set that both views render; the level slider maps selections through
 * parent maps; the refine button runs an asynchronous server job and
 * pushes the result as a breadcrumb.
 */

import { ApiError, ExplorerClient, Meta } from "./api.js";
import { rleDecode } from "./rle.js";
import { colorsFromEmbedding, grayRamp, randomGrays } from "./colormap.js";
import { boundaryMask, overlayBoundaries, rasterizeLabels } from "./imageview.js";
import { drawScatter, fitTransform, toData, Transform } from "./scatterplot.js";
import {
  idsFromEmbeddingLasso,
  idsFromEmbeddingRect,
  idsFromImageRect,
  Rect,
} from "./select.js";
import * as st from "./state.js";

function element<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

/** RLE decoding runs in a worker when the browser provides one. */
class LabelDecoder {
  private worker: Worker | null = null;
  private queue: Promise<unknown> = Promise.resolve();

  constructor() {
    if (typeof Worker !== "undefined") {
      try {
        this.worker = new Worker(new URL("./worker.js", import.meta.url), { type: "module" });
      } catch {
        this.worker = null;
      }
    }
  }

  decode(pairs: Uint32Array, expected: number): Promise<Uint32Array> {
    const worker = this.worker;
    if (worker === null) {
      return Promise.resolve(rleDecode(pairs, expected));
    }
    const job = this.queue.then(
      () =>
        new Promise<Uint32Array>((resolve, reject) => {
          worker.onmessage = (ev: MessageEvent<Uint32Array>) => resolve(ev.data);
          worker.onerror = (ev) => reject(new Error(ev.message));
          worker.postMessage({ pairs, expected }, [pairs.buffer]);
        }),
    );
    this.queue = job.catch(() => undefined);
    return job;
  }
}

interface LevelData {
  labels: Uint32Array;
  coords: Float32Array | null;
}

class App {
  private state = st.createState(0);
  private readonly levels = new Map<number, LevelData>();
  private readonly parentMaps: Array<Uint32Array | undefined> = [];
  private readonly meansCache = new Map<string, Float32Array>();
  private readonly decoder = new LabelDecoder();
  private loadAbort = new AbortController();
  private scatterTransform: Transform = { scale: 1, offsetX: 0, offsetY: 0 };
  private refining = false;

  private readonly imageCanvas = element<HTMLCanvasElement>("image");
  private readonly scatterCanvas = element<HTMLCanvasElement>("scatter");
  private readonly levelSlider = element<HTMLInputElement>("level");
  private readonly levelLabel = element<HTMLSpanElement>("level-label");
  private readonly modeSelect = element<HTMLSelectElement>("mode");
  private readonly channelSelect = element<HTMLSelectElement>("channel");
  private readonly gammaSlider = element<HTMLInputElement>("gamma");
  private readonly gammaLabel = element<HTMLSpanElement>("gamma-label");
  private readonly refineButton = element<HTMLButtonElement>("refine");
  private readonly backButton = element<HTMLButtonElement>("back");
  private readonly breadcrumbsEl = element<HTMLSpanElement>("breadcrumbs");
  private readonly statusEl = element<HTMLSpanElement>("status");
  private readonly noticeEl = element<HTMLSpanElement>("notice");
  private readonly progressEl = element<HTMLSpanElement>("progress");

  constructor(
    private readonly client: ExplorerClient,
    private readonly meta: Meta,
  ) {}

  async start(): Promise<void> {
    this.imageCanvas.width = this.meta.width;
    this.imageCanvas.height = this.meta.height;
    this.levelSlider.min = "0";
    this.levelSlider.max = String(this.meta.levels - 1);
    this.levelSlider.value = "0";
    for (let c = 0; c < this.meta.channels; c++) {
      const opt = document.createElement("option");
      opt.value = String(c);
      opt.textContent = this.meta.channel_names?.[c] ?? `channel ${c}`;
      this.channelSelect.appendChild(opt);
    }
    this.bindEvents();
    await this.ensureLevel(0);
    await this.render();
  }

  private bindEvents(): void {
    this.levelSlider.addEventListener("input", () => {
      void this.changeLevel(Number(this.levelSlider.value));
    });
    this.modeSelect.addEventListener("change", () => {
      this.state = st.setMode(this.state, this.modeSelect.value as st.ColoringMode);
      void this.render();
    });
    this.channelSelect.addEventListener("change", () => {
      void this.render();
    });
    this.gammaSlider.addEventListener("input", () => {
      this.state = st.setGamma(this.state, Number(this.gammaSlider.value));
      this.gammaLabel.textContent = this.state.gamma.toFixed(2);
    });
    this.refineButton.addEventListener("click", () => {
      void this.refineSelection();
    });
    this.backButton.addEventListener("click", () => {
      this.state = st.popRefinement(this.state);
      void this.render();
    });
    this.bindDrag(this.imageCanvas, (rect, lasso) => this.selectInImage(rect, lasso));
    this.bindDrag(this.scatterCanvas, (rect, lasso) => this.selectInScatter(rect, lasso));
  }

  /** Drag produces a rect, or a lasso polygon when shift is held. */
  private bindDrag(
    canvas: HTMLCanvasElement,
    apply: (rect: Rect, lasso: number[] | null) => void,
  ): void {
    let dragging = false;
    let lasso: number[] | null = null;
    let start: [number, number] = [0, 0];
    let last: [number, number] = [0, 0];
    const local = (ev: PointerEvent): [number, number] => {
      const box = canvas.getBoundingClientRect();
      return [
        ((ev.clientX - box.left) / box.width) * canvas.width,
        ((ev.clientY - box.top) / box.height) * canvas.height,
      ];
    };
    canvas.addEventListener("pointerdown", (ev) => {
      dragging = true;
      start = local(ev);
      last = start;
      lasso = ev.shiftKey ? [...start] : null;
      canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) {
        return;
      }
      last = local(ev);
      if (lasso !== null) {
        lasso.push(last[0], last[1]);
      }
    });
    canvas.addEventListener("pointerup", () => {
      if (!dragging) {
        return;
      }
      dragging = false;
      apply({ x0: start[0], y0: start[1], x1: last[0], y1: last[1] }, lasso);
      lasso = null;
    });
  }

  private async ensureLevel(level: number): Promise<LevelData> {
    const cached = this.levels.get(level);
    if (cached !== undefined) {
      return cached;
    }
    const signal = this.loadAbort.signal;
    const pairs = await this.client.labelsRle(level, signal);
    const labels = await this.decoder.decode(pairs, this.meta.width * this.meta.height);
    let coords: Float32Array | null = null;
    try {
      coords = await this.client.embedding(level, signal);
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 503)) {
        throw err;
      }
      // no embedding artifact for this level, scatter stays empty
    }
    const data = { labels, coords };
    this.levels.set(level, data);
    return data;
  }

  /** Parent maps derive from consecutive label rasters on demand. */
  private async ensureParentMaps(lo: number, hi: number): Promise<void> {
    for (let l = lo; l < hi; l++) {
      if (this.parentMaps[l] === undefined) {
        const child = await this.ensureLevel(l);
        const parent = await this.ensureLevel(l + 1);
        this.parentMaps[l] = st.parentMapFromLabels(
          child.labels,
          parent.labels,
          this.meta.level_sizes[l],
        );
      }
    }
  }

  private async changeLevel(level: number): Promise<void> {
    // cancel whatever the previous view was still fetching
    this.loadAbort.abort();
    this.loadAbort = new AbortController();
    try {
      await this.ensureLevel(level);
      const lo = Math.min(level, this.state.level);
      const hi = Math.max(level, this.state.level);
      await this.ensureParentMaps(lo, hi);
    } catch (err) {
      this.showError(err);
    }
    this.state = st.setLevel(this.state, level, this.parentMaps);
    await this.render();
  }

  private async selectInImage(rect: Rect, lasso: number[] | null): Promise<void> {
    const data = await this.ensureLevel(this.state.level);
    // image lassos rasterize to their bounding box, rect covers both cases
    const ids = idsFromImageRect(data.labels, this.meta.width, this.meta.height, rect);
    this.applySelection(ids);
  }

  private async selectInScatter(rect: Rect, lasso: number[] | null): Promise<void> {
    const frame = st.activeFrame(this.state);
    const coords = frame !== null ? frame.coords : (await this.ensureLevel(this.state.level)).coords;
    if (coords === null) {
      this.notice("no embedding for this level");
      return;
    }
    const t = this.scatterTransform;
    const dataRect: Rect = (() => {
      const [x0, y0] = toData(t, rect.x0, rect.y0);
      const [x1, y1] = toData(t, rect.x1, rect.y1);
      return { x0, y0, x1, y1 };
    })();
    let indices: Set<number>;
    if (lasso !== null && lasso.length >= 6) {
      const poly: number[] = [];
      for (let i = 0; i + 1 < lasso.length; i += 2) {
        const [x, y] = toData(t, lasso[i], lasso[i + 1]);
        poly.push(x, y);
      }
      indices = idsFromEmbeddingLasso(coords, poly);
    } else {
      indices = idsFromEmbeddingRect(coords, dataRect);
    }
    // inside a refinement the plot indexes the subset, not raw ids
    const ids =
      frame === null ? indices : new Set([...indices].map((i) => frame.subset[i]));
    this.applySelection(ids);
  }

  private applySelection(ids: Set<number>): void {
    const frame = st.activeFrame(this.state);
    if (frame !== null) {
      const allowed = new Set(frame.subset);
      for (const id of [...ids]) {
        if (!allowed.has(id)) {
          ids.delete(id);
        }
      }
    }
    this.state = st.setSelection(this.state, ids, this.meta.level_sizes);
    void this.render();
  }

  private async refineSelection(): Promise<void> {
    if (this.refining) {
      return;
    }
    if (this.state.selection.size === 0) {
      this.notice("select superpixels to refine");
      return;
    }
    if (this.state.level < 1) {
      this.notice("level 0 has no children to refine into");
      return;
    }
    this.refining = true;
    this.refineButton.disabled = true;
    try {
      const ids = [...this.state.selection].sort((a, b) => a - b);
      const view = await this.client.refineAndWait(
        { level: this.state.level, ids, gamma: this.state.gamma, seed: 0 },
        {
          onProgress: (p) => {
            this.progressEl.textContent = `refining: ${Math.round(p * 100)}%`;
          },
        },
      );
      this.progressEl.textContent = "";
      await this.ensureLevel(view.level);
      this.state = st.pushRefinement(this.state, {
        ref: view.ref,
        requestedLevel: this.state.level,
        requestedIds: ids,
        gamma: this.state.gamma,
        subsetLevel: view.level,
        subset: view.subset,
        isolated: view.isolated,
        coords: view.coords,
      });
      await this.render();
    } catch (err) {
      this.progressEl.textContent = "";
      this.showError(err);
    } finally {
      this.refining = false;
      this.refineButton.disabled = false;
    }
  }

  private async channelMeans(level: number): Promise<Float32Array> {
    const channel = Number(this.channelSelect.value || "0");
    const key = `${level}:${channel}`;
    const cached = this.meansCache.get(key);
    if (cached !== undefined) {
      return cached;
    }
    const means = await this.client.channelMeans(channel, level, this.loadAbort.signal);
    this.meansCache.set(key, means);
    return means;
  }

  /** Per-superpixel colors for the active coloring mode. */
  private async levelColors(level: number, coords: Float32Array | null): Promise<Uint8Array> {
    const m = this.meta.level_sizes[level];
    if (this.state.mode === "channel-mean") {
      return grayRamp(await this.channelMeans(level));
    }
    if (this.state.mode === "random-gray" || coords === null) {
      return randomGrays(m, level);
    }
    return colorsFromEmbedding(coords);
  }

  private async render(): Promise<void> {
    const frame = st.activeFrame(this.state);
    const level = this.state.level;
    const data = await this.ensureLevel(level);
    const coords = frame !== null ? frame.coords : data.coords;
    const universe = frame !== null ? new Set<number>(frame.subset) : null;

    let colors: Uint8Array;
    try {
      colors = await this.levelColors(level, coords);
    } catch (err) {
      this.showError(err);
      colors = randomGrays(this.meta.level_sizes[level], level);
    }

    // image view
    const rgba = rasterizeLabels(
      data.labels,
      this.meta.width,
      this.meta.height,
      frame !== null && coords !== null ? this.subsetColors(frame, colors) : colors,
      this.state.selection,
      universe,
    );
    overlayBoundaries(rgba, boundaryMask(data.labels, this.meta.width, this.meta.height));
    const ictx = this.imageCanvas.getContext("2d");
    if (ictx !== null) {
      ictx.putImageData(new ImageData(rgba, this.meta.width, this.meta.height), 0, 0);
    }

    // scatter view
    const sctx = this.scatterCanvas.getContext("2d");
    if (sctx !== null) {
      if (coords !== null) {
        this.scatterTransform = fitTransform(
          coords,
          this.scatterCanvas.width,
          this.scatterCanvas.height,
        );
        const pointColors =
          frame !== null ? colorsFromEmbedding(coords) : colors;
        const selectedIndices =
          frame === null
            ? this.state.selection
            : new Set(
                [...frame.subset.keys()].filter((i) =>
                  this.state.selection.has(frame.subset[i]),
                ),
              );
        drawScatter(sctx, coords, pointColors, selectedIndices, this.scatterTransform);
      } else {
        sctx.clearRect(0, 0, this.scatterCanvas.width, this.scatterCanvas.height);
      }
    }

    // chrome
    this.levelSlider.value = String(level);
    this.levelLabel.textContent = `level ${level} (${this.meta.level_sizes[level]} superpixels)`;
    this.gammaSlider.value = String(this.state.gamma);
    this.gammaLabel.textContent = this.state.gamma.toFixed(2);
    this.statusEl.textContent = `${st.selectionCount(this.state)} selected`;
    this.breadcrumbsEl.textContent = st.breadcrumbs(this.state);
    this.backButton.disabled = this.state.stack.length === 0;
    this.noticeEl.textContent = this.state.notice ?? "";
  }

  /** Inside a refinement, image colors come from the refined layout. */
  private subsetColors(frame: st.RefinementFrame, fallback: Uint8Array): Uint8Array {
    const m = this.meta.level_sizes[frame.subsetLevel];
    const out = new Uint8Array(fallback);
    if (this.state.mode !== "colormap2d") {
      return out;
    }
    const refined = colorsFromEmbedding(frame.coords);
    for (let i = 0; i < frame.subset.length; i++) {
      const id = frame.subset[i];
      if (id < m) {
        out[3 * id] = refined[3 * i];
        out[3 * id + 1] = refined[3 * i + 1];
        out[3 * id + 2] = refined[3 * i + 2];
      }
    }
    return out;
  }

  private notice(text: string): void {
    this.noticeEl.textContent = text;
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.notice(`server: ${err.message}`);
    } else if (err instanceof Error && err.name !== "AbortError") {
      this.notice(err.message);
    }
  }
}

async function main(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const client = new ExplorerClient(params.get("api") ?? "");
  const meta = await client.meta();
  const app = new App(client, meta);
  await app.start();
}

void main().catch((err) => {
  const el = document.getElementById("notice");
  if (el !== null) {
    el.textContent = err instanceof Error ? err.message : String(err);
  }
});
