/**
 * Typed client for the explorer HTTP API.
 *
 * Binary payloads are little-endian on the wire, so parsing goes through
 * DataView instead of typed-array casts. Every response carries an
 * X-Hierarchy-Hash header; the client pins the first value it sees and
 * refuses to mix data from two different hierarchies in one session.
 */

import { rleDecode } from "./rle.js";

export interface Meta {
  width: number;
  height: number;
  channels: number;
  channel_names: string[] | null;
  levels: number;
  level_sizes: number[];
  stalled: boolean;
  provenance: string;
  point_cap: number;
}

export interface LevelInfo {
  level: number;
  m: number;
  has_embedding: boolean;
}

export interface RefineParams {
  level: number;
  ids: number[];
  gamma?: number | null;
  seed?: number;
}

export interface JobStatus {
  status: "queued" | "running" | "done" | "failed";
  progress: number;
  result_ref: string | null;
  error: string | null;
}

export interface RefinedSubset {
  level: number;
  subset: number[];
  isolated: number[];
}

/** A completed refinement: subset ids at the child level plus their layout. */
export interface RefinementView {
  ref: string;
  level: number;
  subset: Uint32Array;
  isolated: Uint32Array;
  coords: Float32Array;
  cached: boolean;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export function readUint32(buf: ArrayBuffer): Uint32Array {
  if (buf.byteLength % 4 !== 0) {
    throw new Error(`binary payload of ${buf.byteLength} bytes is not u32 aligned`);
  }
  const view = new DataView(buf);
  const out = new Uint32Array(buf.byteLength / 4);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getUint32(i * 4, true);
  }
  return out;
}

export function readFloat32(buf: ArrayBuffer): Float32Array {
  if (buf.byteLength % 4 !== 0) {
    throw new Error(`binary payload of ${buf.byteLength} bytes is not f32 aligned`);
  }
  const view = new DataView(buf);
  const out = new Float32Array(buf.byteLength / 4);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

function sleep(ms: number, signal?: AbortSignal): Promise<void> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => {
      cleanup();
      resolve();
    }, ms);
    const onAbort = () => {
      cleanup();
      reject(new ApiError(0, "request aborted"));
    };
    const cleanup = () => {
      clearTimeout(timer);
      signal?.removeEventListener("abort", onAbort);
    };
    if (signal?.aborted) {
      onAbort();
      return;
    }
    signal?.addEventListener("abort", onAbort);
  });
}

export class ExplorerClient {
  private pinnedHash: string | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  /** Hierarchy content hash pinned from the first response, if any. */
  get hierarchyHash(): string | null {
    return this.pinnedHash;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const hash = resp.headers.get("x-hierarchy-hash");
    if (hash !== null) {
      if (this.pinnedHash === null) {
        this.pinnedHash = hash;
      } else if (hash !== this.pinnedHash) {
        throw new ApiError(409, `hierarchy changed during the session: ${hash}`);
      }
    }
    if (!resp.ok) {
      let detail = `${resp.status} ${resp.statusText}`;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === "string") {
          detail = body.detail;
        }
      } catch {
        // non-JSON error body, keep the status line
      }
      throw new ApiError(resp.status, detail);
    }
    return resp;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.request(path, init);
    return (await resp.json()) as T;
  }

  private async bytes(path: string, signal?: AbortSignal): Promise<ArrayBuffer> {
    const resp = await this.request(path, { signal });
    return resp.arrayBuffer();
  }

  meta(signal?: AbortSignal): Promise<Meta> {
    return this.json("/api/meta", { signal });
  }

  levels(signal?: AbortSignal): Promise<LevelInfo[]> {
    return this.json("/api/levels", { signal });
  }

  /** Raw (run, value) pairs, for off-thread decoding. */
  async labelsRle(level: number, signal?: AbortSignal): Promise<Uint32Array> {
    return readUint32(await this.bytes(`/api/level/${level}/labels`, signal));
  }

  async labels(level: number, expectedSize?: number, signal?: AbortSignal): Promise<Uint32Array> {
    return rleDecode(await this.labelsRle(level, signal), expectedSize);
  }

  /** Flat (x, y) pairs, one per superpixel. */
  async embedding(level: number, signal?: AbortSignal): Promise<Float32Array> {
    return readFloat32(await this.bytes(`/api/level/${level}/embedding`, signal));
  }

  async colorized(level: number, signal?: AbortSignal): Promise<Uint8Array> {
    return new Uint8Array(await this.bytes(`/api/level/${level}/colorized`, signal));
  }

  async channelMeans(channel: number, level = 0, signal?: AbortSignal): Promise<Float32Array> {
    return readFloat32(await this.bytes(`/api/channel/${channel}/means?level=${level}`, signal));
  }

  refine(params: RefineParams, signal?: AbortSignal): Promise<{ job_id: string; cached: boolean }> {
    return this.json("/api/refine", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        level: params.level,
        ids: params.ids,
        gamma: params.gamma ?? null,
        seed: params.seed ?? 0,
      }),
      signal,
    });
  }

  job(jobId: string, signal?: AbortSignal): Promise<JobStatus> {
    return this.json(`/api/job/${jobId}`, { signal });
  }

  refinedSubset(ref: string, signal?: AbortSignal): Promise<RefinedSubset> {
    return this.json(`/api/refined/${ref}/subset`, { signal });
  }

  async refinedEmbedding(ref: string, signal?: AbortSignal): Promise<Float32Array> {
    return readFloat32(await this.bytes(`/api/refined/${ref}/embedding`, signal));
  }

  /** Submit a refinement, poll the job to completion, fetch the result. */
  async refineAndWait(
    params: RefineParams,
    opts: { pollMs?: number; signal?: AbortSignal; onProgress?: (p: number) => void } = {},
  ): Promise<RefinementView> {
    const { job_id, cached } = await this.refine(params, opts.signal);
    const pollMs = opts.pollMs ?? 100;
    for (;;) {
      const status = await this.job(job_id, opts.signal);
      opts.onProgress?.(status.progress);
      if (status.status === "failed") {
        throw new ApiError(500, status.error ?? "refinement failed");
      }
      if (status.status === "done" && status.result_ref !== null) {
        const ref = status.result_ref;
        const subset = await this.refinedSubset(ref, opts.signal);
        const coords = await this.refinedEmbedding(ref, opts.signal);
        return {
          ref,
          level: subset.level,
          subset: Uint32Array.from(subset.subset),
          isolated: Uint32Array.from(subset.isolated),
          coords,
          cached,
        };
      }
      await sleep(pollMs, opts.signal);
    }
  }
}
