/**
 * Refinement round-trip against the live server: the client-side flow
 * (submit, poll, fetch) lands the exact subset the server computed, a
 * strict threshold returns exactly the children derived from the label
 * rasters, permuted repeats hit the cache, back-navigation restores the
 * pre-refinement view, and invalid requests surface inline.
 */

import { beforeAll, describe, expect, it } from "vitest";
import { ApiError, ExplorerClient, type Meta } from "../src/api.js";
import {
  createState,
  expandToChildren,
  parentMapFromLabels,
  popRefinement,
  pushRefinement,
  setLevel,
  setSelection,
  snapshot,
} from "../src/state.js";
import { liveBase } from "./setup/live.js";

let client: ExplorerClient;
let meta: Meta;
let labels1: Uint32Array;
let labels2: Uint32Array;

const sorted = (ids: Iterable<number>) => [...ids].sort((a, b) => a - b);

beforeAll(async () => {
  client = new ExplorerClient(liveBase());
  meta = await client.meta();
  labels1 = await client.labels(1, meta.width * meta.height);
  labels2 = await client.labels(2, meta.width * meta.height);
});

describe("refinement round-trip", () => {
  it("lands the server's subset through the full client flow", async () => {
    const progress: number[] = [];
    const view = await client.refineAndWait(
      { level: 2, ids: [0, 1], gamma: 0.05, seed: 4 },
      { pollMs: 25, onProgress: (p) => progress.push(p) },
    );
    // independently re-fetch the result the job produced
    const independent = await client.refinedSubset(view.ref);
    expect(independent.level).toBe(1);
    expect(Array.from(view.subset)).toEqual(independent.subset);
    expect(view.coords.length).toBe(view.subset.length * 2);
    expect(view.level).toBe(1);
    expect(progress[progress.length - 1]).toBe(1);
    // the subset grows out of the selection's children
    const parentOf = parentMapFromLabels(labels1, labels2, meta.level_sizes[1]);
    const children = expandToChildren(parentOf, new Set([0, 1]));
    for (const c of children) {
      expect(view.subset).toContain(c);
    }
    for (const s of view.subset) {
      expect(s).toBeGreaterThanOrEqual(0);
      expect(s).toBeLessThan(meta.level_sizes[1]);
    }
  });

  it("returns exactly the children at the strict threshold", async () => {
    const view = await client.refineAndWait(
      { level: 2, ids: [0, 1], gamma: 1.0, seed: 4 },
      { pollMs: 25 },
    );
    const parentOf = parentMapFromLabels(labels1, labels2, meta.level_sizes[1]);
    expect(Array.from(view.subset)).toEqual(expandToChildren(parentOf, new Set([0, 1])));
  });

  it("serves a permuted repeat from the cache", async () => {
    const first = await client.refine({ level: 2, ids: [0, 1], gamma: 0.05, seed: 4 });
    const repeat = await client.refine({ level: 2, ids: [1, 0], gamma: 0.05, seed: 4 });
    expect(repeat.cached).toBe(true);
    expect(repeat.job_id).toBe(first.job_id);
  });

  it("restores the pre-refinement view on back-navigation", async () => {
    const view = await client.refineAndWait(
      { level: 2, ids: [0, 1], gamma: 0.05, seed: 4 },
      { pollMs: 25 },
    );

    let state = createState(2);
    state = setSelection(state, [0, 1], meta.level_sizes);
    state = { ...state, mode: "channel-mean", gamma: 0.05 };
    const before = snapshot(state);

    state = pushRefinement(state, {
      ref: view.ref,
      requestedLevel: 2,
      requestedIds: [0, 1],
      gamma: 0.05,
      subsetLevel: view.level,
      subset: view.subset,
      isolated: view.isolated,
      coords: view.coords,
    });
    expect(state.level).toBe(1);
    expect(Array.from(state.stack[0].subset)).toEqual(Array.from(view.subset));

    // work inside the refined view, then navigate back
    state = setSelection(state, [view.subset[0]], meta.level_sizes);
    state = { ...state, mode: "random-gray", gamma: 0.8 };
    state = popRefinement(state);

    expect(state.stack.length).toBe(0);
    expect(state.level).toBe(before.level);
    expect(sorted(state.selection)).toEqual(sorted(before.selection));
    expect(state.mode).toBe(before.mode);
    expect(state.gamma).toBe(before.gamma);
  });

  it("reuses the level slider mapping from within the refined view", async () => {
    const view = await client.refineAndWait(
      { level: 2, ids: [0, 1], gamma: 1.0, seed: 4 },
      { pollMs: 25 },
    );
    let state = createState(2);
    state = setSelection(state, [0, 1], meta.level_sizes);
    state = pushRefinement(state, {
      ref: view.ref,
      requestedLevel: 2,
      requestedIds: [0, 1],
      gamma: 1.0,
      subsetLevel: 1,
      subset: view.subset,
      isolated: view.isolated,
      coords: view.coords,
    });
    state = setSelection(state, [view.subset[0]], meta.level_sizes);
    const parentMaps = [undefined, parentMapFromLabels(labels1, labels2, meta.level_sizes[1])];
    state = setLevel(state, 2, parentMaps);
    const parentOf = parentMaps[1]!;
    expect(sorted(state.selection)).toEqual([parentOf[view.subset[0]]]);
  });

  it("surfaces invalid refinement requests inline", async () => {
    for (const body of [
      { level: 0, ids: [0] },
      { level: 2, ids: [] },
      { level: 2, ids: [9999] },
    ]) {
      const err = await client.refine(body as never).then(
        () => null,
        (e: unknown) => e,
      );
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(400);
      expect((err as ApiError).message).toMatch(/invalid selection/);
    }
  });

  it("rejects polling an unknown job", async () => {
    const err = await client.job("job-999999").then(
      () => null,
      (e: unknown) => e,
    );
    expect((err as ApiError).status).toBe(400);
    expect((err as ApiError).message).toMatch(/unknown job/);
  });
});
