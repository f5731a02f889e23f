/**
 * View state shared by the image and embedding views.
 *
 * Both views render one selection set, so state transitions are pure
 * functions here and the rendering layer never owns ids. Refinements
 * stack as breadcrumbs; each frame snapshots the view it replaced so
 * back-navigation restores it exactly. Cross-level selection mapping
 * goes through parent maps derived from consecutive label rasters:
 * upward selections map ids to parents, downward selections expand to
 * children, and a missing map clears the selection with a notice
 * instead of silently dropping it.
 */

export type ColoringMode = "colormap2d" | "channel-mean" | "random-gray";

export interface ViewSnapshot {
  level: number;
  selection: Set<number>;
  mode: ColoringMode;
  gamma: number;
}

export interface RefinementFrame {
  ref: string;
  requestedLevel: number;
  requestedIds: number[];
  gamma: number | null;
  subsetLevel: number;
  subset: Uint32Array;
  isolated: Uint32Array;
  coords: Float32Array;
  saved: ViewSnapshot;
}

export interface ViewState {
  level: number;
  selection: Set<number>;
  mode: ColoringMode;
  gamma: number;
  stack: RefinementFrame[];
  notice: string | null;
}

const NO_PARENT = 0xffffffff;

export function createState(level = 0): ViewState {
  return {
    level,
    selection: new Set(),
    mode: "colormap2d",
    gamma: 0.5,
    stack: [],
    notice: null,
  };
}

export function snapshot(state: ViewState): ViewSnapshot {
  return {
    level: state.level,
    selection: new Set(state.selection),
    mode: state.mode,
    gamma: state.gamma,
  };
}

/**
 * Replace the active selection. With `levelSizes` given, ids are checked
 * against the displayed universe: the current level, or the refinement
 * subset when one is open. An empty iterable clears the highlight.
 */
export function setSelection(
  state: ViewState,
  ids: Iterable<number>,
  levelSizes?: number[],
): ViewState {
  const selection = new Set<number>();
  for (const id of ids) {
    selection.add(id);
  }
  if (levelSizes !== undefined) {
    const top = state.stack[state.stack.length - 1];
    const allowed = top ? new Set(top.subset) : null;
    for (const id of selection) {
      const ok = allowed
        ? allowed.has(id)
        : Number.isInteger(id) && id >= 0 && id < levelSizes[state.level];
      if (!ok) {
        throw new Error(`selection id ${id} is not in the displayed view`);
      }
    }
  }
  return { ...state, selection, notice: null };
}

export function selectionCount(state: ViewState): number {
  return state.selection.size;
}

export function setMode(state: ViewState, mode: ColoringMode): ViewState {
  return { ...state, mode };
}

export function setGamma(state: ViewState, gamma: number): ViewState {
  return { ...state, gamma: Math.min(1, Math.max(0, gamma)) };
}

/**
 * Parent map from two consecutive label rasters: the parent of child id
 * c is the coarser label under any of c's pixels. Nesting makes that
 * well defined; a child spanning two parents is a data error.
 */
export function parentMapFromLabels(
  childLabels: Uint32Array,
  parentLabels: Uint32Array,
  childCount: number,
): Uint32Array {
  if (childLabels.length !== parentLabels.length) {
    throw new Error(
      `label rasters differ in size: ${childLabels.length} vs ${parentLabels.length}`,
    );
  }
  const parent = new Uint32Array(childCount).fill(NO_PARENT);
  for (let p = 0; p < childLabels.length; p++) {
    const c = childLabels[p];
    if (c >= childCount) {
      throw new Error(`label ${c} outside a level of ${childCount} superpixels`);
    }
    const q = parentLabels[p];
    if (parent[c] === NO_PARENT) {
      parent[c] = q;
    } else if (parent[c] !== q) {
      throw new Error(`superpixel ${c} spans parents ${parent[c]} and ${q}: levels are not nested`);
    }
  }
  for (let c = 0; c < childCount; c++) {
    if (parent[c] === NO_PARENT) {
      throw new Error(`superpixel ${c} has no pixels`);
    }
  }
  return parent;
}

/** Child ids of a parent selection, ascending. */
export function expandToChildren(parentOf: Uint32Array, ids: ReadonlySet<number>): number[] {
  const out: number[] = [];
  for (let c = 0; c < parentOf.length; c++) {
    if (ids.has(parentOf[c])) {
      out.push(c);
    }
  }
  return out;
}

/**
 * Map a selection between levels. `parentMaps[l]` maps level-l ids to
 * level-(l+1) ids. Returns null when a needed map is missing, which the
 * caller must treat as "clear with notice".
 */
export function mapSelection(
  ids: ReadonlySet<number>,
  fromLevel: number,
  toLevel: number,
  parentMaps: Array<Uint32Array | undefined>,
): Set<number> | null {
  let current = new Set(ids);
  let level = fromLevel;
  while (level < toLevel) {
    const map = parentMaps[level];
    if (map === undefined) {
      return null;
    }
    const next = new Set<number>();
    for (const id of current) {
      next.add(map[id]);
    }
    current = next;
    level += 1;
  }
  while (level > toLevel) {
    const map = parentMaps[level - 1];
    if (map === undefined) {
      return null;
    }
    current = new Set(expandToChildren(map, current));
    level -= 1;
  }
  return current;
}

/**
 * Move the level slider. Inside a refinement the stack is dropped first
 * (with a notice); the subset ids are real child-level ids, so the
 * remaining selection still maps through parent maps like any other.
 */
export function setLevel(
  state: ViewState,
  level: number,
  parentMaps: Array<Uint32Array | undefined>,
): ViewState {
  let base = state;
  let notice: string | null = null;
  if (state.stack.length > 0) {
    base = { ...state, stack: [] };
    notice = "left refinement view";
  }
  if (level === base.level) {
    return { ...base, notice };
  }
  if (base.selection.size === 0) {
    return { ...base, level, selection: new Set(), notice };
  }
  const mapped = mapSelection(base.selection, base.level, level, parentMaps);
  if (mapped === null) {
    return {
      ...base,
      level,
      selection: new Set(),
      notice: "selection cleared: no parent map between the levels",
    };
  }
  return { ...base, level, selection: mapped, notice };
}

/**
 * Enter a refinement view. The frame snapshots the state being replaced;
 * the view switches to the subset at the child level with a cleared
 * selection.
 */
export function pushRefinement(
  state: ViewState,
  frame: Omit<RefinementFrame, "saved">,
): ViewState {
  const full: RefinementFrame = { ...frame, saved: snapshot(state) };
  return {
    ...state,
    level: frame.subsetLevel,
    selection: new Set(),
    stack: [...state.stack, full],
    notice: `refined ${frame.requestedIds.length} superpixels into ${frame.subset.length} at level ${frame.subsetLevel}`,
  };
}

/** Back-navigation: restore the view the top refinement replaced. */
export function popRefinement(state: ViewState): ViewState {
  const top = state.stack[state.stack.length - 1];
  if (top === undefined) {
    return state;
  }
  return {
    ...state,
    level: top.saved.level,
    selection: new Set(top.saved.selection),
    mode: top.saved.mode,
    gamma: top.saved.gamma,
    stack: state.stack.slice(0, -1),
    notice: null,
  };
}

/** The refinement frame currently displayed, if any. */
export function activeFrame(state: ViewState): RefinementFrame | null {
  return state.stack[state.stack.length - 1] ?? null;
}

/** One-line breadcrumb text for the refinement stack. */
export function breadcrumbs(state: ViewState): string {
  return state.stack
    .map((f) => `level ${f.requestedLevel}: ${f.requestedIds.length} -> ${f.subset.length}`)
    .join(" / ");
}
