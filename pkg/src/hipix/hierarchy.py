"""Superpixel hierarchy construction.

Levels are built bottom-up: every superpixel proposes a merge with the
spatially adjacent superpixel whose visit distribution overlaps its own
the most (highest Bhattacharyya coefficient), intents are resolved with
union-find so chains and mutual pairs collapse together, and the
transition matrix is coarse-grained to the new superpixels. A
superpixel whose every spatial neighbor has zero overlap stays
unmerged on that level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse

from . import DataError
from .fileio import read_binary, rle_decode, rle_encode, write_binary
from .graph import NeighborGraph
from .walks import TransitionMatrix, WalkParams, merge_transition_matrix

logger = logging.getLogger(__name__)

HIERARCHY_MAGIC = b"HXHIER1\0"

DEFAULT_MAX_LEVELS = 64


@dataclass
class SuperpixelLevel:
    """One segmentation level: per-pixel labels plus region adjacency."""

    level: int
    labels: np.ndarray  # (n_pixels,) superpixel id per pixel
    sizes: np.ndarray  # (m,) pixel counts
    rag: np.ndarray  # (E, 2) adjacent superpixel pairs, u < v
    parent: np.ndarray | None = None  # (m,) id on the next level

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.rag = np.asarray(self.rag, dtype=np.int64).reshape(-1, 2)
        if self.parent is not None:
            self.parent = np.asarray(self.parent, dtype=np.int64)

    @property
    def m(self) -> int:
        return self.sizes.shape[0]


@dataclass
class Hierarchy:
    levels: list[SuperpixelLevel]
    transitions: list[TransitionMatrix]
    width: int
    height: int
    stalled: bool = False

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_sizes(self) -> list[int]:
        return [lv.m for lv in self.levels]

    def pixel_labels(self, level: int) -> np.ndarray:
        return self.levels[level].labels

    def children_of(self, level: int, ids: np.ndarray) -> np.ndarray:
        """Level-(l-1) superpixels whose parent is in ``ids``."""
        if level < 1 or level >= self.n_levels:
            raise DataError(f"level {level} has no children")
        parent = self.levels[level - 1].parent
        mask = np.zeros(self.levels[level].m, dtype=bool)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise DataError("empty selection")
        if ids.min() < 0 or ids.max() >= mask.size:
            raise DataError("selection references nonexistent superpixels")
        mask[ids] = True
        return np.flatnonzero(mask[parent])


# ---------------------------------------------------------------------------
# Bhattacharyya similarity
# ---------------------------------------------------------------------------


def bhattacharyya(T: TransitionMatrix, r: int, s: int) -> float:
    """Overlap of two visit distributions: sum_t sqrt(T(r,t) T(s,t))."""
    sq = T.sqrt_stochastic()
    lo_r, hi_r = sq.indptr[r], sq.indptr[r + 1]
    lo_s, hi_s = sq.indptr[s], sq.indptr[s + 1]
    ir, dr = sq.indices[lo_r:hi_r], sq.data[lo_r:hi_r]
    is_, ds = sq.indices[lo_s:hi_s], sq.data[lo_s:hi_s]
    common, pr, ps = np.intersect1d(ir, is_, assume_unique=True, return_indices=True)
    if common.size == 0:
        return 0.0
    return float(np.dot(dr[pr], ds[ps]))


def bhattacharyya_pairs(
    T: TransitionMatrix, rows: np.ndarray, cols: np.ndarray, chunk: int = 8192
) -> np.ndarray:
    """Vectorized coefficients for an edge list (rows[i], cols[i])."""
    sq = T.sqrt_stochastic()
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.empty(rows.shape[0], dtype=np.float64)
    for start in range(0, rows.shape[0], chunk):
        sl = slice(start, min(start + chunk, rows.shape[0]))
        prod = sq[rows[sl]].multiply(sq[cols[sl]])
        out[sl] = np.asarray(prod.sum(axis=1)).ravel()
    return out


# ---------------------------------------------------------------------------
# Merge rounds
# ---------------------------------------------------------------------------


class UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, x: int) -> int:
        root = x
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def boruvka_merge_level(
    level: SuperpixelLevel, T: TransitionMatrix, bc_threshold: float = 0.0
) -> np.ndarray:
    """One merge round; returns merge_map from old ids to contiguous new ids.

    Each superpixel with a region neighbor of coefficient above
    ``bc_threshold`` intends to merge with its best neighbor (ties break
    to the lowest neighbor id); union-find collapses intent chains. New
    ids are assigned by first appearance in old-id order.
    """
    m = level.m
    if T.size != m:
        raise DataError(f"level has {m} superpixels but T is {T.size}x{T.size}")
    uf = UnionFind(m)
    if level.rag.shape[0] > 0:
        bc = bhattacharyya_pairs(T, level.rag[:, 0], level.rag[:, 1])
        src = np.concatenate([level.rag[:, 0], level.rag[:, 1]])
        dst = np.concatenate([level.rag[:, 1], level.rag[:, 0]])
        both = np.concatenate([bc, bc])
        order = np.lexsort((dst, -both, src))
        src, dst, both = src[order], dst[order], both[order]
        first = np.ones(src.shape[0], dtype=bool)
        first[1:] = src[1:] != src[:-1]
        bs, bd, bb = src[first], dst[first], both[first]
        for s, d, b in zip(bs, bd, bb):
            if b > bc_threshold:
                uf.union(int(s), int(d))
    roots = np.fromiter((uf.find(i) for i in range(m)), dtype=np.int64, count=m)
    _, merge_map = np.unique(roots, return_inverse=True)
    return merge_map.astype(np.int64)


def _coarsen_rag(rag: np.ndarray, merge_map: np.ndarray) -> np.ndarray:
    if rag.shape[0] == 0:
        return rag.reshape(0, 2)
    mapped = merge_map[rag]
    lo = mapped.min(axis=1)
    hi = mapped.max(axis=1)
    keep = lo != hi
    pairs = np.stack([lo[keep], hi[keep]], axis=1)
    if pairs.shape[0] == 0:
        return pairs
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    uniq = np.ones(pairs.shape[0], dtype=bool)
    uniq[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
    return pairs[uniq]


def level_zero(n_pixels: int, adjacency_edges: np.ndarray) -> SuperpixelLevel:
    """Singleton-superpixel base level; the RAG is the pixel adjacency."""
    edges = np.asarray(adjacency_edges, dtype=np.int64).reshape(-1, 2)
    return SuperpixelLevel(
        level=0,
        labels=np.arange(n_pixels, dtype=np.int64),
        sizes=np.ones(n_pixels, dtype=np.int64),
        rag=edges,
    )


def build_hierarchy(
    width: int,
    height: int,
    adjacency_edges: np.ndarray,
    T0: TransitionMatrix,
    max_levels: int = DEFAULT_MAX_LEVELS,
    bc_threshold: float = 0.0,
) -> Hierarchy:
    n = width * height
    if T0.size != n:
        raise DataError(f"T0 is {T0.size}x{T0.size} but the image has {n} pixels")
    levels = [level_zero(n, adjacency_edges)]
    transitions = [T0]
    stalled = False
    while True:
        cur = levels[-1]
        T = transitions[-1]
        if cur.m <= 1 or cur.level + 1 >= max_levels:
            break
        merge_map = boruvka_merge_level(cur, T, bc_threshold)
        m_new = int(merge_map.max()) + 1
        if m_new == cur.m:
            stalled = True
            logger.info("stalled at level %d with %d superpixels", cur.level, cur.m)
            break
        cur.parent = merge_map
        labels = merge_map[cur.labels]
        sizes = np.bincount(merge_map, weights=cur.sizes).astype(np.int64)
        levels.append(
            SuperpixelLevel(
                level=cur.level + 1,
                labels=labels,
                sizes=sizes,
                rag=_coarsen_rag(cur.rag, merge_map),
            )
        )
        transitions.append(merge_transition_matrix(T, merge_map))
        logger.info("level %d: %d superpixels", cur.level + 1, m_new)
    return Hierarchy(
        levels=levels, transitions=transitions, width=width, height=height, stalled=stalled
    )


# ---------------------------------------------------------------------------
# Geodesic Hausdorff distance between pixel sets
# ---------------------------------------------------------------------------


def geodesic_hausdorff(
    graph: NeighborGraph,
    set_a: np.ndarray,
    set_b: np.ndarray,
    samples: int = 100,
    seed: int = 0,
) -> float:
    """Worst-case shortest-path mismatch between two pixel sets.

    Distances are shortest paths over the attribute graph with edge
    lengths delta. Each set is subsampled uniformly to at most
    ``samples`` pixels; for singleton sets the value is just their
    shortest-path distance.
    """
    set_a = np.unique(np.asarray(set_a, dtype=np.int64))
    set_b = np.unique(np.asarray(set_b, dtype=np.int64))
    if set_a.size == 0 or set_b.size == 0:
        raise DataError("both pixel sets must be non-empty")
    for s in (set_a, set_b):
        if s.min() < 0 or s.max() >= graph.n:
            raise DataError("pixel ids out of range")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    if set_a.size > samples:
        set_a = np.sort(rng.choice(set_a, size=samples, replace=False))
    if set_b.size > samples:
        set_b = np.sort(rng.choice(set_b, size=samples, replace=False))
    adj = scipy.sparse.csr_matrix(
        (graph.distances, graph.indices, graph.indptr), shape=(graph.n, graph.n)
    )
    dmat = scipy.sparse.csgraph.dijkstra(adj, directed=False, indices=set_a)
    cross = dmat[:, set_b]
    d_ab = float(cross.min(axis=1).max())
    d_ba = float(cross.min(axis=0).max())
    return max(d_ab, d_ba)


# ---------------------------------------------------------------------------
# Hierarchy file
# ---------------------------------------------------------------------------


def save_hierarchy(path: str | Path, h: Hierarchy, extra: dict[str, str] | None = None) -> None:
    header = {
        "width": str(h.width),
        "height": str(h.height),
        "levels": str(h.n_levels),
        "stalled": "1" if h.stalled else "0",
        "level_sizes": ",".join(str(m) for m in h.level_sizes()),
    }
    wp = h.transitions[0].walk_params if h.transitions else None
    if wp is not None:
        header.update(
            walks=str(wp.walks), steps=str(wp.steps), decay=repr(wp.decay), seed=str(wp.seed)
        )
    if extra:
        header.update(extra)
    arrays = []
    for lv in h.levels:
        arrays.append((f"labels_rle_{lv.level}", "u32", rle_encode(lv.labels)))
        arrays.append((f"sizes_{lv.level}", "u32", lv.sizes.astype(np.uint32)))
        if lv.parent is not None:
            arrays.append((f"parent_{lv.level}", "u32", lv.parent.astype(np.uint32)))
    write_binary(path, HIERARCHY_MAGIC, header, arrays)


def load_hierarchy(
    path: str | Path,
    T0: TransitionMatrix | None = None,
    adjacency_edges: np.ndarray | None = None,
) -> Hierarchy:
    """Read a hierarchy; transitions are replayed from T0 when provided.

    The stored file has no RAGs; they are rebuilt from
    ``adjacency_edges`` when given, otherwise left empty (enough for
    evaluation and serving, which never re-merge).
    """
    header, arrays = read_binary(path, HIERARCHY_MAGIC)
    width, height = int(header["width"]), int(header["height"])
    n = width * height
    n_levels = int(header["levels"])
    levels = []
    for l in range(n_levels):
        labels = rle_decode(arrays[f"labels_rle_{l}"], expected_size=n).astype(np.int64)
        sizes = arrays[f"sizes_{l}"].astype(np.int64)
        parent = arrays.get(f"parent_{l}")
        levels.append(
            SuperpixelLevel(
                level=l,
                labels=labels,
                sizes=sizes,
                rag=np.empty((0, 2), dtype=np.int64),
                parent=None if parent is None else parent.astype(np.int64),
            )
        )
    if adjacency_edges is not None:
        rag = np.asarray(adjacency_edges, dtype=np.int64).reshape(-1, 2)
        for lv in levels:
            lv.rag = rag if lv.level == 0 else _coarsen_rag(levels[lv.level - 1].rag, levels[lv.level - 1].parent)
    transitions = []
    if T0 is not None:
        if T0.size != n:
            raise DataError("T0 size does not match the stored hierarchy")
        transitions.append(T0)
        for lv in levels[:-1]:
            transitions.append(merge_transition_matrix(transitions[-1], lv.parent))
    return Hierarchy(
        levels=levels,
        transitions=transitions,
        width=width,
        height=height,
        stalled=header.get("stalled") == "1",
    )
