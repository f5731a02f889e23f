"""Attribute-space neighbor graph.

Builds the directed kNN graph over pixel attribute vectors (squared
Euclidean distances), symmetrizes it and connects stray components with
MST-selected bridge edges, and calibrates per-row transition
probabilities under a perplexity-matched exponential kernel or the
local-connectivity kernel used by UMAP.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import DataError
from .fileio import read_binary, write_binary
from .image import HighDimImage

logger = logging.getLogger(__name__)

GRAPH_MAGIC = b"HXGRAPH1"

PERPLEXITY_RANGE = (10.0, 100.0)
SIGMA_RANGE = (1e-12, 1e12)
MAX_CALIBRATION_ITERS = 200
ENTROPY_TOLERANCE_BITS = 1e-5


def clamp_perplexity(u: float) -> float:
    lo, hi = PERPLEXITY_RANGE
    return float(min(max(float(u), lo), hi))


def neighbors_per_vertex(u: float) -> int:
    """Neighbor count k = 3u, after clamping u."""
    return int(round(3.0 * clamp_perplexity(u)))


@dataclass
class NeighborGraph:
    """CSR-form weighted graph over attribute vectors.

    ``distances`` holds squared Euclidean attribute distances per edge.
    ``probabilities`` (after calibration) holds per-edge transition
    probabilities in the same CSR order. ``uniform_rows`` flags rows
    where calibration fell back to a uniform distribution.
    """

    n: int
    k: int
    perplexity: float
    indptr: np.ndarray
    indices: np.ndarray
    distances: np.ndarray
    directed: bool
    kernel: str | None = None
    probabilities: np.ndarray | None = None
    sigma: np.ndarray | None = None
    rho: np.ndarray | None = None
    uniform_rows: np.ndarray | None = None

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if self.indptr.shape != (self.n + 1,):
            raise DataError("indptr length must be n + 1")
        if self.indices.shape != self.distances.shape:
            raise DataError("indices and distances must align")

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.distances[lo:hi]

    def row_probabilities(self, i: int) -> np.ndarray:
        if self.probabilities is None:
            raise DataError("graph has no calibrated probabilities")
        return self.probabilities[self.indptr[i] : self.indptr[i + 1]]


def _as_features(source) -> np.ndarray:
    if isinstance(source, HighDimImage):
        return source.as_features()
    arr = np.asarray(source, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {arr.shape}")
    return arr


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense squared Euclidean distance block, clamped at 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :]
    d -= 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def _exact_pair_dists(features: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Per-pair squared distances by direct differencing (no GEMM cancellation)."""
    out = np.empty(rows.shape[0], dtype=np.float64)
    block = 1 << 16
    f = features.astype(np.float64, copy=False)
    for start in range(0, rows.shape[0], block):
        sl = slice(start, min(start + block, rows.shape[0]))
        diff = f[rows[sl]] - f[cols[sl]]
        out[sl] = np.einsum("ij,ij->i", diff, diff)
    return out


# ---------------------------------------------------------------------------
# kNN construction
# ---------------------------------------------------------------------------


def _exact_knn_indices(features: np.ndarray, k: int, block: int = 1024) -> np.ndarray:
    f = features.astype(np.float64, copy=False)
    n = f.shape[0]
    sq = (f * f).sum(axis=1)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = sq[start:stop, None] + sq[None, :] - 2.0 * (f[start:stop] @ f.T)
        np.maximum(d, 0.0, out=d)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(d, k - 1, axis=1)[:, :k]
        pd = np.take_along_axis(d, part, axis=1)
        order = np.lexsort((part, pd), axis=1)
        out[start:stop] = np.take_along_axis(part, order, axis=1)
        # ties straddling the k-th rank need an exact re-selection
        kth = pd.max(axis=1)
        counts = (d <= kth[:, None]).sum(axis=1)
        for local in np.flatnonzero(counts > k):
            rowd = d[local]
            cand = np.flatnonzero(rowd <= kth[local])
            cand = cand[np.lexsort((cand, rowd[cand]))]
            out[start + local] = cand[:k]
    return out


def _descent_knn_indices(
    features: np.ndarray, k: int, seed: int, rounds: int = 10
) -> np.ndarray:
    """Approximate kNN by iterative neighbor-of-neighbor refinement."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    f = features.astype(np.float64, copy=False)
    n = f.shape[0]
    sq = (f * f).sum(axis=1)

    def pair_dists(rows_block: np.ndarray, cand: np.ndarray) -> np.ndarray:
        # cand: (b, q) candidate ids for each row in rows_block
        cf = f[cand]
        d = sq[rows_block][:, None] + sq[cand]
        d -= 2.0 * np.einsum("bc,bqc->bq", f[rows_block], cf)
        np.maximum(d, 0.0, out=d)
        return d

    idx = rng.integers(0, n - 1, size=(n, k))
    idx += idx >= np.arange(n)[:, None]

    cur_idx = idx
    cur_d = np.empty((n, k), dtype=np.float64)
    block = max(1, (1 << 22) // max(1, k * f.shape[1]))
    for start in range(0, n, block):
        rows_block = np.arange(start, min(start + block, n))
        cur_d[rows_block] = pair_dists(rows_block, cur_idx[rows_block])

    for rnd in range(rounds):
        hop_a = rng.integers(0, k, size=(n, 2 * k))
        hop_b = rng.integers(0, k, size=(n, 2 * k))
        mid = np.take_along_axis(cur_idx, hop_a, axis=1)
        two_hop = cur_idx[mid, hop_b]

        src = np.repeat(np.arange(n), k)
        rev_order = np.argsort(cur_idx.ravel(), kind="stable")
        rev_targets = cur_idx.ravel()[rev_order]
        rev_sources = src[rev_order]
        rev_counts = np.bincount(rev_targets, minlength=n)
        rev_indptr = np.concatenate(([0], np.cumsum(rev_counts)))
        rev_take = np.minimum(rev_counts, k)
        rev_pad = np.full((n, k), -1, dtype=np.int64)
        col = np.arange(k)
        mask = col[None, :] < rev_take[:, None]
        flat_pos = (rev_indptr[:-1][:, None] + col[None, :])[mask]
        rev_pad[mask] = rev_sources[flat_pos]
        rev_fill = rng.integers(0, n, size=(n, k))
        rev_pad = np.where(rev_pad < 0, rev_fill, rev_pad)

        cand = np.concatenate([cur_idx, two_hop, rev_pad], axis=1)
        changed = 0
        for start in range(0, n, block):
            rows_block = np.arange(start, min(start + block, n))
            cd = pair_dists(rows_block, cand[rows_block])
            all_idx = np.concatenate([cur_idx[rows_block], cand[rows_block]], axis=1)
            all_d = np.concatenate([cur_d[rows_block], cd], axis=1)
            all_d[all_idx == rows_block[:, None]] = np.inf
            # drop duplicate ids per row, keeping the copy with least distance
            o1 = np.lexsort((all_d, all_idx), axis=1)
            s_idx = np.take_along_axis(all_idx, o1, axis=1)
            s_d = np.take_along_axis(all_d, o1, axis=1)
            dup = s_idx == np.roll(s_idx, 1, axis=1)
            dup[:, 0] = False
            s_d[dup] = np.inf
            o2 = np.lexsort((s_idx, s_d), axis=1)
            new_idx = np.take_along_axis(s_idx, o2, axis=1)[:, :k]
            new_d = np.take_along_axis(s_d, o2, axis=1)[:, :k]
            changed += int((new_idx != cur_idx[rows_block]).sum())
            cur_idx[rows_block] = new_idx
            cur_d[rows_block] = new_d
        logger.debug("descent round %d: %d slots changed", rnd, changed)
        if changed <= max(1, n * k // 1000):
            break
    return cur_idx


def build_knn_graph(
    source, perplexity: float, exact: bool = True, seed: int = 0
) -> NeighborGraph:
    """Directed kNN graph with k = 3u neighbors per vertex."""
    features = _as_features(source)
    n = features.shape[0]
    u = clamp_perplexity(perplexity)
    k = neighbors_per_vertex(perplexity)
    if n <= k:
        raise DataError(f"need more than k={k} points for perplexity {u}, got n={n}")
    if exact:
        idx = _exact_knn_indices(features, k)
    else:
        idx = _descent_knn_indices(features, k, seed=seed)
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    dists = _exact_pair_dists(features, rows, idx.ravel()).reshape(n, k)
    order = np.lexsort((idx, dists), axis=1)
    idx = np.take_along_axis(idx, order, axis=1)
    dists = np.take_along_axis(dists, order, axis=1)
    logger.info("kNN graph: n=%d, k=%d, exact=%s", n, k, exact)
    return NeighborGraph(
        n=n,
        k=k,
        perplexity=u,
        indptr=np.arange(n + 1, dtype=np.int64) * k,
        indices=idx.ravel(),
        distances=dists.ravel(),
        directed=True,
    )


def knn_recall(approx: NeighborGraph, exact: NeighborGraph) -> float:
    """Fraction of true nearest neighbors recovered, averaged over vertices."""
    if approx.n != exact.n:
        raise DataError("graphs must cover the same vertices")
    hits = 0
    total = 0
    for i in range(exact.n):
        truth = set(exact.row(i)[0].tolist())
        found = set(approx.row(i)[0].tolist())
        hits += len(truth & found)
        total += len(truth)
    return hits / total if total else 1.0


# ---------------------------------------------------------------------------
# Symmetrization and component bridging
# ---------------------------------------------------------------------------


def _dense_mst_edges(weights: np.ndarray) -> list[tuple[int, int]]:
    """Prim's algorithm over a dense symmetric weight matrix.

    Ties resolve to the lowest vertex id, so the tree is deterministic
    even when several edges share a weight (including weight 0).
    """
    m = weights.shape[0]
    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    best = weights[0].astype(np.float64).copy()
    best[0] = np.inf
    best_src = np.zeros(m, dtype=np.int64)
    edges: list[tuple[int, int]] = []
    for _ in range(m - 1):
        j = int(np.argmin(best))
        edges.append((int(best_src[j]), j))
        in_tree[j] = True
        best[j] = np.inf
        better = ~in_tree & (weights[j] < best)
        best[better] = weights[j][better]
        best_src[better] = j
    return edges


def _closest_cross_pair(
    features: np.ndarray, a_ids: np.ndarray, b_ids: np.ndarray, block: int = 2048
) -> tuple[int, int]:
    """Minimum-distance pair between two point sets, lowest ids on ties."""
    f = features.astype(np.float64, copy=False)
    best_d = np.inf
    best = (-1, -1)
    for start in range(0, a_ids.shape[0], block):
        chunk = a_ids[start : start + block]
        d = pairwise_sq_dists(f[chunk], f[b_ids])
        pos = int(np.argmin(d))
        r, c = divmod(pos, b_ids.shape[0])
        if d[r, c] < best_d:
            best_d = float(d[r, c])
            best = (int(chunk[r]), int(b_ids[c]))
    return best


def connected_component_labels(n: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    import scipy.sparse
    import scipy.sparse.csgraph

    adj = scipy.sparse.csr_matrix(
        (np.ones(rows.shape[0], dtype=np.int8), (rows, cols)), shape=(n, n)
    )
    _, labels = scipy.sparse.csgraph.connected_components(adj, directed=False)
    return labels


def symmetrize_and_connect(graph: NeighborGraph, source) -> NeighborGraph:
    """Make the edge set undirected and bridge components.

    Bridges follow the helper-MST rule: connected components are reduced
    to their attribute means, an MST is built over the complete graph of
    mean-to-mean distances, and each tree edge contributes the single
    closest cross-component point pair as a new bidirectional edge. A
    graph that is already connected gains no new edges.
    """
    features = _as_features(source)
    if features.shape[0] != graph.n:
        raise DataError("feature count does not match graph size")
    n = graph.n
    rows = np.repeat(np.arange(n, dtype=np.int64), graph.degrees)
    cols = graph.indices
    all_rows = np.concatenate([rows, cols])
    all_cols = np.concatenate([cols, rows])
    all_d = np.concatenate([graph.distances, graph.distances])

    comp = connected_component_labels(n, all_rows, all_cols)
    ncomp = int(comp.max()) + 1 if n else 0
    if ncomp > 1:
        logger.info("bridging %d components", ncomp)
        f64 = features.astype(np.float64)
        means = np.zeros((ncomp, features.shape[1]), dtype=np.float64)
        np.add.at(means, comp, f64)
        means /= np.bincount(comp, minlength=ncomp)[:, None]
        mean_d = pairwise_sq_dists(means, means)
        bridge_rows = []
        bridge_cols = []
        members = [np.flatnonzero(comp == c) for c in range(ncomp)]
        for a, b in _dense_mst_edges(mean_d):
            i, j = _closest_cross_pair(features, members[a], members[b])
            bridge_rows.extend((i, j))
            bridge_cols.extend((j, i))
        br = np.asarray(bridge_rows, dtype=np.int64)
        bc = np.asarray(bridge_cols, dtype=np.int64)
        bd = _exact_pair_dists(features, br, bc)
        all_rows = np.concatenate([all_rows, br])
        all_cols = np.concatenate([all_cols, bc])
        all_d = np.concatenate([all_d, bd])

    order = np.lexsort((all_cols, all_rows))
    ar, ac, ad = all_rows[order], all_cols[order], all_d[order]
    keep = np.ones(ar.shape[0], dtype=bool)
    keep[1:] = (ar[1:] != ar[:-1]) | (ac[1:] != ac[:-1])
    ar, ac, ad = ar[keep], ac[keep], ad[keep]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(ar, minlength=n), out=indptr[1:])
    return NeighborGraph(
        n=n,
        k=graph.k,
        perplexity=graph.perplexity,
        indptr=indptr,
        indices=ac,
        distances=ad,
        directed=False,
    )


# ---------------------------------------------------------------------------
# Probability calibration
# ---------------------------------------------------------------------------


def calibrate_csr_rows(
    indptr: np.ndarray,
    distances: np.ndarray,
    kernel: str,
    targets: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-row bandwidth search on a CSR distance structure.

    For the ``tsne`` kernel, finds sigma so the Shannon entropy of the
    normalized row equals ``targets`` bits. For ``umap``, shifts each row
    by its minimum distance and finds sigma so the unnormalized row sums
    to ``targets``. Rows where the search cannot reach the target within
    the iteration budget fall back to a uniform distribution and are
    flagged. Returns (probabilities, sigma, rho, flagged).
    """
    if kernel not in ("tsne", "umap"):
        raise DataError(f"unknown kernel {kernel!r}")
    indptr = np.asarray(indptr, dtype=np.int64)
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.float64), (n,))
    maxdeg = int(deg.max()) if n else 0
    pad = np.full((n, maxdeg), np.inf, dtype=np.float64)
    mask = np.arange(maxdeg)[None, :] < deg[:, None]
    pad[mask] = np.asarray(distances, dtype=np.float64)
    nonempty = deg > 0
    rho = np.where(nonempty, pad.min(axis=1, initial=np.inf), 0.0)
    # both kernels are shift-invariant in the quantity being matched,
    # so working on (delta - row_min) keeps exp() in range
    work = pad - rho[:, None]

    sigma = np.ones(n, dtype=np.float64)
    lo = np.full(n, SIGMA_RANGE[0])
    hi = np.full(n, SIGMA_RANGE[1])
    converged = np.zeros(n, dtype=bool)
    converged[~nonempty] = True
    probs_pad = np.zeros((n, maxdeg), dtype=np.float64)

    active = np.flatnonzero(~converged)
    log2e = 1.0 / np.log(2.0)
    for _ in range(MAX_CALIBRATION_ITERS):
        if active.size == 0:
            break
        sig = np.sqrt(lo[active] * hi[active])
        sigma[active] = sig
        with np.errstate(under="ignore"):
            w = np.exp(-work[active] / sig[:, None])
        w[~mask[active]] = 0.0
        if kernel == "tsne":
            z = w.sum(axis=1)
            p = w / z[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(p > 0.0, p * np.log(p), 0.0)
            val = -plogp.sum(axis=1) * log2e
        else:
            p = w
            val = w.sum(axis=1)
        probs_pad[active] = p
        t = targets[active]
        ok = np.abs(val - t) <= ENTROPY_TOLERANCE_BITS
        low = val < t
        lo[active[low & ~ok]] = sig[low & ~ok]
        hi[active[~low & ~ok]] = sig[~low & ~ok]
        converged[active[ok]] = True
        active = active[~ok]

    flagged = ~converged & nonempty
    if np.any(flagged):
        logger.info("calibration fell back to uniform on %d rows", int(flagged.sum()))
        rows = np.flatnonzero(flagged)
        uni = np.zeros((rows.size, maxdeg), dtype=np.float64)
        if kernel == "tsne":
            uni[mask[rows]] = np.repeat(1.0 / deg[rows], deg[rows])
        else:
            level = np.minimum(targets[rows] / deg[rows], 1.0)
            uni[mask[rows]] = np.repeat(level, deg[rows])
        probs_pad[rows] = uni
    probabilities = probs_pad[mask]
    return probabilities, sigma, rho, flagged


def calibrate_probabilities(
    graph: NeighborGraph, perplexity: float | None = None, kernel: str = "tsne"
) -> NeighborGraph:
    """Attach per-edge transition probabilities to a symmetrized graph."""
    if graph.directed:
        raise DataError("calibrate after symmetrize_and_connect, not before")
    u = clamp_perplexity(graph.perplexity if perplexity is None else perplexity)
    if kernel == "tsne":
        targets = np.full(graph.n, np.log2(u))
    elif kernel == "umap":
        targets = np.full(graph.n, np.log2(graph.k))
    else:
        raise DataError(f"unknown kernel {kernel!r}")
    probs, sigma, rho, flagged = calibrate_csr_rows(
        graph.indptr, graph.distances, kernel, targets
    )
    return replace(
        graph,
        perplexity=u,
        kernel=kernel,
        probabilities=probs,
        sigma=sigma,
        rho=rho if kernel == "umap" else None,
        uniform_rows=flagged,
    )


# ---------------------------------------------------------------------------
# Cache file
# ---------------------------------------------------------------------------


def save_graph(path: str | Path, graph: NeighborGraph) -> None:
    header = {
        "n": str(graph.n),
        "k": str(graph.k),
        "perplexity": repr(graph.perplexity),
        "directed": "1" if graph.directed else "0",
        "kernel": graph.kernel or "",
    }
    arrays = [
        ("indptr", "u64", graph.indptr),
        ("indices", "u32", graph.indices),
        ("distances", "f32", graph.distances),
    ]
    if graph.probabilities is not None:
        arrays.append(("probabilities", "f32", graph.probabilities))
        arrays.append(("sigma", "f32", graph.sigma))
        arrays.append(("uniform_rows", "u8", graph.uniform_rows.astype(np.uint8)))
        if graph.rho is not None:
            arrays.append(("rho", "f32", graph.rho))
    write_binary(path, GRAPH_MAGIC, header, arrays)


def load_graph(path: str | Path) -> NeighborGraph:
    header, arrays = read_binary(path, GRAPH_MAGIC)
    probs = arrays.get("probabilities")
    sigma = arrays.get("sigma")
    rho = arrays.get("rho")
    flags = arrays.get("uniform_rows")
    return NeighborGraph(
        n=int(header["n"]),
        k=int(header["k"]),
        perplexity=float(header["perplexity"]),
        indptr=arrays["indptr"].astype(np.int64),
        indices=arrays["indices"].astype(np.int64),
        distances=arrays["distances"].astype(np.float64),
        directed=header.get("directed", "0") == "1",
        kernel=header.get("kernel") or None,
        probabilities=None if probs is None else probs.astype(np.float64),
        sigma=None if sigma is None else sigma.astype(np.float64),
        rho=None if rho is None else rho.astype(np.float64),
        uniform_rows=None if flags is None else flags.astype(bool),
    )
