"""Random-walk visit distributions and their coarse-graining.

Each vertex starts M walks of S steps over the calibrated neighbor
graph; the vertex reached at step t receives weight decay^(t-1) in the
starting vertex's row. Rows are kept as raw accumulations and
normalized on demand, so merging superpixels can aggregate rows
without compounding rounding from repeated renormalization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse

from . import DataError
from .fileio import read_binary, write_binary
from .graph import NeighborGraph

logger = logging.getLogger(__name__)

TRANSITION_MAGIC = b"HXTRANS1"

DEFAULT_WALKS = 50
DEFAULT_STEPS = 25
DEFAULT_DECAY = 0.9


@dataclass
class WalkParams:
    walks: int = DEFAULT_WALKS
    steps: int = DEFAULT_STEPS
    decay: float = DEFAULT_DECAY
    seed: int = 0

    def validate(self) -> None:
        if self.walks < 1 or self.steps < 1:
            raise DataError("walks and steps must both be at least 1")
        if not 0.0 < self.decay <= 1.0:
            raise DataError(f"decay must be in (0, 1], got {self.decay}")
        if self.seed < 0:
            raise DataError("seed must be non-negative")


@dataclass
class TransitionMatrix:
    """Sparse visit-distribution matrix over the current superpixels.

    ``raw`` holds non-negative accumulated visit weights; the
    row-stochastic form is a derived view. Row ``r`` of the stochastic
    form is the visit distribution of superpixel r.
    """

    raw: scipy.sparse.csr_matrix
    walk_params: WalkParams | None = None
    _stochastic: scipy.sparse.csr_matrix | None = field(
        default=None, repr=False, compare=False
    )
    _sqrt: scipy.sparse.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.raw.shape[0] != self.raw.shape[1]:
            raise DataError("transition matrix must be square")
        if not isinstance(self.raw, scipy.sparse.csr_matrix):
            self.raw = self.raw.tocsr()
        if self.raw.nnz and self.raw.data.min() < 0:
            raise DataError("transition matrix entries must be non-negative")

    @property
    def size(self) -> int:
        return self.raw.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.raw.sum(axis=1)).ravel()

    def stochastic(self) -> scipy.sparse.csr_matrix:
        """Row-normalized view; rows sum to 1 (empty rows stay empty)."""
        if self._stochastic is None:
            sums = self.row_sums()
            scale = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 0.0)
            d = scipy.sparse.diags(scale)
            m = (d @ self.raw).tocsr()
            m.sort_indices()
            self._stochastic = m
        return self._stochastic

    def sqrt_stochastic(self) -> scipy.sparse.csr_matrix:
        """Element-wise square root of the stochastic form."""
        if self._sqrt is None:
            m = self.stochastic().copy()
            m.data = np.sqrt(m.data)
            self._sqrt = m
        return self._sqrt

    def dense_row(self, r: int) -> np.ndarray:
        return np.asarray(self.stochastic()[r].todense()).ravel()


def from_stochastic(matrix, walk_params: WalkParams | None = None) -> TransitionMatrix:
    """Wrap an already row-stochastic (or any non-negative) matrix."""
    return TransitionMatrix(raw=scipy.sparse.csr_matrix(matrix), walk_params=walk_params)


def _vertex_uniforms(seed: int, verts: np.ndarray, walks: int, steps: int) -> np.ndarray:
    """Uniform draws from one counter-based substream per start vertex.

    Keying each stream by (seed, vertex id) makes the result independent
    of chunking and worker scheduling.
    """
    out = np.empty((verts.size, walks, steps), dtype=np.float64)
    for i, v in enumerate(verts):
        key = np.array([seed, int(v)], dtype=np.uint64)
        out[i] = np.random.Generator(np.random.Philox(key=key)).random((walks, steps))
    return out


def run_random_walks(
    graph: NeighborGraph,
    walks: int = DEFAULT_WALKS,
    steps: int = DEFAULT_STEPS,
    decay: float = DEFAULT_DECAY,
    seed: int = 0,
    chunk: int = 2048,
) -> TransitionMatrix:
    params = WalkParams(walks=walks, steps=steps, decay=decay, seed=seed)
    params.validate()
    if graph.probabilities is None:
        raise DataError("graph must be calibrated before running walks")
    if graph.directed:
        raise DataError("graph must be symmetrized before running walks")
    deg = graph.degrees
    if np.any(deg == 0):
        raise DataError("graph has isolated vertices; connect it first")

    n = graph.n
    indptr = graph.indptr
    indices = graph.indices
    # per-row normalized step distribution (umap rows do not sum to 1)
    row_tot = np.add.reduceat(graph.probabilities, indptr[:-1])
    p = graph.probabilities / np.repeat(row_tot, deg)
    cum = np.cumsum(p)
    ext = np.concatenate(([0.0], cum))
    decay_w = decay ** np.arange(steps, dtype=np.float64)

    acc: scipy.sparse.csr_matrix | None = None
    for start in range(0, n, chunk):
        verts = np.arange(start, min(start + chunk, n), dtype=np.int64)
        uniforms = _vertex_uniforms(seed, verts, walks, steps)
        cur = np.repeat(verts, walks)
        rows_rep = cur.copy()
        bm = cur.size
        cols = np.empty((steps, bm), dtype=np.int64)
        for t in range(steps):
            u = uniforms[:, :, t].reshape(-1)
            lo = indptr[cur]
            hi = indptr[cur + 1]
            target = ext[lo] + u * (ext[hi] - ext[lo])
            pos = np.searchsorted(cum, target, side="right")
            np.clip(pos, lo, hi - 1, out=pos)
            cur = indices[pos]
            cols[t] = cur
        vals = np.repeat(decay_w, bm)
        block = scipy.sparse.coo_matrix(
            (vals, (np.tile(rows_rep, steps), cols.reshape(-1))), shape=(n, n)
        ).tocsr()
        acc = block if acc is None else acc + block
    acc.sort_indices()
    logger.info(
        "walks done: n=%d, M=%d, S=%d, decay=%.3f, nnz=%d", n, walks, steps, decay, acc.nnz
    )
    return TransitionMatrix(raw=acc, walk_params=params)


def merge_transition_matrix(T: TransitionMatrix, merge_map: np.ndarray) -> TransitionMatrix:
    """Coarse-grain rows and columns under ``merge_map`` (old id -> new id).

    Aggregation happens on the raw accumulations, so coarse-graining
    composes: merging in two stages equals merging once with the
    composed map.
    """
    merge_map = np.asarray(merge_map, dtype=np.int64)
    m = T.size
    if merge_map.shape != (m,):
        raise DataError(f"merge map must have length {m}, got {merge_map.shape}")
    if merge_map.size == 0:
        raise DataError("cannot merge an empty matrix")
    m_new = int(merge_map.max()) + 1
    if merge_map.min() < 0 or m_new > m:
        raise DataError("merge map values out of range")
    seen = np.zeros(m_new, dtype=bool)
    seen[merge_map] = True
    if not seen.all():
        raise DataError("merge map must be surjective onto 0..m'-1")
    if m_new == m and np.array_equal(merge_map, np.arange(m)):
        return T
    R = scipy.sparse.csr_matrix(
        (np.ones(m, dtype=np.float64), (merge_map, np.arange(m))), shape=(m_new, m)
    )
    raw = (R @ T.raw @ R.T).tocsr()
    raw.sum_duplicates()
    raw.sort_indices()
    return TransitionMatrix(raw=raw, walk_params=T.walk_params)


# ---------------------------------------------------------------------------
# Cache file
# ---------------------------------------------------------------------------


def save_transition(path: str | Path, T: TransitionMatrix) -> None:
    header = {"size": str(T.size)}
    if T.walk_params is not None:
        header.update(
            walks=str(T.walk_params.walks),
            steps=str(T.walk_params.steps),
            decay=repr(T.walk_params.decay),
            seed=str(T.walk_params.seed),
        )
    raw = T.raw.tocsr()
    write_binary(
        path,
        TRANSITION_MAGIC,
        header,
        [
            ("indptr", "u64", raw.indptr.astype(np.uint64)),
            ("indices", "u32", raw.indices.astype(np.uint32)),
            ("values", "f32", raw.data),
        ],
    )


def load_transition(path: str | Path) -> TransitionMatrix:
    header, arrays = read_binary(path, TRANSITION_MAGIC)
    size = int(header["size"])
    raw = scipy.sparse.csr_matrix(
        (
            arrays["values"].astype(np.float64),
            arrays["indices"].astype(np.int64),
            arrays["indptr"].astype(np.int64),
        ),
        shape=(size, size),
    )
    params = None
    if "walks" in header:
        params = WalkParams(
            walks=int(header["walks"]),
            steps=int(header["steps"]),
            decay=float(header["decay"]),
            seed=int(header["seed"]),
        )
    return TransitionMatrix(raw=raw, walk_params=params)
