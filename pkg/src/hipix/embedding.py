"""Per-level 2-D embeddings of superpixel visit distributions.

The pairwise structure feeding the optimizer is the Bhattacharyya
distance between visit distributions, converted to joint probabilities
with the same perplexity calibration used on the pixel graph. Level 0
skips the distance step entirely: its probabilities are the calibrated
neighbor-graph rows, symmetrized. The layout step is plain exact
gradient descent on KL(P || Q) with a Student-t low-dimensional kernel,
momentum, and early exaggeration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse

from . import DataError, NumericError
from .fileio import read_binary, write_binary
from .graph import NeighborGraph, calibrate_csr_rows, clamp_perplexity
from .walks import TransitionMatrix

logger = logging.getLogger(__name__)

SIMILARITY_MAGIC = b"HXSIMS1\0"
EMBEDDING_MAGIC = b"HXEMB1\0\0"

DESK_SCALE_CAP = 20_000
INIT_SCALE = 1e-4


@dataclass
class LevelSimilarities:
    """Sparse symmetric joint probabilities for one level."""

    level: int
    P: scipy.sparse.csr_matrix
    kernel: str
    perplexity_used: float
    isolated: np.ndarray  # bool per superpixel: no finite-distance neighbor

    @property
    def m(self) -> int:
        return self.P.shape[0]


@dataclass
class Embedding:
    level: int
    coords: np.ndarray  # (m, 2) float64
    trace: np.ndarray  # per-iteration KL values
    params: dict = field(default_factory=dict)


def level_perplexity(m: int) -> float:
    """Level-adaptive perplexity: m/100 clamped into [10, 100]."""
    return clamp_perplexity(m / 100.0)


# ---------------------------------------------------------------------------
# Dissimilarities and probabilities
# ---------------------------------------------------------------------------


def level_dissimilarities(T: TransitionMatrix) -> scipy.sparse.csr_matrix:
    """Sparse symmetric Bhattacharyya distances -ln(BC) between rows of T.

    Pairs with disjoint support are absent (infinite distance). The
    diagonal is kept; it is 0 up to rounding.
    """
    B = T.sqrt_stochastic()
    S = (B @ B.T).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    S.data = np.minimum(S.data, 1.0)
    mask = S.data > 0.0
    if not mask.all():
        S.data[~mask] = 0.0
        S.eliminate_zeros()
        mask = S.data > 0.0
    D = S.copy()
    D.data = -np.log(S.data)
    np.maximum(D.data, 0.0, out=D.data)
    D.sort_indices()
    return D


def _strip_diagonal(D: scipy.sparse.csr_matrix) -> scipy.sparse.csr_matrix:
    coo = D.tocoo()
    keep = coo.row != coo.col
    return scipy.sparse.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=D.shape
    )


def level_probabilities(
    D: scipy.sparse.csr_matrix,
    kernel: str = "tsne",
    level: int = 0,
    perplexity: float | None = None,
) -> LevelSimilarities:
    """Calibrate rows of D and symmetrize into joint probabilities.

    Rows are calibrated over their finite-distance neighbors at the
    level perplexity (or ``perplexity`` when given). Superpixels without
    any finite-distance neighbor get an empty row and are flagged
    isolated.
    """
    m = D.shape[0]
    u = level_perplexity(m) if perplexity is None else clamp_perplexity(perplexity)
    Dn = _strip_diagonal(D)
    Dn.sort_indices()
    deg = np.diff(Dn.indptr)
    if kernel == "tsne":
        targets = np.full(m, np.log2(u))
    elif kernel == "umap":
        targets = np.maximum(1.0, np.log2(np.maximum(deg, 1)))
    else:
        raise DataError(f"unknown kernel {kernel!r}")
    probs, _, _, _ = calibrate_csr_rows(Dn.indptr, Dn.data, kernel, targets)
    A = scipy.sparse.csr_matrix((probs, Dn.indices.copy(), Dn.indptr.copy()), shape=(m, m))
    if kernel == "tsne":
        P = ((A + A.T) * 0.5).tocsr()
    else:
        P = (A + A.T - A.multiply(A.T)).tocsr()
    P.sort_indices()
    isolated = deg == 0
    if isolated.any():
        logger.info("%d isolated superpixels on level %d", int(isolated.sum()), level)
    return LevelSimilarities(
        level=level, P=P, kernel=kernel, perplexity_used=u, isolated=isolated
    )


def graph_joint_probabilities(graph: NeighborGraph, level: int = 0) -> LevelSimilarities:
    """Level-0 joint probabilities straight from the calibrated graph."""
    if graph.probabilities is None or graph.directed:
        raise DataError("graph must be symmetrized and calibrated")
    A = scipy.sparse.csr_matrix(
        (graph.probabilities, graph.indices.copy(), graph.indptr.copy()),
        shape=(graph.n, graph.n),
    )
    if graph.kernel == "umap":
        P = (A + A.T - A.multiply(A.T)).tocsr()
    else:
        P = ((A + A.T) * 0.5).tocsr()
    P.sort_indices()
    return LevelSimilarities(
        level=level,
        P=P,
        kernel=graph.kernel or "tsne",
        perplexity_used=graph.perplexity,
        isolated=np.zeros(graph.n, dtype=bool),
    )


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def principal_scores(X: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """First-k principal component scores and their explained variances.

    Component signs are fixed so each loading vector's largest-magnitude
    entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise DataError("need at least 2 rows for principal components")
    Xc = X - X.mean(axis=0)
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    k_eff = min(k, s.shape[0])
    scores = np.zeros((n, k), dtype=np.float64)
    variances = np.zeros(k, dtype=np.float64)
    for i in range(k_eff):
        v = Vt[i]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
            U[:, i] = -U[:, i]
        scores[:, i] = U[:, i] * s[i]
        variances[i] = s[i] ** 2 / (n - 1)
    return scores, variances


def pca_initialize(means: np.ndarray, seed: int = 0) -> np.ndarray:
    """PCA-score initialization scaled to a tiny spread.

    Coordinates are the first two principal scores of the per-superpixel
    mean attribute vectors, scaled so the first coordinate's standard
    deviation is 1e-4. Degenerate components are replaced by seeded
    Gaussian noise of the same scale.
    """
    means = np.asarray(means, dtype=np.float64)
    m = means.shape[0]
    if m < 2:
        return np.zeros((m, 2), dtype=np.float64)
    scores, variances = principal_scores(means, k=2)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    coords = np.empty((m, 2), dtype=np.float64)
    lead_std = scores[:, 0].std()
    tol = max(variances[0], 1.0) * 1e-12
    for c in range(2):
        if variances[c] <= tol or lead_std == 0.0:
            coords[:, c] = rng.normal(0.0, INIT_SCALE, size=m)
        else:
            coords[:, c] = scores[:, c] * (INIT_SCALE / lead_std)
    return coords


def random_initialize(m: int, seed: int = 0) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    return rng.normal(0.0, INIT_SCALE, size=(m, 2))


def parent_initialize(
    parent_coords: np.ndarray, parent_map: np.ndarray, seed: int = 0
) -> np.ndarray:
    """Place each superpixel at its parent's position plus seeded jitter."""
    parent_coords = np.asarray(parent_coords, dtype=np.float64)
    parent_map = np.asarray(parent_map, dtype=np.int64)
    if parent_map.min() < 0 or parent_map.max() >= parent_coords.shape[0]:
        raise DataError("parent map references missing coordinates")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    jitter = rng.normal(0.0, INIT_SCALE, size=(parent_map.shape[0], 2))
    return parent_coords[parent_map] + jitter


def superpixel_means(features: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Mean attribute vector per superpixel."""
    features = np.asarray(features, dtype=np.float64)
    sums = np.zeros((m, features.shape[1]), dtype=np.float64)
    np.add.at(sums, np.asarray(labels, dtype=np.int64), features)
    counts = np.bincount(labels, minlength=m).astype(np.float64)
    if np.any(counts == 0):
        raise DataError("labels do not cover all superpixels")
    return sums / counts[:, None]


# ---------------------------------------------------------------------------
# Layout optimization
# ---------------------------------------------------------------------------


def kl_gradient(
    Y: np.ndarray,
    p_rows: np.ndarray,
    p_cols: np.ndarray,
    p_vals: np.ndarray,
    block: int = 2048,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Exact KL gradient under the Student-t kernel.

    Returns (gradient, Z, w_at_entries) where Z is the total Student-t
    weight over ordered pairs and w_at_entries the kernel values at the
    sparse P entries (reused for the objective).
    """
    m = Y.shape[0]
    s2 = np.zeros(m, dtype=np.float64)
    v = np.zeros((m, 2), dtype=np.float64)
    Z = 0.0
    sq = (Y * Y).sum(axis=1)
    for start in range(0, m, block):
        stop = min(start + block, m)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (Y[start:stop] @ Y.T)
        np.maximum(d2, 0.0, out=d2)
        W = 1.0 / (1.0 + d2)
        W[np.arange(stop - start), np.arange(start, stop)] = 0.0
        Z += float(W.sum())
        W *= W
        s2[start:stop] = W.sum(axis=1)
        v[start:stop] = W @ Y
    diff = Y[p_rows] - Y[p_cols]
    w_entries = 1.0 / (1.0 + (diff * diff).sum(axis=1))
    att = np.zeros((m, 2), dtype=np.float64)
    np.add.at(att, p_rows, (p_vals * w_entries)[:, None] * diff)
    rep = (s2[:, None] * Y - v) / Z
    return 4.0 * (att - rep), Z, w_entries


def optimize_layout(
    P,
    init: np.ndarray,
    iters: int = 1000,
    seed: int = 0,
    learning_rate: float | None = None,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    momentum_switch: int = 250,
    block: int = 2048,
    progress=None,
) -> Embedding:
    """Exact t-SNE-style gradient descent on KL(P || Q).

    ``P`` may be a LevelSimilarities or a sparse symmetric matrix; it is
    globally normalized to sum 1 internally. The trace records the KL
    objective against the un-exaggerated P at every iteration.
    """
    level = getattr(P, "level", 0)
    mat = P.P if isinstance(P, LevelSimilarities) else scipy.sparse.csr_matrix(P)
    m = mat.shape[0]
    if m > DESK_SCALE_CAP:
        raise DataError(f"{m} points exceed the exact-gradient cap {DESK_SCALE_CAP}")
    Y = np.array(init, dtype=np.float64, copy=True)
    if Y.shape != (m, 2):
        raise DataError(f"init must be ({m}, 2), got {Y.shape}")
    if iters < 0:
        raise DataError("iters must be non-negative")
    params = {
        "iters": iters,
        "seed": seed,
        "early_exaggeration": early_exaggeration,
        "exaggeration_iters": exaggeration_iters,
    }
    if iters == 0 or m < 2 or mat.nnz == 0:
        return Embedding(level=level, coords=Y, trace=np.empty(0), params=params)

    coo = mat.tocoo()
    p_rows = coo.row.astype(np.int64)
    p_cols = coo.col.astype(np.int64)
    total = float(coo.data.sum())
    p_true = coo.data.astype(np.float64) / total
    lr = float(learning_rate) if learning_rate is not None else max(m / 12.0, 50.0)
    update = np.zeros_like(Y)
    trace = np.empty(iters, dtype=np.float64)
    log_p = np.where(p_true > 0, np.log(p_true), 0.0)
    const = float((p_true * log_p).sum())
    for it in range(iters):
        factor = early_exaggeration if it < exaggeration_iters else 1.0
        grad, Z, w_entries = kl_gradient(Y, p_rows, p_cols, p_true * factor, block=block)
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient at iteration {it}")
        momentum = 0.5 if it < momentum_switch else 0.8
        update = momentum * update - lr * grad
        Y += update
        Y -= Y.mean(axis=0)
        trace[it] = const - float((p_true * np.log(w_entries)).sum()) + np.log(Z)
        if progress is not None and (it % 25 == 24 or it == iters - 1):
            progress(it + 1, iters)
    if not np.isfinite(Y).all():
        raise NumericError("non-finite coordinates after optimization")
    return Embedding(level=level, coords=Y, trace=trace, params=params)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def save_similarities(path: str | Path, sims: LevelSimilarities) -> None:
    P = sims.P.tocsr()
    write_binary(
        path,
        SIMILARITY_MAGIC,
        {
            "m": str(sims.m),
            "level": str(sims.level),
            "kernel": sims.kernel,
            "perplexity_used": repr(sims.perplexity_used),
        },
        [
            ("indptr", "u64", P.indptr.astype(np.uint64)),
            ("indices", "u32", P.indices.astype(np.uint32)),
            ("values", "f32", P.data),
            ("isolated", "u8", sims.isolated.astype(np.uint8)),
        ],
    )


def load_similarities(path: str | Path) -> LevelSimilarities:
    header, arrays = read_binary(path, SIMILARITY_MAGIC)
    msize = int(header["m"])
    P = scipy.sparse.csr_matrix(
        (
            arrays["values"].astype(np.float64),
            arrays["indices"].astype(np.int64),
            arrays["indptr"].astype(np.int64),
        ),
        shape=(msize, msize),
    )
    return LevelSimilarities(
        level=int(header["level"]),
        P=P,
        kernel=header["kernel"],
        perplexity_used=float(header["perplexity_used"]),
        isolated=arrays["isolated"].astype(bool),
    )


def save_embedding(path_base: str | Path, emb: Embedding) -> None:
    """Write coords as CSV and binary blob, plus the objective trace."""
    base = Path(path_base)
    with open(base.with_suffix(".csv"), "w", encoding="utf-8") as fh:
        fh.write("id,x,y\n")
        for i, (x, y) in enumerate(emb.coords):
            fh.write(f"{i},{x!r},{y!r}\n")
    write_binary(
        base.with_suffix(".emb"),
        EMBEDDING_MAGIC,
        {"m": str(emb.coords.shape[0]), "level": str(emb.level)},
        [("coords", "f32", emb.coords.astype(np.float32).ravel())],
    )
    with open(base.with_suffix(".trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("iteration,loss\n")
        for i, loss in enumerate(emb.trace):
            fh.write(f"{i},{loss!r}\n")


def load_embedding(path: str | Path) -> Embedding:
    header, arrays = read_binary(path, EMBEDDING_MAGIC)
    m = int(header["m"])
    coords = arrays["coords"].astype(np.float64).reshape(m, 2)
    return Embedding(level=int(header["level"]), coords=coords, trace=np.empty(0))
