"""Selection refinement: drop to the children of selected superpixels
and slice the finer level's probability matrix to that subset."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import DataError
from .embedding import LevelSimilarities
from .hierarchy import Hierarchy

logger = logging.getLogger(__name__)


@dataclass
class RefinementRequest:
    level: int  # level being refined; children live on level - 1
    selected: np.ndarray
    gamma: float | None = None  # expansion threshold, None disables

    def __post_init__(self):
        self.selected = np.unique(np.asarray(self.selected, dtype=np.int64))
        if self.level < 1:
            raise DataError("refinement needs a level with children (level >= 1)")
        if self.selected.size == 0:
            raise DataError("empty selection")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise DataError(f"gamma must be in [0, 1], got {self.gamma}")


@dataclass
class RefinementResult:
    subset: np.ndarray  # level-(l-1) superpixel ids, ascending
    P: scipy.sparse.csr_matrix  # sliced, rows renormalized to sum 1
    isolated: np.ndarray  # rows of P with no entries

    @property
    def size(self) -> int:
        return self.subset.shape[0]


def refine_selection(
    hierarchy: Hierarchy, P_fine: LevelSimilarities, req: RefinementRequest
) -> RefinementResult:
    """Children of the selection, optionally gamma-expanded, with the
    probability matrix sliced to them.

    With ``gamma`` set, any level-(l-1) superpixel whose symmetrized
    probability to some child strictly exceeds gamma joins the subset
    (one hop only). Sliced rows are renormalized to sum 1; rows left
    empty by the slice are flagged isolated.
    """
    if req.level >= hierarchy.n_levels:
        raise DataError(f"hierarchy has no level {req.level}")
    fine_m = hierarchy.levels[req.level - 1].m
    if P_fine.m != fine_m:
        raise DataError(
            f"probability matrix covers {P_fine.m} superpixels, level has {fine_m}"
        )
    children = hierarchy.children_of(req.level, req.selected)
    in_subset = np.zeros(fine_m, dtype=bool)
    in_subset[children] = True
    if req.gamma is not None:
        P = P_fine.P
        for i in children:
            row = slice(P.indptr[i], P.indptr[i + 1])
            hot = P.indices[row][P.data[row] > req.gamma]
            in_subset[hot] = True
    subset = np.flatnonzero(in_subset)
    sliced = P_fine.P[subset][:, subset].tocsr()
    sums = np.asarray(sliced.sum(axis=1)).ravel()
    isolated = sums <= 0.0
    scale = np.where(isolated, 0.0, 1.0 / np.where(isolated, 1.0, sums))
    sliced = (scipy.sparse.diags(scale) @ sliced).tocsr()
    sliced.sort_indices()
    if isolated.any():
        logger.info("refinement produced %d isolated rows", int(isolated.sum()))
    return RefinementResult(subset=subset, P=sliced, isolated=isolated)
