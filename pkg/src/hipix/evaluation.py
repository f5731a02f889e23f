"""Segmentation quality metrics and their area-under-curve aggregates.

Undersegmentation error charges each superpixel the cheaper of the two
ways to reconcile it with an overlapping ground-truth segment (keep the
overlap or keep the rest), normalized by total pixel count. Explained
variation measures how much per-channel image variance survives when
pixels are replaced by their superpixel means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import DataError
from .image import GroundTruthLabels, HighDimImage


def _flat_labels(labels) -> np.ndarray:
    if isinstance(labels, GroundTruthLabels):
        return labels.flat().astype(np.int64)
    arr = np.asarray(labels, dtype=np.int64)
    return arr.reshape(-1)


def undersegmentation_error(labels, gt) -> float:
    """Leakage of superpixels across ground-truth boundaries, in [0, 1].

    For every ground-truth segment G and superpixel C overlapping it,
    adds min(|C and G|, |C minus G|); the total is divided by the pixel
    count. Background is treated as an ordinary segment.
    """
    sp = _flat_labels(labels)
    gt_flat = _flat_labels(gt)
    if sp.shape != gt_flat.shape:
        raise DataError(f"label maps differ in size: {sp.shape} vs {gt_flat.shape}")
    n = sp.shape[0]
    if n == 0:
        raise DataError("empty label map")
    contingency = scipy.sparse.coo_matrix(
        (np.ones(n, dtype=np.int64), (sp, gt_flat))
    ).tocsr()
    overlap = contingency.data
    sp_sizes = np.asarray(contingency.sum(axis=1)).ravel()
    rest = np.repeat(sp_sizes, np.diff(contingency.indptr)) - overlap
    return float(np.minimum(overlap, rest).sum()) / n


def explained_variation(labels, img: HighDimImage) -> float:
    """Fraction of per-channel image variance captured by superpixel means.

    Constant images return 1 (nothing to explain). Singleton superpixels
    give exactly 1 because numerator and denominator coincide.
    """
    sp = _flat_labels(labels)
    features = img.as_features().astype(np.float64)
    if sp.shape[0] != features.shape[0]:
        raise DataError(
            f"label map has {sp.shape[0]} pixels, image has {features.shape[0]}"
        )
    mu = features.mean(axis=0)
    denom = float(((features - mu) ** 2).sum())
    if denom == 0.0:
        return 1.0
    m = int(sp.max()) + 1
    sums = np.zeros((m, features.shape[1]), dtype=np.float64)
    np.add.at(sums, sp, features)
    counts = np.bincount(sp, minlength=m).astype(np.float64)
    occupied = counts > 0
    means = sums[occupied] / counts[occupied][:, None]
    numer = float((counts[occupied][:, None] * (means - mu) ** 2).sum())
    return numer / denom


def area_under_curve(ms, values, axis: str = "linear") -> float:
    """Trapezoidal area of value against the superpixel-count axis,
    with the axis affinely normalized to [0, 1]."""
    ms = np.asarray(ms, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if ms.shape != values.shape or ms.ndim != 1:
        raise DataError("ms and values must be 1-D and aligned")
    if np.unique(ms).size < 2:
        raise DataError("need at least 2 distinct superpixel counts")
    if axis == "linear":
        x = ms
    elif axis == "log10":
        if np.any(ms <= 0):
            raise DataError("log axis needs positive superpixel counts")
        x = np.log10(ms)
    else:
        raise DataError(f"unknown axis {axis!r}")
    order = np.argsort(x)
    x = x[order]
    y = values[order]
    x = (x - x[0]) / (x[-1] - x[0])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(y, x))


@dataclass
class EvalCurve:
    """Per-level metric curve plus its normalized areas."""

    points: list[tuple[int, int, float, float]]  # (level, m, UE, EV)
    aue: float
    aev: float
    log_aue: float
    log_aev: float

    def csv_lines(self) -> list[str]:
        lines = ["level,m,UE,EV"]
        for level, m, ue, ev in self.points:
            lines.append(f"{level},{m},{ue!r},{ev!r}")
        return lines

    def summary(self) -> str:
        return (
            f"AUE={100 * self.aue:.2f}% AEV={100 * self.aev:.2f}% "
            f"logAUE={100 * self.log_aue:.2f}% logAEV={100 * self.log_aev:.2f}%"
        )


def evaluate_hierarchy(hierarchy, img: HighDimImage, gt) -> EvalCurve:
    """UE/EV per level and areas under the UE and (1 - EV) curves."""
    points = []
    for lv in hierarchy.levels:
        ue = undersegmentation_error(lv.labels, gt)
        ev = explained_variation(lv.labels, img)
        points.append((lv.level, lv.m, ue, ev))
    ms = np.array([p[1] for p in points], dtype=np.float64)
    ues = np.array([p[2] for p in points])
    inv_evs = 1.0 - np.array([p[3] for p in points])
    return EvalCurve(
        points=points,
        aue=area_under_curve(ms, ues, "linear"),
        aev=area_under_curve(ms, inv_evs, "linear"),
        log_aue=area_under_curve(ms, ues, "log10"),
        log_aev=area_under_curve(ms, inv_evs, "log10"),
    )
