"""Recolor the image by superpixel embedding position.

Embedding coordinates map to RGB through a bilinear blend of four
corner colors over the embedding's bounding box, so nearby points in
the 2-D layout get similar colors in image space.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from . import DataError

# corner order: (min-x min-y, max-x min-y, min-x max-y, max-x max-y)
DEFAULT_CORNERS = np.array(
    [
        [230, 25, 75],
        [255, 225, 25],
        [0, 130, 200],
        [60, 180, 75],
    ],
    dtype=np.float64,
)


def parse_corner_colors(spec: str) -> np.ndarray:
    """Four comma-separated RRGGBB hex colors."""
    parts = [p.strip().lstrip("#") for p in spec.split(",")]
    if len(parts) != 4:
        raise DataError(f"expected 4 corner colors, got {len(parts)}")
    corners = np.empty((4, 3), dtype=np.float64)
    for i, p in enumerate(parts):
        if len(p) != 6:
            raise DataError(f"bad color {p!r}; use RRGGBB hex")
        try:
            corners[i] = [int(p[j : j + 2], 16) for j in (0, 2, 4)]
        except ValueError as exc:
            raise DataError(f"bad color {p!r}: {exc}") from exc
    return corners


def bilinear_colors(coords: np.ndarray, corners: np.ndarray | None = None) -> np.ndarray:
    """Per-point RGB (uint8) from position within the coords bounding box."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DataError(f"coords must be (m, 2), got {coords.shape}")
    corners = DEFAULT_CORNERS if corners is None else np.asarray(corners, dtype=np.float64)
    if corners.shape != (4, 3):
        raise DataError("corners must be 4 RGB rows")
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    uv = (coords - lo) / span
    u = uv[:, 0:1]
    v = uv[:, 1:2]
    rgb = (
        (1 - u) * (1 - v) * corners[0]
        + u * (1 - v) * corners[1]
        + (1 - u) * v * corners[2]
        + u * v * corners[3]
    )
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def colorize_labels(
    labels: np.ndarray,
    coords: np.ndarray,
    height: int,
    width: int,
    corners: np.ndarray | None = None,
) -> np.ndarray:
    """(H, W, 3) uint8 raster: every pixel takes its superpixel's color."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != height * width:
        raise DataError("label map does not match the raster size")
    if labels.min() < 0 or labels.max() >= coords.shape[0]:
        raise DataError("labels reference missing embedding points")
    colors = bilinear_colors(coords, corners)
    return colors[labels].reshape(height, width, 3)


def gray_raster(
    labels: np.ndarray, m: int, height: int, width: int, seed: int = 0
) -> np.ndarray:
    """Random gray value per superpixel, for telling regions apart."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    grays = rng.integers(40, 216, size=m, endpoint=True).astype(np.uint8)
    img = grays[np.asarray(labels, dtype=np.int64)].reshape(height, width)
    return np.repeat(img[:, :, None], 3, axis=2)


def png_bytes(raster: np.ndarray) -> bytes:
    from PIL import Image

    raster = np.ascontiguousarray(raster, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(raster, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(path: str | Path, raster: np.ndarray) -> None:
    Path(path).write_bytes(png_bytes(raster))
