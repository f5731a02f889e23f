"""High-dimensional image containers and pixel-grid operations.

An image is a dense ``(height, width, channels)`` float32 array stored on
disk as a ``.meta``/``.raw`` sidecar pair. Pixels are identified by
``id = y * width + x`` throughout the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DataError
from .fileio import read_kv_file, write_kv_file


@dataclass
class HighDimImage:
    """Dense image with an arbitrary number of float channels."""

    data: np.ndarray  # (H, W, C) float32
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise DataError(f"image data must be (H, W, C), got shape {self.data.shape}")
        if self.channel_names and len(self.channel_names) != self.data.shape[2]:
            raise DataError(
                f"{len(self.channel_names)} channel names for {self.data.shape[2]} channels"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def as_features(self) -> np.ndarray:
        """Pixel attribute matrix, shape (n_pixels, channels), row-major ids."""
        return self.data.reshape(self.n_pixels, self.channels)


@dataclass
class GroundTruthLabels:
    """Per-pixel integer class labels on the same grid as an image."""

    labels: np.ndarray  # (H, W) uint32

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
        if self.labels.ndim != 2:
            raise DataError(f"labels must be (H, W), got shape {self.labels.shape}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)


def _sidecar_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".meta", ".raw") else path
    return stem.with_suffix(".meta"), stem.with_suffix(".raw")


def save_image(path: str | Path, image: HighDimImage) -> None:
    meta_path, raw_path = _sidecar_paths(path)
    meta = {
        "width": str(image.width),
        "height": str(image.height),
        "channels": str(image.channels),
        "dtype": "f32",
        "order": "row-major",
    }
    if image.channel_names:
        meta["channel_names"] = ",".join(image.channel_names)
    write_kv_file(meta_path, meta)
    raw_path.write_bytes(np.ascontiguousarray(image.data, dtype="<f4").tobytes())


def save_labels(path: str | Path, gt: GroundTruthLabels) -> None:
    meta_path, raw_path = _sidecar_paths(path)
    meta = {
        "width": str(gt.width),
        "height": str(gt.height),
        "channels": "1",
        "dtype": "u32",
        "order": "row-major",
    }
    write_kv_file(meta_path, meta)
    raw_path.write_bytes(np.ascontiguousarray(gt.labels, dtype="<u4").tobytes())


def _load_sidecar(path: str | Path) -> tuple[dict[str, str], np.ndarray]:
    meta_path, raw_path = _sidecar_paths(path)
    meta = read_kv_file(meta_path)
    for key in ("width", "height", "channels", "dtype"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing required key {key!r}")
    if meta.get("order", "row-major") != "row-major":
        raise DataError(f"{meta_path}: unsupported order {meta['order']!r}")
    width, height, channels = int(meta["width"]), int(meta["height"]), int(meta["channels"])
    if width <= 0 or height <= 0 or channels <= 0:
        raise DataError(f"{meta_path}: non-positive dimensions")
    dtype = {"f32": "<f4", "u32": "<u4"}.get(meta["dtype"])
    if dtype is None:
        raise DataError(f"{meta_path}: unsupported dtype {meta['dtype']!r}")
    if not raw_path.exists():
        raise DataError(f"missing file: {raw_path}")
    raw = np.fromfile(raw_path, dtype=dtype)
    expected = width * height * channels
    if raw.size != expected:
        raise DataError(
            f"{raw_path}: has {raw.size} values, expected {expected} "
            f"({height}x{width}x{channels})"
        )
    return meta, raw.reshape(height, width, channels)


def load_image(path: str | Path) -> HighDimImage:
    meta, data = _load_sidecar(path)
    if meta["dtype"] != "f32":
        raise DataError(f"{path}: expected f32 image, got {meta['dtype']}")
    names = [s for s in meta.get("channel_names", "").split(",") if s]
    return HighDimImage(data=data, channel_names=names)


def load_labels(path: str | Path) -> GroundTruthLabels:
    meta, data = _load_sidecar(path)
    if meta["dtype"] != "u32":
        raise DataError(f"{path}: expected u32 labels, got {meta['dtype']}")
    if data.shape[2] != 1:
        raise DataError(f"{path}: labels must have a single channel")
    return GroundTruthLabels(labels=data[:, :, 0])


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def preprocess_clip_normalize(image: HighDimImage, percentile: float = 0.999) -> HighDimImage:
    """Clip at a global upper percentile, then scale each channel to max 1.

    The percentile is nearest-rank over all values of all channels:
    with N values sorted ascending the threshold is ``sorted[ceil(q*N)-1]``.
    Values above it are clipped down to it; each channel is then divided
    by its own post-clip maximum. Channels whose post-clip maximum is not
    positive are left unscaled. Applying the operation twice gives the
    same result as applying it once.
    """
    if not 0.0 < percentile <= 1.0:
        raise DataError(f"percentile must be in (0, 1], got {percentile}")
    data = image.data
    flat = data.reshape(-1)
    if flat.size == 0:
        raise DataError("empty image")
    rank = int(np.ceil(percentile * flat.size)) - 1
    threshold = float(np.partition(flat, rank)[rank])
    if threshold <= 0.0:
        warnings.warn("clip threshold is not positive; image left unscaled")
        return HighDimImage(data=data.copy(), channel_names=list(image.channel_names))
    clipped = np.minimum(data, threshold)
    maxes = clipped.max(axis=(0, 1))
    scale = np.where(maxes > 0, maxes, 1.0).astype(np.float32)
    return HighDimImage(data=clipped / scale, channel_names=list(image.channel_names))


# ---------------------------------------------------------------------------
# Pixel-grid adjacency
# ---------------------------------------------------------------------------


def build_image_adjacency(height: int, width: int, connectivity: int = 4) -> np.ndarray:
    """Undirected pixel-grid edges as an (E, 2) array with u < v.

    ``connectivity`` 4 links horizontal and vertical neighbours; 8 adds
    the two diagonals. Pixel ids are row-major.
    """
    if connectivity not in (4, 8):
        raise DataError(f"connectivity must be 4 or 8, got {connectivity}")
    if height <= 0 or width <= 0:
        raise DataError("image dimensions must be positive")
    ids = np.arange(height * width, dtype=np.int64).reshape(height, width)
    pairs = [
        np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1),
        np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1),
    ]
    if connectivity == 8:
        pairs.append(np.stack([ids[:-1, :-1].ravel(), ids[1:, 1:].ravel()], axis=1))
        pairs.append(np.stack([ids[:-1, 1:].ravel(), ids[1:, :-1].ravel()], axis=1))
    pairs = [p for p in pairs if p.size]
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.concatenate(pairs, axis=0)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


# ---------------------------------------------------------------------------
# Converters
# ---------------------------------------------------------------------------


def image_from_csv(
    path: str | Path,
    width: int,
    height: int,
    exclude_channels: list[str] | None = None,
) -> HighDimImage:
    """Read one pixel per row, one channel per column.

    A non-numeric first line is taken as channel names. ``exclude_channels``
    drops columns by name, or by zero-based index when unnamed.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
    tokens = [t.strip() for t in first.strip().split(",")]
    has_header = False
    for tok in tokens:
        try:
            float(tok)
        except ValueError:
            has_header = True
            break
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if data.shape[0] != width * height:
        raise DataError(
            f"{path}: {data.shape[0]} rows, expected {width * height} ({height}x{width})"
        )
    names = tokens if has_header else [str(i) for i in range(data.shape[1])]
    if exclude_channels:
        drop = set(exclude_channels)
        keep = [i for i, name in enumerate(names) if name not in drop]
        unknown = drop - set(names)
        if unknown:
            raise DataError(f"unknown channels to exclude: {sorted(unknown)}")
        if not keep:
            raise DataError("all channels excluded")
        data = data[:, keep]
        names = [names[i] for i in keep]
    return HighDimImage(
        data=data.astype(np.float32).reshape(height, width, data.shape[1]),
        channel_names=names if has_header else [],
    )


def image_from_mat(
    path: str | Path,
    variable: str | None = None,
    exclude_channels: list[str] | None = None,
) -> HighDimImage:
    """Read a MATLAB array as an image, picking the largest numeric variable
    when no name is given. 2-D arrays become single-channel images."""
    import scipy.io

    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        contents = scipy.io.loadmat(path)
    except Exception as exc:
        raise DataError(f"{path}: not a readable MATLAB file ({exc})") from exc
    candidates = {
        k: v
        for k, v in contents.items()
        if not k.startswith("__") and isinstance(v, np.ndarray) and v.ndim in (2, 3)
        and np.issubdtype(v.dtype, np.number)
    }
    if variable is not None:
        if variable not in candidates:
            raise DataError(f"{path}: no numeric array variable {variable!r}")
        arr = candidates[variable]
    else:
        if not candidates:
            raise DataError(f"{path}: no numeric 2-D or 3-D array variables")
        arr = max(candidates.values(), key=lambda a: a.size)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    image = HighDimImage(data=arr.astype(np.float32))
    if exclude_channels:
        names = [str(i) for i in range(image.channels)]
        drop = set(exclude_channels)
        unknown = drop - set(names)
        if unknown:
            raise DataError(f"unknown channels to exclude: {sorted(unknown)}")
        keep = [i for i in range(image.channels) if names[i] not in drop]
        if not keep:
            raise DataError("all channels excluded")
        image = HighDimImage(data=image.data[:, :, keep])
    return image


def labels_from_mat(path: str | Path, variable: str | None = None) -> GroundTruthLabels:
    image = image_from_mat(path, variable=variable)
    if image.channels != 1:
        raise DataError(f"{path}: labels must be a single 2-D array")
    data = image.data[:, :, 0]
    if np.any(data < 0) or np.any(data != np.round(data)):
        raise DataError(f"{path}: labels must be non-negative integers")
    return GroundTruthLabels(labels=data.astype(np.uint32))
