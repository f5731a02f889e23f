"""Shared on-disk formats.

Three building blocks are used by every artifact this package writes:

* a UTF-8 ``key=value`` text block (image sidecars, config files, binary
  file headers),
* little-endian typed arrays appended back to back,
* a run-length codec for label maps (pairs of u32 ``run, value``).

Binary files open with an 8-byte magic, a u32 header length, the header
text, then the payload arrays in the order the header's ``arrays`` key
lists them. Everything is little-endian.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from . import DataError

_DTYPES = {
    "u8": np.dtype("<u1"),
    "u32": np.dtype("<u4"),
    "u64": np.dtype("<u8"),
    "i32": np.dtype("<i4"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
}


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments allowed."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise DataError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_kv(entries: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in entries.items())


def read_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    return parse_kv(path.read_text(encoding="utf-8"))


def write_kv_file(path: str | Path, entries: dict[str, str]) -> None:
    Path(path).write_text(format_kv(entries), encoding="utf-8")


# ---------------------------------------------------------------------------
# Binary container: magic + kv header + named typed arrays
# ---------------------------------------------------------------------------


def write_binary(
    path: str | Path,
    magic: bytes,
    header: dict[str, str],
    arrays: list[tuple[str, str, np.ndarray]],
) -> None:
    """Write ``arrays`` as ``(name, dtype_tag, data)`` after the header."""
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    header = dict(header)
    header["arrays"] = ",".join(f"{name}:{tag}:{arr.size}" for name, tag, arr in arrays)
    header_bytes = format_kv(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(magic)
    buf.write(np.uint32(len(header_bytes)).tobytes())
    buf.write(header_bytes)
    for _, tag, arr in arrays:
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_binary(path: str | Path, magic: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:8] != magic:
        raise DataError(f"{path}: bad magic (expected {magic!r})")
    header_len = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    header_end = 12 + header_len
    if header_end > len(raw):
        raise DataError(f"{path}: truncated header")
    header = parse_kv(raw[12:header_end].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    spec = header.get("arrays", "")
    for item in filter(None, spec.split(",")):
        name, tag, size_s = item.split(":")
        dtype = _DTYPES[tag]
        size = int(size_s)
        nbytes = size * dtype.itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"{path}: truncated payload for array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=dtype, count=size, offset=offset).copy()
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, arrays


# ---------------------------------------------------------------------------
# Run-length codec for label maps
# ---------------------------------------------------------------------------


def rle_encode(values: np.ndarray) -> np.ndarray:
    """Encode a 1-D u32 array as interleaved ``run, value`` u32 pairs."""
    values = np.asarray(values, dtype=np.uint32).ravel()
    if values.size == 0:
        return np.empty(0, dtype=np.uint32)
    boundaries = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [values.size]))
    out = np.empty(2 * starts.size, dtype=np.uint32)
    out[0::2] = (ends - starts).astype(np.uint32)
    out[1::2] = values[starts]
    return out


def rle_decode(pairs: np.ndarray, expected_size: int | None = None) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.uint32).ravel()
    if pairs.size % 2 != 0:
        raise DataError("RLE stream has odd length")
    runs = pairs[0::2].astype(np.int64)
    values = pairs[1::2]
    out = np.repeat(values, runs)
    if expected_size is not None and out.size != expected_size:
        raise DataError(f"RLE decodes to {out.size} values, expected {expected_size}")
    return out
