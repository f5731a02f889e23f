"""Pipeline configuration, shared by the CLI and the server.

Stored in the same key=value text form as the metadata sidecars; the
round trip through a file is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from . import DataError
from .fileio import read_kv_file, write_kv_file


@dataclass
class PipelineConfig:
    image: str = ""
    gt: str = ""
    output_dir: str = "."
    percentile: float = 0.98
    perplexity: float = 30.0
    kernel: str = "tsne"
    exact_knn: bool = True
    connectivity: int = 4
    walks: int = 50
    steps: int = 25
    decay: float = 0.9
    max_levels: int = 64
    bc_threshold: float = 0.0
    seed: int = 0
    embed_iters: int = 1000
    embed_init: str = "pca"
    gamma: float = -1.0  # negative means disabled

    def validate(self) -> None:
        if self.kernel not in ("tsne", "umap"):
            raise DataError(f"kernel must be tsne or umap, got {self.kernel!r}")
        if self.connectivity not in (4, 8):
            raise DataError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.embed_init not in ("pca", "random", "parent"):
            raise DataError(f"unknown init mode {self.embed_init!r}")
        if not 0.0 < self.percentile <= 1.0:
            raise DataError("percentile must be in (0, 1]")

    def gamma_or_none(self) -> float | None:
        return None if self.gamma < 0 else self.gamma

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type == "bool" or isinstance(value, bool):
                out[f.name] = "1" if value else "0"
            elif isinstance(value, float):
                out[f.name] = repr(value)
            else:
                out[f.name] = str(value)
        return out

    @classmethod
    def from_kv(cls, entries: dict[str, str]) -> "PipelineConfig":
        kwargs = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, raw in entries.items():
            if key not in by_name:
                raise DataError(f"unknown config key {key!r}")
            default = by_name[key].default
            if isinstance(default, bool):
                kwargs[key] = raw not in ("0", "false", "no", "")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def load_config(path: str | Path) -> PipelineConfig:
    return PipelineConfig.from_kv(read_kv_file(path))


def save_config(path: str | Path, cfg: PipelineConfig) -> None:
    write_kv_file(path, cfg.to_kv())
