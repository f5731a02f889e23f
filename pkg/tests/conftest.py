from __future__ import annotations

import numpy as np
import pytest

from hipix.hierarchy import Hierarchy, build_hierarchy
from hipix.image import HighDimImage, build_image_adjacency
from hipix import graph as gr
from hipix import walks as wk


def make_two_region_image(height=10, width=10, channels=4, seed=0) -> HighDimImage:
    """Left and right halves with well-separated spectra plus small noise."""
    rng = np.random.default_rng(seed)
    data = rng.normal(0.0, 0.05, (height, width, channels)).astype(np.float32)
    data[:, : width // 2] += np.linspace(1.0, 2.0, channels, dtype=np.float32)
    data[:, width // 2 :] += np.linspace(5.0, 3.0, channels, dtype=np.float32)
    return HighDimImage(data=data)


def make_random_image(height=8, width=8, channels=4, seed=0) -> HighDimImage:
    rng = np.random.default_rng(seed)
    return HighDimImage(data=rng.random((height, width, channels)).astype(np.float32))


def build_graph(img: HighDimImage, perplexity=10.0, kernel="tsne") -> gr.NeighborGraph:
    g = gr.build_knn_graph(img, perplexity)
    g = gr.symmetrize_and_connect(g, img)
    return gr.calibrate_probabilities(g, kernel=kernel)


def build_small_hierarchy(
    img: HighDimImage, seed=7, walks=20, steps=6, connectivity=4, perplexity=10.0
) -> tuple[Hierarchy, gr.NeighborGraph]:
    g = build_graph(img, perplexity)
    T0 = wk.run_random_walks(g, walks=walks, steps=steps, decay=0.9, seed=seed)
    edges = build_image_adjacency(img.height, img.width, connectivity)
    return build_hierarchy(img.width, img.height, edges, T0, max_levels=32), g


@pytest.fixture(scope="session")
def region_image() -> HighDimImage:
    return make_two_region_image()


@pytest.fixture(scope="session")
def region_hierarchy(region_image):
    return build_small_hierarchy(region_image)
