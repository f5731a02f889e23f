"""Superpixel hierarchies and hierarchical embeddings for high-dimensional images.

The pipeline, end to end:

1. load a dense ``height x width x channels`` image (``hipix.image``),
2. build a kNN graph over the per-pixel attribute vectors and calibrate
   transition probabilities (``hipix.graph``),
3. run decay-weighted random walks to get one sparse visit distribution
   per pixel (``hipix.walks``),
4. merge spatially adjacent superpixels bottom-up by Bhattacharyya
   similarity of their visit distributions (``hipix.hierarchy``),
5. embed each hierarchy level in 2-D from the same similarities
   (``hipix.embedding``), refine selections (``hipix.refinement``),
6. score segmentations with UE/EV curves (``hipix.evaluation``).

``hipix.cli`` drives the batch pipeline; ``hipix.server`` exposes a built
hierarchy to the interactive explorer.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class NumericError(RuntimeError):
    """Numeric failure such as NaN in an optimizer (CLI exit code 4)."""


__version__ = "0.1.0"

__all__ = ["DataError", "NumericError", "__version__"]
