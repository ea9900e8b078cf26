"""halfspec: lossy compression and conditional emulation of gridded
space-time fields with a nonstationary half-spectral Gaussian process model.

Compression stores the fitted model (mean, log-spectrum basis, per-pixel
spectral parameters, per-frequency coherence ranges) plus a greedily selected,
budget-constrained set of Fourier coefficients.  Decompression reconstructs
the field by conditional expectation or conditional simulation given the
stored coefficients.
"""

from .codec import CompressedArchive, compress, decompress, emulate
from .gridio import Grid, TimeCube, load_cube, save_cube, uniform_grid
from .select import SelectionConfig, compute_budget
from .synthgen import default_spec, generate

__version__ = "0.1.0"

__all__ = [
    "CompressedArchive",
    "Grid",
    "SelectionConfig",
    "TimeCube",
    "compress",
    "compute_budget",
    "decompress",
    "default_spec",
    "emulate",
    "generate",
    "load_cube",
    "save_cube",
    "uniform_grid",
    "__version__",
]
