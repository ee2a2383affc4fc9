"""Desk-scale learned video codec with a transformer entropy model.

Frames are mapped independently to quantized integer latent grids by a
convolutional transform; a conditional transformer predicts per-symbol
Gaussian parameters from previous-frame context and the already-coded
prefix of each block, and a range coder stores the symbols losslessly
under those distributions.
"""

import os as _os

# Reproducibility contract: identical PMFs on sender and receiver require
# identical floating point results, so BLAS must not split reductions
# across a variable number of threads. Set before numpy's first import;
# respected only if numpy is not already loaded.
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from . import config, engine  # noqa: E402,F401

__version__ = "0.1.0"
