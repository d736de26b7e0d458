"""Two-level adversarial visual-semantic coupling for generalized zero-shot
recognition, with a self-contained float64 autodiff engine, desk-scale
synthetic datasets, and a config-driven CLI."""

import os

# Cap BLAS threads before numpy loads anywhere in this process; reduction
# order must stay fixed for run-to-run determinism.
_threads = os.environ.get("ZSLC_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

__version__ = "0.1.0"
