"""Sequence-modeling kernels: chunked linear attention, short-long convolutions,
an SSM reference stack, gated mixer blocks, and a deterministic training harness.

Thread pinning: ``CHELA_THREADS`` (default 1) is propagated to the BLAS/OpenMP
thread-count variables before numpy is first imported, so benchmarks are
single-threaded unless explicitly raised.
"""

import os as _os

_threads = _os.environ.get("CHELA_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

from chela.rng import Rng
from chela.layer import ModelConfig, init_chela_params, model_forward

__version__ = "0.1.0"

__all__ = ["Rng", "ModelConfig", "init_chela_params", "model_forward", "__version__"]
