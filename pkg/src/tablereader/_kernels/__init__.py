"""Backend selection for the hot kernels.

The recurrent scans, the CTC recursions and the filter-bank convolution
dominate runtime.  By default they are compiled with numba's ``@njit``;
set ``TABLEREADER_BACKEND=numpy`` to run the pure-numpy fallbacks
instead (the loop kernels un-jitted, plus a vectorized convolution).
``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

import numpy as np

from . import _loops

_env = os.environ.get("TABLEREADER_BACKEND", "numba").strip().lower()
if _env not in ("numba", "numpy"):
    raise ValueError(
        f"TABLEREADER_BACKEND must be 'numba' or 'numpy', got {_env!r}"
    )

USE_NUMBA = _env == "numba"
if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


def _conv2d_bank_numpy(img, kernels):
    """Vectorized fallback for conv2d_bank (same zero-padded sliding dot
    product as the loop kernel)."""
    C, kh, kw = kernels.shape
    ry, rx = kh // 2, kw // 2
    padded = np.pad(img, ((ry, ry), (rx, rx)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw))
    return np.einsum("ijab,cab->ijc", win, kernels)


if USE_NUMBA:
    _jit = numba.njit(cache=True)
    conv2d_bank = _jit(_loops.conv2d_bank)
    leaky_forward = _jit(_loops.leaky_forward)
    leaky_backward = _jit(_loops.leaky_backward)
    mdlstm_forward = _jit(_loops.mdlstm_forward)
    mdlstm_backward = _jit(_loops.mdlstm_backward)
    ctc_alphas = _jit(_loops.ctc_alphas)
    ctc_betas = _jit(_loops.ctc_betas)
else:
    conv2d_bank = _conv2d_bank_numpy
    leaky_forward = _loops.leaky_forward
    leaky_backward = _loops.leaky_backward
    mdlstm_forward = _loops.mdlstm_forward
    mdlstm_backward = _loops.mdlstm_backward
    ctc_alphas = _loops.ctc_alphas
    ctc_betas = _loops.ctc_betas

LOG_FLOOR = _loops._NEG
