"""Select the compiled kernel core, falling back to numpy.

Set ``SURROCAL_BACKEND=python`` to force the numpy implementation.
"""

import os

BACKEND = "python"

if os.environ.get("SURROCAL_BACKEND", "").lower() != "python":
    try:
        from surrocal import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = None

if BACKEND == "python":
    from surrocal import _pykernels as _impl

powexp_cross = _impl.powexp_cross
matern32_cross = _impl.matern32_cross
gauss_kde_eval = _impl.gauss_kde_eval
