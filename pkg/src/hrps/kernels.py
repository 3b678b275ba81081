"""Backend selection for the shadow-distance kernel.

The compiled extension is used when it imports; setting ``HRPS_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
minimize_batch = _kernels_py.minimize_batch

if os.environ.get("HRPS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled

        minimize_batch = _compiled.minimize_batch
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass

MAX_COMPILED_D = 8


def minimize(U, mu, r2, early_stop=True, max_iter=100, tol=1e-10):
    """Dispatch to the active backend; dimensions above 8 always use numpy."""
    if BACKEND == "cython" and U.shape[-1] <= MAX_COMPILED_D and U.shape[0] > 0:
        return minimize_batch(U, mu, r2, early_stop=early_stop, max_iter=max_iter, tol=tol)
    return _kernels_py.minimize_batch(U, mu, r2, early_stop=early_stop, max_iter=max_iter, tol=tol)
