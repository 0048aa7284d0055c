"""Backend selection for the hot-loop kernels.

Prefers the compiled extension; falls back to pure numpy when the extension
was not built. ``ICUCAST_FORCE_PY=1`` forces the fallback (used by the
benchmark and by tests that compare the two backends).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("ICUCAST_FORCE_PY") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

ingarch_mu_path = _impl.ingarch_mu_path
ingarch_quasi_loglik = _impl.ingarch_quasi_loglik
glmm_region_mode = _impl.glmm_region_mode
glmm_panel_laplace = _impl.glmm_panel_laplace
