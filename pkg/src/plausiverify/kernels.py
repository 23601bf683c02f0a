"""Kernel backend selection: compiled extension when present, numpy otherwise.

Set PLAUSIVERIFY_BACKEND=py (or =cy) to force a backend; the default prefers
the compiled extension and silently falls back to numpy.
"""

import os

_requested = os.environ.get("PLAUSIVERIFY_BACKEND", "").strip().lower()

if _requested in ("py", "python", "numpy"):
    from . import _kernels_py as _impl
elif _requested in ("cy", "cython", "ext"):
    from . import _kernels_cy as _impl  # raises if the extension is missing
elif _requested:
    raise ValueError(f"unknown PLAUSIVERIFY_BACKEND {_requested!r}")
else:
    try:
        from . import _kernels_cy as _impl
    except ImportError:
        from . import _kernels_py as _impl

sample_phi = _impl.sample_phi
ray_min_phi = _impl.ray_min_phi


def backend_name() -> str:
    """Name of the active kernel backend: 'cython' or 'numpy'."""
    return "cython" if _impl.__name__.endswith("_cy") else "numpy"
