"""Hot raster kernels with a compiled fast path.

The Cython extension is built by setup.py when a compiler is available; the
numpy implementations are selected at import otherwise. Set SRPROM_KERNELS to
``numpy`` or ``cython`` to force a backend.
"""

import os

from . import _npkernels

_forced = os.environ.get("SRPROM_KERNELS", "").strip().lower()

if _forced == "numpy":
    _impl = _npkernels
    BACKEND = "numpy"
else:
    try:
        from . import _cykernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "SRPROM_KERNELS=cython but the compiled kernel module is not built; "
                "run: pip install -e . --no-build-isolation"
            ) from None
        _impl = _npkernels
        BACKEND = "numpy"

binary_erode = _impl.binary_erode
binary_dilate = _impl.binary_dilate
label_components = _impl.label_components
convolve_sep_valid = _impl.convolve_sep_valid


def available_backends() -> dict:
    """Importable backend modules keyed by name (for tests and benchmarks)."""
    backends = {"numpy": _npkernels}
    try:
        from . import _cykernels

        backends["cython"] = _cykernels
    except ImportError:
        pass
    return backends
