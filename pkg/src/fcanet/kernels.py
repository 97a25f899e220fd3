"""Backend selection for the convolution hot loops.

The compiled Cython extension is preferred when importable; otherwise the
NumPy tap-loop fallback is used.  Setting the environment variable
``FCANET_FORCE_NUMPY`` (to anything but ``""``/``"0"``) forces the fallback,
which is useful for benchmarking and for debugging suspected kernel issues.

Both backends implement the same three functions with identical semantics;
results agree to floating-point tolerance (summation order may differ, so
bit-equality across backends is not guaranteed — within one backend results
are deterministic).
"""

import os

from . import _kernels_np as numpy_backend

try:
    from . import _ckernels as compiled_backend  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on build environment
    compiled_backend = None

if os.environ.get("FCANET_FORCE_NUMPY", "0") not in ("", "0"):
    active = numpy_backend
elif compiled_backend is not None:
    active = compiled_backend
else:  # pragma: no cover
    active = numpy_backend


def backend_name() -> str:
    """Name of the backend actually in use ("compiled" or "numpy")."""
    return "compiled" if active is compiled_backend and active is not None else "numpy"
