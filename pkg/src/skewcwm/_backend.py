"""Kernel backend selection.

The compiled Cython kernels are used when importable; setting the environment
variable ``SKEWCWM_PURE_PYTHON=1`` forces the numpy/scipy fallback.
"""

import os

from . import _pykernels

python_kernels = _pykernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and not os.environ.get("SKEWCWM_PURE_PYTHON"):
    kernels = compiled_kernels
    BACKEND = "compiled"
else:
    kernels = _pykernels
    BACKEND = "python"
