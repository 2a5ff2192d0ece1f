"""Kernel backend selection.

The compiled Cython core is preferred; the pure-Python kernels are the
fallback.  Set MLPMINE_BACKEND=python or MLPMINE_BACKEND=c to force one
(forcing "c" raises if the extension was not built).
"""

import os

_choice = os.environ.get("MLPMINE_BACKEND", "").strip().lower()

if _choice == "python":
    from . import _kernels_py as kernels

    BACKEND = "python"
elif _choice == "c":
    from . import _kernels_c as kernels  # type: ignore[no-redef]

    BACKEND = "c"
elif _choice == "":
    try:
        from . import _kernels_c as kernels  # type: ignore[no-redef]

        BACKEND = "c"
    except ImportError:
        from . import _kernels_py as kernels

        BACKEND = "python"
else:
    raise ValueError("MLPMINE_BACKEND must be 'c' or 'python', got %r" % _choice)
