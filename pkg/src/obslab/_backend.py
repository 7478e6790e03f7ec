"""Select the compiled kernel module, falling back to pure Python.

Set ``OBSLAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

from obslab import _pykernels

COMPILED = False
kernels = _pykernels

if os.environ.get("OBSLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from obslab import _ckernels

        kernels = _ckernels
        COMPILED = True
    except ImportError:
        pass


def get_kernels(compiled=None):
    """Return a kernel module; ``compiled=False`` gives the fallback."""
    if compiled is None:
        return kernels
    if compiled:
        from obslab import _ckernels

        return _ckernels
    return _pykernels
