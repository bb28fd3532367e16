"""Backend dispatch for the elastic element kernels.

Importing this module binds the 2D kernel entry points either to the
compiled extension (``aquadesign._speedups``) or to the NumPy reference
implementation.  The 3D kernels always come from the reference module.

Set ``AQUA_PURE_PYTHON=1`` in the environment to force the NumPy backend
even when the extension built; ``BACKEND`` records which one is active.
"""

import os

from . import _kernels_py

elastic3d_force = _kernels_py.elastic3d_force
elastic3d_energy = _kernels_py.elastic3d_energy
elastic3d_hessian_blocks = _kernels_py.elastic3d_hessian_blocks
elastic3d_dots = _kernels_py.elastic3d_dots

_impl = _kernels_py
if os.environ.get("AQUA_PURE_PYTHON", "") != "1":
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND_NAME

elastic2d_force = _impl.elastic2d_force
elastic2d_energy = _impl.elastic2d_energy
elastic2d_hessian_blocks = _impl.elastic2d_hessian_blocks
elastic2d_dots = _impl.elastic2d_dots
