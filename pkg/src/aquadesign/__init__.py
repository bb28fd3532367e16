"""Differentiable co-design of soft underwater swimmers on a regular grid.

Geometry is explored as entropic Wasserstein barycenters of base shapes,
simulated with an implicit corotational FEM plus analytic facet
hydrodynamics, and optimized end to end by adjoint gradients over both the
shape weights and the controller parameters.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as kernel_backend  # noqa: F401
