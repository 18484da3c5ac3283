"""Thermal controllability, observability and ensemble estimation for powder-bed fusion."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, PbfError  # noqa: E402
from .fem import LTI_ALUMINUM, TRUTH_ALUMINUM, MaterialProps, thermal_system  # noqa: E402
from .mesh import BuildGeometry, Mesh, build_mesh  # noqa: E402

__all__ = [
    "BuildGeometry", "ConfigError", "LTI_ALUMINUM", "MaterialProps", "Mesh",
    "NumericalError", "PbfError", "TRUTH_ALUMINUM", "build_mesh", "thermal_system",
    "__version__",
]
