"""Windows, meshes, quadrature and distances."""
from .mesh import (
    QuadratureNodes,
    TriangleMesh,
    integrate_basis,
    load_mesh,
    mass_matrix,
    save_mesh,
    triangulate,
)
from .quadrature import QuadratureRule, available_orders, rule
from .window import (
    BOUNDARY_TOL,
    SNAP_TOL,
    Window,
    area,
    border_region,
    contains,
    distance_to_set,
    segment_distance,
)

__all__ = [
    "BOUNDARY_TOL",
    "SNAP_TOL",
    "QuadratureNodes",
    "QuadratureRule",
    "TriangleMesh",
    "Window",
    "area",
    "available_orders",
    "border_region",
    "contains",
    "distance_to_set",
    "integrate_basis",
    "load_mesh",
    "mass_matrix",
    "rule",
    "save_mesh",
    "segment_distance",
    "triangulate",
]
