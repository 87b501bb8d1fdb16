"""Volume mesh deformation driven by boundary displacements.

The Eikonal-convection extension solves, per displacement component,

    -div(max(alpha eps1^2, floor) grad v) + div(v beta grad eps2) = 0

with the boundary displacement on the design surface and zero on every
other boundary.  eps1 is the distance to the far field, eps2 the distance
to the design surface.  ``laplace_displacement`` is the harmonic baseline.
"""
from dataclasses import dataclass

import numpy as np

from .errors import MeshError
from .fem import DirichletSolver, SolverConfig, assemble_operator
from .eikonal import wind_field
from .mesh import DESIGN


@dataclass
class DeformConfig:
    """``beta=None`` means 10 / diameter, ``floor=None`` 1e-6 alpha diameter^2."""

    alpha: float = 1.0
    beta: float = None
    floor: float = None
    supg: bool = True
    design_markers: tuple = (DESIGN,)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.floor is not None and not self.floor > 0:
            raise ValueError("floor must be positive")
        if isinstance(self.design_markers, int):
            self.design_markers = (self.design_markers,)

    def resolved(self, mesh):
        diam = mesh.diameter()
        beta = 10.0 / diam if self.beta is None else self.beta
        floor = 1e-6 * self.alpha * diam ** 2 if self.floor is None else self.floor
        return self.alpha, beta, floor


def _boundary_data(mesh, design, values, outer_values):
    """Dirichlet ids and (k, dim) values: design data, zero (or given) elsewhere."""
    dim = mesh.dim
    bnd = np.unique(mesh.boundary_facets)
    vals = np.zeros((mesh.n_vertices, dim))
    if outer_values is not None:
        vals[:] = np.asarray(outer_values, dtype=float).reshape(-1, dim)
    if isinstance(values, tuple):
        ids, v = values
        ids = np.asarray(ids, dtype=np.int64)
        if not np.all(np.isin(ids, design)):
            raise MeshError("boundary displacement given on a non-design vertex")
        vals[ids] = np.asarray(v, dtype=float).reshape(len(ids), dim)
    else:
        v = np.asarray(values, dtype=float)
        if v.shape == (len(design), dim):
            vals[design] = v
        elif v.shape == (mesh.n_vertices, dim):
            vals[design] = v[design]
        else:
            raise MeshError(f"boundary displacement has shape {v.shape}")
    if not np.all(np.isfinite(vals[bnd])):
        raise MeshError("non-finite boundary displacement")
    return bnd, vals[bnd]


def _extend(op_matrix, mesh, design, values, outer_values, solver):
    bnd, vals = _boundary_data(mesh, design, values, outer_values)
    return DirichletSolver(op_matrix, bnd, solver).solve(np.zeros(mesh.n_vertices), vals)


def displacement_operator(mesh, eps1, eps2, config=None):
    """Assembled scalar operator shared by all displacement components."""
    config = config or DeformConfig()
    if eps1 is None or eps2 is None:
        raise MeshError("both distance fields are required")
    eps1 = np.asarray(eps1, dtype=float)
    eps2 = np.asarray(eps2, dtype=float)
    if eps1.shape != (mesh.n_vertices,) or eps2.shape != (mesh.n_vertices,):
        raise MeshError("distance fields must have one value per vertex")
    alpha, beta, floor = config.resolved(mesh)
    k = np.maximum(alpha * eps1 ** 2, floor)
    wind = beta * wind_field(mesh, eps2)
    return assemble_operator(mesh, diffusion=k, wind=wind, supg=config.supg and beta > 0)


def solve_displacement(mesh, eps1, eps2, boundary_values, config=None, solver=None,
                       outer_values=None):
    """Extend design-surface displacements into the volume.

    ``boundary_values`` is (n_design, dim) aligned with the sorted design
    vertices, a full (N, dim) array (only design rows are read) or an
    ``(ids, values)`` pair.  ``outer_values`` overrides the zero condition on
    the remaining boundary (testing aid).
    """
    config = config or DeformConfig()
    design = mesh.vertices_with_marker(config.design_markers)
    if len(design) == 0:
        raise MeshError("mesh has no design-surface vertices")
    op = displacement_operator(mesh, eps1, eps2, config)
    return _extend(op.matrix, mesh, design, boundary_values, outer_values, solver or SolverConfig())


def laplace_displacement(mesh, boundary_values, epsilon=1.0, design_markers=(DESIGN,),
                         solver=None, outer_values=None):
    """Componentwise harmonic extension with the same boundary data."""
    design = mesh.vertices_with_marker(design_markers)
    if len(design) == 0:
        raise MeshError("mesh has no design-surface vertices")
    op = assemble_operator(mesh, diffusion=epsilon)
    return _extend(op.matrix, mesh, design, boundary_values, outer_values, solver or SolverConfig())
