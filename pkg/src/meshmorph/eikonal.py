"""Viscous Eikonal distance fields and the convective wind derived from them.

We solve  -h lap(eps) + |grad eps|^2 = 1  with eps = 0 on the marked
boundary and natural conditions elsewhere.  The Hopf-Cole substitution
eps = -h log w turns this into the linear problem h^2 lap(w) = w, so for
h -> 0 eps approaches the (positive) distance to the marked region.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import ConvergenceError, MeshError
from .fem import DirichletSolver, SolverConfig, _to_csr, gradient, p1_gradients, supg_tau
from .mesh import DESIGN


@dataclass
class EikonalConfig:
    """``h_reg=None`` means 0.05 x bounding-box diagonal of the mesh."""

    h_reg: float = None
    dirichlet_markers: tuple = (DESIGN,)
    newton: SolverConfig = field(default_factory=SolverConfig)
    initial_guess: str = "graph"
    supg: bool = True

    def __post_init__(self):
        if self.h_reg is not None and not self.h_reg > 0:
            raise ValueError("h_reg must be positive")
        if self.initial_guess not in ("graph", "zero"):
            raise ValueError(f"unknown initial guess {self.initial_guess!r}")
        if isinstance(self.dirichlet_markers, int):
            self.dirichlet_markers = (self.dirichlet_markers,)
        self.dirichlet_markers = tuple(int(m) for m in self.dirichlet_markers)

    def regularization(self, mesh):
        return self.h_reg if self.h_reg is not None else 0.05 * mesh.diameter()


def dirichlet_vertices(mesh, markers):
    ids = mesh.vertices_with_marker(markers)
    if len(ids) == 0:
        raise MeshError(f"no boundary vertices carry marker(s) {tuple(markers)}")
    return ids


def edge_graph(mesh, points=None):
    """Sparse symmetric graph of mesh edges weighted by length."""
    x = mesh.vertices if points is None else points
    k = mesh.cells.shape[1]
    i, j = np.triu_indices(k, 1)
    a = mesh.cells[:, i].ravel()
    b = mesh.cells[:, j].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = np.unique(lo * mesh.n_vertices + hi)
    lo, hi = key // mesh.n_vertices, key % mesh.n_vertices
    w = np.linalg.norm(x[lo] - x[hi], axis=1)
    n = mesh.n_vertices
    return sparse.coo_matrix((w, (lo, hi)), shape=(n, n)).tocsr()


def graph_distance(mesh, sources):
    """Dijkstra distance along mesh edges to the nearest source vertex."""
    d = csgraph.dijkstra(edge_graph(mesh), directed=False, indices=np.asarray(sources),
                         min_only=True)
    if not np.all(np.isfinite(d)):
        raise MeshError("mesh graph is disconnected from the Dirichlet region")
    return d


def _residual_and_jacobian(mesh, grads, vols, eps, h, use_supg, want_jac=True):
    n = mesh.n_vertices
    ge = np.einsum("mkd,mk->md", grads, eps[mesh.cells])
    c = np.sum(ge * ge, axis=1) - 1.0  # pointwise equation residual (P1: lap = 0 per cell)
    gg = np.einsum("mid,mjd->mij", grads, grads)
    local_r = h * vols[:, None] * np.einsum("mkd,md->mk", grads, ge) + (c * vols / 3.0)[:, None]
    w = 2.0 * ge
    wg = np.einsum("mkd,md->mk", grads, w)
    if use_supg:
        tau = supg_tau(w, np.full(len(vols), h), grads)
        local_r = local_r + (tau * vols * c)[:, None] * wg
    R = np.zeros(n)
    np.add.at(R, mesh.cells, local_r)
    if not want_jac:
        return R, None
    # d/d eps_j of the cell terms, tau frozen
    J = h * vols[:, None, None] * gg + (vols / 3.0)[:, None, None] * wg[:, None, :]
    if use_supg:
        J = J + (tau * vols)[:, None, None] * (wg[:, :, None] * wg[:, None, :] + 2.0 * c[:, None, None] * gg)
    return R, _to_csr(mesh.cells, J, n)


def solve_eikonal(mesh, config=None, full_output=False):
    """Damped Newton solve of the viscous Eikonal equation on a triangle mesh.

    Returns the nodal field (and an info dict with ``iterations`` and
    ``residual`` when ``full_output``).
    """
    config = config or EikonalConfig()
    if mesh.dim != 2:
        raise MeshError("Eikonal solves are implemented for triangle meshes only")
    h = config.regularization(mesh)
    nc = config.newton
    fixed = dirichlet_vertices(mesh, config.dirichlet_markers)
    grads, vols = p1_gradients(mesh.vertices, mesh.cells)
    if config.initial_guess == "graph":
        eps = graph_distance(mesh, fixed)
    else:
        eps = np.zeros(mesh.n_vertices)
    eps[fixed] = 0.0
    free = np.ones(mesh.n_vertices, dtype=bool)
    free[fixed] = False

    def rnorm(R):
        return np.linalg.norm(R[free])

    R, J = _residual_and_jacobian(mesh, grads, vols, eps, h, config.supg)
    res = rnorm(R)
    history = [res]
    for it in range(nc.newton_max_steps + 1):
        if res <= nc.newton_atol:
            break
        if it == nc.newton_max_steps:
            raise ConvergenceError(
                f"Newton did not converge in {nc.newton_max_steps} steps (residual {res:.3e})", res)
        step = -DirichletSolver(J, fixed, nc).solve(R)
        t = 1.0
        for _ in range(nc.max_halvings + 1):
            trial = eps + t * step
            R_t, _ = _residual_and_jacobian(mesh, grads, vols, trial, h, config.supg, want_jac=False)
            if rnorm(R_t) < res:
                break
            t *= 0.5
        eps = trial
        R, J = _residual_and_jacobian(mesh, grads, vols, eps, h, config.supg)
        res = rnorm(R)
        history.append(res)
    if full_output:
        return eps, {"iterations": len(history) - 1, "residual": res, "history": history, "h": h}
    return eps


def wind_field(mesh, eps2):
    """Exact per-cell P1 gradient of ``eps2``; points towards increasing eps2."""
    return gradient(mesh, eps2)


def hopf_cole_strip(x, h):
    """Closed-form viscous distance on [0, 1] with zero at both ends."""
    x = np.asarray(x, dtype=float)
    # log cosh written stably: log cosh z = |z| + log1p(exp(-2|z|)) - log 2
    def logcosh(z):
        z = np.abs(z)
        return z + np.log1p(np.exp(-2 * z)) - np.log(2.0)

    return -h * (logcosh((x - 0.5) / h) - logcosh(0.5 / h))
