"""Nodal shape optimisation driven by Hadamard-form shape gradients.

Objectives are the three model functionals

    J1 = int_Omega f1 dx,   J2 = int_dOmega f2 ds,   J3 = int_dOmega <f3, n> ds

with shape derivatives dJ[V] = int_dOmega <V, n> g ds, where g = f1,
d f2/dn + kappa f2 and div f3 respectively.  One optimisation step smooths
the kernel with a Laplace-Beltrami solve, projects out the constraint
directions, moves the design surface along its normals, repairs the surface
node distribution tangentially and extends the boundary motion into the
volume with the Eikonal-convection deformation.
"""
import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .cvt import badness_surface, repair_loop
from .deform import DeformConfig, displacement_operator
from .eikonal import EikonalConfig, solve_eikonal
from .errors import ConstraintError, LineSearchError, MeshError
from .fem import DirichletSolver, SolverConfig, assemble_operator, boundary_matrices
from .io import write_vtk
from .mesh import (
    DESIGN,
    FARFIELD,
    apply_displacement,
    boundary_complex,
    discrete_curvatures,
    facet_area_normals,
    quality_report,
)
from .quadrature import simplex_rule

KINDS = ("J1", "J2", "J3")
CONSTRAINTS = ("volume", "centroid", "symmetry")


@dataclass
class ObjectiveSpec:
    """Objective kind, analytic integrand and constraint set.

    ``f`` maps (P, dim) points to (P,) values (J1, J2) or (P, dim) vectors
    (J3).  ``grad`` (J2) returns the spatial gradient of f, ``div`` (J3) its
    divergence.  ``symmetry_axes`` lists the coordinate planes x_k = 0 the
    shape must stay symmetric about.
    """

    kind: str
    f: callable
    grad: callable = None
    div: callable = None
    constraints: frozenset = frozenset()
    symmetry_axes: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        self.constraints = frozenset(self.constraints)
        unknown = self.constraints - set(CONSTRAINTS)
        if unknown:
            raise ValueError(f"unknown constraint(s) {sorted(unknown)}")
        if self.kind == "J2" and self.grad is None:
            raise ValueError("J2 needs the gradient of its integrand")
        if self.kind == "J3" and self.div is None:
            raise ValueError("J3 needs the divergence of its integrand")
        if "symmetry" in self.constraints and not self.symmetry_axes:
            raise ValueError("symmetry constraint needs at least one axis")


def _const(c):
    return lambda x: np.full(len(x), float(c))


def _zero_vec(x):
    return np.zeros_like(x)


def area_objective(constraints=()):
    return ObjectiveSpec("J1", _const(1.0), constraints=constraints, name="volume")


def perimeter_objective(constraints=("volume",), symmetry_axes=()):
    return ObjectiveSpec("J2", _const(1.0), grad=_zero_vec, constraints=constraints,
                         symmetry_axes=symmetry_axes, name="perimeter")


def radial_objective(radius=1.0, constraints=()):
    """J1 with f1 = |x|^2 - radius^2; stationary on the circle |x| = radius."""
    return ObjectiveSpec("J1", lambda x: np.sum(x * x, axis=1) - radius ** 2,
                         constraints=constraints, name="radial")


def flux_objective(constraints=()):
    """J3 with f3(x) = x, so J3 = dim * volume."""
    return ObjectiveSpec("J3", lambda x: np.array(x, dtype=float),
                         div=lambda x: np.full(len(x), float(x.shape[1])),
                         constraints=constraints, name="flux")


OBJECTIVES = {
    "perimeter": perimeter_objective,
    "volume": area_objective,
    "radial": radial_objective,
    "flux": flux_objective,
}


def _simplex_quadrature(points, simplices, f, degree):
    lam, w = simplex_rule(simplices.shape[1] - 1, degree)
    x = np.einsum("qk,skd->sqd", lam, points[simplices])
    vals = f(x.reshape(-1, points.shape[1]))
    return x, w, vals


def eval_objective(mesh, spec, degree=6):
    """Quadrature of the objective: cells for J1, boundary facets for J2/J3."""
    x = mesh.vertices
    if spec.kind == "J1":
        _, w, vals = _simplex_quadrature(x, mesh.cells, spec.f, degree)
        vols = mesh.signed_volumes()
        return float(np.sum(vols * (vals.reshape(len(vols), -1) @ w)))
    facets = mesh.boundary_facets
    an = facet_area_normals(x, facets)
    meas = np.linalg.norm(an, axis=1)
    _, w, vals = _simplex_quadrature(x, facets, spec.f, degree)
    if spec.kind == "J2":
        return float(np.sum(meas * (vals.reshape(len(facets), -1) @ w)))
    vals = vals.reshape(len(facets), len(w), mesh.dim)
    return float(np.sum(np.einsum("sqd,q,sd->s", vals, w, an)))


def boundary_volume(points, facets, dim):
    """Volume enclosed by outward-oriented boundary facets (divergence theorem)."""
    an = facet_area_normals(points, facets)
    return float(np.sum(points[facets].mean(axis=1) * an) / dim)


def hadamard_kernel(boundary, spec):
    """Scalar kernel g at every boundary vertex (N-array, zero elsewhere)."""
    g = np.zeros(len(boundary.points))
    bv = boundary.vertices
    x = boundary.points[bv]
    if spec.kind == "J1":
        g[bv] = spec.f(x)
    elif spec.kind == "J2":
        if boundary.dim != 2:
            raise MeshError("the boundary-integral kernel needs curvature and is 2D only")
        kappa = discrete_curvatures(boundary)
        dfdn = np.sum(spec.grad(x) * boundary.normals, axis=1)
        g[bv] = dfdn + kappa * spec.f(x)
    else:
        g[bv] = spec.div(x)
    return g


def _full_normals(boundary):
    n = np.zeros_like(boundary.points)
    n[boundary.vertices] = boundary.normals
    return n


def directional_derivative(boundary, g, V, markers=None):
    """int <V, n> g ds with both factors interpolated linearly on the facets.

    Vertex normals are used for <V, n>, so a field tangential at every
    vertex gives exactly zero.
    """
    M, _, dofs = boundary_matrices(boundary, markers, allow_open=True)
    vn = np.sum(np.asarray(V, dtype=float)[dofs] * _full_normals(boundary)[dofs], axis=1)
    return float(vn @ (M @ np.asarray(g, dtype=float)[dofs]))


def sobolev_smooth(boundary, d1, delta, markers=(DESIGN,), pinned=()):
    """Solve (delta K + M) d2 = -M d1 on the marked facets; d2 = 0 at ``pinned``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    M, K, dofs = boundary_matrices(boundary, markers, allow_open=True)
    A = (delta * K + M).tocsr()
    pin = np.flatnonzero(np.isin(dofs, pinned))
    rhs = -(M @ np.asarray(d1, dtype=float)[dofs])
    loc = DirichletSolver(A, pin).solve(rhs)
    out = np.zeros(len(boundary.points))
    out[dofs] = loc
    return out


def mirror_pairs(points, vertices, axis, tol=1e-9):
    """Index map vertex -> its mirror image about x_axis = 0 within ``vertices``."""
    p = points[vertices]
    q = p.copy()
    q[:, axis] *= -1
    scale = max(np.ptp(points, axis=0).max(), 1e-300)
    dist, idx = cKDTree(p).query(q)
    if np.any(dist > tol * scale):
        raise ConstraintError(f"design surface is not symmetric about x{axis} = 0")
    return vertices[idx]


def symmetrize(boundary, values, vertices, axes):
    """Average a scalar nodal field with its mirror images."""
    out = np.array(values, dtype=float)
    for ax in axes:
        m = mirror_pairs(boundary.points, vertices, ax)
        out[vertices] = 0.5 * (out[vertices] + out[m])
    return out


def project_constraints(boundary, d2, spec, markers=(DESIGN,), movable=None):
    """Mass-orthogonal projection of d2 off the linearised constraint directions.

    Volume removes the constant, centroid the normal components n_j;
    symmetry averages mirror pairs first.  Vertices outside ``movable`` are
    kept at zero.
    """
    M, _, dofs = boundary_matrices(boundary, markers, allow_open=True)
    movable = dofs if movable is None else np.asarray(movable)
    mask = np.isin(dofs, movable)
    d = np.array(d2, dtype=float)
    if "symmetry" in spec.constraints:
        d = symmetrize(boundary, d, movable, spec.symmetry_axes)
    basis = []
    if "volume" in spec.constraints:
        basis.append(np.ones(len(dofs)))
    if "centroid" in spec.constraints:
        n = _full_normals(boundary)[dofs]
        basis.extend(n[:, j] for j in range(boundary.dim))
    if not basis:
        return d
    B = np.column_stack(basis) * mask[:, None]
    MB = M @ B
    G = B.T @ MB
    if np.linalg.cond(G) > 1e12:
        raise ConstraintError("constraint directions are (nearly) linearly dependent")
    x = d[dofs]
    x = x - B @ np.linalg.solve(G, MB.T @ x)
    d[dofs] = x
    return d


def mass_norm(boundary, d, markers=(DESIGN,)):
    M, _, dofs = boundary_matrices(boundary, markers, allow_open=True)
    v = np.asarray(d, dtype=float)[dofs]
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


@dataclass
class DriverConfig:
    """Optimisation driver settings.

    ``delta=None`` means 10 x (mean design edge)^2; ``max_move=None`` caps the
    first trial step at two mean design edges of normal motion.
    """

    delta: float = None
    step: float = 1.0
    max_move: float = None
    backtrack: float = 0.5
    max_trials: int = 20
    armijo: float = 1e-4
    gtol: float = 1e-4
    max_iter: int = 50
    repair: bool = True
    repair_tol: float = None
    repair_max_iter: int = 100
    volume_rescale: bool = True
    design_markers: tuple = (DESIGN,)
    farfield_markers: tuple = (FARFIELD,)
    eikonal_h: float = None
    deform: DeformConfig = field(default_factory=lambda: DeformConfig(alpha=1.0, beta=0.3, floor=0.25))
    solver: SolverConfig = field(default_factory=SolverConfig)
    vtk_dir: str = None

    def __post_init__(self):
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.max_move is not None and not self.max_move > 0:
            raise ValueError("max_move must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.max_trials < 1 or self.max_iter < 0 or self.repair_max_iter < 1:
            raise ValueError("iteration limits must be positive")
        if not 0 < self.armijo < 1:
            raise ValueError("armijo constant must lie in (0, 1)")
        if not self.gtol > 0:
            raise ValueError("gtol must be positive")


HISTORY_COLUMNS = ("iter", "J", "vol", "badness", "min_angle", "inverted", "step", "repair_iters")


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    gradient_norms: list = field(default_factory=list)
    converged: bool = False
    status: str = ""

    def column(self, name):
        return np.array([r[name] for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r["iter"]] + [repr(float(r[c])) if isinstance(r[c], float) else r[c]
                                          for c in HISTORY_COLUMNS[1:]])


@dataclass
class StepState:
    """Quantities fixed for a whole run (reference volume, gradient scale)."""

    volume0: float = None
    gnorm0: float = None
    iteration: int = 0


def _design_sets(boundary, markers):
    movable = boundary.interior_design_vertices(markers)
    design = boundary.vertices_on(markers)
    if len(movable) == 0:
        raise MeshError("no movable design vertices")
    return design, movable


def _distances(mesh, config):
    """eps1 (far field) and eps2 (design) fields; eps1 = 1 without a far field."""
    ek = dict(h_reg=config.eikonal_h, newton=config.solver)
    eps2 = solve_eikonal(mesh, EikonalConfig(dirichlet_markers=config.design_markers, **ek))
    if len(mesh.vertices_with_marker(config.farfield_markers)) == 0:
        return None, eps2
    eps1 = solve_eikonal(mesh, EikonalConfig(dirichlet_markers=config.farfield_markers, **ek))
    return eps1, eps2


class _Extension:
    """Factorised displacement operator on the current mesh, reused by all trials."""

    def __init__(self, mesh, config):
        eps1, eps2 = _distances(mesh, config)
        if eps1 is None:
            # no far field: constant diffusivity, no convection (harmonic extension)
            op = assemble_operator(mesh, diffusion=config.deform.alpha)
        else:
            op = displacement_operator(mesh, eps1, eps2, config.deform)
        self.mesh = mesh
        self.bnd = np.unique(mesh.boundary_facets)
        self.solver = DirichletSolver(op.matrix, self.bnd, config.solver)

    def __call__(self, d3):
        vals = d3[self.bnd]
        return self.solver.solve(np.zeros(self.mesh.n_vertices), vals)


def _symmetric_positions(points, vertices, axes):
    """Snap on-plane vertices to their plane and average mirror pairs exactly."""
    out = points.copy()
    for ax in axes:
        m = mirror_pairs(points, vertices, ax, tol=1e-6)
        mirrored = out[m].copy()
        mirrored[:, ax] *= -1
        out[vertices] = 0.5 * (out[vertices] + mirrored)
    return out


def _rescale_volume(mesh, x, vertices, target, axes):
    """Scale ``vertices`` about their centroid so the enclosed volume is ``target``."""
    c = x[vertices].mean(axis=0)
    c[list(axes)] = 0.0
    base = x[vertices] - c

    def vol(s):
        y = x.copy()
        y[vertices] = c + s * base
        return boundary_volume(y, mesh.boundary_facets, mesh.dim) - target

    lo, hi = 0.5, 2.0
    if vol(lo) * vol(hi) > 0:
        raise ConstraintError("volume rescale bracket failed")
    s = brentq(vol, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    y = x.copy()
    y[vertices] = c + s * base
    return y


def _mean_edge(boundary, markers):
    f = boundary.facets[boundary.facet_mask(markers)]
    return float(np.mean(np.linalg.norm(boundary.points[f[:, 1]] - boundary.points[f[:, 0]], axis=1)))


def descent_direction(mesh, spec, config, boundary=None):
    """Kernel, smoothed direction d2 (projected) and its unprojected mass norm."""
    b = boundary_complex(mesh) if boundary is None else boundary
    design, movable = _design_sets(b, config.design_markers)
    pinned = np.setdiff1d(design, movable)
    g = hadamard_kernel(b, spec)
    delta = config.delta if config.delta is not None else 10.0 * _mean_edge(b, config.design_markers) ** 2
    d2 = sobolev_smooth(b, g, delta, config.design_markers, pinned)
    raw = mass_norm(b, d2, config.design_markers)
    d2 = project_constraints(b, d2, spec, config.design_markers, movable)
    return b, g, d2, raw, movable


def optimize_step(mesh, spec, config=None, state=None):
    """One accepted step of the nodal scheme.

    Returns ``(new_mesh, record)``; ``record["converged"]`` is set (and the
    mesh returned unchanged) when the projected smoothed gradient is already
    below tolerance.
    """
    config = config or DriverConfig()
    state = state or StepState()
    if state.volume0 is None:
        state.volume0 = mesh.volume()
    b, g, d2, raw, movable = descent_direction(mesh, spec, config)
    gnorm = mass_norm(b, d2, config.design_markers)
    if state.gnorm0 is None:
        state.gnorm0 = max(raw, 1e-300)
    J0 = eval_objective(mesh, spec)
    record = {"iter": state.iteration + 1, "gnorm": gnorm}
    if gnorm <= config.gtol * state.gnorm0:
        record.update(converged=True)
        return mesh, record
    n = _full_normals(b)
    slope = directional_derivative(b, g, d2[:, None] * n, config.design_markers)
    if slope >= 0:
        raise LineSearchError(f"smoothed direction is not a descent direction (slope {slope:.3e})")
    max_move = config.max_move if config.max_move is not None else 2.0 * _mean_edge(b, config.design_markers)
    s = config.step * min(1.0, max_move / np.abs(d2[movable]).max())
    extend = _Extension(mesh, config)
    axes = spec.symmetry_axes if "symmetry" in spec.constraints else ()
    x = mesh.vertices
    last = "no trial"
    for trial in range(config.max_trials):
        y = x.copy()
        y[movable] = x[movable] + s * d2[movable, None] * n[movable]
        repair_iters = 0
        if config.repair:
            trial_b = b.with_points(y)
            rep = repair_loop(trial_b, tol=config.repair_tol, max_iter=config.repair_max_iter,
                              normals=b.normals, vertices=movable)
            y = rep.points
            repair_iters = rep.iterations
        if axes:
            y = _symmetric_positions(y, movable, axes)
        if "volume" in spec.constraints and config.volume_rescale:
            try:
                y = _rescale_volume(mesh, y, movable, state.volume0, axes)
            except ConstraintError as exc:
                last = str(exc)
                s *= config.backtrack
                continue
        d3 = np.zeros_like(x)
        d3[movable] = y[movable] - x[movable]
        v = extend(d3)
        new = apply_displacement(mesh, v)
        q = quality_report(new)
        if q.inverted:
            last = f"{q.inverted} inverted cells"
        else:
            J1 = eval_objective(new, spec)
            if J1 <= J0 + config.armijo * s * slope:
                nb = boundary_complex(new)
                record.update(
                    converged=False,
                    J=J1,
                    vol=new.volume(),
                    badness=badness_surface(nb) if config.repair else float("nan"),
                    min_angle=q.min_angle,
                    inverted=q.inverted,
                    step=float(s * gnorm),
                    repair_iters=repair_iters,
                    trials=trial + 1,
                    displacement=v,
                )
                return new, record
            last = f"objective {J1:.6e} fails sufficient decrease from {J0:.6e}"
        s *= config.backtrack
    raise LineSearchError(f"line search failed after {config.max_trials} trials ({last})")


def run_optimize(mesh, spec, config=None, history_csv=None):
    """Iterate :func:`optimize_step` until the gradient test or ``max_iter``.

    Returns ``(RunHistory, final_mesh)``.  A failed line search ends the run
    with ``status`` describing it instead of raising.
    """
    config = config or DriverConfig()
    state = StepState(volume0=mesh.volume())
    hist = RunHistory()
    current = mesh
    if config.vtk_dir:
        os.makedirs(config.vtk_dir, exist_ok=True)
        write_vtk(current, {}, os.path.join(config.vtk_dir, "iter_0000.vtk"))
    hist.status = "max_iter"
    for k in range(config.max_iter):
        state.iteration = k
        try:
            new, rec = optimize_step(current, spec, config, state)
        except LineSearchError as exc:
            hist.status = f"line search failed: {exc}"
            break
        hist.gradient_norms.append(rec["gnorm"])
        if rec["converged"]:
            hist.converged = True
            hist.status = "converged"
            break
        v = rec.pop("displacement")
        hist.records.append(rec)
        current = new
        if config.vtk_dir:
            write_vtk(current, {"displacement": v},
                      os.path.join(config.vtk_dir, f"iter_{k + 1:04d}.vtk"))
    if history_csv:
        hist.to_csv(history_csv)
    return hist, current
