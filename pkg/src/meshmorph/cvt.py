"""CVT-style mesh badness and the tangential surface repair iteration.

Badness of a configuration is the sum over vertices of the density-weighted
squared distance of their one-ring patch to the vertex.  On surfaces the
distance is measured in the tangent plane of the vertex.  Both integrals are
evaluated exactly: the integrand is a cubic polynomial in barycentric
coordinates once the density is linear per simplex.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, MeshError, RepairError
from .fem import facet_gradients
from .mesh import DESIGN, boundary_edge_lengths
from .quadrature import second_moment_tensor, third_moment_tensor


@dataclass
class DensityField:
    """Per-vertex density, linear over each facet."""

    values: np.ndarray
    mode: str = "user"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mode not in ("uniform", "user", "spacing"):
            raise ValueError(f"unknown density mode {self.mode!r}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("density must be positive and finite")

    @classmethod
    def uniform(cls, n):
        return cls(np.ones(n), "uniform")

    @classmethod
    def spacing_preserving(cls, boundary):
        """rho_i proportional to 1 / |patch_i| of the given configuration."""
        meas = patch_measures(boundary)
        vals = np.ones(len(boundary.points))
        bv = boundary.vertices
        vals[bv] = meas[bv].mean() / meas[bv]
        return cls(vals, "spacing")


def _density(rho, n):
    if rho is None:
        return np.ones(n)
    if isinstance(rho, DensityField):
        rho = rho.values
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0:
        return np.full(n, float(rho))
    if rho.shape != (n,):
        raise MeshError(f"density has {len(rho)} values for {n} vertices")
    return rho


def patch_measures(boundary):
    """Total measure of the facets around every vertex (zero off the boundary)."""
    meas = boundary.facet_measures()
    out = np.zeros(len(boundary.points))
    for j in range(boundary.facets.shape[1]):
        np.add.at(out, boundary.facets[:, j], meas)
    return out


def full_normals(boundary, normals=None):
    """(N, dim) array of normals indexed by global vertex id."""
    out = np.zeros((len(boundary.points), boundary.dim))
    out[boundary.vertices] = boundary.normals if normals is None else normals
    return out


def tangent_project(p, origin, n):
    """(p - origin) with its component along the unit vector ``n`` removed."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-8:
        raise ValueError("normal must be a unit vector")
    d = np.asarray(p, dtype=float) - np.asarray(origin, dtype=float)
    return d - np.dot(d, n) * n


def _project(v, n):
    """Row-wise tangent projection of (..., dim) vectors by (P, dim) normals."""
    if n is None:
        return v
    if v.ndim == 3:
        return v - np.einsum("pkd,pd->pk", v, n)[:, :, None] * n[:, None, :]
    return v - np.einsum("pd,pd->p", v, n)[:, None] * n


class _Pairs:
    """All (simplex, generator corner) pairs of a patch badness.

    Every simplex contributes once for each of its corners, the corner being
    the generator of that patch term.
    """

    def __init__(self, points, simplices, rho, normals=None, select=None):
        k = simplices.shape[1]
        m = k - 1
        S = len(simplices)
        self.f = np.repeat(np.arange(S), k)
        self.a = np.tile(np.arange(k), S)
        self.gen = simplices[self.f, self.a]
        if select is not None:
            keep = np.isin(self.gen, select)
            self.f, self.a, self.gen = self.f[keep], self.a[keep], self.gen[keep]
        self.simplices = simplices
        self.points = points
        self.grads, self.meas = facet_gradients(points, simplices)
        r = rho[simplices]
        self.C = np.einsum("sm,mkl->skl", r, third_moment_tensor(m))  # int rho lam_k lam_l / |s|
        self.c1 = np.einsum("sm,mk->sk", r, second_moment_tensor(m))  # int rho lam_k / |s|
        self.c0 = r.sum(axis=1) / (m + 1)  # int rho / |s|
        y = points[simplices]
        self.diff = y[self.f] - points[self.gen][:, None, :]
        self.n = None if normals is None else normals[self.gen]
        self.z = _project(self.diff, self.n)

    def values(self):
        C = self.C[self.f]
        return self.meas[self.f] * np.einsum("pkl,pkd,pld->p", C, self.z, self.z)

    def gradient(self):
        """d(total badness)/d(points) with the normals held fixed."""
        P = len(self.f)
        val = self.values() / self.meas[self.f]
        Cz = np.einsum("pkl,pld->pkd", self.C[self.f], self.z)
        PCz = _project(Cz, self.n)
        PCz[np.arange(P), self.a] = 0.0  # the generator corner has z = 0 identically
        w = self.meas[self.f]
        G = np.zeros_like(self.points)
        np.add.at(G, self.gen, -2.0 * w[:, None] * PCz.sum(axis=1))
        corners = self.simplices[self.f]
        dA = self.meas[self.f][:, None, None] * self.grads[self.f]
        contrib = dA * val[:, None, None] + 2.0 * w[:, None, None] * PCz
        for q in range(corners.shape[1]):
            np.add.at(G, corners[:, q], contrib[:, q])
        return G

    def moments(self):
        """Per-generator int rho (s - x)_T and int rho over its patch."""
        w = self.meas[self.f]
        mom = w[:, None] * np.einsum("pk,pkd->pd", self.c1[self.f], self.diff)
        mom = _project(mom, self.n)
        first = np.zeros_like(self.points)
        mass = np.zeros(len(self.points))
        np.add.at(first, self.gen, mom)
        np.add.at(mass, self.gen, w * self.c0[self.f])
        return first, mass


def badness_volume(mesh, rho=None, points=None):
    """sum_i int_{one-ring of i} rho |x - x_i|^2 dx over the mesh cells."""
    x = mesh.vertices if points is None else np.asarray(points, dtype=float)
    pairs = _Pairs(x, mesh.cells, _density(rho, len(x)))
    return float(pairs.values().sum())


def _surface_pairs(boundary, rho, normals, select=None):
    rho = _density(rho, len(boundary.points))
    return _Pairs(boundary.points, boundary.facets, rho, full_normals(boundary, normals), select)


def badness_surface(boundary, rho=None, normals=None):
    """sum_i int_{Gamma_i} rho |(s - x_i)_T|^2 ds, tangent planes from the normals.

    ``normals`` (aligned with ``boundary.vertices``) overrides the current
    vertex normals, e.g. to freeze them for derivative checks.
    """
    return float(_surface_pairs(boundary, rho, normals).values().sum())


def badness_surface_gradient(boundary, rho=None, normals=None):
    """Gradient of :func:`badness_surface` w.r.t. all points, normals frozen."""
    return _surface_pairs(boundary, rho, normals).gradient()


def cvt_offsets(boundary, rho=None, normals=None, vertices=None):
    """Tangential offsets x*_i - x_i towards the rho-weighted patch centroid.

    Returns an (N, dim) array, zero outside ``vertices`` (default: all
    boundary vertices).
    """
    vertices = boundary.vertices if vertices is None else np.asarray(vertices)
    pairs = _surface_pairs(boundary, rho, normals, select=vertices)
    first, mass = pairs.moments()
    if np.any(mass[vertices] <= 0):
        raise DegenerateError("zero patch measure")
    out = np.zeros_like(first)
    out[vertices] = first[vertices] / mass[vertices, None]
    return out


def cvt_target(boundary, vid, rho=None, normals=None):
    """rho-weighted tangent-plane centroid of the patch of ``vid``."""
    if boundary.local[vid] < 0:
        raise MeshError(f"vertex {vid} is not a boundary vertex")
    return boundary.points[vid] + cvt_offsets(boundary, rho, normals, [vid])[vid]


@dataclass
class RepairResult:
    """``offsets`` is the accumulated (N, dim) motion relative to the entry points."""

    offsets: np.ndarray
    points: np.ndarray
    badness: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    max_step_normal: float = 0.0
    max_offset_normal: float = 0.0
    edge_relstd: tuple = (0.0, 0.0)


def movable_vertices(boundary, markers=(DESIGN,)):
    """Design vertices not touching any other region (corners stay fixed)."""
    return boundary.interior_design_vertices(markers)


def _facet_dirs(boundary, points):
    """Edge vectors (2D) or area normals (3D) of the boundary facets."""
    if boundary.dim == 2:
        return points[boundary.facets[:, 1]] - points[boundary.facets[:, 0]]
    p = points[boundary.facets]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def _check_inversion(boundary, ref_dirs, points):
    """A facet is inverted when one sweep turns it by more than 90 degrees."""
    e = _facet_dirs(boundary, points)
    bad = np.flatnonzero(np.sum(e * ref_dirs, axis=1) <= 0)
    if len(bad):
        f = boundary.facets[bad[0]]
        raise RepairError(f"boundary facet {tuple(int(v) for v in f)} inverted during repair "
                          f"({len(bad)} facet(s) flipped)")
    return e


def repair_loop(boundary, rho=None, tol=None, max_iter=100, normals=None, vertices=None,
                markers=(DESIGN,), max_halvings=10):
    """Jacobi CVT sweeps moving vertices within their tangent planes.

    Every sweep computes all targets from the current configuration and then
    moves the vertices together.  Vertex normals are recomputed once per
    sweep, unless ``normals`` (aligned with ``boundary.vertices``) is given:
    then those reference directions define the tangent planes throughout and
    the accumulated offsets are exactly tangential to them.

    A sweep whose full step would increase the badness is halved (at most
    ``max_halvings`` times), so the recorded badness never grows.  Stops
    when the largest offset is at most ``tol`` (default 1e-3 x mean
    boundary edge) or after ``max_iter`` sweeps.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be positive")
    rho = _density(rho, len(boundary.points))
    edges0 = boundary_edge_lengths_of(boundary)
    if tol is None:
        tol = 1e-3 * edges0.mean()
    if not tol > 0:
        raise ValueError("tol must be positive")
    vertices = movable_vertices(boundary, markers) if vertices is None else np.asarray(vertices)
    frozen = normals is not None
    ref = full_normals(boundary, normals)
    x0 = boundary.points.copy()
    x = x0.copy()
    current = boundary
    nsel = ref[vertices]
    hist = [badness_surface(current, rho, None if not frozen else normals)]
    step_normal = 0.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        n_now = normals if frozen else current.normals
        off = cvt_offsets(current, rho, n_now, vertices)
        nv = ref[vertices] if frozen else full_normals(current)[vertices]
        step_normal = max(step_normal, float(np.abs(np.sum(off[vertices] * nv, axis=1)).max(initial=0)))
        if np.linalg.norm(off[vertices], axis=1).max(initial=0.0) <= tol:
            converged = True
            break
        # under-relax until the badness does not grow (Jacobi sweeps over
        # primal patches are not monotone by themselves); an inverting step is
        # halved as well and only reported once no halving helps
        omega = 1.0
        inverted = None
        ref_dirs = _facet_dirs(boundary, x)
        for _ in range(max_halvings + 1):
            trial = x + omega * off
            try:
                _check_inversion(boundary, ref_dirs, trial)
                cand = boundary.with_points(trial)
            except (RepairError, DegenerateError) as exc:
                inverted = exc
                omega *= 0.5
                continue
            inverted = None
            f_trial = badness_surface(cand, rho, normals if frozen else None)
            if f_trial <= hist[-1]:
                break
            omega *= 0.5
        else:
            if inverted is not None:
                raise RepairError(f"repair step inverts the boundary: {inverted}")
            break  # stagnated: no non-increasing step left
        x, current = trial, cand
        hist.append(f_trial)
    tau = x - x0
    off_normal = float(np.abs(np.sum(tau[vertices] * nsel, axis=1)).max(initial=0.0))
    edges1 = boundary_edge_lengths_of(current)
    return RepairResult(
        offsets=tau,
        points=x,
        badness=hist,
        iterations=it,
        converged=converged,
        max_step_normal=step_normal,
        max_offset_normal=off_normal,
        edge_relstd=(_relstd(edges0), _relstd(edges1)),
    )


def boundary_edge_lengths_of(boundary):
    """Boundary edge lengths at the boundary complex's own coordinates."""
    return boundary_edge_lengths(boundary.mesh.with_vertices(boundary.points))


def _relstd(x):
    return float(np.std(x) / np.mean(x))
