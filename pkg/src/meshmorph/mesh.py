"""Simplicial meshes, their boundary complex and discrete boundary geometry.

Conventions
-----------
* Cells are positively oriented (strictly positive signed volume).
* Boundary facets are stored *outward oriented*: in 2D the edge ``(a, b)``
  has the domain on its left, so its outward normal is ``(dy, -dx)``; in 3D
  the triangle ``(a, b, c)`` has outward normal ``(b - a) x (c - a)``.
* Boundary markers: 1 = design surface, 2 = far field, >= 3 = symmetry
  planes.  Every routine that cares takes the marker sets as arguments.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, MeshError

DESIGN = 1
FARFIELD = 2
SYMMETRY = 3

# Local faces of a positive simplex, listed with outward orientation.
_LOCAL_FACETS = {
    2: np.array([[0, 1], [1, 2], [2, 0]]),
    3: np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]),
}


def signed_volumes(points, cells):
    """Signed measure of every cell (area in 2D, volume in 3D)."""
    p = points[cells]
    e = p[:, 1:] - p[:, :1]
    if cells.shape[1] == 3:
        return 0.5 * (e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0])
    if cells.shape[1] == 4:
        return np.linalg.det(e) / 6.0
    raise MeshError(f"unsupported cell arity {cells.shape[1]}")


def facet_measures(points, facets):
    p = points[facets]
    if facets.shape[1] == 2:
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    return 0.5 * np.linalg.norm(
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1
    )


def facet_area_normals(points, facets):
    """Outward facet normals scaled by the facet measure."""
    p = points[facets]
    if facets.shape[1] == 2:
        d = p[:, 1] - p[:, 0]
        return np.column_stack([d[:, 1], -d[:, 0]])
    return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def _sorted_keys(facets):
    return np.sort(facets, axis=1)


def topological_boundary(cells, dim):
    """Facets incident to exactly one cell, outward oriented.

    Raises MeshError if some facet is shared by more than two cells.
    """
    local = _LOCAL_FACETS[dim]
    all_facets = cells[:, local].reshape(-1, dim)
    keys = _sorted_keys(all_facets)
    _, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: a facet is shared by more than two cells")
    once = counts[inverse] == 1
    return all_facets[once]


@dataclass
class SimplicialMesh:
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    markers: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.boundary_facets = np.ascontiguousarray(
            self.boundary_facets, dtype=np.int64
        ).reshape(-1, self.vertices.shape[1])
        self.markers = np.ascontiguousarray(self.markers, dtype=np.int64).ravel()
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise MeshError(f"vertices must be (N, 2) or (N, 3), got {self.vertices.shape}")
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dim + 1:
            raise MeshError(f"cells must be (M, {self.dim + 1}), got {self.cells.shape}")
        if len(self.markers) != len(self.boundary_facets):
            raise MeshError("every boundary facet needs exactly one marker")

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    def signed_volumes(self):
        return signed_volumes(self.vertices, self.cells)

    def volume(self):
        return float(self.signed_volumes().sum())

    def diameter(self):
        """Bounding-box diagonal."""
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def with_vertices(self, vertices):
        return SimplicialMesh(
            np.array(vertices, dtype=float), self.cells, self.boundary_facets, self.markers
        )

    def vertices_with_marker(self, markers):
        markers = np.atleast_1d(markers)
        sel = np.isin(self.markers, markers)
        return np.unique(self.boundary_facets[sel])

    def validate(self):
        """Check every structural invariant; raise MeshError on violation."""
        n = self.n_vertices
        for name, arr in (("cells", self.cells), ("boundary facets", self.boundary_facets)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise MeshError(f"{name} reference vertices out of range")
        vol = self.signed_volumes()
        if np.any(vol <= 0):
            raise MeshError(f"{int(np.sum(vol <= 0))} cells with non-positive volume")
        topo = topological_boundary(self.cells, self.dim)
        a = {tuple(k) for k in _sorted_keys(topo)}
        b = [tuple(k) for k in _sorted_keys(self.boundary_facets)]
        if len(b) != len(set(b)):
            raise MeshError("duplicate boundary facet")
        if a != set(b):
            missing = len(a - set(b))
            extra = len(set(b) - a)
            raise MeshError(
                f"boundary facets mismatch: {missing} unmarked boundary facets, "
                f"{extra} marked facets that are not on the boundary"
            )
        return self


def orient_boundary_facets(mesh):
    """Return ``mesh.boundary_facets`` reordered to outward orientation."""
    topo = topological_boundary(mesh.cells, mesh.dim)
    lookup = {tuple(sorted(f)): f for f in topo}
    out = np.empty_like(mesh.boundary_facets)
    for k, f in enumerate(mesh.boundary_facets):
        key = tuple(sorted(f))
        if key not in lookup:
            raise MeshError(f"marked facet {tuple(f)} is not a boundary facet")
        out[k] = lookup[key]
    return out


@dataclass
class BoundaryComplex:
    """The discrete boundary of a mesh: oriented facets, patches and normals.

    ``points`` holds coordinates for *all* mesh vertices so that facets can be
    indexed with global vertex ids; only boundary rows are meaningful for the
    boundary routines.
    """

    mesh: SimplicialMesh
    points: np.ndarray
    facets: np.ndarray
    markers: np.ndarray
    vertices: np.ndarray
    local: np.ndarray
    patch_ptr: np.ndarray
    patch_facets: np.ndarray
    normals: np.ndarray = field(default=None)

    @property
    def dim(self):
        return self.points.shape[1]

    def patch(self, vid):
        """Indices of the facets incident to global vertex ``vid``."""
        k = self.local[vid]
        if k < 0:
            raise MeshError(f"vertex {vid} is not a boundary vertex")
        return self.patch_facets[self.patch_ptr[k]:self.patch_ptr[k + 1]]

    def normal(self, vid):
        k = self.local[vid]
        if k < 0:
            raise MeshError(f"vertex {vid} is not a boundary vertex")
        return self.normals[k]

    def facet_measures(self):
        return facet_measures(self.points, self.facets)

    def facet_normals(self):
        an = facet_area_normals(self.points, self.facets)
        m = np.linalg.norm(an, axis=1)
        if np.any(m == 0):
            raise DegenerateError("zero-measure boundary facet")
        return an / m[:, None]

    def with_points(self, points):
        """Same combinatorics, new coordinates; normals are recomputed."""
        b = BoundaryComplex(
            self.mesh, np.array(points, dtype=float), self.facets, self.markers,
            self.vertices, self.local, self.patch_ptr, self.patch_facets,
        )
        b.normals = vertex_normals(b)
        return b

    def facet_mask(self, markers=None):
        if markers is None:
            return np.ones(len(self.facets), dtype=bool)
        return np.isin(self.markers, np.atleast_1d(markers))

    def vertices_on(self, markers):
        return np.unique(self.facets[self.facet_mask(markers)])

    def interior_design_vertices(self, markers=(DESIGN,)):
        """Boundary vertices whose incident facets all carry a design marker."""
        on = self.facet_mask(markers)
        bad = np.zeros(len(self.points), dtype=bool)
        bad[self.facets[~on].ravel()] = True
        good = np.zeros(len(self.points), dtype=bool)
        good[self.facets[on].ravel()] = True
        return np.flatnonzero(good & ~bad)


def check_closed_manifold(facets, dim):
    """Raise MeshError unless ``facets`` form a closed manifold boundary."""
    if dim == 2:
        counts = np.bincount(facets.ravel())
        if np.any((counts != 0) & (counts != 2)):
            raise MeshError("non-manifold or open boundary: vertex with facet count != 2")
    else:
        edges = np.sort(facets[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
        _, c = np.unique(edges, axis=0, return_counts=True)
        if np.any(c != 2):
            raise MeshError("non-manifold or open boundary: edge not shared by two facets")


def boundary_complex(mesh, points=None):
    """Extract the boundary complex of ``mesh``.

    Facets are re-oriented outward, patches and vertex normals populated.
    Raises MeshError if the boundary is not closed (a 2D boundary vertex not
    shared by exactly two facets, or a 3D boundary edge not shared by exactly
    two boundary triangles).
    """
    facets = orient_boundary_facets(mesh)
    dim = mesh.dim
    check_closed_manifold(facets, dim)
    verts = np.unique(facets)
    local = -np.ones(mesh.n_vertices, dtype=np.int64)
    local[verts] = np.arange(len(verts))
    owner = local[facets.ravel()]
    fid = np.repeat(np.arange(len(facets)), dim)
    order = np.argsort(owner, kind="stable")
    ptr = np.zeros(len(verts) + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=len(verts)), out=ptr[1:])
    b = BoundaryComplex(
        mesh,
        mesh.vertices.copy() if points is None else np.array(points, dtype=float),
        facets,
        mesh.markers.copy(),
        verts,
        local,
        ptr,
        fid[order],
    )
    b.normals = vertex_normals(b)
    return b


def vertex_normals(boundary, facet_mask=None):
    """Unit outward normals at all boundary vertices.

    Facet-measure-weighted average of the incident facet normals.  With
    ``facet_mask`` only the selected facets contribute (vertices without any
    selected facet get a zero row).
    """
    an = facet_area_normals(boundary.points, boundary.facets)
    facets = boundary.facets
    if facet_mask is not None:
        an = an[facet_mask]
        facets = facets[facet_mask]
    acc = np.zeros((len(boundary.points), boundary.dim))
    for j in range(facets.shape[1]):
        np.add.at(acc, facets[:, j], an)
    acc = acc[boundary.vertices]
    norm = np.linalg.norm(acc, axis=1)
    touched = np.zeros(len(boundary.points), dtype=bool)
    touched[facets.ravel()] = True
    touched = touched[boundary.vertices]
    scale = np.sqrt(np.mean(np.sum(an**2, axis=1))) if len(an) else 1.0
    bad = touched & (norm <= 1e-12 * scale)
    if np.any(bad):
        raise DegenerateError(
            f"degenerate vertex normal at vertex {int(boundary.vertices[np.argmax(bad)])}"
        )
    out = np.zeros_like(acc)
    out[touched] = acc[touched] / norm[touched, None]
    return out


def vertex_normal(boundary, vid):
    """Outward unit normal at boundary vertex ``vid``."""
    facets = boundary.patch(vid)
    an = facet_area_normals(boundary.points, boundary.facets[facets]).sum(0)
    norm = np.linalg.norm(an)
    scale = boundary.facet_measures()[facets].max() ** (boundary.dim - 1)
    if norm <= 1e-12 * scale:
        raise DegenerateError(f"degenerate vertex normal at vertex {vid}")
    return an / norm


def _polyline_neighbours(boundary):
    """For each boundary vertex (local order) the previous and next vertex."""
    if boundary.dim != 2:
        raise MeshError("polyline curvature is only defined for 2D meshes")
    n = len(boundary.points)
    prev = -np.ones(n, dtype=np.int64)
    nxt = -np.ones(n, dtype=np.int64)
    prev[boundary.facets[:, 1]] = boundary.facets[:, 0]
    nxt[boundary.facets[:, 0]] = boundary.facets[:, 1]
    return prev[boundary.vertices], nxt[boundary.vertices]


def discrete_curvatures(boundary):
    """Signed turning angle over half the adjacent edge lengths, per vertex.

    Positive where the domain is locally convex.
    """
    prev, nxt = _polyline_neighbours(boundary)
    x = boundary.points[boundary.vertices]
    e0 = x - boundary.points[prev]
    e1 = boundary.points[nxt] - x
    l0 = np.linalg.norm(e0, axis=1)
    l1 = np.linalg.norm(e1, axis=1)
    if np.any(l0 == 0) or np.any(l1 == 0):
        raise DegenerateError("zero-length boundary edge")
    cross = e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0]
    dot = np.sum(e0 * e1, axis=1)
    return np.arctan2(cross, dot) / (0.5 * (l0 + l1))


def discrete_curvature(boundary, vid):
    k = boundary.local[vid]
    if k < 0:
        raise MeshError(f"vertex {vid} is not a boundary vertex")
    return float(discrete_curvatures(boundary)[k])


def apply_displacement(mesh, v):
    """Move every vertex by ``v``; connectivity is untouched, validity unchecked."""
    v = np.asarray(v, dtype=float)
    if v.shape != mesh.vertices.shape:
        raise MeshError(f"displacement shape {v.shape} != {mesh.vertices.shape}")
    return mesh.with_vertices(mesh.vertices + v)


@dataclass
class Stats:
    min: float
    max: float
    mean: float
    relstd: float

    @classmethod
    def of(cls, x):
        x = np.asarray(x, dtype=float)
        mean = float(x.mean())
        return cls(float(x.min()), float(x.max()), mean, float(x.std() / mean) if mean else 0.0)


@dataclass
class QualityReport:
    min_volume: float
    max_volume: float
    min_angle: float
    max_angle: float
    worst_aspect: float
    inverted: int
    boundary_edges: Stats

    def as_rows(self):
        b = self.boundary_edges
        return [
            ("min_volume", self.min_volume),
            ("max_volume", self.max_volume),
            ("min_angle_deg", self.min_angle),
            ("max_angle_deg", self.max_angle),
            ("worst_aspect", self.worst_aspect),
            ("inverted", self.inverted),
            ("boundary_edge_min", b.min),
            ("boundary_edge_max", b.max),
            ("boundary_edge_mean", b.mean),
            ("boundary_edge_relstd", b.relstd),
        ]


def _triangle_metrics(p):
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    angles = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        w = p[:, (i + 2) % 3] - p[:, i]
        cosang = np.sum(u * w, axis=1) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        )
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    angles = np.column_stack(angles)
    if p.shape[2] == 2:
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    else:
        area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        circum = a * b * c / (4.0 * area)
        inr = 2.0 * area / (a + b + c)
        aspect = np.where(area > 0, circum / (2.0 * inr), np.inf)
    return angles, aspect


def _tet_metrics(p):
    faces = _LOCAL_FACETS[3]
    fn = np.cross(p[:, faces[:, 1]] - p[:, faces[:, 0]], p[:, faces[:, 2]] - p[:, faces[:, 0]])
    fa = 0.5 * np.linalg.norm(fn, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        un = fn / np.linalg.norm(fn, axis=2, keepdims=True)
    # edge (i, j) is shared by the faces opposite the two other vertices
    angles = []
    for i in range(4):
        for j in range(i + 1, 4):
            k, l = [m for m in range(4) if m not in (i, j)]
            cosang = -np.sum(un[:, k] * un[:, l], axis=1)
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    angles = np.nan_to_num(np.column_stack(angles))
    e = p[:, 1:] - p[:, :1]
    vol = np.abs(np.linalg.det(e)) / 6.0
    # circumradius from |a|^2 (b x c) + ... over 12 V
    a, b, c = e[:, 0], e[:, 1], e[:, 2]
    num = (
        np.sum(a * a, 1)[:, None] * np.cross(b, c)
        + np.sum(b * b, 1)[:, None] * np.cross(c, a)
        + np.sum(c * c, 1)[:, None] * np.cross(a, b)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        circum = np.linalg.norm(num, axis=1) / (12.0 * vol)
        inr = 3.0 * vol / fa.sum(1)
        aspect = np.where(vol > 0, circum / (3.0 * inr), np.inf)
    return angles, aspect


def boundary_edge_lengths(mesh):
    f = mesh.boundary_facets
    if mesh.dim == 2:
        edges = f
    else:
        edges = np.unique(np.sort(f[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1), axis=0)
    return np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)


def quality_report(mesh):
    """Cell-quality and boundary-spacing statistics of ``mesh``."""
    vol = mesh.signed_volumes()
    p = mesh.vertices[mesh.cells]
    if mesh.dim == 2:
        angles, aspect = _triangle_metrics(p)
    else:
        angles, aspect = _tet_metrics(p)
    return QualityReport(
        min_volume=float(vol.min()),
        max_volume=float(vol.max()),
        min_angle=float(angles.min()),
        max_angle=float(angles.max()),
        worst_aspect=float(aspect.max()),
        inverted=int(np.sum(vol <= 0)),
        boundary_edges=Stats.of(boundary_edge_lengths(mesh)),
    )
