"""Built-in mesh generators for the test and benchmark geometries.

All generators return validated meshes with outward-oriented boundary facets.
Resolution knobs are plain integers (points per boundary / per direction).
"""
import numpy as np
from scipy.spatial import Delaunay

from .mesh import (
    DESIGN,
    FARFIELD,
    SYMMETRY,
    SimplicialMesh,
    orient_boundary_facets,
    signed_volumes,
)


def _finish(points, cells, facets, markers):
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    vol = signed_volumes(points, cells)
    flip = vol < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
    mesh = SimplicialMesh(points, cells, facets, markers)
    mesh.validate()
    mesh.boundary_facets = orient_boundary_facets(mesh)
    return mesh


def _split_quads(idx, points):
    """Triangulate a structured (ni, nj) index grid, shorter diagonal first."""
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    ac = np.linalg.norm(points[a] - points[c], axis=1)
    bd = np.linalg.norm(points[b] - points[d], axis=1)
    use_ac = ac <= bd * (1 + 1e-12)
    t1 = np.where(use_ac[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(use_ac[:, None], np.column_stack([a, c, d]), np.column_stack([b, c, d]))
    return np.vstack([t1, t2])


def rectangle_mesh(nx, ny, x0=0.0, x1=1.0, y0=0.0, y1=1.0, markers=(1, 1, 1, 1)):
    """Structured triangulation of a rectangle.

    ``markers`` are (bottom, right, top, left).
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(len(points)).reshape(nx + 1, ny + 1)
    cells = _split_quads(idx, points)
    bottom, right, top, left = markers
    facets, marks = [], []
    for i in range(nx):
        facets += [(idx[i, 0], idx[i + 1, 0]), (idx[i, ny], idx[i + 1, ny])]
        marks += [bottom, top]
    for j in range(ny):
        facets += [(idx[nx, j], idx[nx, j + 1]), (idx[0, j], idx[0, j + 1])]
        marks += [right, left]
    return _finish(points, cells, facets, marks)


def strip_mesh(n, width=None):
    """Quasi-1D strip [0, 1] x [0, width] with ``n`` elements along x.

    One row of near-equilateral triangles: bottom nodes at i/n, top nodes
    staggered by half a cell (plus the two corners), so every vertex patch is
    mirror-symmetric in x.  Left end marker 1, right end marker 2, long sides
    marker 3.
    """
    h = 1.0 / n
    width = np.sqrt(3) / 2 * h if width is None else width
    bx = np.arange(n + 1) * h
    tx = np.concatenate([[0.0], (np.arange(n) + 0.5) * h, [1.0]])
    points = np.vstack([np.column_stack([bx, np.zeros(n + 1)]),
                        np.column_stack([tx, np.full(n + 2, width)])])
    B = np.arange(n + 1)
    T = n + 1 + np.arange(n + 2)
    cells = [(B[0], T[1], T[0])]
    for i in range(n):
        cells += [(B[i], B[i + 1], T[i + 1]), (B[i + 1], T[i + 2], T[i + 1])]
    facets = [(B[i], B[i + 1]) for i in range(n)] + [(T[j], T[j + 1]) for j in range(n + 1)]
    facets += [(B[0], T[0]), (B[n], T[n + 1])]
    markers = [SYMMETRY] * (2 * n + 1) + [DESIGN, FARFIELD]
    return _finish(points, cells, facets, markers)


def disk_mesh(radius=1.0, n_boundary=64, center=(0.0, 0.0), marker=DESIGN):
    """Delaunay mesh of a disk built from concentric rings of points."""
    n_rings = max(1, int(round(n_boundary / (2 * np.pi))))
    pts = [np.zeros((1, 2))]
    for k in range(1, n_rings + 1):
        m = n_boundary if k == n_rings else max(6, int(round(n_boundary * k / n_rings)))
        th = 2 * np.pi * (np.arange(m) + 0.5 * (k % 2)) / m
        if k == n_rings:
            th = 2 * np.pi * np.arange(m) / m
        r = radius * k / n_rings
        pts.append(r * np.column_stack([np.cos(th), np.sin(th)]))
    points = np.vstack(pts)
    cells = Delaunay(points).simplices
    nb = n_boundary
    first = len(points) - nb
    ring = first + np.arange(nb)
    facets = np.column_stack([ring, np.roll(ring, -1)])
    points = points + np.asarray(center, dtype=float)
    return _finish(points, cells, facets, [marker] * nb)


def ellipse_mesh(a=1.0, b=0.5, n_boundary=64, marker=DESIGN):
    """Interior mesh of the ellipse with semi-axes (a, b): an affine disk mesh."""
    m = disk_mesh(1.0, n_boundary, marker=marker)
    return m.with_vertices(m.vertices * np.array([a, b]))


def polygon_fan_mesh(boundary_points, marker=DESIGN):
    """Star-shaped polygon fanned from its vertex centroid (surface-repair tests)."""
    bp = np.asarray(boundary_points, dtype=float)
    n = len(bp)
    points = np.vstack([bp.mean(0), bp])
    ring = 1 + np.arange(n)
    cells = np.column_stack([np.zeros(n, dtype=int), ring, np.roll(ring, -1)])
    facets = np.column_stack([ring, np.roll(ring, -1)])
    return _finish(points, cells, facets, [marker] * n)


def circle_polyline_mesh(angles, radius=1.0, marker=DESIGN):
    angles = np.asarray(angles, dtype=float)
    return polygon_fan_mesh(radius * np.column_stack([np.cos(angles), np.sin(angles)]), marker)


def clustered_angles(n, strength=0.9, center=np.pi / 4):
    """``n`` increasing angles on the circle, crowded around ``center``.

    Smooth map u -> 2 pi u - strength sin(2 pi u); local density ratio between
    the crowded and sparse sides is (1 + strength) / (1 - strength).
    """
    u = np.arange(n) / n
    return center + 2 * np.pi * u - strength * np.sin(2 * np.pi * u)


def annulus_mesh(r_in=0.5, r_out=1.5, n_theta=64, n_r=16, inner=DESIGN, outer=FARFIELD):
    """Structured polar mesh of an annulus."""
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    r = np.linspace(r_in, r_out, n_r + 1)
    R, T = np.meshgrid(r, th, indexing="ij")
    points = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    idx = np.arange(len(points)).reshape(n_r + 1, n_theta)
    idx = np.column_stack([idx, idx[:, :1]])
    cells = _split_quads(idx, points)
    facets = [(idx[0, j], idx[0, j + 1]) for j in range(n_theta)]
    facets += [(idx[n_r, j], idx[n_r, j + 1]) for j in range(n_theta)]
    markers = [inner] * n_theta + [outer] * n_theta
    return _finish(points, cells, facets, markers)


def _graded(n, grading):
    s = np.arange(n + 1) / n
    if grading == 0:
        return s
    return np.expm1(grading * s) / np.expm1(grading)


def box_with_hole_mesh(a=0.5, b=0.5, half_width=1.5, n_theta=64, n_r=16, grading=1.5,
                       half=False, inner=DESIGN, outer=FARFIELD, symmetry=SYMMETRY):
    """Square [-H, H]^2 minus the ellipse x^2/a^2 + y^2/b^2 < 1.

    Transfinite layout along rays from the origin, built on the upper half
    (y >= 0) and mirrored, so the full mesh is exactly symmetric about y = 0.
    ``n_theta`` counts rays around the full circle and must be a multiple of
    8 so that the square corners are nodes.  ``half=True`` returns only the
    upper half with the y = 0 segments marked ``symmetry``.
    """
    if n_theta % 8:
        raise ValueError("n_theta must be a multiple of 8")
    nh = n_theta // 2
    th = np.pi * np.arange(nh + 1) / nh
    c, s = np.cos(th), np.sin(th)
    c[np.abs(c) < 1e-15] = 0.0
    s[np.abs(s) < 1e-15] = 0.0
    r_in = a * b / np.sqrt((b * c) ** 2 + (a * s) ** 2)
    r_out = half_width / np.maximum(np.abs(c), np.abs(s))
    t = _graded(n_r, grading)
    R = (1 - t)[:, None] * r_in[None, :] + t[:, None] * r_out[None, :]
    points = np.column_stack([(R * c).ravel(), (R * s).ravel()])
    points[np.abs(points) < 1e-14] = 0.0
    idx = np.arange(len(points)).reshape(n_r + 1, nh + 1)
    cells = _split_quads(idx, points)
    facets = [(idx[0, j], idx[0, j + 1]) for j in range(nh)]
    markers = [inner] * nh
    facets += [(idx[n_r, j], idx[n_r, j + 1]) for j in range(nh)]
    markers += [outer] * nh
    sym = [(idx[i, 0], idx[i + 1, 0]) for i in range(n_r)]
    sym += [(idx[i, nh], idx[i + 1, nh]) for i in range(n_r)]
    if half:
        return _finish(points, cells, facets + sym, markers + [symmetry] * len(sym))
    # mirror across y = 0, merging the nodes on the axis
    on_axis = points[:, 1] == 0.0
    mirror = np.arange(len(points))
    off = np.flatnonzero(~on_axis)
    mirror[off] = len(points) + np.arange(len(off))
    mpoints = points[off] * np.array([1.0, -1.0])
    all_points = np.vstack([points, mpoints])
    mcells = mirror[cells]
    all_cells = np.vstack([cells, mcells])
    ff = np.array(facets)
    all_facets = np.vstack([ff, mirror[ff]])
    return _finish(all_points, all_cells, all_facets, markers + markers)


def benchmark_mesh(n_theta=96, n_r=24, grading=1.5, half=False):
    """Square of half-width 1.5 around a circular obstacle of radius 0.5."""
    return box_with_hole_mesh(0.5, 0.5, 1.5, n_theta, n_r, grading, half=half)


def icosphere(level=2, radius=1.0):
    """Vertices and outward triangles of a subdivided icosahedron."""
    p = (1 + 5 ** 0.5) / 2
    v = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
         (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(x, dtype=float) / np.linalg.norm(x) for x in v]
    faces = f
    for _ in range(level):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for i, j, k in faces:
            a, b, c = mid(i, j), mid(j, k), mid(k, i)
            new += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new
    return radius * np.array(verts), np.array(faces, dtype=np.int64)


def icosphere_ball_mesh(level=2, radius=1.0, marker=DESIGN):
    """Ball tessellated by coning the icosphere triangles to the center."""
    verts, faces = icosphere(level, radius)
    points = np.vstack([verts, np.zeros((1, 3))])
    center = len(verts)
    cells = np.column_stack([np.full(len(faces), center), faces])
    return _finish(points, cells, faces, [marker] * len(faces))
