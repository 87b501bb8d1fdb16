"""P1 finite elements on simplices: assembly, Dirichlet elimination, solves.

Only triangles are needed for the volume operators; the boundary operators
work on polylines (2D) and triangulated surfaces (3D).
"""
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import ConvergenceError, DegenerateError, MeshError, SolverError
from .quadrature import simplex_rule, third_moment_tensor


@dataclass
class SparseOperator:
    """Assembled system ``matrix @ u = rhs``.

    ``dofs`` maps rows to global vertex ids when the operator lives on a
    subset of the vertices (boundary operators); ``None`` means all vertices.
    """

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    dofs: np.ndarray = None


@dataclass
class SolverConfig:
    method: str = "lu"
    rtol: float = 1e-10
    max_iter: int = 2000
    newton_max_steps: int = 50
    newton_atol: float = 1e-10
    max_halvings: int = 10

    def __post_init__(self):
        if self.method not in ("lu", "bicgstab"):
            raise ValueError(f"unknown linear solver {self.method!r}")
        if self.rtol <= 0 or self.newton_atol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iter < 1 or self.newton_max_steps < 1 or self.max_halvings < 0:
            raise ValueError("iteration limits must be positive")


def p1_gradients(points, cells):
    """Gradients of the P1 basis per cell, shape (M, d+1, d), and cell volumes."""
    p = points[cells]
    J = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # (M, d, d), columns = edges
    det = np.linalg.det(J)
    if np.any(np.abs(det) <= 1e-300):
        raise DegenerateError("degenerate cell (zero volume)")
    Jinv = np.linalg.inv(J)  # rows = gradients of lam_1..lam_d
    g = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
    fact = 2.0 if cells.shape[1] == 3 else 6.0
    return g, det / fact


def gradient(mesh, u):
    """Exact per-cell gradient of the P1 field ``u`` (shape (M, d))."""
    g, _ = p1_gradients(mesh.vertices, mesh.cells)
    return np.einsum("mkd,mk->md", g, np.asarray(u)[mesh.cells])


def cell_average(mesh, u):
    return np.asarray(u)[mesh.cells].mean(axis=1)


def _to_csr(cells, local, n):
    k = cells.shape[1]
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    A = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _per_cell(value, mesh, name):
    """Scalar, per-cell or per-vertex coefficient -> per-cell array."""
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return np.full(mesh.n_cells, float(value))
    if len(value) == mesh.n_cells:
        return value
    if len(value) == mesh.n_vertices:
        return cell_average(mesh, value)
    raise MeshError(f"{name} must be scalar, per-cell or per-vertex")


def supg_tau(wind, diffusion, grads):
    """Streamline-diffusion parameter per cell.

    tau = h / (2 |w|) (coth Pe - 1 / Pe),  Pe = |w| h / (2 k), with the
    streamline length h = 2 |w| / sum_i |w . grad phi_i|.
    """
    speed = np.linalg.norm(wind, axis=1)
    proj = np.abs(np.einsum("mkd,md->mk", grads, wind)).sum(axis=1)
    tau = np.zeros(len(speed))
    moving = speed > 0
    h = np.zeros(len(speed))
    h[moving] = 2.0 * speed[moving] / proj[moving]
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(diffusion > 0, speed * h / (2.0 * diffusion), np.inf)
    small = moving & (pe < 1e-6)
    big = moving & ~small
    tau[small] = h[small] ** 2 / (12.0 * diffusion[small])
    pb = pe[big]
    xi = np.where(np.isinf(pb), 1.0, 1.0 / np.tanh(np.minimum(pb, 350.0)) - 1.0 / pb)
    tau[big] = h[big] / (2.0 * speed[big]) * xi
    return tau


def boundary_facet_cells(mesh):
    """Index of the cell owning each boundary facet."""
    from .mesh import _LOCAL_FACETS

    local = _LOCAL_FACETS[mesh.dim]
    keys = np.sort(mesh.cells[:, local].reshape(-1, mesh.dim), axis=1)
    owner = np.repeat(np.arange(mesh.n_cells), len(local))
    lookup = {tuple(k): c for k, c in zip(keys, owner)}
    return np.array([lookup[tuple(sorted(f))] for f in mesh.boundary_facets], dtype=np.int64)


def load_vector(mesh, source, grads=None, vols=None):
    """``b_i = integral f phi_i`` for a callable or per-vertex ``source``."""
    n = mesh.n_vertices
    if callable(source):
        lam, w = simplex_rule(mesh.dim, 4)
        x = np.einsum("qk,mkd->mqd", lam, mesh.vertices[mesh.cells])
        f = source(x.reshape(-1, mesh.dim)).reshape(x.shape[:2])
        _, vols = p1_gradients(mesh.vertices, mesh.cells) if vols is None else (None, vols)
        local = vols[:, None] * np.einsum("q,mq,qk->mk", w, f, lam)
        b = np.zeros(n)
        np.add.at(b, mesh.cells, local)
        return b, vols[:, None] * np.einsum("q,mq->m", w, f)[:, None]
    f = np.asarray(source, dtype=float)
    M = mass_matrix(mesh)
    return M @ f, None


def mass_matrix(mesh, weight=None):
    """Consistent P1 mass matrix, optionally weighted by a per-vertex field."""
    _, vols = p1_gradients(mesh.vertices, mesh.cells)
    d = mesh.dim
    if weight is None:
        base = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
        local = vols[:, None, None] * base
    else:
        r = np.asarray(weight, dtype=float)
        if r.ndim == 0:
            r = np.full(mesh.n_vertices, float(r))
        T = third_moment_tensor(d)
        local = vols[:, None, None] * np.einsum("mk,kij->mij", r[mesh.cells], T)
    return _to_csr(mesh.cells, local, mesh.n_vertices)


def assemble_operator(mesh, diffusion=1.0, wind=None, reaction=None, supg=False,
                      source=None, points=None):
    """Assemble  -div(k grad u) + div(u w) + r u = f  in weak form.

    ``diffusion`` is a scalar, per-cell or per-vertex coefficient (averaged
    per cell).  ``wind`` is constant (d,) or per-cell (M, d); the convection
    term is integrated by parts (conservative form, natural condition
    k du/dn = 0 on non-Dirichlet boundaries).  ``reaction`` is a scalar or
    per-vertex field.  With ``supg`` the test functions are augmented by
    tau (w . grad phi) on every cell.
    """
    if mesh.dim != 2:
        raise MeshError("volume operators are implemented for triangles only")
    if points is not None:
        mesh = mesh.with_vertices(points)
    n = mesh.n_vertices
    grads, vols = p1_gradients(mesh.vertices, mesh.cells)
    if np.any(vols <= 0):
        raise DegenerateError("cell with non-positive area")
    k = _per_cell(diffusion, mesh, "diffusion")
    if np.any(k < 0):
        raise ValueError("negative diffusion coefficient")
    local = k[:, None, None] * vols[:, None, None] * np.einsum("mid,mjd->mij", grads, grads)
    rhs = np.zeros(n)
    f_cell = None
    if source is not None:
        rhs, f_cell = load_vector(mesh, source, grads, vols)
        if f_cell is None:
            f_cell = (vols * cell_average(mesh, source))[:, None]
    r = None
    if reaction is not None:
        r = np.asarray(reaction, dtype=float)
        if r.ndim == 0:
            r = np.full(n, float(r))
        T = third_moment_tensor(2)
        local = local + vols[:, None, None] * np.einsum("mk,kij->mij", r[mesh.cells], T)
    A_extra = None
    if wind is not None:
        w = np.asarray(wind, dtype=float)
        if w.ndim == 1:
            w = np.broadcast_to(w, (mesh.n_cells, 2))
        wg = np.einsum("mkd,md->mk", grads, w)  # w . grad phi_k
        # -int u w . grad(phi_i) = -vol/3 * (w . grad phi_i) for each u = phi_j
        local = local - vols[:, None, None] * wg[:, :, None] / 3.0
        A_extra = _boundary_flux(mesh, w)
        if supg:
            tau = supg_tau(w, k, grads)
            sl = tau[:, None, None] * vols[:, None, None] * wg[:, :, None] * wg[:, None, :]
            if r is not None:
                # tau int (w . grad phi_i) r phi_j, r linear, phi_j linear
                rm = (r[mesh.cells].sum(1)[:, None] + r[mesh.cells]) / 12.0
                sl = sl + tau[:, None, None] * vols[:, None, None] * wg[:, :, None] * rm[:, None, :]
            local = local + sl
            if f_cell is not None:
                np.add.at(rhs, mesh.cells, tau[:, None] * wg * f_cell)
    elif supg:
        pass  # no wind, nothing to stabilise
    A = _to_csr(mesh.cells, local, n)
    if A_extra is not None:
        A = (A + A_extra).tocsr()
        A.eliminate_zeros()
    return SparseOperator(A, rhs)


def _boundary_flux(mesh, w):
    """int_{boundary} (w . n) u phi_i ds with the wind of the owning cell."""
    f = mesh.boundary_facets
    if len(f) == 0:
        return None
    owner = boundary_facet_cells(mesh)
    p = mesh.vertices[f]
    d = p[:, 1] - p[:, 0]
    an = np.column_stack([d[:, 1], -d[:, 0]])  # outward, scaled by length
    wn = np.sum(w[owner] * an, axis=1)
    base = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    local = wn[:, None, None] * base
    return _to_csr(f, local, mesh.n_vertices)


def facet_gradients(points, simplices):
    """Tangential gradients of the barycentric coordinates and measures.

    Works for simplices of any dimension m embedded in R^dim (m <= dim);
    ``g`` has shape (S, m+1, dim).  ``measure * g[:, q]`` is also the
    derivative of the simplex measure with respect to its corner q.
    """
    p = points[simplices]
    m = simplices.shape[1] - 1
    J = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))  # (S, dim, m)
    G = np.einsum("fdi,fdj->fij", J, J)
    detG = np.linalg.det(G)
    if np.any(detG <= 0):
        raise DegenerateError("degenerate simplex")
    meas = np.sqrt(detG) / float(np.prod(np.arange(1, m + 1)))
    g = np.einsum("fij,fdj->fid", np.linalg.inv(G), J)
    g = np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)
    return g, meas


def facet_matrices(points, facets):
    """P1 mass and stiffness on boundary facets (segments or triangles)."""
    m = facets.shape[1] - 1
    try:
        g, meas = facet_gradients(points, facets)
    except DegenerateError:
        raise DegenerateError("degenerate boundary facet") from None
    K = meas[:, None, None] * np.einsum("fid,fjd->fij", g, g)
    base = (np.ones((m + 1, m + 1)) + np.eye(m + 1)) / ((m + 1) * (m + 2))
    M = meas[:, None, None] * base
    return M, K, meas


def boundary_matrices(boundary, markers=None, allow_open=True):
    """Mass and stiffness on the selected boundary facets, in local numbering.

    Returns ``(M, K, dofs)`` with ``dofs`` the global vertex ids of the rows.
    """
    from .mesh import check_closed_manifold

    facets = boundary.facets[boundary.facet_mask(markers)]
    if len(facets) == 0:
        raise MeshError("no boundary facets selected")
    if not allow_open:
        check_closed_manifold(facets, boundary.dim)
    dofs = np.unique(facets)
    loc = np.searchsorted(dofs, facets)
    Mf, Kf, _ = facet_matrices(boundary.points, facets)
    n = len(dofs)
    return _to_csr(loc, Mf, n), _to_csr(loc, Kf, n), dofs


def assemble_boundary_operator(boundary, delta, markers=None, allow_open=False):
    """``delta * K_surface + M_surface`` on the selected boundary facets.

    The right-hand side is left at zero; ``dofs`` records the vertex ids.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    try:
        M, K, dofs = boundary_matrices(boundary, markers, allow_open)
    except MeshError as exc:
        if "non-manifold or open" in str(exc):
            raise MeshError("open boundary component") from None
        raise
    A = (delta * K + M).tocsr()
    A.eliminate_zeros()
    return SparseOperator(A, np.zeros(len(dofs)), dofs)


def _split_dirichlet(n, dirichlet):
    if dirichlet is None:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    if isinstance(dirichlet, dict):
        ids = np.fromiter(dirichlet.keys(), dtype=np.int64, count=len(dirichlet))
        vals = np.array([dirichlet[i] for i in ids], dtype=float)
    else:
        ids, vals = dirichlet
        ids = np.asarray(ids, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 0:
            vals = np.full(len(ids), float(vals))
    if len(ids) and (ids.min() < 0 or ids.max() >= n):
        raise MeshError("Dirichlet index out of range")
    if len(np.unique(ids)) != len(ids):
        raise MeshError("duplicate Dirichlet index")
    return ids, vals


class DirichletSolver:
    """Factorise ``A`` once with a fixed Dirichlet set, solve for many data.

    Dirichlet rows are eliminated and their columns moved to the right-hand
    side, which keeps a symmetric operator symmetric.
    """

    def __init__(self, matrix, dirichlet_ids=(), config=None):
        self.config = config or SolverConfig()
        A = sparse.csr_matrix(matrix)
        n = A.shape[0]
        self.n = n
        self.ids = np.asarray(dirichlet_ids, dtype=np.int64)
        free = np.ones(n, dtype=bool)
        free[self.ids] = False
        self.free = np.flatnonzero(free)
        self.A_ff = A[self.free][:, self.free].tocsc()
        self.A_fd = A[self.free][:, self.ids].tocsr()
        self._lu = None
        self._ilu = None
        if self.config.method == "lu" and len(self.free):
            try:
                self._lu = spla.splu(self.A_ff)
            except RuntimeError as exc:
                raise SolverError(f"singular system: {exc}") from None

    def solve(self, rhs, values=None):
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        B = rhs[:, None] if vec else rhs
        k = B.shape[1]
        if values is None:
            V = np.zeros((len(self.ids), k))
        else:
            V = np.asarray(values, dtype=float).reshape(len(self.ids), -1 if len(self.ids) else k)
            if V.shape[1] == 1 and k > 1:
                V = np.repeat(V, k, axis=1)
            if k == 1 and V.shape[1] > 1:
                k = V.shape[1]
                B = np.repeat(B, k, axis=1)
        U = np.zeros((self.n, k))
        U[self.ids] = V
        if len(self.free):
            R = B[self.free] - self.A_fd @ V
            U[self.free] = self._solve_free(R)
        return U[:, 0] if (vec and k == 1) else U

    def _solve_free(self, R):
        cfg = self.config
        if self._lu is not None:
            X = self._lu.solve(R)
        else:
            if self._ilu is None:
                try:
                    self._ilu = spla.spilu(self.A_ff, drop_tol=1e-5, fill_factor=20)
                except RuntimeError as exc:
                    raise SolverError(f"singular system: {exc}") from None
            P = spla.LinearOperator(self.A_ff.shape, self._ilu.solve)
            X = np.empty_like(R)
            for j in range(R.shape[1]):
                x, info = spla.bicgstab(self.A_ff, R[:, j], rtol=cfg.rtol, atol=0.0,
                                        maxiter=cfg.max_iter, M=P)
                if info != 0:
                    res = np.linalg.norm(self.A_ff @ x - R[:, j]) / max(np.linalg.norm(R[:, j]), 1e-300)
                    raise ConvergenceError(f"BiCGSTAB did not converge (info={info}, "
                                           f"relative residual {res:.3e})", res)
                X[:, j] = x
        if not np.all(np.isfinite(X)):
            raise SolverError("singular system: non-finite solution")
        res = np.linalg.norm(self.A_ff @ X - R, axis=0)
        scale = np.maximum(np.linalg.norm(R, axis=0), 1e-300)
        rel = np.max(np.where(np.linalg.norm(R, axis=0) > 0, res / scale, 0.0))
        if rel > max(cfg.rtol, 1e-8) * 10:
            raise SolverError(f"linear solve inaccurate (relative residual {rel:.3e})", rel)
        return X


def solve_linear(op, dirichlet=None, config=None):
    """Solve ``op`` with Dirichlet data ``{vertex: value}`` or ``(ids, values)``.

    For operators on a vertex subset (``op.dofs`` set) Dirichlet ids are
    global vertex ids and the returned array is in the operator's numbering.
    """
    n = op.matrix.shape[0]
    if op.dofs is not None and dirichlet is not None:
        ids, vals = _split_dirichlet(int(op.dofs.max()) + 1, dirichlet)
        loc = np.searchsorted(op.dofs, ids)
        if np.any(op.dofs[np.minimum(loc, n - 1)] != ids):
            raise MeshError("Dirichlet vertex not in the operator's dofs")
        ids = loc
    else:
        ids, vals = _split_dirichlet(n, dirichlet)
    solver = DirichletSolver(op.matrix, ids, config)
    return solver.solve(op.rhs, vals)
