import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from meshmorph.errors import DegenerateError, MeshError, SolverError
from meshmorph.fem import (
    DirichletSolver,
    SolverConfig,
    SparseOperator,
    assemble_boundary_operator,
    assemble_operator,
    gradient,
    mass_matrix,
    p1_gradients,
    solve_linear,
    supg_tau,
)
from meshmorph.generators import disk_mesh, icosphere_ball_mesh, rectangle_mesh, strip_mesh
from meshmorph.mesh import SimplicialMesh, boundary_complex


def boundary_ids(mesh):
    return np.unique(mesh.boundary_facets)


def ends(mesh):
    x = mesh.vertices[:, 0]
    ids = np.flatnonzero((x == 0.0) | (x == 1.0))
    return ids, (x[ids] == 1.0).astype(float)


def test_unit_square_stiffness():
    m = rectangle_mesh(1, 1)
    K = assemble_operator(m).matrix.toarray()
    np.testing.assert_allclose(np.diag(K), 1.0)
    np.testing.assert_allclose(K.sum(axis=1), 0.0, atol=1e-15)
    offdiag = np.sort(K[~np.eye(4, dtype=bool)].round(12))
    # four side couplings of -1/2 (twice each) and a zero diagonal coupling
    np.testing.assert_allclose(offdiag, [-0.5] * 8 + [0.0] * 4)


def test_stiffness_row_sums_vanish():
    m = disk_mesh(1.0, 40)
    A = assemble_operator(m, diffusion=m.vertices[:, 0] ** 2 + 0.5).matrix
    assert np.abs(np.asarray(A.sum(axis=1))).max() < 1e-12


def test_mass_total_equals_area():
    m = disk_mesh(1.0, 40)
    assert mass_matrix(m).sum() == pytest.approx(m.volume(), abs=1e-12)
    R = assemble_operator(m, diffusion=0.0, reaction=1.0).matrix
    assert R.sum() == pytest.approx(m.volume(), abs=1e-12)


def test_weighted_mass_integrates_weight():
    m = rectangle_mesh(6, 4)
    w = 1.0 + m.vertices[:, 0]
    # int (1 + x) over the unit square
    assert mass_matrix(m, weight=w).sum() == pytest.approx(1.5, abs=1e-12)


def test_diffusion_operator_symmetric():
    m = disk_mesh(1.0, 48)
    k = np.exp(m.vertices[:, 1])
    A = assemble_operator(m, diffusion=k).matrix
    assert abs(A - A.T).max() <= 1e-12


def test_no_explicit_zeros():
    m = rectangle_mesh(5, 5)
    A = assemble_operator(m, wind=[1.0, 0.5], supg=True).matrix
    assert np.all(A.data != 0.0)


def test_assembly_is_deterministic():
    m = disk_mesh(1.0, 48)
    w = np.column_stack([np.ones(m.n_cells), np.linspace(0, 1, m.n_cells)])
    a = assemble_operator(m, diffusion=0.01, wind=w, supg=True, reaction=0.3)
    b = assemble_operator(m, diffusion=0.01, wind=w, supg=True, reaction=0.3)
    assert np.array_equal(a.matrix.indptr, b.matrix.indptr)
    assert np.array_equal(a.matrix.indices, b.matrix.indices)
    assert a.matrix.data.tobytes() == b.matrix.data.tobytes()


def test_divergence_free_wind_row_sums():
    m = rectangle_mesh(6, 6)
    A = assemble_operator(m, diffusion=0.0, wind=[0.3, -0.7]).matrix
    interior = np.setdiff1d(np.arange(m.n_vertices), boundary_ids(m))
    assert np.abs(np.asarray(A.sum(axis=1)).ravel()[interior]).max() < 1e-10


def test_discrete_divergence_free_cell_wind_row_sums():
    # wind = rot of a P1 stream function is exactly divergence free
    m = disk_mesh(1.0, 40)
    psi = np.sin(2 * m.vertices[:, 0]) * m.vertices[:, 1]
    g = gradient(m, psi)
    w = np.column_stack([g[:, 1], -g[:, 0]])
    A = assemble_operator(m, diffusion=0.0, wind=w).matrix
    interior = np.setdiff1d(np.arange(m.n_vertices), boundary_ids(m))
    assert np.abs(np.asarray(A.sum(axis=1)).ravel()[interior]).max() < 1e-10


def test_supg_tau_limits():
    g, _ = p1_gradients(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    w = np.array([[1.0, 0.0]])
    h = 2.0 / np.abs(g[0] @ w[0]).sum()
    # diffusion-dominated: h^2 / (12 k)
    assert supg_tau(w * 1e-9, np.array([1.0]), g)[0] == pytest.approx(h ** 2 / 12.0, rel=1e-12)
    # convection-dominated: h / (2 |w|)
    assert supg_tau(w, np.array([1e-12]), g)[0] == pytest.approx(h / 2.0, rel=1e-9)
    assert supg_tau(w * 0.0, np.array([1.0]), g)[0] == 0.0


def test_supg_strip_is_monotone():
    k = 1e-3
    m = strip_mesh(200)
    ids, vals = ends(m)
    u = solve_linear(assemble_operator(m, diffusion=k, wind=[1.0, 0.0], supg=True), (ids, vals))
    assert u.min() >= -1e-8
    assert u.max() <= 1.0 + 1e-8
    x = m.vertices[:, 0]
    exact = (np.exp((x - 1) / k) - np.exp(-1 / k)) / (1 - np.exp(-1 / k))
    # away from the outflow layer the exact solution is flat
    assert np.abs(u - exact)[x < 0.9].max() < 1e-6


def test_galerkin_strip_oscillates():
    m = strip_mesh(200)
    ids, vals = ends(m)
    u = solve_linear(assemble_operator(m, diffusion=1e-3, wind=[1.0, 0.0]), (ids, vals))
    assert u.min() < -1e-3


def test_harmonic_linear_data_exact():
    m = rectangle_mesh(8, 8)
    b = boundary_ids(m)
    u = solve_linear(assemble_operator(m), (b, m.vertices[b, 0]))
    np.testing.assert_allclose(u, m.vertices[:, 0], atol=1e-10)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_patch_test_on_perturbed_mesh(a, b, c, seed):
    m = rectangle_mesh(6, 5)
    rng = np.random.default_rng(seed)
    interior = np.setdiff1d(np.arange(m.n_vertices), boundary_ids(m))
    x = m.vertices.copy()
    x[interior] += rng.uniform(-0.04, 0.04, size=(len(interior), 2))
    m = m.with_vertices(x)
    lin = a * x[:, 0] + b * x[:, 1] + c
    bnd = boundary_ids(m)
    u = solve_linear(assemble_operator(m, diffusion=2.5), (bnd, lin[bnd]))
    np.testing.assert_allclose(u, lin, atol=1e-10)


def _manufactured_error(n, **kw):
    m = rectangle_mesh(n, n)

    def exact(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    op = assemble_operator(m, source=lambda x: 2 * np.pi ** 2 * exact(x), **kw)
    u = solve_linear(op, (boundary_ids(m), 0.0))
    return np.abs(u - exact(m.vertices)).max()


def test_manufactured_solution_second_order():
    e = [_manufactured_error(n) for n in (8, 16, 32)]
    for coarse, fine in zip(e, e[1:]):
        assert 4 * 0.8 <= coarse / fine <= 4 * 1.2


def test_supg_galerkin_difference_first_order():
    def diff(n):
        m = rectangle_mesh(n, n)
        src = np.ones(m.n_vertices)
        bnd = boundary_ids(m)
        ops = [assemble_operator(m, diffusion=1.0, wind=[1.0, 0.5], supg=s, source=src) for s in (True, False)]
        us = [solve_linear(op, (bnd, 0.0)) for op in ops]
        return np.abs(us[0] - us[1]).max()

    d = [diff(n) for n in (8, 16, 32)]
    assert d[0] > d[1] > d[2]
    assert d[1] / d[2] > 1.8


def test_bicgstab_matches_lu():
    m = disk_mesh(1.0, 48)
    op = assemble_operator(m, diffusion=0.1, wind=[1.0, 0.2], supg=True, source=lambda x: x[:, 0])
    bnd = (boundary_ids(m), 0.0)
    u1 = solve_linear(op, bnd)
    u2 = solve_linear(op, bnd, SolverConfig(method="bicgstab", rtol=1e-12))
    np.testing.assert_allclose(u1, u2, atol=1e-9)


def test_dirichlet_values_exact_and_residual_small():
    m = disk_mesh(1.0, 32)
    op = assemble_operator(m, diffusion=1.0, source=lambda x: np.ones(len(x)))
    b = boundary_ids(m)
    vals = np.cos(3 * m.vertices[b, 0])
    u = solve_linear(op, (b, vals))
    np.testing.assert_array_equal(u[b], vals)
    free = np.setdiff1d(np.arange(m.n_vertices), b)
    r = (op.matrix @ u - op.rhs)[free]
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(op.rhs[free])


def test_identity_like_mass_system():
    m = rectangle_mesh(4, 4)
    M = mass_matrix(m)
    f = m.vertices[:, 0] * m.vertices[:, 1]
    u = solve_linear(SparseOperator(M, M @ f))
    np.testing.assert_allclose(u, f, atol=1e-12)


def test_singular_system_reported():
    m = rectangle_mesh(3, 3)
    A = assemble_operator(m).matrix  # pure Neumann: singular
    with pytest.raises(SolverError):
        solve_linear(SparseOperator(A, np.ones(m.n_vertices)))


def test_dirichlet_solver_multiple_rhs():
    m = rectangle_mesh(5, 5)
    b = boundary_ids(m)
    s = DirichletSolver(assemble_operator(m).matrix, b)
    U = s.solve(np.zeros((m.n_vertices, 2)), m.vertices[b])
    np.testing.assert_allclose(U, m.vertices, atol=1e-12)


def test_degenerate_cell_rejected():
    m = SimplicialMesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [1, 1, 1])
    with pytest.raises(DegenerateError):
        assemble_operator(m)


def test_negative_diffusion_rejected():
    with pytest.raises(ValueError):
        assemble_operator(rectangle_mesh(2, 2), diffusion=-1.0)


def test_invalid_solver_config():
    with pytest.raises(ValueError):
        SolverConfig(rtol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(method="cg")


def test_boundary_operator_delta_zero_reproduces_constant():
    for m in (disk_mesh(1.0, 64), icosphere_ball_mesh(2)):
        b = boundary_complex(m)
        op = assemble_boundary_operator(b, 0.0)
        u = solve_linear(SparseOperator(op.matrix, op.matrix @ np.full(len(op.dofs), 3.0), op.dofs))
        np.testing.assert_allclose(u, 3.0, atol=1e-10)


@pytest.mark.parametrize("delta", [0.0, 0.1, 10.0])
def test_boundary_stiffness_annihilates_constants(delta):
    b = boundary_complex(icosphere_ball_mesh(2))
    op = assemble_boundary_operator(b, delta)
    M = assemble_boundary_operator(b, 0.0).matrix
    d1 = np.full(len(op.dofs), 0.7)
    d2 = solve_linear(SparseOperator(op.matrix, -(M @ d1), op.dofs))
    np.testing.assert_allclose(d2, -0.7, atol=1e-10)


def test_boundary_operator_damps_high_frequencies():
    n = 128
    b = boundary_complex(disk_mesh(1.0, n))
    op = assemble_boundary_operator(b, 1e4)
    M = assemble_boundary_operator(b, 0.0).matrix
    theta = np.arctan2(b.points[op.dofs, 1], b.points[op.dofs, 0])
    d1 = np.cos(theta) + np.cos(20 * theta)
    d2 = -solve_linear(SparseOperator(op.matrix, -(M @ d1), op.dofs))

    def hf_fraction(v):
        c = np.abs(np.fft.rfft(v[np.argsort(theta)]))
        return c[5:].sum() / c.sum()

    assert hf_fraction(d1) / hf_fraction(d2) > 10


def test_open_boundary_component_rejected():
    b = boundary_complex(rectangle_mesh(3, 3, markers=(1, 2, 1, 2)))
    with pytest.raises(MeshError, match="open boundary"):
        assemble_boundary_operator(b, 1.0, markers=1)


def test_boundary_mass_is_perimeter():
    b = boundary_complex(disk_mesh(1.0, 64))
    op = assemble_boundary_operator(b, 0.0)
    assert op.matrix.sum() == pytest.approx(b.facet_measures().sum(), rel=1e-14)
    assert isinstance(op.matrix, sparse.csr_matrix)
