import numpy as np
import pytest

from meshmorph.eikonal import (
    EikonalConfig,
    graph_distance,
    hopf_cole_strip,
    solve_eikonal,
    wind_field,
)
from meshmorph.errors import ConvergenceError, MeshError
from meshmorph.fem import SolverConfig
from meshmorph.generators import annulus_mesh, benchmark_mesh, disk_mesh, icosphere_ball_mesh, rectangle_mesh, strip_mesh


@pytest.fixture(scope="module")
def annulus_solution():
    h = 0.02
    m = annulus_mesh(0.5, 1.5, 128, 40)
    eps = solve_eikonal(m, EikonalConfig(h_reg=h, dirichlet_markers=(1,)))
    return m, eps, h


def strip_config(h):
    return EikonalConfig(h_reg=h, dirichlet_markers=(1, 2))


def test_hopf_cole_oracle_midpoint():
    # -h log(cosh(0) / cosh(1 / (2h))) at h = 0.1
    assert hopf_cole_strip(0.5, 0.1) == pytest.approx(0.1 * np.log(np.cosh(5.0)))
    assert hopf_cole_strip(0.5, 0.1) == pytest.approx(0.4307, abs=1e-4)
    assert hopf_cole_strip(np.array([0.0, 1.0]), 0.1) == pytest.approx([0.0, 0.0], abs=1e-15)


def test_hopf_cole_solves_viscous_equation():
    # -h eps'' + eps'^2 = 1 checked by central differences
    h, dx = 0.1, 1e-4
    x = np.linspace(0.05, 0.95, 19)
    e = hopf_cole_strip
    d1 = (e(x + dx, h) - e(x - dx, h)) / (2 * dx)
    d2 = (e(x + dx, h) - 2 * e(x, h) + e(x - dx, h)) / dx ** 2
    np.testing.assert_allclose(-h * d2 + d1 ** 2, 1.0, atol=1e-5)


def test_strip_matches_closed_form():
    m = strip_mesh(200)
    eps, info = solve_eikonal(m, strip_config(0.1), full_output=True)
    exact = hopf_cole_strip(m.vertices[:, 0], 0.1)
    assert np.abs(eps - exact).max() / np.abs(exact).max() <= 0.02
    mid = np.argmin(np.abs(m.vertices[:, 0] - 0.5) + m.vertices[:, 1])
    assert eps[mid] == pytest.approx(0.4307, abs=2e-3)
    assert info["residual"] <= 1e-10


def test_strip_convergence_under_refinement():
    errs = []
    for n in (200, 400):
        m = strip_mesh(n)
        exact = hopf_cole_strip(m.vertices[:, 0], 0.1)
        errs.append(np.abs(solve_eikonal(m, strip_config(0.1)) - exact).max())
    assert errs[0] / errs[1] >= 1.8


def test_strip_max_decreases_with_h():
    m = strip_mesh(400)
    peaks = []
    for h in (0.05, 0.1, 0.2):
        eps = solve_eikonal(m, strip_config(h))
        peaks.append(eps.max())
        # the midpoint loses about h log 2 against the true distance 0.5
        assert 0.5 - eps.max() == pytest.approx(h * np.log(2.0), rel=0.05)
    assert peaks[0] > peaks[1] > peaks[2]


def test_annulus_radial_distance(annulus_solution):
    m, eps, h = annulus_solution
    r = np.linalg.norm(m.vertices, axis=1)
    mask = (r - 0.5 > 3 * h) & (r < 1.5 - 3 * h)
    rel = np.abs(eps[mask] - (r[mask] - 0.5)) / (r[mask] - 0.5)
    assert rel.max() <= 0.05


def test_annulus_wind_is_radial(annulus_solution):
    m, eps, h = annulus_solution
    b = wind_field(m, eps)
    c = m.vertices[m.cells].mean(axis=1)
    r = np.linalg.norm(c, axis=1)
    away = (r > 0.5 + 3 * h) & (r < 1.5 - 3 * h)
    radial = np.sum(b * c, axis=1) / r
    assert np.mean(radial[away] > 0) > 0.99
    assert np.mean(np.linalg.norm(b[away], axis=1) <= 1.1) > 0.95


def test_wind_of_linear_field_exact():
    m = disk_mesh(1.0, 32)
    np.testing.assert_allclose(wind_field(m, m.vertices[:, 0]), np.tile([1.0, 0.0], (m.n_cells, 1)), atol=1e-13)


def test_zero_on_whole_boundary_bounded_by_inradius():
    m = disk_mesh(1.0, 64)
    eps = solve_eikonal(m, EikonalConfig(dirichlet_markers=(1,)))
    assert eps.min() >= -1e-8
    assert eps.max() <= 1.0


def test_square_bounded_by_inradius():
    m = rectangle_mesh(20, 20)
    eps = solve_eikonal(m, EikonalConfig(h_reg=0.02, dirichlet_markers=(1,)))
    assert eps.min() >= -1e-8
    assert eps.max() <= 0.5


@pytest.mark.parametrize("mesh, marker", [
    (strip_mesh(200), (1, 2)),
    (annulus_mesh(0.5, 1.5, 64, 16), (1,)),
    (benchmark_mesh(48, 12), (2,)),
])
def test_graph_distance_upper_bound(mesh, marker):
    cfg = EikonalConfig(h_reg=0.05, dirichlet_markers=marker)
    eps = solve_eikonal(mesh, cfg)
    d = graph_distance(mesh, mesh.vertices_with_marker(marker))
    assert np.all(eps <= d + 3 * cfg.h_reg * np.log(2.0))


def test_zero_initial_guess_reaches_same_solution():
    m = strip_mesh(200)
    a = solve_eikonal(m, strip_config(0.1))
    b = solve_eikonal(m, EikonalConfig(h_reg=0.1, dirichlet_markers=(1, 2), initial_guess="zero"))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_newton_history_converges_quadratically():
    m = strip_mesh(200)
    _, info = solve_eikonal(m, strip_config(0.1), full_output=True)
    hist = info["history"]
    assert info["iterations"] <= 10
    assert hist[-1] <= 1e-10 < hist[0]


def test_default_regularization_scales_with_diameter():
    m = benchmark_mesh(24, 6)
    assert EikonalConfig().regularization(m) == pytest.approx(0.05 * np.hypot(3.0, 3.0))


def test_nonconvergence_reports_residual():
    m = strip_mesh(100)
    cfg = EikonalConfig(h_reg=0.1, dirichlet_markers=(1, 2), initial_guess="zero",
                        newton=SolverConfig(newton_max_steps=1))
    with pytest.raises(ConvergenceError) as exc:
        solve_eikonal(m, cfg)
    assert exc.value.residual > 0


def test_empty_dirichlet_set():
    with pytest.raises(MeshError, match="marker"):
        solve_eikonal(strip_mesh(20), EikonalConfig(dirichlet_markers=(7,)))


def test_invalid_config():
    with pytest.raises(ValueError):
        EikonalConfig(h_reg=0.0)
    with pytest.raises(ValueError):
        EikonalConfig(initial_guess="fast-marching")


def test_tetrahedral_mesh_rejected():
    with pytest.raises(MeshError):
        solve_eikonal(icosphere_ball_mesh(1))
