import numpy as np
import pytest

from multicontinuum.fem import (FemSpace, assemble_mass, assemble_stiffness, cell_functional,
                                cell_means, element_stiffness, gradient_functional,
                                indicator_functional, moment_functional, node_cell_incidence,
                                reference_matrices, solve_dirichlet)


def test_element_stiffness_closed_form():
    K = element_stiffness()
    ref = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    np.testing.assert_allclose(K, ref, atol=1e-14)


def test_reference_mass_and_derivative():
    _, M, D = reference_matrices()
    ref = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36
    np.testing.assert_allclose(M, ref, atol=1e-14)
    # sum_a d_m N_a = 0 (partition of unity)
    np.testing.assert_allclose(D.sum(axis=1), 0, atol=1e-14)


def test_stiffness_kernel_and_linear_energy(rng):
    sp_ = FemSpace(6, 5, 0.1)
    kap = rng.uniform(0.5, 2.0, (5, 6))
    A = assemble_stiffness(sp_, kap)
    np.testing.assert_allclose(A @ np.ones(sp_.n_nodes), 0, atol=1e-12)
    x, _ = sp_.node_coords()
    # energy of u = x is int kappa
    assert x.ravel() @ A @ x.ravel() == pytest.approx(kap.sum() * 0.01)


def test_mass_total():
    sp_ = FemSpace(4, 3, 0.25)
    Mm = assemble_mass(sp_)
    one = np.ones(sp_.n_nodes)
    assert one @ Mm @ one == pytest.approx(4 * 3 * 0.25 ** 2)


def test_functionals_exact_for_linear(rng):
    sp_ = FemSpace(5, 5, 0.2)
    x, y = sp_.node_coords()
    u = (1 + 2 * x - 3 * y).ravel()
    w = rng.uniform(size=(5, 5))
    xc, yc = sp_.cell_centers()
    np.testing.assert_allclose(cell_functional(sp_, w) @ u,
                               (w * (1 + 2 * xc - 3 * yc)).sum() * 0.04, rtol=1e-12)
    patch = np.zeros((5, 5), dtype=bool)
    patch[1:3, 2:5] = True
    g, mass = indicator_functional(sp_, np.ones((5, 5)), patch)
    assert mass == pytest.approx(6 * 0.04)
    assert g @ np.ones(sp_.n_nodes) == pytest.approx(mass)
    v, val = moment_functional(sp_, np.ones((5, 5)), patch, 0, 0.5)
    assert val == pytest.approx(((xc - 0.5) * patch).sum() * 0.04)
    assert gradient_functional(sp_, w, None, 0) @ u == pytest.approx(2 * w.sum() * 0.04)
    assert gradient_functional(sp_, w, None, 1) @ u == pytest.approx(-3 * w.sum() * 0.04)


def test_incidence_matches_cell_functional(rng):
    sp_ = FemSpace(4, 6, 0.1)
    w = rng.uniform(size=(6, 4))
    np.testing.assert_allclose(node_cell_incidence(sp_) @ w.ravel(), cell_functional(sp_, w))


def test_cell_means_of_bilinear():
    sp_ = FemSpace(3, 3, 1 / 3)
    x, y = sp_.node_coords()
    xc, yc = sp_.cell_centers()
    np.testing.assert_allclose(cell_means(sp_, (x * y).ravel()), xc * yc, atol=1e-14)


def test_dirichlet_second_order():
    errs = []
    for n in (16, 32):
        sp_ = FemSpace(n, n, 1 / n)
        xc, yc = sp_.cell_centers()
        f = 2 * np.pi ** 2 * np.sin(np.pi * xc) * np.sin(np.pi * yc)
        u = solve_dirichlet(sp_, np.ones((n, n)), f)
        x, y = sp_.node_coords()
        errs.append(np.abs(u - (np.sin(np.pi * x) * np.sin(np.pi * y)).ravel()).max())
    assert errs[1] < 0.3 * errs[0]
    assert errs[1] < 5e-3


def test_shape_checks():
    sp_ = FemSpace(3, 3, 1 / 3)
    with pytest.raises(ValueError):
        assemble_stiffness(sp_, np.ones((2, 3)))
    with pytest.raises(ValueError):
        assemble_stiffness(sp_, np.zeros((3, 3)))
