import numpy as np
import pytest

from multicontinuum.cells import solve_region
from multicontinuum.effective import EffectiveCoefficients, extract, upscale
from multicontinuum.grid import CoarseGrid, FineGrid, oversample
from multicontinuum.media import ContinuumMap, gen_case1, gen_source


@pytest.fixture(scope="module")
def setup():
    fine = FineGrid(40)
    coarse = CoarseGrid(fine, 4)
    kap, cm = gen_case1(fine, 0.25, kappa_low=1e-3, kappa_high=1.0)
    f = gen_source(fine, kap, cm)
    eff = upscale(coarse, kap, cm, f, l=1)
    return fine, coarse, kap, cm, f, eff


def test_shapes_and_diagnostics(setup):
    *_, eff = setup
    assert eff.alpha.shape == (16, 2, 2, 2, 2)
    assert eff.beta.shape == (16, 2, 2)
    assert eff.beta_m.shape == (16, 2, 2, 2)
    assert eff.f_corner.shape == (16, 2, 4)
    assert eff.diagnostics["constraint"].max() < 1e-9
    assert eff.diagnostics["identity"].max() < 1e-9


def test_grouping_matches_direct_solve(setup):
    fine, coarse, kap, cm, f, eff = setup
    for w in (0, 5, 15):
        cs = solve_region(oversample(coarse, w, 1, "reflect"), kap, cm)
        b = coarse.block
        ci, cj = coarse.cell_ij(w)
        cc = extract(cs, f.values[cj * b:(cj + 1) * b, ci * b:(ci + 1) * b])
        np.testing.assert_allclose(eff.alpha[w], cc.alpha, rtol=1e-8, atol=1e-14)
        np.testing.assert_allclose(eff.beta[w], cc.beta, rtol=1e-8, atol=1e-14)
        np.testing.assert_allclose(eff.f_corner[w], cc.f, rtol=1e-8, atol=1e-14)


def test_symmetry_and_semidefinite(setup):
    *_, eff = setup
    a = eff.alpha.reshape(16, 4, 4)
    np.testing.assert_allclose(a, a.transpose(0, 2, 1), atol=1e-15)
    assert np.linalg.eigvalsh(a).min() > -1e-12 * np.abs(a).max()
    assert np.linalg.eigvalsh(eff.beta).min() > -1e-12 * np.abs(eff.beta).max()
    assert eff.rowsum_defect().max() < 1e-8


def test_source_weights_sum(setup):
    """Corner loads sum to int_K f phi_i; with phi summing to one they total int_K f."""
    fine, coarse, kap, cm, f, eff = setup
    b = coarse.block
    per_cell = f.values.reshape(4, b, 4, b).sum(axis=(1, 3)).ravel() * fine.h ** 2
    np.testing.assert_allclose(eff.f.sum(axis=1), per_cell, rtol=1e-8)


def test_normalized_and_rescale(setup):
    *_, eff = setup
    a, b, bm = eff.normalized()
    np.testing.assert_allclose(a * eff.rve_area[:, None, None, None, None], eff.alpha)
    r = eff.rescale(0.5)
    np.testing.assert_allclose(r["beta_hat"], 0.25 * b)
    np.testing.assert_allclose(r["beta_m_hat"], 0.5 * bm)
    with pytest.raises(ValueError):
        EffectiveCoefficients(eff.M, eff.N, eff.alpha, eff.beta, eff.beta_m,
                              eff.rve_area, eff.omega_area).rescale()


def test_constant_medium_single_continuum():
    fine = FineGrid(40)
    coarse = CoarseGrid(fine, 4)
    cm = ContinuumMap(np.ones((40, 40), dtype=int), 1)
    eff = upscale(coarse, np.full((40, 40), 2.0), cm, l=3)
    a, b, _ = eff.normalized()
    np.testing.assert_allclose(b, 0, atol=1e-10)
    # oversampled moment fields approach x - c; isotropic, near kappa
    np.testing.assert_allclose(a[:, 0, 0, 0, 1], 0, atol=1e-10)
    np.testing.assert_allclose(a[:, 0, 0, 0, 0], a[:, 0, 1, 0, 1], rtol=1e-10)
    assert np.all(np.abs(a[:, 0, 0, 0, 0] / 2.0 - 1) < 0.1)


def test_gradient_mode_runs(setup):
    fine, coarse, kap, cm, f, _ = setup
    eff = upscale(coarse, kap, cm, f, mode="gradient")
    assert eff.mode == "gradient"
    assert eff.diagnostics["constraint"].max() < 1e-9
    assert np.all(eff.diagnostics["oscillation"] > 0)


def test_unknown_mode(setup):
    fine, coarse, kap, cm, f, _ = setup
    with pytest.raises(ValueError):
        upscale(coarse, kap, cm, f, mode="nope")


def test_parallel_matches_serial(setup):
    fine, coarse, kap, cm, f, eff = setup
    par = upscale(coarse, kap, cm, f, l=1, n_jobs=2)
    np.testing.assert_array_equal(par.alpha, eff.alpha)
    np.testing.assert_array_equal(par.f_corner, eff.f_corner)


def test_csv(setup, tmp_path):
    *_, eff = setup
    p = tmp_path / "eff.csv"
    eff.to_csv(p, ["test header"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# test header"
    cols = lines[1].split(",")
    assert "alpha_22_11" in cols and "beta_12" in cols and "f_2" in cols
    assert len(lines) == 2 + 16
