import numpy as np
import pytest

from multicontinuum.grid import CoarseGrid, FineGrid
from multicontinuum.media import gen_case1
from multicontinuum.spectral import (NoMulticontinuumStructure, find_gap, identify_continua,
                                     identify_global, spectral_decompose)


def test_find_gap():
    assert find_gap([0, 1e-6, 2e-6, 1.0, 2.0])[0] == 3
    assert find_gap([0, 1.0, 2.0, 5.0])[0] == 1


def test_homogeneous_block_neumann_spectrum():
    n = 20
    rep = spectral_decompose(np.ones((n, n)), 1.0 / n, m=4)
    # unit square Neumann Laplacian: 0, pi^2, pi^2, 2 pi^2
    np.testing.assert_allclose(rep.eigenvalues / np.pi ** 2, [0, 1, 1, 2], atol=0.02)
    assert rep.gap_index == 1
    assert rep.rayleigh_defect() < 1e-8
    with pytest.raises(NoMulticontinuumStructure):
        identify_continua(rep)


def _two_channels(n, contrast):
    k = np.ones((n, n))
    k[:, 4:6] = contrast
    k[:, 14:16] = contrast
    return k


def test_two_channels_two_small_eigenvalues():
    n = 20
    rep = spectral_decompose(_two_channels(n, 1e6), 1.0 / n, m=6)
    lam = rep.eigenvalues
    assert rep.gap_index == 2
    assert np.sum(lam < 1e-3 * lam[2]) == 2


def test_channels_recovered():
    n = 20
    k = _two_channels(n, 1e6)
    rep = spectral_decompose(k, 1.0 / n, m=6)
    cm = identify_continua(rep)
    np.testing.assert_array_equal(cm.labels, np.where(k > 1, 2, 1))
    split = identify_continua(rep, merge_channels=False)
    assert split.N == 3
    assert set(np.unique(split.labels[:, 4:6])) != set(np.unique(split.labels[:, 14:16]))


def test_small_eigenvalue_scales_inverse_contrast():
    n = 20
    lam = [spectral_decompose(_two_channels(n, c), 1.0 / n, m=3).eigenvalues[1]
           for c in (1e2, 1e4, 1e6)]
    slope = np.polyfit(np.log10([1e2, 1e4, 1e6]), np.log10(lam), 1)[0]
    assert abs(slope + 1) < 0.1


def test_identify_global_layered():
    fine = FineGrid(100)
    coarse = CoarseGrid(fine, 10)
    kap, cm = gen_case1(fine, 0.1, kappa_low=1.0, kappa_high=1e6)
    out = identify_global(kap, coarse)
    assert np.mean(out.labels == cm.labels) >= 0.99
