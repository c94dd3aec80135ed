"""Continuum identification from the kappa-weighted Neumann eigenproblem.

Solves ``-div(kappa grad eta) = lam kappa eta`` on an RVE with natural
boundary conditions.  Each high-conductivity component carries one
eigenvalue of order 1/contrast (the constant mode gives 0), so a large jump
in the ascending spectrum counts the components.  Cells where every small
eigenvector is flat and kappa is high are the channel continua.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from .fem import FemSpace, assemble_mass, assemble_stiffness, cell_means
from .grid import CoarseGrid
from .media import ContinuumMap
from .sparsela import smallest_eigpairs

log = logging.getLogger(__name__)

GAP_RATIO = 100.0
FLAT_TOL = 1e-3


class NoMulticontinuumStructure(ValueError):
    """No spectral gap: the RVE behaves as a single continuum."""


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray     # (m,) ascending
    eigenvectors: np.ndarray    # (m, n_nodes), B-orthonormal
    space: FemSpace
    kappa: np.ndarray
    gap_index: int              # number of small eigenvalues (constant mode included)
    gap_ratio: float

    @property
    def small(self):
        return self.eigenvectors[: self.gap_index]

    def rayleigh_defect(self):
        """Max relative difference between lam and the Rayleigh quotient."""
        A = assemble_stiffness(self.space, self.kappa)
        B = assemble_mass(self.space, self.kappa)
        V = self.eigenvectors
        num = np.einsum("kn,nk->k", V, A @ V.T)
        den = np.einsum("kn,nk->k", V, B @ V.T)
        q = num / den
        scale = max(abs(self.eigenvalues).max(), 1e-300)
        return float(np.abs(q - self.eigenvalues).max() / scale)


def find_gap(lam, threshold=GAP_RATIO):
    """(k, ratio): k = count of eigenvalues before the largest jump
    lam[k] / lam[k-1] over positive eigenvalues, or (1, ratio) when no jump
    reaches ``threshold``."""
    lam = np.asarray(lam, dtype=float)
    best_k, best = 1, 1.0
    for k in range(2, len(lam)):
        lo, hi = lam[k - 1], lam[k]
        if lo <= 0:
            continue
        r = hi / lo
        if r > best:
            best_k, best = k, r
    if best < threshold:
        return 1, best
    return best_k, best


def spectral_decompose(kappa, h, m=10, threshold=GAP_RATIO, tol=1e-8) -> SpectralReport:
    """m smallest eigenpairs of the kappa-weighted Neumann problem on a cell block."""
    kappa = np.asarray(getattr(kappa, "values", kappa), dtype=float)
    if m < 2:
        raise ValueError(f"need at least 2 eigenpairs, got m={m}")
    ny, nx = kappa.shape
    space = FemSpace(nx, ny, h)
    A = assemble_stiffness(space, kappa)
    B = assemble_mass(space, kappa)
    m = min(m, space.n_nodes)
    lam, V = smallest_eigpairs(A, B, m, tol=tol)
    # the Neumann kernel is exactly the constants
    lam[0] = 0.0 if abs(lam[0]) <= 1e-10 * max(lam[1], 1e-300) else lam[0]
    lam = np.maximum(lam, 0.0)
    k, r = find_gap(lam, threshold)
    return SpectralReport(lam, V.T.copy(), space, kappa, k, r)


def _flat_cells(report: SpectralReport, tol=FLAT_TOL):
    """Cells where all small eigenvectors vary by at most ``tol`` of their range."""
    space = report.space
    flat = np.ones((space.ny, space.nx), dtype=bool)
    for v in report.small[1:]:
        u = v.reshape(space.shape_nodes)
        corners = np.stack([u[:-1, :-1], u[:-1, 1:], u[1:, :-1], u[1:, 1:]])
        spread = corners.max(axis=0) - corners.min(axis=0)
        rng = max(u.max() - u.min(), 1e-300)
        flat &= spread <= tol * rng
    return flat


def identify_continua(report: SpectralReport, merge_channels=True, flat_tol=FLAT_TOL,
                      seed=0) -> ContinuumMap:
    """Continuum labels from the small eigenvectors.

    Channel cells (high kappa, flat small eigenvectors) become continuum 2
    when ``merge_channels`` is set, otherwise one continuum per plateau
    cluster (k-means on the small-eigenvector values, k = gap index,
    deterministic seed); all other cells form continuum 1.
    """
    if report.gap_index < 2:
        raise NoMulticontinuumStructure(
            f"no spectral gap of ratio >= threshold (largest ratio {report.gap_ratio:.3g}); "
            "the region behaves as a single continuum")
    kap = report.kappa
    high = kap >= np.sqrt(kap.min() * kap.max())
    channel = high & _flat_cells(report, flat_tol)
    labels = np.ones(kap.shape, dtype=np.int64)
    if merge_channels:
        labels[channel] = 2
        return ContinuumMap(labels, 2)
    feats = np.stack([cell_means(report.space, v) for v in report.small[1:]], axis=-1)
    X = feats[channel]
    k = report.gap_index
    _, lab = kmeans2(X, k, minit="++", seed=np.random.default_rng(seed))
    # relabel clusters by first appearance in row-major order
    order = {}
    for c in lab:
        order.setdefault(int(c), len(order))
    labels[channel] = 2 + np.array([order[int(c)] for c in lab])
    return ContinuumMap(labels, 1 + len(order))


def identify_global(kappa, coarse: CoarseGrid, m=10, threshold=GAP_RATIO,
                    flat_tol=FLAT_TOL) -> ContinuumMap:
    """Two-continuum map of the whole domain by per-coarse-cell identification.

    Cells of identical content reuse one eigen-solve.  Coarse cells without
    a gap are labeled by the kappa threshold alone.
    """
    kap = np.asarray(getattr(kappa, "values", kappa), dtype=float)
    b = coarse.block
    labels = np.ones(kap.shape, dtype=np.int64)
    cache = {}
    thresh = np.sqrt(kap.min() * kap.max())
    for w in range(coarse.n_cells):
        ci, cj = coarse.cell_ij(w)
        sl = (slice(cj * b, (cj + 1) * b), slice(ci * b, (ci + 1) * b))
        block = np.ascontiguousarray(kap[sl])
        key = hashlib.sha1(block.tobytes()).hexdigest()
        if key not in cache:
            rep = spectral_decompose(block, coarse.fine.h, m, threshold)
            try:
                cache[key] = identify_continua(rep, True, flat_tol).labels
            except NoMulticontinuumStructure:
                cache[key] = np.where(block >= thresh, 2, 1)
        labels[sl] = cache[key]
    return ContinuumMap(labels, int(labels.max()))
