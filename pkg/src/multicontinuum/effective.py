"""Effective multicontinuum coefficients over target RVEs.

Per coarse cell ``w`` (RVE = the coarse cell, so |w| / |R_w| = 1):

* ``alpha[i, m, j, n] = int_{R_w} kappa grad phi_i^m . grad phi_j^n``
* ``beta[i, j]        = int_{R_w} kappa grad phi_i . grad phi_j``
* ``beta_m[i, m, j]   = int_{R_w} kappa grad phi_i^m . grad phi_j``
* ``f[i]              = |w| / |R_w| int_{R_w} f phi_i``

Raw integrals are stored; tables divide by |R_w| (:meth:`normalized`).
"""
from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .cells import (CellProblem, CellSolutionSet, GradConstrainedSet,
                    interface_gradient, interface_oscillation, region_content_key,
                    solve_gradconstraint_cells)
from .fem import FemSpace, cell_functional
from .grid import CoarseGrid, oversample
from .sparsela import DEFAULT_TOL

log = logging.getLogger(__name__)


@dataclass
class CellCoefficients:
    alpha: np.ndarray
    beta: np.ndarray
    beta_m: np.ndarray
    rve_area: float
    omega_area: float
    f: np.ndarray | None = None      # (N, 4) per-corner loads
    diagnostics: dict = field(default_factory=dict)


def _energies(K, phi, phi_m):
    N = phi.shape[0]
    Pm = phi_m.reshape(2 * N, -1)
    KP = K @ phi.T
    KPm = K @ Pm.T
    alpha = (Pm @ KPm).reshape(N, 2, N, 2)
    beta = phi @ KP
    beta_m = (Pm @ KP).reshape(N, 2, N)
    # enforce the exact symmetry of the bilinear form
    alpha = 0.5 * (alpha + alpha.transpose(2, 3, 0, 1))
    beta = 0.5 * (beta + beta.T)
    return alpha, beta, beta_m


def extract(cs: CellSolutionSet, f_target=None) -> CellCoefficients:
    """Target-RVE energy integrals of a solved cell set.

    ``f_target`` is the source on the target's fine cells (block x block).
    """
    nodes = cs.target_nodes()
    K = cs.target_stiffness()
    phi = cs.phi[:, nodes]
    phi_m = cs.phi_grad[:, :, nodes]
    alpha, beta, beta_m = _energies(K, phi, phi_m)
    area = cs.region.coarse.H ** 2
    f = None
    if f_target is not None:
        f = source_weights(cs, f_target)
    return CellCoefficients(alpha, beta, beta_m, area, area, f)


def _corner_shapes(b):
    """Coarse Q1 shape values N_a at the fine-cell centers of a b x b block, (4, b, b)."""
    t = (np.arange(b) + 0.5) / b
    X, Y = np.meshgrid(t, t)
    return np.stack([(1 - X) * (1 - Y), X * (1 - Y), X * Y, (1 - X) * Y])


def source_weights(cs, f_target):
    """Per-corner loads f_i^a = |w|/|R_w| int_{R_w} f phi_i N_a, shape (N, 4).

    N_a are the coarse bilinear shape functions of the target cell, so the
    coarse load tested with V_i = sum_a V_i^a N_a is consistent; summing over
    a gives f_i = |w|/|R_w| int_{R_w} f phi_i.  Gradient test terms
    int f phi_i^m are dropped.
    """
    b = cs.region.coarse.block
    space = FemSpace(b, b, cs.space.h)
    f_target = np.asarray(f_target, dtype=float)
    phi = cs.phi[:, cs.target_nodes()]
    loads = np.stack([cell_functional(space, f_target * Na) for Na in _corner_shapes(b)])
    return phi @ loads.T


def extract_gradconstraint(gs: GradConstrainedSet, f_target=None) -> CellCoefficients:
    """Coefficients of the average+gradient constrained model (single RVE)."""
    alpha, beta, beta_m = _energies(gs.A, gs.phi, gs.phi_grad)
    area = gs.region.coarse.H ** 2
    f = None
    if f_target is not None:
        b = gs.region.coarse.block
        ft = np.asarray(f_target, dtype=float)
        f = gs.phi @ np.stack([cell_functional(gs.space, ft * Na)
                               for Na in _corner_shapes(b)]).T
    return CellCoefficients(alpha, beta, beta_m, area, area, f)


@dataclass
class EffectiveCoefficients:
    """Coefficients for every coarse cell (leading axis = coarse cell index)."""
    M: int
    N: int
    alpha: np.ndarray      # (M^2, N, 2, N, 2)
    beta: np.ndarray       # (M^2, N, N)
    beta_m: np.ndarray     # (M^2, N, 2, N)
    rve_area: np.ndarray   # (M^2,)
    omega_area: np.ndarray
    f_corner: np.ndarray | None = None   # (M^2, N, 4)
    eps: float | None = None
    l: int | None = None
    mode: str = "average"
    boundary: str = "reflect"
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_cells(cls, M, cells, **kw):
        N = cells[0].beta.shape[0]
        f = None
        if all(c.f is not None for c in cells):
            f = np.array([c.f for c in cells])
        diag = {}
        for key in cells[0].diagnostics:
            diag[key] = np.array([c.diagnostics[key] for c in cells])
        return cls(M, N,
                   np.array([c.alpha for c in cells]),
                   np.array([c.beta for c in cells]),
                   np.array([c.beta_m for c in cells]),
                   np.array([c.rve_area for c in cells]),
                   np.array([c.omega_area for c in cells]),
                   f, diagnostics=diag, **kw)

    @property
    def f(self):
        """Source weights f_i per cell, (M^2, N)."""
        return None if self.f_corner is None else self.f_corner.sum(axis=2)

    def normalized(self):
        """(alpha, beta, beta_m) divided by |R_w|."""
        a = self.rve_area
        return (self.alpha / a[:, None, None, None, None],
                self.beta / a[:, None, None],
                self.beta_m / a[:, None, None, None])

    def rescale(self, eps=None):
        """O(1) rescaled tensors: alpha/|R|, eps beta_m/|R|, eps^2 beta/|R|."""
        eps = self.eps if eps is None else eps
        if eps is None:
            raise ValueError("no epsilon recorded for rescaling")
        a, b, bm = self.normalized()
        return dict(alpha_hat=a, beta_hat=eps ** 2 * b, beta_m_hat=eps * bm)

    def rowsum_defect(self):
        """|sum_j beta_ij| / max |beta| per cell."""
        s = np.abs(self.beta.sum(axis=2)).max(axis=1)
        return s / np.maximum(np.abs(self.beta).reshape(len(s), -1).max(axis=1), 1e-300)

    def to_csv(self, path, header=None):
        N = self.N
        cols = ["cell", "ix", "iy", "rve_area"]
        cols += [f"alpha_{i+1}{j+1}_{m+1}{n+1}" for i in range(N) for j in range(N)
                 for m in range(2) for n in range(2)]
        cols += [f"beta_{i+1}{j+1}" for i in range(N) for j in range(N)]
        cols += [f"beta_{i+1}{j+1}_{m+1}" for i in range(N) for j in range(N) for m in range(2)]
        if self.f is not None:
            cols += [f"f_{i+1}" for i in range(N)]
        with open(path, "w", newline="") as fh:
            for line in header or []:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(cols)
            for w in range(self.M ** 2):
                row = [w, w % self.M, w // self.M, repr(float(self.rve_area[w]))]
                row += [repr(float(self.alpha[w, i, m, j, n])) for i in range(N) for j in range(N)
                        for m in range(2) for n in range(2)]
                row += [repr(float(self.beta[w, i, j])) for i in range(N) for j in range(N)]
                row += [repr(float(self.beta_m[w, i, m, j])) for i in range(N) for j in range(N)
                        for m in range(2)]
                if self.f is not None:
                    row += [repr(float(v)) for v in self.f[w]]
                wr.writerow(row)


def _group_cells(coarse, kappa, labels, l, boundary):
    groups = OrderedDict()
    for w in range(coarse.n_cells):
        key = region_content_key(oversample(coarse, w, l, boundary), kappa, labels)
        groups.setdefault(key, []).append(w)
    return list(groups.values())


def _solve_group(coarse, kappa, cmap, f, l, boundary, cells, tol, check):
    region = oversample(coarse, cells[0], l, boundary)
    pb = CellProblem(region, kappa, cmap)
    phi, beta = pb.solve_avg(tol)
    phi_m0, beta_m0 = pb.solve_moment(None, tol)
    out = []
    for w in cells:
        cs = pb.cell_set(phi, beta, phi_m0, beta_m0, p0=oversample(coarse, w, l, boundary).p0)
        ft = None if f is None else f[_cell_block(coarse, w)]
        cc = extract(cs, ft)
        if check:
            res = cs.constraint_residuals()
            ids = cs.identities()
            cc.diagnostics = dict(
                constraint=max(res["average"], res["moment"]),
                identity=max(ids["avg_energy"], ids["grad_energy"]),
                rowsum=ids["rowsum"],
                oscillation=interface_gradient(cs.phi_grad, cs.space, pb.labels,
                                               cells=cs.target_cells()),
                interface_max=interface_oscillation(cs.phi, cs.space, pb.labels,
                                                    cells=cs.target_cells()))
        out.append((w, cc))
    return out


def _cell_block(coarse, w):
    ci, cj = coarse.cell_ij(w)
    b = coarse.block
    return slice(cj * b, (cj + 1) * b), slice(ci * b, (ci + 1) * b)


def upscale(coarse: CoarseGrid, kappa, cmap, f=None, l=0, mode="average",
            tol=DEFAULT_TOL, n_jobs=1, check=True, eps=None,
            boundary="reflect") -> EffectiveCoefficients:
    """Solve the cell problems for every coarse cell and collect coefficients.

    Cells whose oversampled regions have identical content share one
    factorization.  ``mode="gradient"`` switches to the single-RVE
    average+gradient constrained cell problems.  ``boundary`` selects how
    regions near the domain edge are formed (see :func:`grid.oversample`).
    """
    kap = getattr(kappa, "values", kappa)
    labels = getattr(cmap, "labels", cmap)
    fv = None if f is None else getattr(f, "values", f)
    if eps is None:
        eps = getattr(kappa, "epsilon", None)
    if mode == "gradient":
        cells = []
        for w in range(coarse.n_cells):
            gs = solve_gradconstraint_cells(oversample(coarse, w, 0), kap, cmap, tol)
            cc = extract_gradconstraint(gs, None if fv is None else fv[_cell_block(coarse, w)])
            res = gs.constraint_residuals()
            cc.diagnostics = dict(
                constraint=max(res.values()),
                oscillation=interface_gradient(gs.phi_grad, gs.space, gs.labels),
                interface_max=interface_oscillation(gs.phi, gs.space, gs.labels))
            cells.append(cc)
        return EffectiveCoefficients.from_cells(coarse.M, cells, eps=eps, l=0, mode=mode)
    if mode != "average":
        raise ValueError(f"unknown cell-problem mode {mode!r}")
    groups = _group_cells(coarse, kap, labels, l, boundary)
    log.info("upscale: %d coarse cells in %d distinct regions (l=%d)",
             coarse.n_cells, len(groups), l)
    if n_jobs == 1:
        results = [_solve_group(coarse, kap, cmap, fv, l, boundary, g, tol, check) for g in groups]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(_solve_group)(coarse, kap, cmap, fv, l, boundary, g, tol, check) for g in groups)
    by_cell = {}
    for chunk in results:
        by_cell.update(chunk)
    cells = [by_cell[w] for w in range(coarse.n_cells)]
    return EffectiveCoefficients.from_cells(coarse.M, cells, eps=eps, l=l, mode=mode,
                                            boundary=boundary)
