"""Structured grids on the unit square and oversampled-region geometry.

Index conventions are row-major throughout: node ``(i, j)`` (``i`` along x,
``j`` along y) has flat index ``j * (nx + 1) + i`` and fine cell ``(i, j)`` has
flat index ``j * nx + i``.  Coarse cells follow the same rule with ``M``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class FineGrid:
    nx: int

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 2:
            raise GridError(f"fine grid needs nx >= 2, got {self.nx}")

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) ** 2

    @property
    def n_cells(self) -> int:
        return self.nx ** 2

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def cell_index(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def cell_centers(self):
        """(x, y) arrays of shape (nx, nx), indexed [j, i]."""
        c = (np.arange(self.nx) + 0.5) * self.h
        return np.meshgrid(c, c)

    def node_coords(self):
        c = np.arange(self.nx + 1) * self.h
        return np.meshgrid(c, c)


def build_fine_grid(nx: int) -> FineGrid:
    return FineGrid(nx)


@dataclass(frozen=True)
class CoarseGrid:
    fine: FineGrid
    M: int

    def __post_init__(self):
        if self.M < 1:
            raise GridError(f"coarse grid needs M >= 1, got {self.M}")
        if self.fine.nx % self.M:
            raise GridError(
                f"fine grid nx={self.fine.nx} is not divisible by coarse M={self.M}")

    @property
    def H(self) -> float:
        return 1.0 / self.M

    @property
    def block(self) -> int:
        """Fine cells per coarse cell along one axis."""
        return self.fine.nx // self.M

    @property
    def n_cells(self) -> int:
        return self.M ** 2

    def cell_ij(self, w: int) -> tuple[int, int]:
        if not 0 <= w < self.M ** 2:
            raise GridError(f"coarse cell index {w} out of range for M={self.M}")
        return w % self.M, w // self.M

    def fine_cells(self, w: int) -> np.ndarray:
        """Flat fine-cell indices owned by coarse cell ``w``."""
        ci, cj = self.cell_ij(w)
        b = self.block
        ii, jj = np.meshgrid(np.arange(ci * b, (ci + 1) * b),
                             np.arange(cj * b, (cj + 1) * b))
        return self.fine.cell_index(ii, jj).ravel()

    def owner(self) -> np.ndarray:
        """Coarse-cell owner of every fine cell, shape (nx, nx) indexed [j, i]."""
        idx = np.arange(self.fine.nx) // self.block
        return idx[:, None] * self.M + idx[None, :]


def build_coarse_grid(fine: FineGrid, M: int) -> CoarseGrid:
    return CoarseGrid(fine, M)


@dataclass(frozen=True)
class OversampleRegion:
    """Target coarse cell extended by ``l`` coarse layers, clipped to the domain.

    ``patches`` lists the coarse cells of the extension in row-major order;
    ``p0`` is the position of the target inside that list.  The fine sub-grid
    covers cells ``[i0, i1) x [j0, j1)`` of the global fine grid.
    """
    coarse: CoarseGrid
    target: int
    l: int
    ci0: int
    ci1: int
    cj0: int
    cj1: int
    patches: tuple = field(repr=False)
    p0: int = 0
    boundary: str = "clip"

    @property
    def px(self) -> int:
        return self.ci1 - self.ci0

    @property
    def py(self) -> int:
        return self.cj1 - self.cj0

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def i0(self):
        return self.ci0 * self.coarse.block

    @property
    def i1(self):
        return self.ci1 * self.coarse.block

    @property
    def j0(self):
        return self.cj0 * self.coarse.block

    @property
    def j1(self):
        return self.cj1 * self.coarse.block

    @property
    def nx(self) -> int:
        return self.i1 - self.i0

    @property
    def ny(self) -> int:
        return self.j1 - self.j0

    @property
    def origin(self) -> tuple[float, float]:
        h = self.coarse.fine.h
        return self.i0 * h, self.j0 * h

    def cell_slice(self):
        """Slices selecting a clipped region from a global (nx, nx) cell array."""
        if self.boundary != "clip":
            raise GridError("reflected regions have no slice; use extract()")
        return slice(self.j0, self.j1), slice(self.i0, self.i1)

    def extract(self, a) -> np.ndarray:
        """Region part of a global (nx, nx) cell array; cells outside the unit
        square are mirror images across its sides."""
        a = np.asarray(a)
        if self.boundary == "clip":
            return a[self.cell_slice()]
        n = self.coarse.fine.nx
        return a[np.ix_(_mirror(np.arange(self.j0, self.j1), n),
                        _mirror(np.arange(self.i0, self.i1), n))]

    def patch_of_cells(self) -> np.ndarray:
        """Local patch number of each region fine cell, shape (ny, nx)."""
        b = self.coarse.block
        pj = np.arange(self.ny) // b
        pi = np.arange(self.nx) // b
        return pj[:, None] * self.px + pi[None, :]


def _mirror(idx, n):
    """Fold integer indices into [0, n) by repeated reflection."""
    k = np.mod(idx, 2 * n)
    return np.where(k < n, k, 2 * n - 1 - k)


BOUNDARY_MODES = ("clip", "reflect")


def oversample(coarse: CoarseGrid, w: int, l: int, boundary: str = "clip") -> OversampleRegion:
    """Target cell ``w`` plus ``l`` layers.

    ``boundary="clip"`` cuts the extension at the domain; ``"reflect"`` keeps
    the full (2l+1)^2 block and fills its outside part with the mirror image
    of the medium, so boundary targets sit as deep inside as interior ones.
    """
    if l < 0:
        raise GridError(f"layer count must be nonnegative, got {l}")
    if boundary not in BOUNDARY_MODES:
        raise GridError(f"boundary mode must be one of {BOUNDARY_MODES}, got {boundary!r}")
    ci, cj = coarse.cell_ij(w)
    M = coarse.M
    if boundary == "clip":
        ci0, ci1 = max(0, ci - l), min(M, ci + l + 1)
        cj0, cj1 = max(0, cj - l), min(M, cj + l + 1)
    else:
        ci0, ci1, cj0, cj1 = ci - l, ci + l + 1, cj - l, cj + l + 1
    patches = tuple(int(b * M + a) for b in _mirror(np.arange(cj0, cj1), M)
                    for a in _mirror(np.arange(ci0, ci1), M))
    p0 = (cj - cj0) * (ci1 - ci0) + (ci - ci0)
    return OversampleRegion(coarse, int(w), int(l), ci0, ci1, cj0, cj1, patches, p0, boundary)


def default_layers(H: float) -> int:
    """Oversampling layers ceil(-2 ln H)."""
    if not 0 < H < 1:
        raise GridError(f"coarse size must satisfy 0 < H < 1, got {H}")
    # guard against ln(1/10) landing a hair above an integer
    return int(math.ceil(-2.0 * math.log(H) - 1e-12))
