"""Conductivity fields, continuum maps and source terms.

All fields are cell-wise constant arrays of shape ``(nx, nx)`` indexed
``[j, i]`` (row = y index), sampled at fine-cell centers.

Continuum 1 is the low-conductivity material, continuum 2 the high one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import FineGrid


class MediumError(ValueError):
    pass


@dataclass
class ConductivityField:
    values: np.ndarray
    epsilon: float | None = None
    case: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise MediumError(f"conductivity must be a square cell array, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or self.values.min() <= 0:
            raise MediumError("conductivity must be finite and strictly positive")

    @property
    def nx(self):
        return self.values.shape[0]

    @property
    def contrast(self):
        return self.values.max() / self.values.min()


@dataclass
class ContinuumMap:
    labels: np.ndarray
    N: int | None = None

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.N is None:
            self.N = int(self.labels.max())
        if self.labels.min() < 1 or self.labels.max() > self.N:
            raise MediumError(f"labels must lie in 1..{self.N}")
        present = np.unique(self.labels)
        if len(present) != self.N:
            missing = sorted(set(range(1, self.N + 1)) - set(present.tolist()))
            raise MediumError(f"continua {missing} are empty")

    def indicator(self, j: int) -> np.ndarray:
        """psi_j as a float cell array (j is 1-based)."""
        return (self.labels == j).astype(float)

    def indicators(self) -> np.ndarray:
        return np.stack([self.indicator(j) for j in range(1, self.N + 1)])


@dataclass
class SourceField:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise MediumError("source must be finite")


def _period_cells(fine: FineGrid, eps: float) -> int:
    if eps <= 0 or eps > 1:
        raise MediumError(f"period must lie in (0, 1], got {eps}")
    inv = 1.0 / eps
    if abs(inv - round(inv)) > 1e-9:
        raise MediumError(f"1/epsilon must be an integer, got epsilon={eps}")
    p = eps * fine.nx
    if abs(p - round(p)) > 1e-9 or round(p) < 2:
        raise MediumError(
            f"period epsilon={eps} is not resolved by nx={fine.nx} (epsilon*nx={p:g})")
    return int(round(p))


def _band(p: int, fraction: float, what: str) -> np.ndarray:
    """Boolean mask over one period marking a centered band of ``fraction * p`` cells."""
    nb = fraction * p
    if abs(nb - round(nb)) > 1e-9:
        raise MediumError(f"{what} {fraction} of a {p}-cell period is not a whole number of cells")
    nb = int(round(nb))
    if nb < 1:
        raise MediumError(f"{what} {fraction} is thinner than one fine cell")
    if nb >= p:
        raise MediumError(f"{what} {fraction} fills the whole period")
    if (p - nb) % 2:
        # an off-center band breaks the mirror symmetry used at domain edges
        raise MediumError(
            f"a band of {nb} cells cannot be centered in a {p}-cell period; "
            "choose nx so that both counts have the same parity")
    start = (p - nb) // 2
    mask = np.zeros(p, dtype=bool)
    mask[start:start + nb] = True
    return mask


def _edge_band(p: int, fraction: float, what: str) -> np.ndarray:
    """Band of ``fraction * p`` cells centered on the period boundary (split
    evenly between the start and the end of the period)."""
    nb = fraction * p
    if abs(nb - round(nb)) > 1e-9:
        raise MediumError(f"{what} {fraction} of a {p}-cell period is not a whole number of cells")
    nb = int(round(nb))
    if nb < 2:
        raise MediumError(f"{what} {fraction} is thinner than two fine cells")
    if nb >= p:
        raise MediumError(f"{what} {fraction} fills the whole period")
    if nb % 2:
        raise MediumError(
            f"a band of {nb} cells cannot be centered on the period boundary; "
            "choose nx so that the band has an even number of cells")
    mask = np.zeros(p, dtype=bool)
    mask[: nb // 2] = True
    mask[p - nb // 2:] = True
    return mask


def case_kappas(eps: float) -> tuple[float, float]:
    """Low/high conductivities eps/10000 and 1/(100 eps)."""
    return eps / 10000.0, 1.0 / (100.0 * eps)


def gen_case1(fine: FineGrid, eps: float, high_fraction: float = 0.2,
              normal_axis: int = 0, kappa_low: float | None = None,
              kappa_high: float | None = None):
    """Layered medium with period ``eps``: high-conductivity layers of width
    ``high_fraction * eps`` centered on the lines x = k * eps.

    ``normal_axis=0`` gives layers whose normal is x (kappa depends on x only),
    so the high-conductivity continuum conducts along y.  Layers centered on
    period boundaries make every coarse cell of size k * eps start and end
    inside a high layer, and keep the medium mirror-symmetric about the
    domain sides.
    """
    p = _period_cells(fine, eps)
    band = _edge_band(p, high_fraction, "high-conductivity fraction")
    k_lo, k_hi = case_kappas(eps)
    if kappa_low is not None:
        k_lo = kappa_low
    if kappa_high is not None:
        k_hi = kappa_high
    high1d = band[np.arange(fine.nx) % p]
    if normal_axis == 0:
        high = np.broadcast_to(high1d[None, :], (fine.nx, fine.nx))
    elif normal_axis == 1:
        high = np.broadcast_to(high1d[:, None], (fine.nx, fine.nx))
    else:
        raise MediumError(f"normal_axis must be 0 or 1, got {normal_axis}")
    labels = np.where(high, 2, 1)
    kappa = np.where(high, k_hi, k_lo)
    params = dict(high_fraction=high_fraction, normal_axis=normal_axis,
                  kappa_low=k_lo, kappa_high=k_hi)
    return ConductivityField(kappa, eps, "case1", params), ContinuumMap(labels, 2)


def gen_case1_fixed_contrast(fine: FineGrid, eps: float, high_fraction: float = 0.2,
                             normal_axis: int = 0):
    kappa, cmap = gen_case1(fine, eps, high_fraction, normal_axis,
                            kappa_low=1e-4, kappa_high=0.1)
    kappa.case = "case1_fixed"
    return kappa, cmap


def gen_case2(fine: FineGrid, eps: float, channel_fraction: float = 0.2,
              kappa_low: float | None = None, kappa_high: float | None = None):
    """Periodic cross network of high-conductivity channels.

    Each period cell carries one horizontal and one vertical channel of width
    ``channel_fraction * eps`` centered in the cell.
    """
    if channel_fraction <= 0:
        raise MediumError("channel width fraction must be positive")
    p = _period_cells(fine, eps)
    band = _band(p, channel_fraction, "channel width fraction")
    k_lo, k_hi = case_kappas(eps)
    if kappa_low is not None:
        k_lo = kappa_low
    if kappa_high is not None:
        k_hi = kappa_high
    b = band[np.arange(fine.nx) % p]
    high = b[None, :] | b[:, None]
    labels = np.where(high, 2, 1)
    kappa = np.where(high, k_hi, k_lo)
    params = dict(channel_fraction=channel_fraction, kappa_low=k_lo, kappa_high=k_hi)
    return ConductivityField(kappa, eps, "case2", params), ContinuumMap(labels, 2)


def gen_case3(fine: FineGrid, eps: float, channel_fraction: float = 0.2,
              amplitude: float = 0.5):
    """Case-2 network whose high conductivity is modulated by
    ``1 + amplitude * sin(pi x) sin(pi y)``; the labels are unchanged."""
    if not 0 <= amplitude < 1:
        raise MediumError(f"modulation amplitude must lie in [0, 1), got {amplitude}")
    kappa, cmap = gen_case2(fine, eps, channel_fraction)
    x, y = fine.cell_centers()
    mod = 1.0 + amplitude * np.sin(np.pi * x) * np.sin(np.pi * y)
    values = np.where(cmap.labels == 2, kappa.values * mod, kappa.values)
    params = dict(kappa.params, amplitude=amplitude)
    return ConductivityField(values, eps, "case3", params), cmap


def gen_source(fine: FineGrid, kappa: ConductivityField, cmap: ContinuumMap) -> SourceField:
    """Gaussian bump centered at (0.5, 0.5), scaled by 1000 min(kappa) in continuum 1."""
    x, y = fine.cell_centers()
    g = np.exp(-40.0 * np.abs((x - 0.5) ** 2 + (y - 0.5) ** 2))
    scale = np.where(cmap.labels == 1, 1000.0 * kappa.values.min(), 1.0)
    return SourceField(scale * g)


def generate(case: str, fine: FineGrid, eps: float, **params):
    """Dispatch on case name; returns (kappa, continuum map)."""
    gens = {"case1": gen_case1, "case1_fixed": gen_case1_fixed_contrast,
            "case2": gen_case2, "case3": gen_case3}
    if case not in gens:
        raise MediumError(f"unknown case {case!r}; expected one of {sorted(gens)}")
    return gens[case](fine, eps, **params)
