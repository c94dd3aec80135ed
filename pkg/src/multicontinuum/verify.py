"""Reference averages, the e2 error, full pipeline runs and sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .coarse import CoarseSolution, assemble_coarse, solve_coarse
from .effective import EffectiveCoefficients, upscale
from .fem import FemSpace, cell_means, solve_fine_reference
from .grid import CoarseGrid, FineGrid, default_layers
from .media import ContinuumMap, gen_source, generate
from .sparsela import SolverError

log = logging.getLogger(__name__)


def layered_oracle(k1, k2, fraction):
    """(along-layer, across-layer) conductivity of a laminate holding volume
    ``fraction`` of ``k2``: arithmetic and harmonic means."""
    if k1 <= 0 or k2 <= 0:
        raise ValueError("conductivities must be positive")
    if not 0 <= fraction <= 1:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    arith = fraction * k2 + (1 - fraction) * k1
    harm = 1.0 / (fraction / k2 + (1 - fraction) / k1)
    return arith, harm


def average_reference(u_fine, coarse: CoarseGrid, cmap):
    """Per coarse cell and continuum, the mean of the fine Q1 field over the
    cells of that continuum: array (N, M, M), NaN where the continuum is absent."""
    labels = getattr(cmap, "labels", cmap)
    N = int(getattr(cmap, "N", labels.max()))
    fine = coarse.fine
    cm = cell_means(FemSpace.from_grid(fine), u_fine)
    M, b = coarse.M, coarse.block
    out = np.full((N, M, M), np.nan)
    for i in range(N):
        ind = (labels == i + 1)
        s = (cm * ind).reshape(M, b, M, b).sum(axis=(1, 3))
        n = ind.reshape(M, b, M, b).sum(axis=(1, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            out[i] = np.where(n > 0, s / np.maximum(n, 1), np.nan)
    return out


@dataclass
class ErrorReport:
    e2: np.ndarray              # percent, sqrt(ratio) convention
    e2_ratio: np.ndarray        # percent, ratio convention
    reference: np.ndarray       # (N, M, M)
    coarse: np.ndarray          # (N, M, M)
    excluded: np.ndarray        # cells without the continuum, per continuum
    meta: dict = field(default_factory=dict)


def e2_error(coarse_means, reference, meta=None) -> ErrorReport:
    """Relative L2 error between coarse cell means and reference averages.

    ``coarse_means`` is a :class:`CoarseSolution` or an (N, M, M) array.
    Cells where the reference is undefined are dropped from both sums.
    """
    U = coarse_means.cell_means() if isinstance(coarse_means, CoarseSolution) else coarse_means
    U = np.asarray(U, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if U.shape != ref.shape:
        raise ValueError(f"grid mismatch: coarse {U.shape} vs reference {ref.shape}")
    N = ref.shape[0]
    e2 = np.zeros(N)
    ratio = np.zeros(N)
    excl = np.zeros(N, dtype=int)
    for i in range(N):
        ok = np.isfinite(ref[i])
        excl[i] = int((~ok).sum())
        den = float((ref[i][ok] ** 2).sum())
        if den == 0:
            raise ZeroDivisionError(f"reference averages of continuum {i + 1} are all zero")
        r = float(((U[i][ok] - ref[i][ok]) ** 2).sum()) / den
        ratio[i] = 100.0 * r
        e2[i] = 100.0 * math.sqrt(r)
    return ErrorReport(e2, ratio, ref, U, excl, dict(meta or {}))


@dataclass
class RunPoint:
    """One pipeline configuration."""
    case: str = "case1"
    nx: int = 400
    eps: float = 0.1
    M: int = 10
    l: int | str = "auto"
    params: dict = field(default_factory=dict)     # medium generator keywords
    cross_terms: bool = True
    mode: str = "average"
    boundary: str = "reflect"
    tol: float = 1e-10

    @property
    def layers(self) -> int:
        return default_layers(1.0 / self.M) if self.l == "auto" else int(self.l)

    def medium_key(self):
        return (self.case, self.nx, self.eps, tuple(sorted(self.params.items())))


@dataclass
class RunResult:
    point: RunPoint
    status: str
    e2: np.ndarray
    e2_ratio: np.ndarray
    eff: EffectiveCoefficients | None = None
    solution: CoarseSolution | None = None
    report: ErrorReport | None = None
    message: str = ""
    seconds: float = 0.0

    def row(self):
        p = self.point
        d = dict(case=p.case, nx=p.nx, l=p.layers, H=1.0 / p.M, eps=p.eps, status=self.status)
        for i, v in enumerate(self.e2):
            d[f"e2_{i + 1}"] = float(v)
        return d


def build_medium(point: RunPoint):
    fine = FineGrid(point.nx)
    kappa, cmap = generate(point.case, fine, point.eps, **point.params)
    return fine, kappa, cmap, gen_source(fine, kappa, cmap)


def run_case(point: RunPoint, medium=None, fine_solution=None, keep=True) -> RunResult:
    """Fine reference, upscaling, coarse solve and e2 for one configuration.

    Solver failures are caught and reported with ``status="solver_failure"``
    and infinite errors.
    """
    t0 = time.perf_counter()
    fine, kappa, cmap, f = medium if medium is not None else build_medium(point)
    coarse = CoarseGrid(fine, point.M)
    u = fine_solution if fine_solution is not None else solve_fine_reference(fine, kappa, f)
    ref = average_reference(u, coarse, cmap)
    N = cmap.N
    try:
        eff = upscale(coarse, kappa, cmap, f, l=point.layers, mode=point.mode,
                      tol=point.tol, boundary=point.boundary, eps=point.eps)
        sol = solve_coarse(assemble_coarse(coarse, eff, point.cross_terms))
    except SolverError as exc:
        log.warning("run %s failed: %s", point, exc)
        inf = np.full(N, np.inf)
        return RunResult(point, "solver_failure", inf, inf, message=str(exc),
                         seconds=time.perf_counter() - t0)
    rep = e2_error(sol, ref, meta=dict(l=point.layers, H=1.0 / point.M, eps=point.eps,
                                       case=point.case))
    res = RunResult(point, "ok", rep.e2, rep.e2_ratio, seconds=time.perf_counter() - t0)
    if keep:
        res.eff, res.solution, res.report = eff, sol, rep
    return res


def run_sweep(points, csv_path=None, json_path=None, header=None, keep=False):
    """Run every point (sharing media and fine solves), write the table CSV
    and a JSON summary with both error conventions.  Failures are recorded
    and the sweep continues."""
    media, fines, results = {}, {}, []
    for p in points:
        key = p.medium_key()
        if key not in media:
            media[key] = build_medium(p)
            fine, kappa, cmap, f = media[key]
            fines[key] = solve_fine_reference(fine, kappa, f)
        results.append(run_case(p, media[key], fines[key], keep=keep))
    if csv_path is not None:
        write_sweep_csv(results, csv_path, header)
    if json_path is not None:
        summary = [dict(point=asdict(r.point), status=r.status, message=r.message,
                        e2_sqrt_percent=[_num(v) for v in r.e2],
                        e2_ratio_percent=[_num(v) for v in r.e2_ratio])
                   for r in results]
        with open(json_path, "w") as fh:
            json.dump(dict(header=list(header or []), runs=summary), fh, indent=1, sort_keys=True)
    return results


def _num(v):
    return float(v) if np.isfinite(v) else str(v)


def write_sweep_csv(results, path, header=None):
    N = max(len(r.e2) for r in results)
    cols = ["case", "nx", "l", "H", "eps"] + [f"e2_{i + 1}" for i in range(N)] + ["status"]
    with open(path, "w", newline="") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in results:
            d = r.row()
            wr.writerow([d["case"], d["nx"], d["l"], repr(d["H"]), repr(d["eps"])]
                        + [repr(float(v)) for v in r.e2] + [r.status])


def convergence_pattern(values):
    """True when the sequence strictly decreases."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))
