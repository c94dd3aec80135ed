"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line.

Expensive pipeline runs are module-scoped fixtures shared between criteria.
"""
import time

import numpy as np
import pytest

from multicontinuum.cells import boundary_decay_study, solve_region
from multicontinuum.effective import upscale
from multicontinuum.grid import CoarseGrid, FineGrid, oversample
from multicontinuum.media import ContinuumMap, case_kappas, gen_case1, gen_source
from multicontinuum.spectral import identify_global, spectral_decompose
from multicontinuum.verify import RunPoint, layered_oracle, run_case, run_sweep

pytestmark = pytest.mark.slow

HALF = dict(high_fraction=0.5, normal_axis=1)   # horizontal half-period layers
# layered-medium error table: (H, eps) rows of the three blocks
FIXED_EPS = [(10, 40), (20, 40), (40, 40)]
FIXED_H = [(10, 10), (10, 20), (10, 40)]
DIAGONAL = [(10, 10), (20, 20), (40, 40), (80, 80)]
DIAGONAL_TARGET = {10: (4.60, 8.35), 20: (2.02, 2.40), 40: (0.61, 0.60), 80: (0.14, 0.14)}
TABLE_ROWS = list(dict.fromkeys(FIXED_EPS + FIXED_H + DIAGONAL))


def _table_nx(e):
    # half-period layers centered on period lines need an even cell count per half period
    return 640 if e == 80 else 320


def table_points(l="auto"):
    return [RunPoint("case1", _table_nx(e), 1.0 / e, M, l, dict(HALF)) for M, e in TABLE_ROWS]


def _center(M):
    return (M // 2) * M + M // 2


def _udiff(res):
    U = res.solution.U
    return float(np.abs(U[0] - U[1]).max() / np.abs(U[0]).max())


# ---------------------------------------------------------------------------
# shared runs


@pytest.fixture(scope="module")
def table_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("table")


@pytest.fixture(scope="module")
def table_sweep(table_dir):
    res = run_sweep(table_points(), table_dir / "run1.csv", table_dir / "run1.json",
                    ["layered error table"], keep=True)
    return {(r.point.M, round(1 / r.point.eps)): r for r in res}


@pytest.fixture(scope="module")
def coefficient_runs():
    """Upscaled Case 1 (layers 0.2 eps wide) at H = 1/10 for three periods."""
    out = {}
    for e in (10, 20, 40):
        fine = FineGrid(400)
        coarse = CoarseGrid(fine, 10)
        kap, cm = gen_case1(fine, 1.0 / e)
        t0 = time.perf_counter()
        eff = upscale(coarse, kap, cm, gen_source(fine, kap, cm), l=5)
        out[e] = (eff, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def fixed_runs():
    pts = [RunPoint("case1_fixed", 400, 1.0 / M, M) for M in (10, 20, 40)]
    return run_sweep(pts, keep=True)


@pytest.fixture(scope="module")
def network_runs():
    """Case 2/3 analogues on H = eps in {1/10, 1/20, 1/40}."""
    return {case: run_sweep([RunPoint(case, 200, 1.0 / M, M) for M in (10, 20, 40)], keep=True)
            for case in ("case2", "case3")}


# ---------------------------------------------------------------------------


def test_c01_constraints(accept, table_sweep, fixed_runs, network_runs):
    worst = {}
    for name, runs in [("layered", table_sweep.values()), ("fixed", fixed_runs),
                       ("case2", network_runs["case2"]), ("case3", network_runs["case3"])]:
        worst[name] = max(float(r.eff.diagnostics["constraint"].max()) for r in runs)
    fine = FineGrid(400)
    kap, cm = gen_case1(fine, 1 / 40)
    t0 = time.perf_counter()
    solve_region(oversample(CoarseGrid(fine, 10), 55, 5, "reflect"), kap, cm)
    per_rve = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-8 and per_rve < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    accept(1, ok, f"max relative constraint residual: {detail}; one RVE at nx=400, M=10: "
                  f"{per_rve:.1f} s")


def test_c02_identities(accept):
    worst = 0.0
    rows = []
    for case, nx in (("case1", 400), ("case2", 200)):
        for e in (10, 20):
            r = run_case(RunPoint(case, nx, 1.0 / e, 10))
            d = r.eff.diagnostics
            v = max(float(d["identity"].max()), float(d["rowsum"].max()))
            rows.append(f"{case} eps=1/{e} {v:.1e}")
            worst = max(worst, v)
    accept(2, worst <= 1e-8, "max identity/row-sum defect: " + ", ".join(rows))


def test_c03_single_continuum_oracle(accept):
    fine = FineGrid(400)
    coarse = CoarseGrid(fine, 10)
    errs = []
    for contrast in (10.0, 100.0):
        kap, cm = gen_case1(fine, 1 / 20, high_fraction=0.5, kappa_low=1.0, kappa_high=contrast)
        one = ContinuumMap(np.ones_like(cm.labels), 1)
        eff = upscale(coarse, kap, one, l=5)
        a = eff.normalized()[0][:, 0, :, 0, :]
        along, across = layered_oracle(1.0, contrast, 0.5)
        # layers have normal x: across-layer = xx, along-layer = yy
        e_across = float(np.abs(a[:, 0, 0] / across - 1).max())
        e_along = float(np.abs(a[:, 1, 1] / along - 1).max())
        errs.append((contrast, e_across, e_along))
    worst = max(max(e[1], e[2]) for e in errs)
    detail = "; ".join(f"contrast {c:g}: harmonic {a:.2%}, arithmetic {b:.2%}" for c, a, b in errs)
    accept(3, worst <= 0.02, "max relative deviation " + detail)


def test_c04_error_table(accept, table_sweep):
    diag = [table_sweep[(M, e)].e2 for M, e in DIAGONAL]
    within = all(t / 2 <= v <= 2 * t for M, e2 in zip(DIAGONAL, diag)
                 for v, t in zip(e2, DIAGONAL_TARGET[M[0]]))
    mono = all(np.all(b < a) for a, b in zip(diag, diag[1:]))
    fixed_h = [table_sweep[k].e2 for k in FIXED_H]
    below = all(np.all(v < 10) for v in fixed_h)
    fixed_eps = [table_sweep[k].e2 for k in FIXED_EPS]

    def fmt(v):
        return "/".join(f"{x:.2f}" for x in v)

    detail = (f"H=eps: {' -> '.join(fmt(v) for v in diag)} %; "
              f"fixed H: {', '.join(fmt(v) for v in fixed_h)} %; "
              f"fixed eps: {', '.join(fmt(v) for v in fixed_eps)} %")
    accept(4, within and mono and below, detail)


def test_c05_coefficient_scaling(accept, coefficient_runs):
    beta, a22, a11 = [], [], []
    for e in (10, 20, 40):
        a, b, _ = coefficient_runs[e][0].normalized()
        beta.append(b[55, 0, 0])
        a22.append(a[55, 1, 1, 1, 1])
        a11.append(a[55, 0, 0, 0, 0])
    rb = np.array(beta[1:]) / beta[:-1]
    ra = np.array(a22[1:]) / a22[:-1]
    ok = (np.all(np.abs(rb - 2) <= 0.3) and 0.0075 <= beta[0] <= 0.03
          and np.all(np.abs(ra - 2) <= 0.3) and 0.01005 <= a22[0] <= 0.0402
          and all(abs(x) <= 1e-3 * y for x, y in zip(a11, a22)))
    accept(5, ok, f"beta11/|R| {beta[0]:.4f}, {beta[1]:.4f}, {beta[2]:.4f} (ratios "
                  f"{rb[0]:.3f}, {rb[1]:.3f}); alpha22^22/|R| {a22[0]:.4f}, {a22[1]:.4f}, "
                  f"{a22[2]:.4f} (ratios {ra[0]:.3f}, {ra[1]:.3f}); "
                  f"max alpha11^11/alpha22^22 {max(abs(x) / y for x, y in zip(a11, a22)):.1e}")


def test_c06_fixed_contrast(accept, fixed_runs):
    e2 = [r.e2 for r in fixed_runs]
    ok = all(np.all(b < a) for a, b in zip(e2, e2[1:])) and all(np.all(v < 10) for v in e2)
    accept(6, ok, "H=eps 1/10, 1/20, 1/40: "
                  + " -> ".join("/".join(f"{x:.2f}" for x in v) for v in e2) + " %")


def test_c07_oversampling_decay(accept, table_sweep):
    fine = FineGrid(400)
    coarse = CoarseGrid(fine, 10)
    kap, cm = gen_case1(fine, 1 / 40)
    rows = dict(boundary_decay_study(coarse, kap, cm, 55, [0, 2, 4, 6]))
    d = [rows[l] for l in (0, 2, 4)]
    slope = np.polyfit([0, 2, 4], np.log(d), 1)[0]
    zero = {(r.point.M, round(1 / r.point.eps)): r for r in run_sweep(table_points(l=0))}
    beats = {k: bool(np.all(table_sweep[k].e2 < zero[k].e2)) for k in TABLE_ROWS}
    l0 = sorted({zero[k].status for k in TABLE_ROWS})
    ok = d[2] < d[1] < d[0] and slope < 0 and all(beats.values())
    accept(7, ok, f"delta(0,2,4) = {d[0]:.3g}, {d[1]:.3g}, {d[2]:.3g}, log slope {slope:.2f}; "
                  f"default l beats l=0 on {sum(beats.values())}/{len(beats)} rows "
                  f"(l=0 status: {', '.join(l0)})")


def test_c08_network_analogues(accept, network_runs):
    parts, ok = [], True
    for case, runs in network_runs.items():
        e2 = [r.e2 for r in runs]
        b = [r.eff.normalized()[1][_center(r.point.M), 0, 0] for r in runs]
        rb = np.array(b[1:]) / b[:-1]
        good = (np.all(e2[0] < 12) and all(np.all(y < x) for x, y in zip(e2, e2[1:]))
                and np.all(np.abs(rb - 2) <= 0.3) and all(r.status == "ok" for r in runs))
        ok &= bool(good)
        parts.append(f"{case}: " + " -> ".join("/".join(f"{x:.2f}" for x in v) for v in e2)
                     + f" %, beta11 ratios {rb[0]:.3f}, {rb[1]:.3f}")
    accept(8, ok, "; ".join(parts))


def test_c09_spectral(accept):
    fine = FineGrid(100)
    coarse = CoarseGrid(fine, 10)
    kap, cm = gen_case1(fine, 0.1, kappa_low=1.0, kappa_high=1e6)
    match = float(np.mean(identify_global(kap, coarse).labels == cm.labels))
    lam = []
    for c in (1e2, 1e4, 1e6):
        k, _ = gen_case1(fine, 0.1, kappa_low=1.0, kappa_high=c)
        lam.append(spectral_decompose(k.values[:10, :10], fine.h, m=4).eigenvalues[1])
    slope = float(np.polyfit(np.log10([1e2, 1e4, 1e6]), np.log10(lam), 1)[0])
    ok = match >= 0.99 and abs(slope + 1) <= 0.1
    accept(9, ok, f"label agreement {match:.2%} at contrast 1e6; smallest nonzero eigenvalue "
                  f"{lam[0]:.3g}, {lam[1]:.3g}, {lam[2]:.3g}, log-log slope {slope:.3f}")


def test_c10_reaction_dominance(accept):
    eps = 1 / 20
    lo, hi = case_kappas(eps)
    weak = _udiff(run_case(RunPoint("case1", 400, eps, 10,
                                    params=dict(kappa_low=hi / 10, kappa_high=hi))))
    strong = _udiff(run_case(RunPoint("case1", 400, eps, 10)))
    accept(10, weak < 0.05 and strong > 0.2,
           f"H=1/10, eps=1/20: max|U1-U2|/max|U1| = {weak:.4f} at contrast 10, "
           f"{strong:.4f} at contrast {hi / lo:.0f}")


# interface oscillation of the two modes on the reference run, kept as regression values
OSCILLATION_REGRESSION = dict(gradient=12.8546, average=11.1306)


def test_c11_gradient_mode(accept):
    res = {m: run_case(RunPoint("case1", 400, 1 / 40, 10, mode=m)) for m in ("average", "gradient")}
    osc = {m: float(r.eff.diagnostics["oscillation"].max()) for m, r in res.items()}
    stable = all(abs(osc[m] / v - 1) < 0.01 for m, v in OSCILLATION_REGRESSION.items())
    ok = res["gradient"].status == "ok" and osc["gradient"] > osc["average"] and stable
    e2g, e2a = res["gradient"].e2, res["average"].e2
    accept(11, ok, f"e2 gradient mode {e2g[0]:.2f}/{e2g[1]:.2f} %, primary {e2a[0]:.2f}/"
                   f"{e2a[1]:.2f} %; interface oscillation {osc['gradient']:.4f} vs "
                   f"{osc['average']:.4f}")


def test_c12_determinism(accept, table_sweep, table_dir):
    run_sweep(table_points(), table_dir / "run2.csv", None, ["layered error table"])
    a = (table_dir / "run1.csv").read_bytes()
    b = (table_dir / "run2.csv").read_bytes()
    accept(12, a == b, f"two sweeps of {len(TABLE_ROWS)} rows: CSVs "
                       f"{'identical' if a == b else 'differ'} ({len(a)} bytes)")
