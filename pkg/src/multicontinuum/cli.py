"""Command-line front end.

Configuration comes from defaults, then an optional YAML file, then
command-line overrides (``--set key=value`` or the dedicated flags).
Exit codes: 0 success, 1 invalid configuration, 2 solver failure,
3 result outside the expected range (``--check``).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .cells import CellProblemError, boundary_decay_study
from .coarse import assemble_coarse, solve_coarse
from .effective import upscale
from .fem import solve_fine_reference
from .grid import CoarseGrid, FineGrid, GridError, default_layers
from .io import heatmap, provenance, read_cell_array, write_cell_array, write_nodal_csv
from .media import (ConductivityField, ContinuumMap, MediumError, gen_source, generate)
from .spectral import NoMulticontinuumStructure, identify_continua, identify_global, spectral_decompose
from .sparsela import SolverError
from .verify import RunPoint, average_reference, e2_error, run_sweep

log = logging.getLogger("multicontinuum")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
CASES = ("case1", "case1_fixed", "case2", "case3", "file")

# expected e2 (percent) for selected layered-medium rows, keyed by (case, M, 1/eps, l)
REFERENCE_E2 = {
    ("case1", 10, 40, 5): (1.50, 1.37),
    ("case1", 20, 40, 6): (0.48, 0.50),
    ("case1", 40, 40, 8): (0.61, 0.60),
    ("case1", 10, 10, 5): (4.60, 8.35),
    ("case1", 10, 20, 5): (1.60, 1.31),
    ("case1", 20, 20, 6): (2.02, 2.40),
    ("case1", 80, 80, 9): (0.14, 0.14),
    ("case1_fixed", 10, 10, 5): (3.83, 6.24),
    ("case1_fixed", 20, 20, 6): (2.20, 2.50),
    ("case1_fixed", 40, 40, 8): (0.88, 0.90),
}


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


@dataclass
class RunConfig:
    case: str = "case1"
    nx: int = 400
    M: int = 10
    eps: float | None = None
    l: int | str = "auto"
    medium: dict = field(default_factory=dict)   # generator keywords (fractions, ...)
    kappa_low: float | None = None
    kappa_high: float | None = None
    kappa_file: str | None = None
    labels_file: str | None = None
    continua: str = "generator"                 # or "spectral"
    cross_terms: bool = True
    mode: str = "average"                       # or "gradient"
    boundary: str = "reflect"
    dump_cells: bool = False
    outdir: str = "out"
    tol: float = 1e-10
    eig_count: int = 10
    gap_ratio: float = 100.0
    check_factor: float = 2.0
    sweep: list = field(default_factory=list)   # list of {M, eps, nx, l} overrides
    l_list: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    cell: int | None = None                     # target coarse cell for decay/spectra

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str, lines=None):
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        return cls.from_dict(data, lines if lines is not None else _key_lines(text))

    @classmethod
    def from_dict(cls, data: dict, lines=None, base=None):
        lines = lines or {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        cfg = dataclasses.replace(base) if base is not None else cls()
        for key, value in data.items():
            if key not in names:
                raise ConfigError(f"unknown configuration key {key!r}", lines.get(key))
            try:
                setattr(cfg, key, _coerce(key, value, names[key]))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", lines.get(key)) from None
        cfg._lines = lines
        return cfg

    # -- validation ------------------------------------------------------
    def validate(self):
        ln = getattr(self, "_lines", {})
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {CASES}, got {self.case!r}", ln.get("case"))
        if self.nx < 2:
            raise ConfigError(f"nx must be >= 2, got {self.nx}", ln.get("nx"))
        if self.M < 1 or self.nx % self.M:
            raise ConfigError(f"nx={self.nx} is not divisible by M={self.M}", ln.get("M"))
        if self.case != "file":
            if self.eps is None:
                raise ConfigError(f"eps is required for case {self.case}", ln.get("case"))
            p = self.eps * self.nx
            inv = 1.0 / self.eps if self.eps > 0 else 0.0
            if abs(inv - round(inv)) > 1e-9:
                raise ConfigError(f"1/eps must be an integer, got eps={self.eps}", ln.get("eps"))
            if not 0 < self.eps <= 1 or abs(p - round(p)) > 1e-9 or round(p) < 2:
                raise ConfigError(f"eps={self.eps} is not resolved by nx={self.nx}", ln.get("eps"))
        elif not self.kappa_file:
            raise ConfigError("case 'file' needs kappa_file", ln.get("case"))
        if self.l != "auto" and (not isinstance(self.l, int) or self.l < 0):
            raise ConfigError(f"l must be a nonnegative integer or 'auto', got {self.l!r}", ln.get("l"))
        if self.l == "auto" and self.M < 2:
            raise ConfigError("l='auto' needs M >= 2", ln.get("l"))
        if self.continua not in ("generator", "spectral"):
            raise ConfigError(f"continua must be 'generator' or 'spectral'", ln.get("continua"))
        if self.mode not in ("average", "gradient"):
            raise ConfigError(f"mode must be 'average' or 'gradient'", ln.get("mode"))
        if self.boundary not in ("clip", "reflect"):
            raise ConfigError(f"boundary must be 'clip' or 'reflect'", ln.get("boundary"))
        if self.tol <= 0:
            raise ConfigError("tol must be positive", ln.get("tol"))
        if any(v < 0 for v in self.l_list) or list(self.l_list) != sorted(self.l_list):
            raise ConfigError("l_list must be ascending nonnegative integers", ln.get("l_list"))
        return self

    @property
    def layers(self) -> int:
        return default_layers(1.0 / self.M) if self.l == "auto" else int(self.l)

    def medium_params(self):
        p = dict(self.medium)
        if self.kappa_low is not None:
            p["kappa_low"] = self.kappa_low
        if self.kappa_high is not None:
            p["kappa_high"] = self.kappa_high
        return p


def _coerce(key, value, f):
    if value is None:
        return None
    if key == "l":
        if value == "auto":
            return value
        if isinstance(value, bool) or int(value) != value:
            raise ValueError("expected an integer or 'auto'")
        return int(value)
    if key in ("nx", "M", "eig_count", "cell"):
        if isinstance(value, bool) or int(value) != value:
            raise ValueError("expected an integer")
        return int(value)
    if key in ("eps", "kappa_low", "kappa_high", "tol", "gap_ratio", "check_factor"):
        return _number(value)
    if key in ("cross_terms", "dump_cells"):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        return bool(value)
    if key in ("medium",):
        if not isinstance(value, dict):
            raise ValueError("expected a mapping")
        return dict(value)
    if key in ("sweep", "l_list"):
        if not isinstance(value, list):
            raise ValueError("expected a list")
        return [int(v) for v in value] if key == "l_list" else [dict(v) for v in value]
    return str(value)


def _number(v):
    """Float from a number or a fraction string such as '1/40'."""
    if isinstance(v, str) and "/" in v:
        a, b = v.split("/", 1)
        return float(a) / float(b)
    return float(v)


def _key_lines(text):
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def load_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        try:
            cfg = RunConfig.from_yaml(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None) from None
    if overrides:
        lines = getattr(cfg, "_lines", {})
        cfg = RunConfig.from_dict(overrides, base=cfg)
        cfg._lines = lines
    return cfg.validate()


# ---------------------------------------------------------------------------
# pipeline pieces


class Workspace:
    """Lazily built medium, reference and coarse artifacts for one config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.header = provenance(cfg.to_dict())
        os.makedirs(cfg.outdir, exist_ok=True)
        with open(os.path.join(cfg.outdir, "config.echo"), "w") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            fh.write(cfg.to_yaml())
        self._medium = None
        self._u = None

    def path(self, name):
        return os.path.join(self.cfg.outdir, name)

    @property
    def fine(self):
        return self.medium[0]

    @property
    def coarse(self):
        return CoarseGrid(self.fine, self.cfg.M)

    @property
    def medium(self):
        if self._medium is None:
            self._medium = self._build_medium()
        return self._medium

    def _build_medium(self):
        cfg = self.cfg
        if cfg.case == "file":
            kap = read_cell_array(cfg.kappa_file)
            if kap.shape != (cfg.nx, cfg.nx):
                raise ConfigError(f"{cfg.kappa_file} holds a {kap.shape} array, expected nx={cfg.nx}")
            kappa = ConductivityField(kap, cfg.eps, "file")
            fine = FineGrid(cfg.nx)
            if cfg.labels_file:
                cmap = ContinuumMap(read_cell_array(cfg.labels_file, int))
            else:
                thresh = np.sqrt(kap.min() * kap.max())
                cmap = ContinuumMap(np.where(kap >= thresh, 2, 1))
        else:
            fine = FineGrid(cfg.nx)
            kappa, cmap = generate(cfg.case, fine, cfg.eps, **cfg.medium_params())
        if cfg.continua == "spectral":
            cmap = identify_global(kappa, CoarseGrid(fine, cfg.M), cfg.eig_count, cfg.gap_ratio)
        return fine, kappa, cmap, gen_source(fine, kappa, cmap)

    @property
    def u(self):
        if self._u is None:
            fine, kappa, _, f = self.medium
            self._u = solve_fine_reference(fine, kappa, f, self.cfg.tol)
        return self._u

    def effective(self):
        cfg = self.cfg
        _, kappa, cmap, f = self.medium
        return upscale(self.coarse, kappa, cmap, f, l=cfg.layers, mode=cfg.mode,
                       tol=cfg.tol, boundary=cfg.boundary, eps=cfg.eps)


def cmd_solve_fine(ws: Workspace):
    fine, kappa, cmap, _ = ws.medium
    u = ws.u.reshape(fine.nx + 1, fine.nx + 1)
    write_nodal_csv(ws.path("fine.csv"), {"u": u}, fine.h, ws.header)
    write_cell_array(ws.path("kappa.csv"), kappa.values, ws.header)
    write_cell_array(ws.path("labels.csv"), cmap.labels, ws.header)
    heatmap(ws.path("fine.pgm"), u)
    heatmap(ws.path("kappa.pgm"), kappa.values, log_scale=True)
    return dict(nodes=int(u.size), max_u=float(u.max()))


def cmd_upscale(ws: Workspace):
    eff = ws.effective()
    eff.to_csv(ws.path("eff.csv"), ws.header)
    diag = {k: float(np.max(v)) for k, v in eff.diagnostics.items()}
    if ws.cfg.dump_cells:
        _dump_target_cell(ws)
    return dict(cells=int(eff.alpha.shape[0]), diagnostics=diag)


def _dump_target_cell(ws: Workspace):
    from .cells import solve_region
    from .grid import oversample
    cfg = ws.cfg
    _, kappa, cmap, _ = ws.medium
    w = cfg.cell if cfg.cell is not None else (cfg.M // 2) * cfg.M + cfg.M // 2
    cs = solve_region(oversample(ws.coarse, w, cfg.layers, cfg.boundary), kappa, cmap, cfg.tol)
    shape = cs.space.shape_nodes
    fields = {f"phi_{i + 1}": cs.phi[i].reshape(shape) for i in range(cs.N)}
    fields.update({f"phi_{i + 1}^{m + 1}": cs.phi_grad[i, m].reshape(shape)
                   for i in range(cs.N) for m in range(2)})
    write_nodal_csv(ws.path(f"cells_{w}.csv"), fields, cs.space.h, ws.header)
    for name, a in fields.items():
        heatmap(ws.path(f"cells_{w}_{name.replace('^', '_')}.pgm"), a)


def _solve_coarse(ws: Workspace):
    eff = ws.effective()
    eff.to_csv(ws.path("eff.csv"), ws.header)
    sol = solve_coarse(assemble_coarse(ws.coarse, eff, ws.cfg.cross_terms), ws.cfg.tol)
    H = 1.0 / ws.cfg.M
    means = sol.cell_means()
    for i in range(sol.N):
        write_nodal_csv(ws.path(f"coarse_U{i + 1}.csv"), {f"U{i + 1}": sol.U[i]}, H, ws.header)
        write_cell_array(ws.path(f"coarse_U{i + 1}_cells.csv"), means[i], ws.header)
        heatmap(ws.path(f"coarse_U{i + 1}.pgm"), sol.U[i])
    return eff, sol


def cmd_solve_coarse(ws: Workspace):
    _, sol = _solve_coarse(ws)
    return dict(max_U=[float(abs(u).max()) for u in sol.U], residual=sol.residual)


def cmd_compare(ws: Workspace):
    _, sol = _solve_coarse(ws)
    _, _, cmap, _ = ws.medium
    ref = average_reference(ws.u, ws.coarse, cmap)
    rep = e2_error(sol, ref)
    for i in range(ref.shape[0]):
        heatmap(ws.path(f"reference_{i + 1}.pgm"), ref[i])
    out = dict(e2_sqrt_percent=rep.e2.tolist(), e2_ratio_percent=rep.e2_ratio.tolist(),
               excluded_cells=rep.excluded.tolist(), l=ws.cfg.layers, H=1.0 / ws.cfg.M,
               eps=ws.cfg.eps, case=ws.cfg.case, provenance=ws.header)
    with open(ws.path("e2.json"), "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=True)
    return out


def cmd_spectra(ws: Workspace):
    cfg = ws.cfg
    fine, kappa, _, _ = ws.medium
    coarse = ws.coarse
    w = cfg.cell if cfg.cell is not None else (cfg.M // 2) * cfg.M + cfg.M // 2
    ci, cj = coarse.cell_ij(w)
    b = coarse.block
    block = kappa.values[cj * b:(cj + 1) * b, ci * b:(ci + 1) * b]
    rep = spectral_decompose(block, fine.h, cfg.eig_count, cfg.gap_ratio)
    with open(ws.path("eigenvalues.csv"), "w") as fh:
        for line in ws.header:
            fh.write(f"# {line}\n")
        fh.write("k,lambda\n")
        for k, lam in enumerate(rep.eigenvalues):
            fh.write(f"{k + 1},{lam!r}\n")
    for k, v in enumerate(rep.eigenvectors):
        heatmap(ws.path(f"eigvec_{k + 1}.pgm"), v.reshape(rep.space.shape_nodes))
    out = dict(eigenvalues=rep.eigenvalues.tolist(), gap_index=rep.gap_index,
               gap_ratio=rep.gap_ratio)
    try:
        cmap = identify_continua(rep)
        write_cell_array(ws.path("spectral_labels.csv"), cmap.labels, ws.header)
        heatmap(ws.path("spectral_labels.pgm"), cmap.labels.astype(float))
        out["continua"] = cmap.N
    except NoMulticontinuumStructure as exc:
        out["continua"] = 1
        out["note"] = str(exc)
    return out


def _sweep_points(cfg: RunConfig):
    rows = cfg.sweep or [{}]
    pts = []
    for r in rows:
        c = RunConfig.from_dict(r, base=cfg).validate()
        pts.append(RunPoint(c.case, c.nx, c.eps, c.M, c.l, c.medium_params(), c.cross_terms,
                            c.mode, c.boundary, c.tol))
    return pts


def cmd_sweep(ws: Workspace):
    pts = _sweep_points(ws.cfg)
    res = run_sweep(pts, ws.path("sweep.csv"), ws.path("sweep.json"), ws.header)
    failed = [r.point for r in res if r.status != "ok"]
    out = dict(rows=[r.row() for r in res])
    if failed:
        out["failed"] = len(failed)
    return out


def cmd_decay(ws: Workspace):
    cfg = ws.cfg
    _, kappa, cmap, _ = ws.medium
    w = cfg.cell if cfg.cell is not None else (cfg.M // 2) * cfg.M + cfg.M // 2
    rows = boundary_decay_study(ws.coarse, kappa, cmap, w, cfg.l_list, cfg.tol, cfg.boundary)
    with open(ws.path("decay.csv"), "w") as fh:
        for line in ws.header:
            fh.write(f"# {line}\n")
        fh.write("l,delta\n")
        for l, d in rows:
            fh.write(f"{l},{d!r}\n")
    return dict(decay=rows)


COMMANDS = {
    "solve-fine": cmd_solve_fine,
    "upscale": cmd_upscale,
    "solve-coarse": cmd_solve_coarse,
    "compare": cmd_compare,
    "spectra": cmd_spectra,
    "sweep": cmd_sweep,
    "decay": cmd_decay,
}


def _check(cmd, cfg: RunConfig, out) -> list[str]:
    """Messages for results outside the expected range (empty when fine)."""
    problems = []
    if cmd == "compare":
        key = (cfg.case, cfg.M, round(1.0 / cfg.eps), cfg.layers)
        want = REFERENCE_E2.get(key)
        if want is None:
            return [f"no stored expectation for {key}"]
        for i, (got, exp) in enumerate(zip(out["e2_sqrt_percent"], want)):
            if not exp / cfg.check_factor <= got <= exp * cfg.check_factor:
                problems.append(f"e2_{i + 1} = {got:.3f}% outside [{exp / cfg.check_factor:.3f}, "
                                f"{exp * cfg.check_factor:.3f}]")
    elif cmd == "sweep":
        for row in out["rows"]:
            if row["status"] != "ok":
                problems.append(f"run {row} failed")
    elif cmd == "decay":
        d = [v for _, v in out["decay"]]
        if any(b > a for a, b in zip(d[1:], d[2:])):
            problems.append(f"deviation not nonincreasing after the first layer: {d}")
    return problems


def build_parser():
    p = argparse.ArgumentParser(prog="multicontinuum", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("-c", "--config", help="YAML configuration file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        s.add_argument("--case")
        s.add_argument("--nx", type=int)
        s.add_argument("--M", type=int)
        s.add_argument("--eps")
        s.add_argument("--l")
        s.add_argument("--outdir")
        s.add_argument("--mode", choices=["average", "gradient"])
        s.add_argument("--continua", choices=["generator", "spectral"])
        s.add_argument("--no-cross-terms", dest="cross_terms", action="store_false", default=None)
        s.add_argument("--dump-cells", action="store_true", default=None)
        s.add_argument("--check", action="store_true", help="exit 3 if results miss expectations")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args):
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = yaml.safe_load(v)
    for key in ("case", "nx", "M", "eps", "l", "outdir", "mode", "continua",
                "cross_terms", "dump_cells"):
        v = getattr(args, key)
        if v is not None:
            if key == "l" and v != "auto":
                v = int(v)
            ov[key] = v
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        ws = Workspace(cfg)
        out = COMMANDS[args.command](ws)
    except (ConfigError, GridError, MediumError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, CellProblemError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(out, indent=1, sort_keys=True, default=str))
    if args.command == "sweep" and out.get("failed"):
        print(f"{out['failed']} sweep point(s) failed", file=sys.stderr)
        return EXIT_SOLVER
    if args.check:
        problems = _check(args.command, cfg, out)
        for msg in problems:
            print(f"check: {msg}", file=sys.stderr)
        if problems:
            return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
