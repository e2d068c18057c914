"""Command-line entry point: ``polyinj <subcommand> [flags]``.

Every run writes its CSV/JSON artifacts plus ``manifest.json`` (resolved
config, versions, backend, timings) to the output directory.  Exit codes:
0 success, 2 invalid input, 1 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
import traceback
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__, config as cfgmod
from .kernels import BACKEND

SUBCOMMANDS = ("algebra-selftest", "counterexample", "degree", "identities", "energy-probe", "minimize")

# flag -> config key, per subcommand
FLAG_KEYS = {
    "counterexample": {"alpha": "map.alpha", "samples": "counterexample.samples",
                       "resolution": "counterexample.resolution"},
    "degree": {"map": "map.name", "alpha": "map.alpha", "samples": "degree.samples", "resolution": "degree.resolution"},
    "identities": {"map": "map.name", "phi_family": "identities.phi_family", "g_family": "identities.g_family",
                   "h_list": "identities.h_list"},
    "energy-probe": {"trials": "energy.trials"},
    "minimize": {"klass": "minimize.class", "mesh_h": "minimize.mesh_h", "max_iter": "minimize.max_iter",
                 "tol": "minimize.tol"},
}
COMMON_KEYS = {"out": "run.out", "seed": "run.seed", "threads": "run.threads"}

DEFAULT_DOMAIN = {
    "counterexample": ("rectangle", [-1.0, 1.0, 0.0, 1.0]),
    "degree": ("rectangle", [-1.0, 1.0, 0.0, 1.0]),
    "identities": ("rectangle", [-1.0, 1.0, 0.0, 1.0]),
    "energy-probe": ("unit-square", []),
    "minimize": ("unit-square", []),
    "algebra-selftest": ("unit-square", []),
}
DEFAULT_MAP = {"counterexample": "u_composed", "degree": "u_composed", "identities": "shear"}


# -- output helpers ---------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Output directory, timings and manifest bookkeeping for one invocation."""

    def __init__(self, sub: str, cfg: cfgmod.RunConfig):
        self.sub = sub
        self.cfg = cfg
        self.out = cfg.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self.summary: dict = {}
        self._t = time.perf_counter()

    def lap(self, label: str) -> None:
        now = time.perf_counter()
        self.timings[label] = now - self._t
        self._t = now

    def write_csv(self, name: str, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
        p = self.out / name
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(header))
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(name)
        return p

    def write_json(self, name: str, data: dict) -> Path:
        p = self.out / name
        p.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return p

    def manifest(self, exit_code: int) -> None:
        import scipy
        data = {
            "subcommand": self.sub,
            "config": self.cfg.echo(),
            "versions": {"polyinj": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "backend": BACKEND,
            "threads_used": self.cfg.threads,
            "timings_s": self.timings,
            "outputs": self.files,
            "summary": self.summary,
            "exit_code": exit_code,
        }
        (self.out / "manifest.json").write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        f = float(x)
        return f if math.isfinite(f) else repr(f)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _domain(sub: str, cfg: cfgmod.RunConfig):
    from .geometry import make_domain
    shape, params = cfg["domain.shape"], cfg["domain.params"]
    if shape == "auto":
        shape, params = DEFAULT_DOMAIN[sub]
    return make_domain(shape, params)


def _map(sub: str, cfg: cfgmod.RunConfig):
    from .deformations import get_map
    name = cfg["map.name"]
    if name == "auto":
        name = DEFAULT_MAP[sub]
    kw = {}
    if name == "u_composed":
        kw["alpha"] = cfg["map.alpha"]
    elif name == "shear":
        kw["a"] = cfg["map.shear"]
    return get_map(name, **kw)


def _energies(cfg: cfgmod.RunConfig):
    from .energy import BulkDensity, make_surface
    W = BulkDensity(p=cfg["energy.p"], c1=cfg["energy.c1"], h=cfg["energy.h"], a=cfg["energy.a"], b=cfg["energy.b"])
    U = make_surface(cfg["energy.U"], eps0=cfg["energy.eps0"], pi0=cfg["energy.pi0"], c=cfg["energy.c"],
                     p=cfg["energy.p"])
    return W, U


def _rng(cfg, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg["run.seed"], stream])


# -- subcommands --------------------------------------------------------------------------

def cmd_algebra_selftest(run: Run) -> int:
    from .selftest import format_table, run_selftest
    results = run_selftest(seed=run.cfg["run.seed"])
    run.lap("checks")
    print(format_table(results))
    run.write_csv("selftest.csv", ("check", "d", "cases", "max_err", "tol", "passed"),
                  ((r.name, r.d, r.cases, r.max_err, r.tol, r.passed) for r in results))
    fails = sum(not r.passed for r in results)
    run.summary = {"checks": len(results), "failures": fails}
    return 0 if fails == 0 else 1


def _histogram_rows(rep):
    g = rep.degree_field.grid
    c = g.centers()
    h = rep.histogram
    deg = rep.degree_field.degree.ravel()
    on = rep.degree_field.on_curve.ravel()
    nu_, hits, se = h.n_u.ravel(), h.hits.ravel(), h.n_u_se.ravel()
    for i in range(len(c)):
        if hits[i] == 0 and deg[i] == 0:
            continue
        yield (c[i, 0], c[i, 1], nu_[i], int(hits[i]), se[i], int(deg[i]), bool(on[i]))


def cmd_counterexample(run: Run) -> int:
    from .degree import injectivity_report, trace_of
    from .geometry import sample_uniform
    cfg = run.cfg
    dom = _domain("counterexample", cfg)
    u = _map("counterexample", cfg)
    trace = trace_of(u, dom, cfg["counterexample.trace_samples"])
    run.write_csv("boundary.csv", ("s", "x1", "x2", "u1", "u2"),
                  ((s, *dom.point_at(np.array([s]))[0], *p) for s, p in zip(trace.params, trace.points[:-1])))
    rep = injectivity_report(u, dom, samples=cfg["counterexample.samples"],
                             resolution=cfg["counterexample.resolution"], rng=_rng(cfg, 1),
                             threads=cfg.threads, trace=trace)
    run.lap("report")
    x = sample_uniform(dom, cfg["counterexample.export"], _rng(cfg, 2))
    y, flags = u.eval_flagged(x)
    ok = ~flags
    dets = np.full(len(x), np.nan)
    dets[ok] = np.linalg.det(u._grad(x[ok]))
    run.write_csv("samples.csv", ("x1", "x2", "u1", "u2", "det"),
                  ((x[i, 0], x[i, 1], y[i, 0], y[i, 1], dets[i]) for i in np.flatnonzero(ok)))
    run.write_csv("histogram.csv", ("x", "y", "n_u", "hits", "se", "deg", "on_curve"), _histogram_rows(rep))
    d = rep.as_dict()
    d.update({"alpha": cfg["map.alpha"], "samples": cfg["counterexample.samples"],
              "nonzero_degrees_single_value": len(d["degree_values"]) == 1,
              "all_sampled_dets_positive": bool(rep.min_det > 0)})
    run.write_json("report.json", d)
    run.summary = {k: d[k] for k in ("gamma", "overlap_area", "injective_ae", "min_det", "max_Nu")}
    print(json.dumps(_jsonable(run.summary), sort_keys=True))
    return 0


def cmd_degree(run: Run) -> int:
    from .degree import injectivity_report
    cfg = run.cfg
    dom = _domain("degree", cfg)
    u = _map("degree", cfg)
    rep = injectivity_report(u, dom, samples=cfg["degree.samples"], resolution=cfg["degree.resolution"],
                             rng=_rng(cfg, 1), threads=cfg.threads, min_hits=cfg["degree.min_hits"])
    run.lap("report")
    c = rep.degree_field.grid.centers()
    deg = rep.degree_field.degree.ravel()
    run.write_csv("degree_field.csv", ("x", "y", "deg"), ((c[i, 0], c[i, 1], int(deg[i])) for i in range(len(c))))
    h = rep.histogram
    run.write_csv("histogram.csv", ("x", "y", "n_u", "hits", "se"),
                  ((c[i, 0], c[i, 1], h.n_u.ravel()[i], int(h.hits.ravel()[i]), h.n_u_se.ravel()[i])
                   for i in range(len(c))))
    d = rep.as_dict()
    d["map"] = u.name
    run.write_json("report.json", d)
    run.summary = {k: d[k] for k in ("gamma", "overlap_area", "injective_ae", "deg_Nu_agreement", "compared_cells")}
    print(json.dumps(_jsonable(run.summary), sort_keys=True))
    return 0


def cmd_identities(run: Run) -> int:
    from .identities import make_pair, refinement_study
    cfg = run.cfg
    dom = _domain("identities", cfg)
    u = _map("identities", cfg)
    pairs = [make_pair(p, g) for p in cfg["identities.phi_family"] for g in cfg["identities.g_family"]]
    study = refinement_study(u, dom, pairs, cfg["identities.h_list"], threads=cfg.threads)
    run.lap("study")
    rows = list(study.csv_rows())
    run.write_csv("residuals.csv", rows[0], rows[1:])
    orders = {}
    for name in study.pair_names():
        orders[name] = {"R_int_order": study.fitted_order(name, "r_int"),
                        "R_bdy_order": study.fitted_order(name, "r_bdy"),
                        "R_int_machine_zero": study.machine_zero(name, "r_int"),
                        "R_bdy_machine_zero": study.machine_zero(name, "r_bdy")}
    run.write_json("summary.json", {"map": u.name, "orders": orders})
    run.summary = {"map": u.name, "pairs": len(pairs), "levels": len(cfg["identities.h_list"])}
    width = max(len(n) for n in orders) + 2
    print(f"{'pair':<{width}} {'R_int order':>12} {'R_bdy order':>12}")
    for name, o in orders.items():
        fo = ["zero" if o[f"{w}_machine_zero"] else ("n/a" if o[f"{w}_order"] is None else f"{o[f'{w}_order']:.2f}")
              for w in ("R_int", "R_bdy")]
        print(f"{name:<{width}} {fo[0]:>12} {fo[1]:>12}")
    return 0


def _probe_catalog(cfg):
    from .energy import (BulkDensity, CoerciveDensity, MembraneDensity, PressureDensity, SurfaceDensity)
    W, _ = _energies(cfg)
    return {
        "W_standard": W,
        "zero": SurfaceDensity(),
        "pressure": PressureDensity(pi0=cfg["energy.pi0"]),
        "membrane": MembraneDensity(eps0=cfg["energy.eps0"]),
        "coercive_pressure": CoerciveDensity(base=PressureDensity(pi0=cfg["energy.pi0"]), c=max(cfg["energy.c"], 1.0)),
        "coercive_membrane": CoerciveDensity(base=MembraneDensity(eps0=cfg["energy.eps0"]), c=max(cfg["energy.c"], 1.0)),
        "bulk_t2_log": BulkDensity(h="t2-log"),
    }


def cmd_energy_probe(run: Run) -> int:
    from .energy import BulkDensity, coercivity_check, convexity_probe, jensen_check
    from .multilinear import nu
    cfg = run.cfg
    trials = cfg["energy.trials"]
    catalog = _probe_catalog(cfg)
    conv_rows = []
    for d in (2, 3):
        y0 = np.full(d, 0.5)
        for name in ("pressure", "membrane", "coercive_membrane"):
            dens = catalog[name]
            v = convexity_probe(lambda m, dens=dens, d=d: dens.phi(None, y0, m, 1.0, d), nu(d, d - 1), trials,
                                _rng(cfg, 10 + d))
            conv_rows.append((name, d, v, v <= 1e-12))
        v = convexity_probe(lambda m: -np.sum(m * m, axis=-1), nu(d, d - 1), trials, _rng(cfg, 20 + d))
        conv_rows.append(("planted_nonconvex", d, v, v <= 1e-12))
    run.lap("convexity")
    coer_rows = []
    for name, dens in catalog.items():
        margin = coercivity_check(dens, 2, trials, _rng(cfg, 30))
        a2 = getattr(dens, "a1", None) if isinstance(dens, BulkDensity) else dens.a2
        coer_rows.append((name, a2, getattr(dens, "c2", getattr(dens, "c1", 0.0)), margin, margin >= 0))
    run.lap("coercivity")
    xi = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    jen_rows = []
    for name in ("pressure", "membrane", "coercive_membrane"):
        affine, avgs = jensen_check(catalog[name], xi, 20, _rng(cfg, 40))
        jen_rows.append((name, affine, float(avgs.min()), bool(avgs.min() >= affine - 1e-12)))
    run.lap("jensen")
    run.write_csv("convexity.csv", ("density", "d", "max_violation", "convex"), conv_rows)
    run.write_csv("coercivity.csv", ("density", "a", "c", "min_margin", "holds"), coer_rows)
    run.write_csv("jensen.csv", ("density", "affine_energy", "min_average", "holds"), jen_rows)
    print(f"{'density':<20} {'d':>2} {'max violation':>14}")
    for r in conv_rows:
        print(f"{r[0]:<20} {r[1]:>2} {r[2]:>14.3e}")
    print(f"\n{'density':<20} {'min margin':>14}  bound")
    for r in coer_rows:
        print(f"{r[0]:<20} {r[3]:>14.3e}  {'holds' if r[4] else 'VIOLATED'}")
    run.summary = {"convexity": {f"{r[0]}/d{r[1]}": r[2] for r in conv_rows},
                   "coercivity_holds": all(r[4] for r in coer_rows)}
    return 0


def cmd_minimize(run: Run) -> int:
    from .degree import injectivity_report
    from .minimize import SolveOptions, minimize
    cfg = run.cfg
    dom = _domain("minimize", cfg)
    W, U = _energies(cfg)
    scale = cfg["minimize.u0_scale"]
    opts = SolveOptions(max_iter=cfg["minimize.max_iter"], tol=cfg["minimize.tol"], threads=cfg.threads)
    uh, trace = minimize(dom, cfg["minimize.mesh_h"], W, U, cfg["minimize.class"], opts,
                         u0=(lambda x: scale * np.asarray(x, dtype=float)), gamma=cfg["minimize.gamma"],
                         K=cfg.K() if cfg["minimize.class"] == "a3" else None)
    run.lap("solve")
    V = uh.mesh.vertices
    run.write_csv("solution.csv", ("vertex", "X_ref", "Y_ref", "x_def", "y_def"),
                  ((i, V[i, 0], V[i, 1], uh.u[i, 0], uh.u[i, 1]) for i in range(len(V))))
    rows = list(trace.csv_rows())
    run.write_csv("trace.csv", rows[0], rows[1:])
    last = trace.rows[-1]
    summary = {"final_energy": last.energy, "grad_norm": last.grad_norm, "min_det": last.min_det,
               "iterations": last.iter, "converged": trace.converged, "line_search_failed": trace.line_search_failed,
               "diverged": trace.diverged, "message": trace.message, "constraint_residual": last.residual,
               "volume": last.volume, "vertices": len(V), "triangles": len(uh.mesh.tris), "class": cfg["minimize.class"]}
    if cfg["minimize.check_samples"] > 0:
        rep = injectivity_report(uh, dom, samples=cfg["minimize.check_samples"], resolution=64,
                                 rng=_rng(cfg, 1), threads=cfg.threads)
        summary["injectivity"] = rep.as_dict()
        run.lap("injectivity")
    run.write_json("summary.json", summary)
    run.summary = {k: summary[k] for k in ("final_energy", "grad_norm", "min_det", "converged", "iterations")}
    print(json.dumps(_jsonable(run.summary), sort_keys=True))
    return 0


HANDLERS = {
    "algebra-selftest": cmd_algebra_selftest,
    "counterexample": cmd_counterexample,
    "degree": cmd_degree,
    "identities": cmd_identities,
    "energy-probe": cmd_energy_probe,
    "minimize": cmd_minimize,
}


# -- argument parsing -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyinj", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"polyinj {__version__} ({BACKEND})")
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file, or a manifest.json from an earlier run")
    common.add_argument("--out", help=f"output directory (default ${cfgmod.OUT_ENV} or ./polyinj_out)")
    common.add_argument("--seed", help="random seed")
    common.add_argument("--threads", help="worker threads (0 = all cores)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    sub.add_parser("algebra-selftest", parents=[common], help="randomized exterior-algebra checks")
    s = sub.add_parser("counterexample", parents=[common], help="cavitating composed map: degree and overlap")
    s.add_argument("--alpha", help="opening angle in radians, in (4 pi/5, pi)")
    s.add_argument("--samples")
    s.add_argument("--resolution")
    s = sub.add_parser("degree", parents=[common], help="degree field and preimage-count report")
    s.add_argument("--map")
    s.add_argument("--alpha")
    s.add_argument("--samples")
    s.add_argument("--resolution")
    s = sub.add_parser("identities", parents=[common], help="divergence-identity refinement study")
    s.add_argument("--map")
    s.add_argument("--phi-family", dest="phi_family")
    s.add_argument("--g-family", dest="g_family")
    s.add_argument("--h-list", dest="h_list", help="e.g. '1/32,1/64,1/128'")
    s = sub.add_parser("energy-probe", parents=[common], help="convexity, coercivity and Jensen probes")
    s.add_argument("--trials")
    s = sub.add_parser("minimize", parents=[common], help="P1 minimization of bulk plus surface energy")
    s.add_argument("--class", dest="klass", choices=("a1", "a2", "a3"))
    s.add_argument("--mesh-h", dest="mesh_h")
    s.add_argument("--max-iter", dest="max_iter")
    s.add_argument("--tol")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for flag, key in {**COMMON_KEYS, **FLAG_KEYS.get(args.command, {})}.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    for item in args.set:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
        run = Run(args.command, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        code = HANDLERS[args.command](run)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except Exception:  # noqa: BLE001 - report and map to the internal-error code
        traceback.print_exc()
        code = 1
    run.manifest(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
