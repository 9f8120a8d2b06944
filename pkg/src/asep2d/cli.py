"""Command-line orchestration: simulation campaigns, exact operator checks,
bound curves and fits, with reproducible CSV artifacts.

Runs are driven by a declarative INI config plus ``--set section.key=value``
overrides; every artifact directory gets a manifest recording the resolved
config, its hash, the seed and library versions.  Outputs are written
atomically and are byte-identical across reruns of the same config.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import tempfile
import time
import warnings

import numpy as np

from . import __version__
from .kernels import (EnsembleSpec, JumpKernel, TorusGeometry, comparison_kernel,
                      validate_kernel)
from .simulate import (run_coupled_ensemble, run_exclusion_ensemble,
                       run_walker_ensemble)
from .observables import (estimate_return_probability, estimate_variance,
                          fit_scaling, laplace_transform, make_time_grid,
                          variance_via_kernel)
from . import bounds as fb
from . import exact as ex


class ConfigInvalid(ValueError):
    pass


_DEFAULTS = {
    "run": {"rho": "0.5", "L1": "16", "L2": "16", "horizon": "5.0",
            "replicas": "1000", "seed": "1", "outdir": "runs/out"},
    "grid": {"prefix_step": "0.1", "prefix_end": "1.0", "ratio": "1.25"},
    "lambda": {"min": "1e-8", "max": "1e-2", "points": "13", "tail": "constant"},
    "exact": {"L1": "3", "L2": "2", "k": "3", "lambdas": "0.01,0.1,1.0"},
    "coupled": {"walker": "false"},
    "fit": {"model": "power", "xcol": "0", "ycol": "1", "secol": "",
            "window_lo": "", "window_hi": "", "mode": "scaling"},
    "bounds": {"order": "12"},
}


def load_config(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(_DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise ConfigInvalid(f"config file {path} does not exist")
        cfg.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigInvalid(f"override {item!r} is not section.key=value")
        key, value = item.split("=", 1)
        section, option = key.split(".", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section.strip(), option.strip(), value.strip())
    return cfg


def config_hash(cfg: configparser.ConfigParser) -> str:
    # the hash identifies the run semantically; where it is written is not
    # part of its identity
    tree = {s: {k: v for k, v in cfg[s].items() if (s, k) != ("run", "outdir")}
            for s in cfg.sections()}
    return hashlib.sha256(json.dumps(tree, sort_keys=True).encode()).hexdigest()[:16]


def read_kernel_file(path: str) -> JumpKernel:
    """Kernel spec file: whitespace-separated ``z1 z2 rate`` triples,
    ``#`` comments allowed.  Rates parse as exact fractions or decimals."""
    if not os.path.exists(path):
        raise ConfigInvalid(f"kernel file {path} does not exist")
    rates = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ConfigInvalid(f"bad kernel line {line!r}")
            rates[(int(parts[0]), int(parts[1]))] = parts[2]
    return validate_kernel(rates)


def kernel_hash(kernel: JumpKernel) -> str:
    blob = ";".join(f"{z[0]},{z[1]}:{r}" for z, r in sorted(kernel.rates.items()))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: list[str], rows, manifest_ref: str) -> None:
    lines = [f"# manifest={manifest_ref}", ",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else f"{v:.12g}" if isinstance(v, float)
                              else str(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def write_manifest(outdir: str, command: str, cfg, extra: dict,
                   t_start: float, warning_list: list[str]) -> str:
    ref = config_hash(cfg)
    manifest = {
        "command": command,
        "config_hash": ref,
        "config": {s: dict(cfg[s]) for s in cfg.sections()},
        "versions": {"asep2d": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "wall_time_s": round(time.time() - t_start, 3),
        "warnings": warning_list,
    }
    manifest.update(extra)
    atomic_write(os.path.join(outdir, "manifest.json"),
                 json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ref


def _series_rows(times, sigma2=None, sigma2_se=None, p=None, p_se=None, n=0):
    rows = []
    for i, t in enumerate(times):
        rows.append((
            float(t),
            float(sigma2[i]) if sigma2 is not None else float("nan"),
            float(sigma2_se[i]) if sigma2_se is not None else float("nan"),
            float(p[i]) if p is not None else float("nan"),
            float(p_se[i]) if p_se is not None else float("nan"),
            int(n),
        ))
    return rows


_SERIES_HEADER = ["t", "sigma2", "sigma2_se", "p_return", "p_return_se", "n_replicas"]


def _run_common(cfg):
    run = cfg["run"]
    rho = run.getfloat("rho")
    if not 0.0 <= rho <= 1.0:
        raise ConfigInvalid(f"rho = {rho} outside [0, 1]")
    replicas = run.getint("replicas")
    if replicas < 1:
        raise ConfigInvalid("replicas must be >= 1")
    if not run.get("kernel", None):
        raise ConfigInvalid("run.kernel (kernel spec file) is required")
    kernel = read_kernel_file(run["kernel"])
    geometry = TorusGeometry(run.getint("L1"), run.getint("L2"))
    horizon = run.getfloat("horizon")
    grid = make_time_grid(horizon, prefix_end=cfg["grid"].getfloat("prefix_end"),
                          prefix_step=cfg["grid"].getfloat("prefix_step"),
                          ratio=cfg["grid"].getfloat("ratio"))
    return kernel, geometry, rho, horizon, grid, replicas, run.getint("seed"), run["outdir"]


def cmd_simulate(cfg) -> int:
    t0 = time.time()
    kernel, geometry, rho, horizon, grid, replicas, seed, outdir = _run_common(cfg)
    caught: list[str] = []
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ens = run_exclusion_ensemble(EnsembleSpec(rho), kernel, geometry, horizon,
                                     grid, seed, replicas)
        caught = [str(x.message) for x in w]
    series = estimate_variance(ens, rho)
    ref = write_manifest(outdir, "simulate", cfg,
                         {"kernel_hash": kernel_hash(kernel)}, t0, caught)
    write_csv(os.path.join(outdir, "series.csv"), _SERIES_HEADER,
              _series_rows(series.times, series.mean, series.se, n=replicas), ref)
    print(f"simulate: wrote {outdir}/series.csv ({len(grid)} times, {replicas} replicas)")
    return 0


def cmd_coupled(cfg) -> int:
    t0 = time.time()
    kernel, geometry, rho, horizon, grid, replicas, seed, outdir = _run_common(cfg)
    use_walker = cfg["coupled"].getboolean("walker")
    caught: list[str] = []
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        if use_walker:
            if not kernel.is_symmetric() and rho != 0.0:
                raise ConfigInvalid(
                    "walker mode is exact only for symmetric kernels or rho = 0")
            ens = run_walker_ensemble(kernel, geometry, horizon, grid, seed, replicas)
        else:
            ens = run_coupled_ensemble(EnsembleSpec(rho), kernel, geometry, horizon,
                                       grid, seed, replicas)
        caught = [str(x.message) for x in w]
    series = estimate_return_probability(ens)
    ref = write_manifest(outdir, "coupled", cfg,
                         {"kernel_hash": kernel_hash(kernel), "walker": use_walker},
                         t0, caught)
    write_csv(os.path.join(outdir, "series.csv"), _SERIES_HEADER,
              _series_rows(series.times, p=series.mean, p_se=series.se, n=replicas), ref)
    disp = ens.displacement.astype(np.float64)
    mean = disp.mean(axis=0)
    se = disp.std(axis=0, ddof=1) / np.sqrt(replicas)
    rows = [(float(t), float(mean[i, 0]), float(se[i, 0]), float(mean[i, 1]),
             float(se[i, 1])) for i, t in enumerate(series.times)]
    write_csv(os.path.join(outdir, "displacement.csv"),
              ["t", "mean_R1", "se_R1", "mean_R2", "se_R2"], rows, ref)
    print(f"coupled: wrote {outdir}/series.csv and displacement.csv")
    return 0


def cmd_exact_check(cfg) -> int:
    t0 = time.time()
    sec = cfg["exact"]
    geometry = TorusGeometry(sec.getint("L1"), sec.getint("L2"))
    k = sec.getint("k")
    lams = [float(x) for x in sec["lambdas"].split(",")]
    outdir = cfg["run"]["outdir"]
    if cfg["run"].get("kernel", None):
        kernels = {"file": read_kernel_file(cfg["run"]["kernel"])}
    else:
        kernels = {
            "symmetric": validate_kernel({(1, 0): "1/4", (-1, 0): "1/4",
                                          (0, 1): "1/4", (0, -1): "1/4"}),
            "drift": validate_kernel({(1, 0): "3/4", (-1, 0): "1/4",
                                      (0, 1): "1/4", (0, -1): "1/4"}),
        }
    lines = []
    worst = 0.0
    for name, kern in kernels.items():
        space = ex.sector_space(geometry, kern, k)
        ops = ex.build_operators(space)
        inv = ex.operator_invariants(ops)
        f = ex.centered_occupation(space, cfg["run"].getfloat("rho"))
        lines.append(f"kernel {name}: {space.size} states")
        for key, val in inv.items():
            lines.append(f"  {key:18s} {val:.3e}")
            worst = max(worst, abs(val) if key != "S_top_eigenvalue" else max(val, 0.0))
        for lam in lams:
            rv = ex.resolvent_form(ops, f, lam)
            fact = ex.verify_variational_identity(ops, lam)
            gap = rv.sym_value - rv.value
            lines.append(f"  lam {lam:<6g} resolvent {rv.value:.8f} "
                         f"sym {rv.sym_value:.8f} gap {gap:+.3e} "
                         f"factorization {fact:.3e}")
            worst = max(worst, fact, max(-gap, 0.0))
    ok = worst < 1e-10
    lines.append(f"worst residual {worst:.3e} -> {'PASS' if ok else 'FAIL'}")
    ref = write_manifest(outdir, "exact-check", cfg, {}, t0, [])
    atomic_write(os.path.join(outdir, "residuals.txt"),
                 f"# manifest={ref}\n" + "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if ok else 1


def cmd_bounds(cfg) -> int:
    t0 = time.time()
    run = cfg["run"]
    outdir = run["outdir"]
    if run.get("kernel", None):
        base = read_kernel_file(run["kernel"])
        comp = comparison_kernel(base)
        params = fb.SymbolParams.from_kernel(comp)
    else:
        params = fb.SymbolParams(b1=0.25, b2=0.25, a1=0.25, a2=0.0)
    lsec = cfg["lambda"]
    lams = np.logspace(np.log10(lsec.getfloat("min")), np.log10(lsec.getfloat("max")),
                       lsec.getint("points"))
    curve = fb.bound_curve(lams, params, order=cfg["bounds"].getint("order"))
    ref = write_manifest(outdir, "bounds", cfg,
                         {"params": {"b1": params.b1, "b2": params.b2,
                                     "a1": params.a1, "a2": params.a2}}, t0, [])
    rows = []
    for i in range(len(curve.lam)):
        rows.append((float(curve.lam[i]), float(curve.general[i]),
                     float(curve.general_err[i]),
                     float(curve.axis[i]) if curve.axis is not None else float("nan"),
                     float(curve.axis_err[i]) if curve.axis_err is not None else float("nan")))
    write_csv(os.path.join(outdir, "bounds.csv"),
              ["lambda", "bound_general", "err_general", "bound_axis", "err_axis"],
              rows, ref)
    report = ["general bound fits:", fb.fit_divergence(curve.lam, curve.general).report()]
    if curve.axis is not None:
        report += ["axis bound fits:", fb.fit_divergence(curve.lam, curve.axis).report()]
    atomic_write(os.path.join(outdir, "fit_report.txt"),
                 f"# manifest={ref}\n" + "\n".join(report) + "\n")
    print("\n".join(report))
    return 0


def _read_csv(path: str):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    header = rows[0]
    data = np.array([[float(x) if x else np.nan for x in r] for r in rows[1:]])
    return header, data


def cmd_fit(cfg) -> int:
    t0 = time.time()
    sec = cfg["fit"]
    outdir = cfg["run"]["outdir"]
    if not sec.get("input", None):
        raise ConfigInvalid("fit.input (CSV path) is required")
    header, data = _read_csv(sec["input"])

    def col(spec_val):
        return int(spec_val) if spec_val.lstrip("-").isdigit() else header.index(spec_val)

    x = data[:, col(sec["xcol"])]
    y = data[:, col(sec["ycol"])]
    se = data[:, col(sec["secol"])] if sec["secol"] else None
    mode = sec["mode"]
    ref = write_manifest(outdir, "fit", cfg, {}, t0, [])
    if mode == "laplace":
        lsec = cfg["lambda"]
        lams = np.logspace(np.log10(lsec.getfloat("min")),
                           np.log10(lsec.getfloat("max")), lsec.getint("points"))
        table = laplace_transform(x, y, lams, tail=lsec["tail"])
        write_csv(os.path.join(outdir, "laplace.csv"),
                  ["lambda", "transform", "tail_bound"], table, ref)
        print(f"fit: wrote {outdir}/laplace.csv")
        return 0
    if mode == "divergence":
        fit = fb.fit_divergence(x, y)
        atomic_write(os.path.join(outdir, "fit_report.txt"),
                     f"# manifest={ref}\n" + fit.report() + "\n")
        print(fit.report())
        return 0
    lo = sec.getfloat("window_lo") if sec["window_lo"] else float(np.min(x))
    hi = sec.getfloat("window_hi") if sec["window_hi"] else float(np.max(x))
    fit = fit_scaling(x, y, sec["model"], (lo, hi), se=se)
    atomic_write(os.path.join(outdir, "fit_report.txt"),
                 f"# manifest={ref}\n" + fit.report() + "\n")
    print(fit.report())
    return 0


def cmd_kernel(args) -> int:
    kernel = read_kernel_file(args.path)
    print(kernel.table())
    print(f"total rate {kernel.total_rate:g}  hash {kernel_hash(kernel)}")
    if kernel.m1 != 0 or kernel.m2 != 0:
        comp = comparison_kernel(kernel)
        print("nearest-neighbor comparison kernel:")
        print(comp.table())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="asep2d",
        description="2D exclusion-process simulation and verification toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", default=None, help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                       help="override a config value")
        p.add_argument("--outdir", default=None)
        return p

    add_run("simulate", "equilibrium exclusion ensemble; variance curve CSV")
    add_run("coupled", "coupled ensemble; return probability and displacement CSVs")
    add_run("exact-check", "operator identities on a small state space")
    add_run("bounds", "variational lower-bound curve over a lambda grid")
    add_run("fit", "scaling/divergence fits or Laplace tables from a CSV")
    pk = sub.add_parser("kernel", help="validate a kernel file and echo its table")
    pk.add_argument("path")

    args = parser.parse_args(argv)
    threads = os.environ.get("ASEP2D_THREADS")
    if threads:
        import numba
        numba.set_num_threads(max(1, int(threads)))

    try:
        if args.command == "kernel":
            return cmd_kernel(args)
        cfg = load_config(args.config, args.set)
        if args.outdir:
            cfg.set("run", "outdir", args.outdir)
        os.makedirs(cfg["run"]["outdir"], exist_ok=True)
        return {"simulate": cmd_simulate, "coupled": cmd_coupled,
                "exact-check": cmd_exact_check, "bounds": cmd_bounds,
                "fit": cmd_fit}[args.command](cfg)
    except (ConfigInvalid, ValueError, KeyError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
