"""Command-line experiment runner.

Exit codes: 0 all selected checks passed, 1 a check failed, 2 the
configuration, the input or the test setup was invalid.  The output directory
may be overridden with ``NLMARKOV_OUT`` and the batch worker cap with
``NLMARKOV_WORKERS``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__, io
from .coefficients import registry_lookup
from .config import ExperimentConfig, dump_config, load_config, parse_config, to_float
from .errors import ConfigError, NlMarkovError
from .grid import Grid, GridDensity
from .initial import Dirac, FromDensity, Gaussian, Uniform
from .oracles import BarenblattExponents, barenblatt, barenblatt_normalization, cole_hopf_burgers, heat_kernel
from .particles import KdeSpec, simulate_ddsde
from .pde import T_BURN, auto_grid, check_domination, perturb_initial, solve_linearized_fpke, solve_nlfpke
from .verify import (
    BinSpec,
    MarkovConfig,
    ParticleRunner,
    PdeRunner,
    direct_expectation,
    fdd_standard_error,
    reconstruct_fdd,
    restarted_kernel,
    test_ck_violation,
    test_flow_property,
    test_nonlinear_markov,
    w1_grid,
    w1_samples_grid,
)

ENV_OUT = "NLMARKOV_OUT"
ENV_WORKERS = "NLMARKOV_WORKERS"
PATHS_CSV_MAX = 2000


@dataclass
class RunResult:
    code: int
    out_dir: Path
    summary: dict[str, Any] = field(default_factory=dict)
    lines: list[str] = field(default_factory=list)


# -- building blocks from a config ----------------------------------------------------


def coefficients_of(cfg: ExperimentConfig):
    return registry_lookup(cfg.coefficient, **to_float(cfg.coefficient_params) if cfg.coefficient_params else {})


def _pme_m(c) -> float | None:
    if c.m is not None:
        return float(c.m)
    return None


def _barenblatt_var(m: float, tau: float) -> float:
    ex = BarenblattExponents.of(m, 1)
    C = barenblatt_normalization(m, 1)
    R2 = C / ex.k * tau ** (2 * ex.beta)
    return R2 / (2.0 / (m - 1) + 3.0)


def initial_of(cfg: ExperimentConfig, c):
    """The initial datum, plus the PDE grid for it."""
    p = to_float(cfg.initial_params) if cfg.initial_params else {}
    s = float(cfg.s)
    t_end = float(max(cfg.t))
    kind = cfg.initial_kind
    try:
        if kind == "dirac":
            datum = Dirac(float(p.get("x0", 0.0)))
        elif kind == "uniform":
            datum = Uniform(float(p.get("a", -0.5)), float(p.get("b", 0.5)))
        elif kind == "gaussian":
            datum = Gaussian(float(p.get("mean", 0.0)), float(p.get("var", 1.0)))
        elif kind == "barenblatt":
            m = _pme_m(c)
            if m is None or m <= 1:
                raise ConfigError("initial kind 'barenblatt' needs porous-media coefficients with m > 1")
            tau0 = float(p.get("tau0", 0.1))
            x0 = float(p.get("x0", 0.0))
            grid = auto_grid(c, Gaussian(x0, _barenblatt_var(m, tau0)), s, t_end, cfg.n_cells)
            dens = barenblatt(m, 1, s - tau0, x0, s, grid)
            return FromDensity(dens), grid
        elif kind == "file":
            datum = FromDensity(_density_from_file(Path(str(p["path"]))))
            return datum, datum.density.grid
        else:
            raise ConfigError(f"unknown initial kind {kind!r}")
    except KeyError as e:
        raise ConfigError(f"initial datum is missing {e}") from e
    return datum, auto_grid(c, datum, s, t_end, cfg.n_cells)


def _density_from_file(path: Path) -> GridDensity:
    """CSV ``x,u`` on uniformly spaced cell centres."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as e:
        raise ConfigError(f"cannot read initial density: {e}") from e
    x, u = data[:, 0], data[:, 1]
    h = float(x[1] - x[0])
    if np.any(np.abs(np.diff(x) - h) > 1e-9 * max(1.0, abs(h))):
        raise ConfigError("initial density file must use uniformly spaced centres")
    grid = Grid(float(x[0] - h / 2), float(x[-1] + h / 2), len(x))
    return GridDensity.from_values(grid, u, normalize=True)


def kde_of(cfg: ExperimentConfig) -> KdeSpec:
    bw = cfg.bandwidth if isinstance(cfg.bandwidth, str) else float(cfg.bandwidth)
    return KdeSpec(kernel=cfg.kernel, bandwidth=bw)


def oracle_of(cfg: ExperimentConfig, c, u0: GridDensity, t: float, grid: Grid) -> GridDensity | None:
    """Closed-form marginal at ``t`` when one exists for this coefficient/datum pair."""
    s = float(cfg.s)
    p = to_float(cfg.initial_params) if cfg.initial_params else {}
    name = cfg.coefficient
    m = _pme_m(c)
    if name == "burgers":
        return cole_hopf_burgers(u0, s, t, grid)
    if name == "pme" and m is not None and m > 1 and c.dim == 1:
        x0 = float(p.get("x0", 0.0))
        if cfg.initial_kind == "dirac":
            return barenblatt(m, 1, s, x0, t, grid) if t - s >= T_BURN else None
        if cfg.initial_kind == "barenblatt":
            return barenblatt(m, 1, s - float(p.get("tau0", 0.1)), x0, t, grid)
    if name == "heat" or (name == "pme" and m == 1):
        if cfg.initial_kind == "dirac":
            return heat_kernel(s, float(p.get("x0", 0.0)), t, grid)
        if cfg.initial_kind == "gaussian":
            return Gaussian(float(p.get("mean", 0.0)), float(p.get("var", 1.0)) + 2 * (t - s)).to_density(grid, t)
    return None


# -- runner ----------------------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fmt_t(t: float) -> str:
    return io._fmt(float(t))


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> RunResult:
    """Execute the selected tests of ``cfg`` and write all artifacts into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    c = coefficients_of(cfg)
    datum, grid = initial_of(cfg, c)
    s = float(cfg.s)
    times = cfg.output_times
    tests = set(cfg.tests)
    summary: dict[str, Any] = {"experiment": cfg.name, "seed": cfg.seed, "coefficients": c.name}
    lines: list[str] = []
    failed = False
    seeds: dict[str, int] = {"experiment": cfg.seed}
    files: list[Path] = []
    u0 = datum.to_density(grid, s)

    flow = None
    if tests & {"solve", "oracle", "domination"}:
        flow = solve_nlfpke(c, u0, s, times)
        files += [io.write_flow_csv(flow, out_dir / "flow.csv"), io.write_archive(flow, out_dir / "flow.nlm")]
        summary["solve.substeps"] = int(sum(flow.meta["substeps"]))
        summary["solve.clipped_mass"] = flow.meta["clipped_mass"]
        summary["solve.max_mass_error"] = max(abs(d.mass - 1.0) for d in flow.densities)

    paths = None
    kde = kde_of(cfg)
    N, dt = cfg.N, float(cfg.dt)
    if tests & {"simulate", "fdd"} or ("markov" in tests):
        paths = simulate_ddsde(c, datum, s, times, N, dt, kde, cfg.seed)
        files.append(io.write_archive(paths, out_dir / "paths.nlm"))
        if N <= PATHS_CSV_MAX:
            files.append(io.write_paths_csv(paths, out_dir / "paths.csv"))
        rows = [(float(tt), float(paths.trajectories[:, j].mean()), float(paths.trajectories[:, j].var()))
                for j, tt in enumerate(paths.times)]
        files.append(io.write_csv(out_dir / "particle_moments.csv", ["time", "mean", "variance"], rows))

    if "oracle" in tests:
        rows = []
        ok = True
        tol_l1, tol_w1 = cfg.tol("oracle_l1"), cfg.tol("oracle_w1")
        for tt in times[1:]:
            ref = oracle_of(cfg, c, u0, tt, grid)
            if ref is None:
                continue
            d = flow.densities[flow.index_of(tt)]
            l1 = d.l1(ref)
            w1 = w1_grid(d, ref)
            pw1 = w1_samples_grid(paths.at(tt), ref) if paths is not None else math.nan
            ok &= l1 <= tol_l1 and (math.isnan(pw1) or pw1 <= tol_w1)
            rows.append((tt, l1, w1, pw1))
            summary[f"oracle.l1@{_fmt_t(tt)}"] = l1
            if paths is not None:
                summary[f"oracle.particle_w1@{_fmt_t(tt)}"] = pw1
        if not rows:
            raise ConfigError(f"no closed-form oracle for {cfg.coefficient!r} with a {cfg.initial_kind!r} start")
        files.append(io.write_csv(out_dir / "oracle.csv", ["time", "l1_pde", "w1_pde", "w1_particles"], rows))
        summary["oracle.verdict"] = "pass" if ok else "fail"
        failed |= not ok

    if "flow" in tests:
        r, t = float(cfg.r[0]) if cfg.r else 0.5 * (s + times[-1]), times[-1]
        rep = test_flow_property(PdeRunner(c, cfg.n_cells, grid), s, datum, r, t, cfg.tol("flow_l1"))
        for k, v in rep.summary().items():
            summary[f"flow.pde.{k}"] = v
        failed |= not rep.passed
        if "simulate" in tests:
            seeds["flow_restart"] = cfg.seed + 1
            prep = test_flow_property(ParticleRunner(c, N, dt, kde, cfg.seed), s, datum, r, t, cfg.tol("flow_w1"))
            for k, v in prep.summary().items():
                summary[f"flow.particles.{k}"] = v
            failed |= not prep.passed

    if "markov" in tests:
        r, t = float(cfg.r[0]) if cfg.r else 0.5 * (s + times[-1]), times[-1]
        seeds["markov_run_b"] = cfg.seed + 1
        seeds["bootstrap"] = cfg.seed
        mc = MarkovConfig(N=N, dt=dt, kde=kde, seed_a=cfg.seed, seed_b=cfg.seed + 1,
                          bins=BinSpec(factor=float(cfg.bin_factor), min_count=cfg.min_count),
                          n_boot=cfg.n_boot, n_cells=cfg.n_cells, setup_tol=cfg.tol("setup_w1"),
                          run_a=paths, boot_seed=cfg.seed)
        rep = test_nonlinear_markov(c, s, datum, r, t, mc)
        for k, v in rep.summary().items():
            summary[f"markov.{k}"] = v
        files.append(io.write_dict_rows(out_dir / "markov_bins.csv", rep.rows()))
        failed |= not rep.verdict

    if "ck" in tests:
        m = _pme_m(c)
        if m is None or cfg.coefficient not in ("pme", "heat"):
            raise ConfigError("the CK check runs on porous-media coefficients only")
        if cfg.initial_kind != "dirac":
            raise ConfigError("the CK check starts from a Dirac datum")
        r, t = float(cfg.r[0]) if cfg.r else 0.5 * (s + times[-1]), times[-1]
        rep = test_ck_violation(m, s, datum.x0, r, t, n_cells=cfg.n_cells, small_tol=cfg.tol("ck_small"))
        for k, v in rep.summary().items():
            summary[f"ck.{k}"] = v
        lines.append(rep.verdict_line())
        rows = [(float(x), float(a), float(b)) for x, a, b in zip(rep.lhs.centers, rep.lhs.values, rep.rhs.values)]
        files.append(io.write_csv(out_dir / "ck.csv", ["x", "lhs", "rhs"], rows))
        # for the linear set the check passes when CK holds; nonlinear sets report the residual
        if m == 1:
            failed |= not rep.holds

    if "fdd" in tests:
        if not cfg.r:
            raise ConfigError("fdd reconstruction needs at least one r time")
        t0, t1 = float(cfg.r[0]), times[-1]
        seeds["fdd_restart"] = cfg.seed + 2
        k = restarted_kernel(c, s, datum, t0, t1, N, dt, kde, cfg.seed + 2, n_cells=cfg.n_cells)
        fns = {
            "product": lambda a, b: a * b,
            "indicator": lambda a, b: (a > 0).astype(float) * (b > 0).astype(float),
        }
        ok = True
        for name, f in fns.items():
            rec = reconstruct_fdd([k], paths.ensemble_at(t0), f, [t0, t1])
            direct, se_d = direct_expectation(paths, f, [t0, t1])
            se = math.hypot(se_d, fdd_standard_error([k], paths.ensemble_at(t0), f, int(k.counts.sum())))
            good = abs(rec - direct) <= cfg.tol("fdd_se") * se
            ok &= good
            summary[f"fdd.{name}.reconstructed"] = rec
            summary[f"fdd.{name}.direct"] = direct
            summary[f"fdd.{name}.combined_se"] = se
        summary["fdd.verdict"] = "pass" if ok else "fail"
        failed |= not ok

    if "domination" in tests:
        dense = np.linspace(s, times[-1], 1001)
        mu = solve_nlfpke(c, u0, s, dense)
        eta, g = perturb_initial(u0, 0.5, 2.0, "tilt", cfg.seed)
        nu = solve_linearized_fpke(c, mu, eta, s, dense)
        rep = check_domination(nu, mu)
        summary["domination.C_star"] = rep.C_star
        summary["domination.g_max"] = float(np.max(g[u0.values > 0]))
        ok = rep.C_star <= cfg.tol("domination")
        summary["domination.verdict"] = "pass" if ok else "fail"
        files.append(io.write_csv(out_dir / "domination.csv", ["time", "ratio"], rep.table()))
        failed |= not ok

    summary["verdict"] = "fail" if failed else "pass"
    files.append(_write_text(out_dir / "summary.txt", io.summary_text(summary)))
    canonical = dump_config(cfg)
    files.append(_write_text(out_dir / "config.toml", canonical))
    manifest = {
        "config_sha256": _sha256(canonical.encode()),
        "experiment": cfg.name,
        "versions": {
            "nlmarkov": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seeds": seeds,
        "rng": "philox counter-based; streams initial=1 brownian=2 resample=3 bootstrap=4",
        "files": {f.name: _sha256(f.read_bytes()) for f in sorted(set(files))},
    }
    _write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(1 if failed else 0, out_dir, summary, lines)


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def _out_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(ENV_OUT) or "runs")


def _out_dir(cfg: ExperimentConfig, explicit: str | None) -> Path:
    if os.environ.get(ENV_OUT) and not explicit:
        return Path(os.environ[ENV_OUT]) / f"{cfg.name}-seed{cfg.seed}"
    if explicit:
        return Path(explicit)
    return Path("runs") / f"{cfg.name}-seed{cfg.seed}"


# -- argument handling ---------------------------------------------------------------


DEFAULT_TEXT = """\
[experiment]
name = "{name}"
seed = 0
tests = ["solve"]

[coefficients]
name = "pme"
m = 2

[initial]
kind = "dirac"
x0 = 0.0

[time]
s = 0.0
r = [0.5]
t = [1.0]

[numerics]
n_cells = 512
"""


def _dec(text: str) -> Decimal:
    try:
        d = Decimal(text)
    except Exception as e:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from e
    if not d.is_finite():
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return d


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment file; flags override its values")
    p.add_argument("--coef", help="coefficient registry name")
    p.add_argument("--m", type=_dec, help="porous-media exponent")
    p.add_argument("--initial", choices=["dirac", "uniform", "gaussian", "barenblatt", "file"])
    p.add_argument("--x0", type=_dec)
    p.add_argument("--s", type=_dec)
    p.add_argument("--r", type=_dec, nargs="+")
    p.add_argument("--t", type=_dec, nargs="+")
    p.add_argument("--n-cells", type=int, dest="n_cells")
    p.add_argument("--N", type=int)
    p.add_argument("--dt", type=_dec)
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel")
    p.add_argument("--bandwidth")
    p.add_argument("--out", help="output directory")


def _merge(cfg: ExperimentConfig, a: argparse.Namespace, tests: tuple[str, ...] | None) -> ExperimentConfig:
    kw: dict[str, Any] = {}
    if a.coef is not None and a.coef != cfg.coefficient:
        kw["coefficient"] = a.coef
        kw["coefficient_params"] = ()
    params = dict(kw.get("coefficient_params", cfg.coefficient_params))
    if a.m is not None:
        m = a.m
        if (kw.get("coefficient", cfg.coefficient)) == "heat":
            raise ConfigError("--m does not apply to the heat set")
        params["m"] = int(m) if m == m.to_integral_value() else m
    if params or "coefficient_params" in kw:
        kw["coefficient_params"] = tuple(sorted(params.items()))
    ip = dict(cfg.initial_params)
    if a.initial is not None and a.initial != cfg.initial_kind:
        kw["initial_kind"] = a.initial
        ip = {}
    if a.x0 is not None:
        ip["x0"] = a.x0
    kw["initial_params"] = tuple(sorted(ip.items()))
    for name in ("s", "dt"):
        if getattr(a, name) is not None:
            kw[name] = getattr(a, name)
    for name in ("r", "t"):
        if getattr(a, name) is not None:
            kw[name] = tuple(getattr(a, name))
    for name in ("n_cells", "N", "seed", "kernel"):
        if getattr(a, name) is not None:
            kw[name] = getattr(a, name)
    if a.bandwidth is not None:
        kw["bandwidth"] = a.bandwidth if a.bandwidth == "silverman" else _dec(a.bandwidth)
    if tests is not None:
        kw["tests"] = tests
    merged = cfg.replace(**kw)
    # re-validate through the parser so flag values obey the same rules as files
    return parse_config(dump_config(merged), "<flags>")


def _base_config(a: argparse.Namespace, name: str) -> ExperimentConfig:
    if a.config:
        return load_config(a.config)
    return parse_config(DEFAULT_TEXT.format(name=name), "<defaults>")


def _emit(res: RunResult) -> None:
    for line in res.lines:
        print(line)
    print(io.summary_text(res.summary), end="")
    print(f"output = {res.out_dir}")


SUBCOMMAND_TESTS = {
    "solve": ("solve",),
    "simulate": ("simulate",),
    "verify-markov": ("markov",),
    "verify-flow": ("flow",),
    "verify-ck": ("ck",),
    "reconstruct-fdd": ("fdd",),
}


def _cmd_experiment(a: argparse.Namespace) -> int:
    tests = None
    if a.cmd != "run":
        tests = SUBCOMMAND_TESTS[a.cmd]
        if a.cmd == "verify-flow" and a.particles:
            tests = ("simulate", "flow")
        if a.cmd == "verify-ck" and a.coef is None and not a.config and a.m is not None and a.m == 1:
            a.coef, a.m = "heat", None
    base = _base_config(a, a.cmd.replace("-", "_"))
    cfg = _merge(base, a, tests)
    res = run_experiment(cfg, _out_dir(cfg, a.out))
    _emit(res)
    return res.code


def _cmd_report(a: argparse.Namespace) -> int:
    target = Path(a.archive)
    if target.is_dir():
        cands = sorted(target.glob("*.nlm"))
        if not cands:
            raise io.ArchiveError(f"no archives in {target}")
        objs = [(c.name, io.read_archive(c)) for c in cands]
    else:
        objs = [(target.name, io.read_archive(target))]
    for name, obj in objs:
        print(f"archive = {name}")
        print(io.summary_text(io.describe_archive(obj)), end="")
    return 0


def _run_one(path: str, out_root: str | None) -> tuple[str, int]:
    try:
        cfg = load_config(path)
        root = Path(out_root) if out_root else _out_root(None)
        res = run_experiment(cfg, root / f"{cfg.name}-seed{cfg.seed}")
        return path, res.code
    except NlMarkovError as e:
        print(f"{path}: error: {e}", file=sys.stderr)
        return path, 2


def _cmd_batch(a: argparse.Namespace) -> int:
    listing = Path(a.listing)
    try:
        entries = [ln.strip() for ln in listing.read_text().splitlines()]
    except OSError as e:
        raise ConfigError(f"cannot read batch file: {e}") from e
    paths = [str((listing.parent / e).resolve()) for e in entries if e and not e.startswith("#")]
    if not paths:
        raise ConfigError("batch file lists no experiments", None, str(listing))
    workers = a.workers or int(os.environ.get(ENV_WORKERS, "1"))
    if workers < 1:
        raise ConfigError("worker cap must be positive")
    if workers == 1:
        results = [_run_one(p, a.out) for p in paths]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, paths, [a.out] * len(paths)))
    for p, code in results:
        print(f"{p} = {code}")
    return max(code for _, code in results)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlmarkov", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run the tests selected in an experiment file")
    p.add_argument("config_path")
    _add_common(p)
    for name, helptext in (
        ("solve", "solve the nonlinear FPKE and write marginals"),
        ("simulate", "simulate the particle system and write paths"),
        ("verify-markov", "nonlinear Markov test"),
        ("verify-flow", "flow-property test"),
        ("verify-ck", "Chapman-Kolmogorov residual"),
        ("reconstruct-fdd", "fdd reconstruction from conditional kernels"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "verify-flow":
            p.add_argument("--particles", action="store_true", help="also test the particle system")
    p = sub.add_parser("report", help="render a run archive (or run directory) as key = value lines")
    p.add_argument("archive")
    p = sub.add_parser("batch", help="run the experiment files listed in a batch file concurrently")
    p.add_argument("listing")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output root")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        if a.cmd == "run":
            a.config = a.config_path
            return _cmd_experiment(a)
        if a.cmd == "report":
            return _cmd_report(a)
        if a.cmd == "batch":
            return _cmd_batch(a)
        return _cmd_experiment(a)
    except NlMarkovError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
