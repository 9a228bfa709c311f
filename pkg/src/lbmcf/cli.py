"""Command-line entry point: ``lbmcf <command> --config PATH --out DIR``.

Exit codes: 0 ok, 1 usage, 2 validation, 3 numerical failure (or a failed
invariant under ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import density, frames, knorm, shrinker
from .config import ConfigError, ScenarioConfig, parse_config
from .curvature import curvature_pack
from .flow import HISTORY_COLUMNS, FlowAbort, FlowConfig, Trajectory, run, stable_dt
from .grid import Grid, GridConfig, GridError, MetricField, NonSPDMetricError, build_grid
from .potentials import bump_test_function, make_potential, self_similar_family
from .snapshot import write_snapshot

COMMANDS = ("run-flow", "check-identities", "density", "shrinker-check", "knorm", "eps-probe", "all")
IDENTITY_COLUMNS = ("test_id", "N", "residual", "measured_order")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


class Artifacts:
    """Files written to the output directory, in creation order."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.files: list[Path] = []
        outdir.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str) -> Path:
        path = self.outdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        self.files.append(path)
        return path

    def csv(self, name: str, columns, rows) -> Path:
        return self.text(name, csv_text(columns, rows))

    def snapshot(self, name: str, values, grid: Grid, t: float) -> Path:
        path = self.outdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        write_snapshot(path, values, grid, t)
        self.files.append(path)
        return path

    def manifest(self, cfg: ScenarioConfig, command: str, seed: int) -> Path:
        lines = [f"config_sha256 {cfg.digest}", f"command {command}", f"seed {seed}"]
        for p in self.files:
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"artifact {p.relative_to(self.outdir).as_posix()} sha256 {digest} config_sha256 {cfg.digest}")
        path = self.outdir / "manifest.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

def make_grid(cfg: ScenarioConfig, N: int | None = None) -> Grid:
    g = cfg["grid"]
    return build_grid(GridConfig(g["n"], g["r"], g["r_prime"], g["N"] if N is None else N, g["bc"]))


def make_metric(cfg: ScenarioConfig, grid: Grid) -> MetricField:
    m = cfg["metric"]
    if m["kind"] == "constant":
        return MetricField.constant_metric(grid, m["matrix"])
    if m["expression"] == "identity":
        return MetricField.identity(grid)
    eps = m["eps"]
    return MetricField.from_function(grid, lambda x: (1.0 + eps * float(x @ x)) * np.eye(grid.n))


def potential_params(cfg: ScenarioConfig) -> tuple[str, dict]:
    p = cfg["potential"]
    kind = p["kind"]
    if kind == "quadratic":
        return kind, {"A": p["A"], "b": p["b"]}
    if kind == "quartic_bump":
        return kind, {"a": p["a"], "w": p["w"]}
    if kind == "sine":
        return kind, {"k": p["k"], "amp": p["amp"]}
    return kind, {}


def flow_config(cfg: ScenarioConfig, phi0: np.ndarray, g: MetricField, grid: Grid) -> FlowConfig:
    f = cfg["flow"]
    th = f["theta_hat"]
    theta_hat = None if th == "average" else (0.0 if th == "zero" else float(th))
    dt = f["dt"] if f["dt"] is not None else stable_dt(curvature_pack(phi0, g, grid).eta, grid, f["cfl"])
    n_steps = max(1, int(round(f["T_end"] / dt)))
    cadence = min(f["cadence"], n_steps)
    n_steps -= n_steps % cadence
    return FlowConfig(theta_hat=theta_hat, cfl=f["cfl"], dt=dt, n_steps=n_steps, cadence=cadence, maxF_bound=f["A"], scheme=f["scheme"])


def run_configured_flow(cfg: ScenarioConfig, phi0=None) -> Trajectory:
    grid = make_grid(cfg)
    g = make_metric(cfg, grid)
    if phi0 is None:
        kind, params = potential_params(cfg)
        phi0 = make_potential(kind, grid, **params).values
    return run(phi0, g, grid, flow_config(cfg, phi0, g, grid))


# ---------------------------------------------------------------------------
# Commands; each returns a list of failed-invariant messages
# ---------------------------------------------------------------------------

def cmd_run_flow(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    traj = run_configured_flow(cfg)
    art.csv("history.csv", HISTORY_COLUMNS, traj.history)
    for k, (t, phi) in enumerate(zip(traj.times, traj.phis)):
        art.snapshot(f"snapshots/phi_{k:05d}.txt", phi, traj.grid, t)
    V = np.array([row[1] for row in traj.history])
    fails = []
    if np.any(np.diff(V) > 1e-8):
        fails.append("volume increased between snapshots")
    return fails


def _identity_rows(cfg, N: int, seed: int):
    grid = make_grid(cfg, N)
    g = make_metric(cfg, grid)
    kind, params = potential_params(cfg)
    phi = make_potential(kind, grid, **params).values
    ic = cfg["identities"]
    x0 = np.zeros(grid.n) if ic["x0"] is None else ic["x0"]
    radius = 0.75 * grid.r if ic["f_radius"] is None else ic["f_radius"]
    f = bump_test_function(grid, x0, radius)
    res = frames.identity_suite_ch4(phi, g, grid, f=f, seed=seed, x0=x0, interior_width=ic["interior_width"])
    fields = frames.identity_fields(phi, g, grid, x0)
    lhs, rhs = frames.weighted_identity_sides(f, ic["alpha"], fields, g, grid)
    mismatch = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return res, mismatch


def cmd_check_identities(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    N = cfg["grid"]["N"]
    N2 = 2 * N if cfg["grid"]["bc"] == "periodic" else 2 * N - 1
    with ThreadPoolExecutor(max_workers=max(1, min(threads, 2))) as ex:
        (coarse, m1), (fine, m2) = ex.map(lambda n: _identity_rows(cfg, n, seed), (N, N2))
    rows, fails = [], []
    for name in frames.IDENTITY_TESTS:
        a, b = coarse[name], fine[name]
        order = math.log2(a / b) if a > 0 and b > 0 else math.nan
        rows.append((name, N, a, math.nan))
        rows.append((name, N2, b, order))
        if b > 1e-10 and not order >= 1.8:
            fails.append(f"{name}: measured order {order:.3g} < 1.8")
    rows.append(("weighted_integral", N, m1, math.nan))
    rows.append(("weighted_integral", N2, m2, math.log2(m1 / m2) if m1 > 0 and m2 > 0 else math.nan))
    art.csv("identities.csv", IDENTITY_COLUMNS, rows)
    return fails


def _density_defaults(cfg, traj: Trajectory):
    d = cfg["density"]
    x0 = np.zeros(traj.grid.n) if d["x0"] is None else d["x0"]
    span = float(traj.times[-1] - traj.times[0])
    T_prime = float(traj.times[-1]) + max(span, 1e-12) if d["T_prime"] is None else d["T_prime"]
    return x0, T_prime


def cmd_density(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    traj = run_configured_flow(cfg)
    x0, T_prime = _density_defaults(cfg, traj)
    d = cfg["density"]
    rep = density.monotonicity_residual(traj, x0, T_prime, d["variant"], d["j"], d["stride"])
    art.csv("density.csv", density.DENSITY_COLUMNS, rep.rows)
    fails = []
    if not np.all(rep.monotone_ok):
        fails.append("density plus C(T'-t) increased")
    return fails


def cmd_shrinker_check(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    grid = make_grid(cfg)
    g = make_metric(cfg, grid)
    s = cfg["shrinker"]
    times = np.linspace(s["t_start"], s["t_end"], s["samples"])
    kind, params = potential_params(cfg)
    phis = self_similar_family(kind, grid, times, **params)
    rep = shrinker.self_similar_family_check(times, phis, g, grid, tol=s["tol"])
    rows = list(rep.rows)
    fails = []
    if rep.passed:
        verdict = shrinker.liouville_probe(rep, phis[-1], grid)
        t, v, sc, _ = rows[-1]
        rows[-1] = (t, v, sc, verdict.fit_residual)
        if not verdict.consistent:
            fails.append("Liouville probe inconsistent")
    else:
        fails.append(f"self-similar family check failed (residual {rep.residual:.3g})")
    art.csv("shrinker.csv", shrinker.SHRINKER_COLUMNS, rows)
    return fails


def cmd_knorm(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    traj = run_configured_flow(cfg)
    k = cfg["knorm"]
    pair = knorm.pair_from_trajectory(traj)
    lattice = knorm.probe_lattice(pair, k["points_per_axis"], k["time_stride"])
    res = knorm.K3aV(pair, k["alpha"], lattice, threads)
    art.csv("knorm.csv", knorm.KNORM_COLUMNS, res.rows)
    return [] if math.isfinite(res.value) else ["K3aV is infinite"]


def ensemble_members(cfg, seed: int, threads: int) -> list[tuple[int, Trajectory]]:
    e = cfg["ensemble"]
    grid = make_grid(cfg)
    g = make_metric(cfg, grid)
    specs = []
    for i in range(e["members"]):
        mseed = seed + i
        if e["include_flat"] and i == 0:
            specs.append((mseed, make_potential("flat", grid).values))
            continue
        rng = np.random.default_rng(mseed)
        a = rng.uniform(e["a_min"], e["a_max"])
        w = rng.uniform(e["w_min"], e["w_max"])
        specs.append((mseed, make_potential("quartic_bump", grid, a=a, w=w).values))

    def go(spec):
        mseed, phi0 = spec
        return mseed, run(phi0, g, grid, flow_config(cfg, phi0, g, grid))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        return list(ex.map(go, specs))


def cmd_eps_probe(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    if not cfg.has("ensemble"):
        raise UsageError("eps-probe needs an [ensemble] section")
    k = cfg["knorm"]
    members = ensemble_members(cfg, seed, threads)
    rows = knorm.eps_probe(members, k["alpha"], None, k["points_per_axis"], k["time_stride"], threads)
    art.csv("eps_probe.csv", knorm.EPS_COLUMNS, rows)
    bad = [r[0] for r in rows if not all(math.isfinite(v) for v in r[1:])]
    return [f"non-finite eps-probe row for seed {s}" for s in bad]


HANDLERS = {
    "run-flow": cmd_run_flow,
    "check-identities": cmd_check_identities,
    "density": cmd_density,
    "shrinker-check": cmd_shrinker_check,
    "knorm": cmd_knorm,
    "eps-probe": cmd_eps_probe,
}


def cmd_all(cfg, art: Artifacts, seed: int, threads: int) -> list[str]:
    fails = []
    for name in ("run-flow", "check-identities", "density", "shrinker-check", "knorm", "eps-probe"):
        section = {"check-identities": "identities", "shrinker-check": "shrinker", "eps-probe": "ensemble"}.get(name, name)
        if name != "run-flow" and not cfg.has(section):
            continue
        fails += [f"{name}: {m}" for m in HANDLERS[name](cfg, art, seed, threads)]
    return fails


HANDLERS["all"] = cmd_all


def run_scenario(cfg: ScenarioConfig, command: str, outdir, seed: int = 0, threads: int = 1) -> tuple[list[str], Artifacts]:
    """Run one command, write its artifacts and manifest; return failed-invariant messages."""
    art = Artifacts(Path(outdir))
    fails = HANDLERS[command](cfg, art, seed, threads)
    art.manifest(cfg, command, seed)
    return fails, art


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lbmcf", description="Line bundle mean curvature flow simulator and verification lab.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--out", default="out", metavar="DIR")
    p.add_argument("--strict", action="store_true", help="exit 3 when any checked invariant fails")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("lbmcf: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"lbmcf: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fails, _ = run_scenario(cfg, args.command, args.out, args.seed, args.threads)
    except UsageError as exc:
        print(f"lbmcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GridError, ConfigError) as exc:
        print(f"lbmcf {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FlowAbort, NonSPDMetricError, FloatingPointError) as exc:
        print(f"lbmcf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"lbmcf {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for msg in fails:
        print(f"lbmcf {args.command}: check failed: {msg}", file=sys.stderr)
    if fails and args.strict:
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
