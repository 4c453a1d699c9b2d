"""Command-line front end: simulation, classification, sweeps, connections.

Every command writes CSV (or JSON for fiber clouds) with the fully
resolved configuration embedded as ``#``-prefixed header lines, so a file
identifies the run that produced it and identical configurations produce
byte-identical outputs.  Exit codes: 0 success, 1 numerical failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from .bvp import NonConvergenceError
from .classify import (
    ShootingConfig,
    classify_point,
    integration_time,
    pullback_fibers,
    stable_manifold_zplus,
    sweep,
)
from .frozen import orbit_radii
from .integrator import IntegrationFailure
from .lin import (
    BracketError,
    LinSetup,
    continue_connection_in_r,
    continue_threshold,
    find_critical_rate,
    gap_ptoe,
    ptop_connection,
    ptop_fold_connections,
    solve_codim1_ptop,
)
from .model import SystemParams

_ESCAPE_SQ = 400.0


class UsageError(ValueError):
    """Bad command-line or config-file input (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved run settings: config-file values overridden by CLI flags."""

    a: str = "0.1"
    r: str = "0.1"
    b: float = 1.0
    omega: float = 3.0
    lambda_max: float = 8.0
    M: int | None = None
    s: float = 0.01
    delta: float = 1e-3
    section: float | None = None
    jobs: int = 1
    out: str | None = None

    def params(self, a: float | None = None, r: float | None = None) -> SystemParams:
        return SystemParams(a=self.a_value if a is None else a,
                            b=self.b, omega=self.omega,
                            r=self.r_value if r is None else r,
                            lambda_max=self.lambda_max)

    def shooting(self) -> ShootingConfig:
        return ShootingConfig(M=self.M, s=self.s)

    def lin_setup(self) -> LinSetup:
        return LinSetup(delta=self.delta)

    @property
    def a_value(self) -> float:
        return _scalar(self.a, "a")

    @property
    def r_value(self) -> float:
        return _scalar(self.r, "r")

    def header(self, command: str, extra: dict | None = None) -> str:
        items = {
            "command": command, "a": self.a, "r": self.r, "b": self.b,
            "omega": self.omega, "lambda_max": self.lambda_max,
            "M": "schedule" if self.M is None else self.M, "s": self.s,
            "delta": self.delta, "jobs": self.jobs,
        }
        if self.section is not None:
            items["section"] = self.section
        if extra:
            items.update(extra)
        return "".join(f"# {k} = {_fmt(v)}\n" for k, v in items.items())


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _scalar(raw: str, name: str) -> float:
    if ":" in str(raw):
        raise UsageError(f"--{name} needs a single value here, got {raw!r}")
    try:
        return float(raw)
    except ValueError as err:
        raise UsageError(f"--{name}: not a number: {raw!r}") from err


def _parse_pair(raw: str, name: str) -> tuple[float, float]:
    parts = str(raw).split(":")
    if len(parts) != 2:
        raise UsageError(f"--{name} must look like lo:hi, got {raw!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as err:
        raise UsageError(f"--{name}: not numbers: {raw!r}") from err
    if not lo < hi:
        raise UsageError(f"--{name}: need lo < hi, got {raw!r}")
    return lo, hi


def _parse_grid(raw: str, name: str) -> np.ndarray:
    """A grid spec start:stop:count, or a single value."""
    parts = str(raw).split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 1 or not start <= stop:
                raise ValueError
            return np.linspace(start, stop, count)
    except ValueError as err:
        raise UsageError(
            f"--{name}: expected value or start:stop:count, got {raw!r}") from err
    raise UsageError(
        f"--{name}: expected value or start:stop:count, got {raw!r}")


def _read_config_file(path: str) -> dict[str, str]:
    """One key = value per line; # starts a comment; blank lines ignored."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}") from err
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


_INT_KEYS = {"M", "jobs", "samples", "phases", "max_points", "which"}
_FLOAT_KEYS = {"b", "omega", "lambda_max", "s", "delta", "section",
               "t0", "t1", "step", "r_probe"}


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = _read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(RunConfig.__dataclass_fields__) - {
        "t0", "t1", "samples", "w0", "phases", "kind", "seed_branch",
        "r_bracket", "a_range", "r_range", "step", "r_probe", "which",
    }
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def pick(name: str, default):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in file_values:
            raw = file_values[name]
            if name in _INT_KEYS:
                return int(raw)
            if name in _FLOAT_KEYS:
                return float(raw)
            return raw
        return default

    # config-file values also backfill command-specific flags
    for name in ("t0", "t1", "samples", "w0", "phases", "kind", "seed_branch",
                 "r_bracket", "a_range", "r_range", "step", "r_probe", "which"):
        if hasattr(args, name) and getattr(args, name) is None \
                and name in file_values:
            raw = file_values[name]
            if name in _INT_KEYS:
                raw = int(raw)
            elif name in _FLOAT_KEYS:
                raw = float(raw)
            setattr(args, name, raw)

    return RunConfig(
        a=str(pick("a", "0.1")), r=str(pick("r", "0.1")),
        b=float(pick("b", 1.0)), omega=float(pick("omega", 3.0)),
        lambda_max=float(pick("lambda_max", 8.0)),
        M=pick("M", None), s=float(pick("s", 0.01)),
        delta=float(pick("delta", 1e-3)),
        section=pick("section", None), jobs=int(pick("jobs", 1)),
        out=pick("out", None),
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- commands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> int:
    params = cfg.params()
    T = integration_time(params.r, params.lambda_max, cfg.s)
    t0 = args.t0 if args.t0 is not None else -T
    t1 = args.t1 if args.t1 is not None else 2 * T
    if t1 < t0:
        raise UsageError("need t1 >= t0")
    n = args.samples if args.samples is not None else 1001

    lam0 = params.lambda_max / (1.0 + math.exp(-params.r * params.lambda_max * t0))
    if args.w0 is not None:
        try:
            w0 = np.array([float(v) for v in args.w0.split(",")])
            assert w0.shape == (3,)
        except (ValueError, AssertionError) as err:
            raise UsageError(f"--w0 must be x,y,Lambda, got {args.w0!r}") from err
    else:
        rho = math.sqrt(orbit_radii(params.a, params.b)[0]) + 1e-3
        w0 = np.array([lam0 + rho, 0.0, lam0])

    header = cfg.header("simulate", {"t0": t0, "t1": t1, "samples": n,
                                     "w0": ",".join(repr(float(v)) for v in w0)})
    lines = [header, "t,x,y,Lambda\n"]
    if t1 == t0:
        _emit("".join(lines), cfg.out)
        return 0

    ts = np.linspace(t0, t1, n)
    samples, status = backend.ensemble_samples(
        params.a, params.b, params.omega, params.r, params.lambda_max,
        w0[None, :], ts - t0, 1e-10, 1e-12, np.inf, _ESCAPE_SQ)
    traj = samples[:, 0, :]
    zsq = (traj[:, 0] - traj[:, 2]) ** 2 + traj[:, 1] ** 2
    cut = len(ts)
    if status[0] == 1:
        out_idx = np.nonzero(zsq >= 0.99 * _ESCAPE_SQ)[0]
        cut = int(out_idx[0]) + 1 if len(out_idx) else len(ts)
        lines.insert(1,
                     f"# note: trajectory escaped near t = {float(ts[cut - 1])!r}\n")
    for k in range(cut):
        lines.append(",".join(repr(float(v))
                              for v in (ts[k], *traj[k])) + "\n")
    _emit("".join(lines), cfg.out)
    if status[0] == 2:
        print("simulate: integrator failed; partial trajectory written",
              file=sys.stderr)
        return 1
    return 0


_REPORT_COLUMNS = "a,r,class,tipped_fraction,region,M,T"


def _report_row(rep) -> str:
    return (f"{rep.a!r},{rep.r!r},{rep.classification},"
            f"{rep.tipped_fraction!r},{rep.region},{rep.M},{rep.T!r}")


def cmd_classify(cfg: RunConfig, args: argparse.Namespace) -> int:
    a, r = cfg.a_value, cfg.r_value
    rep = classify_point(a, r, cfg.shooting(), base=cfg.params())
    columns = _REPORT_COLUMNS
    row = _report_row(rep)
    if cfg.section is not None:
        res = stable_manifold_zplus(a, r, cfg.shooting(), base=cfg.params())
        xy = res.section_crossing(cfg.section)
        columns += ",section_x,section_y"
        row += f",{float(xy[0])!r},{float(xy[1])!r}"
    _emit(cfg.header("classify") + columns + "\n" + row + "\n", cfg.out)
    return 0


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    a_grid = _parse_grid(cfg.a, "a")
    r_grid = _parse_grid(cfg.r, "r")
    if a_grid.min() <= 0 or a_grid.max() >= 0.25:
        raise UsageError("a grid must lie inside (0, 0.25)")
    if r_grid.min() <= 0:
        raise UsageError("r grid must be positive")
    base = cfg.params(a=float(a_grid[0]), r=float(r_grid[0]))
    result = sweep(a_grid, r_grid, cfg.shooting(), base=base, jobs=cfg.jobs)
    lines = [cfg.header("sweep"), _REPORT_COLUMNS + "\n"]
    for i, a in enumerate(result.a_values):
        for j, r in enumerate(result.r_values):
            rep = result.reports[i][j]
            if rep is None:
                lines.append(f"{float(a)!r},{float(r)!r},failed,nan,,0,nan\n")
            else:
                lines.append(_report_row(rep) + "\n")
    _emit("".join(lines), cfg.out)
    for i, j, msg in result.failures:
        print(f"sweep: cell ({result.a_values[i]!r}, {result.r_values[j]!r}) "
              f"failed: {msg}", file=sys.stderr)
    return 0


_CURVE_COLUMNS = "a,r,kind,theta,phi,residual\n"


def _curve_row(a: float, r: float, kind: str, theta, phi, residual) -> str:
    phi_txt = "" if phi is None else repr(float(phi))
    return (f"{float(a)!r},{float(r)!r},{kind},{float(theta)!r},"
            f"{phi_txt},{float(residual)!r}\n")


def cmd_connect(cfg: RunConfig, args: argparse.Namespace) -> int:
    kind = args.kind
    setup = cfg.lin_setup()
    base = cfg.params()
    lines = [cfg.header("connect", {"kind": kind})]
    lines.append(_CURVE_COLUMNS)
    a = cfg.a_value
    if kind == "ptoe":
        if args.r_bracket is None:
            raise UsageError("connect --kind ptoe needs --r-bracket lo:hi")
        lo, hi = _parse_pair(args.r_bracket, "r-bracket")
        r0 = find_critical_rate("PtoE", a, (lo, hi), setup, base=base)
        sol = gap_ptoe(a, r0, setup, base=base)
        lines.append(_curve_row(a, r0, kind, sol.theta, None, sol.residual_norm))
    elif kind == "ptop0":
        r = cfg.r_value
        which = args.which if args.which is not None else 0
        sol = ptop_connection(a, r, setup, which=which, base=base)
        lines.append(_curve_row(a, r, kind, sol.theta, sol.phi,
                                sol.residual_norm))
    elif kind == "ptop1":
        branch = args.seed_branch or "lower"
        if branch not in ("lower", "upper"):
            raise UsageError("--seed-branch must be lower or upper")
        r_probe = args.r_probe if args.r_probe is not None else 0.15
        lo_sol, hi_sol = ptop_fold_connections(a, r_probe, setup, base=base)
        seed = lo_sol if branch == "lower" else hi_sol
        sol = solve_codim1_ptop(a, seed, setup, base=base)
        lines.append(_curve_row(a, sol.critical_rate, kind, sol.theta,
                                sol.phi, sol.residual_norm))
    else:
        raise UsageError(f"unknown --kind {kind!r}")
    _emit("".join(lines), cfg.out)
    return 0


def cmd_continue(cfg: RunConfig, args: argparse.Namespace) -> int:
    kind = args.kind
    setup = cfg.lin_setup()
    base = cfg.params()
    a = cfg.a_value
    step = args.step if args.step is not None else 0.01
    lines = [cfg.header("continue", {"kind": kind})]
    lines.append(_CURVE_COLUMNS)
    if kind == "ptop0":
        if args.r_range is None:
            raise UsageError("continue --kind ptop0 needs --r-range lo:hi")
        window = _parse_pair(args.r_range, "r-range")
        conn = ptop_connection(a, cfg.r_value, setup, base=base)
        branch = continue_connection_in_r(conn, step=step, r_window=window)
        for point in branch.points:
            p = point.u[-3:]
            lines.append(_curve_row(a, p[2], kind, p[0], p[1],
                                    point.residual_norm))
    elif kind in ("ptoe", "ptop1"):
        if args.a_range is None:
            raise UsageError(f"continue --kind {kind} needs --a-range lo:hi")
        a_range = _parse_pair(args.a_range, "a-range")
        if kind == "ptoe":
            if args.r_bracket is None:
                raise UsageError("continue --kind ptoe needs --r-bracket lo:hi")
            lo, hi = _parse_pair(args.r_bracket, "r-bracket")
            r0 = find_critical_rate("PtoE", a, (lo, hi), setup, base=base)
            seed = gap_ptoe(a, r0, setup, base=base)
        else:
            branch_name = args.seed_branch or "lower"
            r_probe = args.r_probe if args.r_probe is not None else 0.15
            lo_sol, hi_sol = ptop_fold_connections(a, r_probe, setup, base=base)
            seed = solve_codim1_ptop(
                a, lo_sol if branch_name == "lower" else hi_sol, setup,
                base=base)
        # walk both directions from the seed, drop the duplicated seed
        # point, and emit ordered in a
        points = []
        for direction, skip_first in ((1.0, False), (-1.0, True)):
            curve = continue_threshold(seed, a_range, step=step,
                                       direction=direction)
            start = 1 if skip_first else 0
            points.extend(zip(curve.a_values[start:], curve.r_values[start:],
                              curve.solutions[start:]))
        points.sort(key=lambda item: item[0])
        for av, rv, sol in points:
            lines.append(_curve_row(av, rv, kind, sol.theta, sol.phi,
                                    sol.residual_norm))
    else:
        raise UsageError(f"unknown --kind {kind!r}")
    _emit("".join(lines), cfg.out)
    return 0


def cmd_fibers(cfg: RunConfig, args: argparse.Namespace) -> int:
    phases = args.phases if args.phases is not None else 64
    fibers = pullback_fibers(cfg.a_value, cfg.r_value, n_phases=phases,
                             config=cfg.shooting(), base=cfg.params())
    payload = {
        "config": {"a": cfg.a_value, "r": cfg.r_value, "b": cfg.b,
                   "omega": cfg.omega, "lambda_max": cfg.lambda_max,
                   "s": cfg.s, "phases": phases},
        "escapes": [[i, t] for i, t in fibers.escapes],
        "fibers": fibers.to_payload(),
    }
    _emit(json.dumps(payload, indent=1, sort_keys=True) + "\n", cfg.out)
    return 0


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratetip",
        description="Rate-induced tipping: classification, connecting "
                    "orbits and critical-rate curves for the shifted "
                    "Bautin oscillator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--a", help="parameter a (sweep: grid start:stop:count)")
        p.add_argument("--r", help="rate r (sweep: grid start:stop:count)")
        p.add_argument("--b", type=float, help="cubic coefficient (default 1)")
        p.add_argument("--omega", type=float, help="angular frequency (default 3)")
        p.add_argument("--lambda-max", type=float, dest="lambda_max",
                       help="shift amplitude (default 8)")
        p.add_argument("--M", type=int, help="ensemble size (default: schedule)")
        p.add_argument("--s", type=float, help="Lambda margin (default 0.01)")
        p.add_argument("--delta", type=float,
                       help="Lin departure offset (default 1e-3)")
        p.add_argument("--section", type=float,
                       help="report the W^s(Z+) crossing of Lambda = SECTION")
        p.add_argument("--jobs", type=int, help="sweep parallelism (default 1)")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output path (default: stdout)")

    p = sub.add_parser("simulate", help="integrate one trajectory to CSV")
    common(p)
    p.add_argument("--t0", type=float, help="start time (default -T)")
    p.add_argument("--t1", type=float, help="end time (default 2T)")
    p.add_argument("--samples", type=int, help="output rows (default 1001)")
    p.add_argument("--w0", help="initial state x,y,Lambda")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("classify", help="tipping class of one (a, r) cell")
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="classification over an (a, r) grid")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("connect", help="locate one connecting orbit")
    common(p)
    p.add_argument("--kind", required=True, choices=("ptoe", "ptop0", "ptop1"))
    p.add_argument("--r-bracket", dest="r_bracket", help="ptoe: lo:hi")
    p.add_argument("--seed-branch", dest="seed_branch",
                   choices=("lower", "upper"), help="ptop1 fold branch")
    p.add_argument("--r-probe", dest="r_probe", type=float,
                   help="ptop1: rate at which to enter the family (default 0.15)")
    p.add_argument("--which", type=int, help="ptop0: connection index (default 0)")
    p.set_defaults(func=cmd_connect)

    p = sub.add_parser("continue", help="continue a threshold curve")
    common(p)
    p.add_argument("--kind", required=True, choices=("ptoe", "ptop0", "ptop1"))
    p.add_argument("--a-range", dest="a_range", help="ptoe/ptop1: lo:hi in a")
    p.add_argument("--r-range", dest="r_range", help="ptop0: lo:hi in r")
    p.add_argument("--r-bracket", dest="r_bracket", help="ptoe: root bracket lo:hi")
    p.add_argument("--seed-branch", dest="seed_branch",
                   choices=("lower", "upper"), help="ptop1 fold branch")
    p.add_argument("--r-probe", dest="r_probe", type=float)
    p.add_argument("--step", type=float, help="continuation step (default 0.01)")
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("fibers", help="pullback-attractor fibers to JSON")
    common(p)
    p.add_argument("--phases", type=int, help="ring samples (default 64)")
    p.set_defaults(func=cmd_fibers)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return args.func(cfg, args)
    except UsageError as err:
        print(f"ratetip: {err}", file=sys.stderr)
        return 2
    except NonConvergenceError as err:
        print(f"ratetip: no convergence: {err}", file=sys.stderr)
        best = getattr(err, "best", None)
        if best is not None:
            out = getattr(args, "out", None) or "ratetip-best-iterate.txt"
            dump = ("# nonconvergence best-iterate dump\n"
                    f"# residual = {best.residual_norm!r}\n"
                    + "".join(f"{v!r}\n" for v in np.asarray(best.u)))
            Path(out).write_text(dump)
            print(f"ratetip: best iterate written to {out}", file=sys.stderr)
        return 1
    except (BracketError, IntegrationFailure, RuntimeError, ValueError) as err:
        print(f"ratetip: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
