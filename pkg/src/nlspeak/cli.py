"""Command-line driver: ``nlspeak {limit,solve,sweep,verify,degree}``.

Configuration is an INI file (see ``configs/reference.ini``).  Every command
writes its data files under ``--out`` together with a ``manifest.json`` that
lists them; timestamps appear only in the manifest so data files are
byte-reproducible.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy import optimize

from .domain import (
    DomainError,
    GaussianBump,
    Params,
    PowerNonlinearity,
    Problem,
    check_potential,
    grid_for_spacing,
    write_field,
)
from .limit import ShootingError, build_S0, energy_curve, ground_state, load_S0, save_S0
from .minmax import OriginHit, SolveError, Undersampled, loop_degree, solve
from .verify import (
    EnsembleSpec,
    RecursionHypothesisError,
    convergence_diagnostics,
    decay_recursion_check,
    directional_derivative_test,
    gradient_floor_experiment,
    loglog_slope,
    recursion_instances,
    soliton,
    tail_profile,
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
EXPERIMENTS = ("decay", "recursion", "directional", "floor", "diagnostics")
OUT_ENV = "NLSPEAK_OUT"


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and line when known."""


# -- configuration ------------------------------------------------------------------

DEFAULTS = {
    "grid": {"dim": "1", "box": "5.0", "h": "0.1"},
    "potential": {"kind": "gaussian-bump", "v_inf": "1.0", "amplitude": "1.0", "center": "0.0", "width": "1.0"},
    "nonlinearity": {"kind": "power", "p": "4.0", "clamp": ""},
    "params": {
        "delta0": "0.7", "o_radius": "0.3", "theta1": "0.2", "t0": "2.5",
        "tol": "1e-8", "lin_tol": "1e-8", "max_iter": "500",
    },
    "limit": {"m": "1.0, 1.5, 2.0"},
    "sweep": {"eps": "0.4, 0.2, 0.1, 0.05"},
    "verify": {"z": "0.5", "soliton_m": "1.0", "window": "5, 15", "n_instances": "100"},
    "degree": {"samples": "256", "budget": "0"},
}

SCHEMA = {
    ("grid", "dim"): int, ("grid", "box"): float, ("grid", "h"): float,
    ("potential", "kind"): str, ("potential", "v_inf"): float, ("potential", "amplitude"): float,
    ("potential", "center"): "floats", ("potential", "width"): float,
    ("nonlinearity", "kind"): str, ("nonlinearity", "p"): float, ("nonlinearity", "clamp"): "optfloat",
    ("params", "delta0"): float, ("params", "o_radius"): float, ("params", "theta1"): float,
    ("params", "t0"): float, ("params", "tol"): float, ("params", "lin_tol"): float,
    ("params", "max_iter"): int,
    ("limit", "m"): "floats", ("sweep", "eps"): "floats",
    ("verify", "z"): "floats", ("verify", "soliton_m"): float, ("verify", "window"): "floats",
    ("verify", "n_instances"): int,
    ("degree", "samples"): int, ("degree", "budget"): int,
}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _convert(raw: str, kind):
    if kind == "floats":
        items = [t for t in raw.replace(",", " ").split() if t]
        return [float(t) for t in items]
    if kind == "optfloat":
        return float(raw) if raw.strip() else None
    return kind(raw)


def load_config(path=None) -> dict:
    """Parse an INI config into a nested dict of typed values (defaults filled in)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_dict(DEFAULTS)
    text, name = "", "<defaults>"
    if path is not None:
        name = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{name}: cannot read config ({exc.strerror})") from None
        try:
            parser.read_string(text, source=name)
        except configparser.ParsingError as exc:
            lineno, line = exc.errors[0]
            raise ConfigError(f"{name}:{lineno}: cannot parse {line!r}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{name}: {exc}") from None
    cfg: dict = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{name}:{_line_of_section(text, section)}: unknown section [{section}]")
        for key, raw in parser.items(section):
            kind = SCHEMA.get((section, key))
            where = f"{name}:{_line_of(text, section, key) or '-'}"
            if kind is None:
                raise ConfigError(f"{where}: unknown key '{key}' in [{section}]")
            try:
                cfg.setdefault(section, {})[key] = _convert(raw, kind)
            except ValueError:
                raise ConfigError(f"{where}: bad value {raw!r} for [{section}] {key}") from None
    _validate(cfg, name, text)
    return cfg


def _line_of_section(text, section):
    for i, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return i
    return "-"


def _validate(cfg, name, text):
    def fail(section, key, msg):
        raise ConfigError(f"{name}:{_line_of(text, section, key) or '-'}: [{section}] {key}: {msg}")

    if cfg["potential"]["kind"] != "gaussian-bump":
        fail("potential", "kind", "only 'gaussian-bump' is available from a config file")
    if cfg["nonlinearity"]["kind"] != "power":
        fail("nonlinearity", "kind", "only 'power' is available")
    if len(cfg["potential"]["center"]) != cfg["grid"]["dim"]:
        fail("potential", "center", "needs one coordinate per dimension")
    if cfg["grid"]["box"] <= 0 or cfg["grid"]["h"] <= 0:
        fail("grid", "box", "box and h must be positive")
    for a, b in zip(cfg["limit"]["m"], cfg["limit"]["m"][1:]):
        if not b > a:
            fail("limit", "m", f"must be strictly increasing: {a} then {b}")
    if len(cfg["verify"]["window"]) != 2:
        fail("verify", "window", "needs two radii")


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- problem construction -------------------------------------------------------------


def base_problem(cfg: dict, eps: float = 0.1, L: float | None = None) -> Problem:
    g, pot, nl = cfg["grid"], cfg["potential"], cfg["nonlinearity"]
    d = g["dim"]
    L = g["box"] / eps if L is None else L
    grid = grid_for_spacing(d, L, g["h"])
    V = GaussianBump(pot["v_inf"], pot["amplitude"], tuple(pot["center"]), pot["width"])
    return Problem(grid, V, PowerNonlinearity(nl["p"], nl["clamp"]), Params(eps=eps, **cfg["params"]))


def box_threshold(cfg: dict) -> float:
    """Largest ε for which ``U0`` decays below ``1e-6 U0(0)`` inside the box."""
    U0 = ground_state(base_problem(cfg).V0, base_problem(cfg))
    target = 1e-6 * U0.amplitude
    R = optimize.brentq(lambda r: float(U0.profile(np.array([r]))[0]) - target, 0.0, 60.0 / np.sqrt(U0.m))
    return cfg["grid"]["box"] / R


def make_problem(cfg: dict, eps: float, s0=None) -> Problem:
    threshold = box_threshold(cfg)
    if eps > threshold:
        raise ConfigError(f"eps={eps} exceeds the box-adequacy threshold {threshold:.4f}")
    problem = base_problem(cfg, eps)
    check_potential(problem.potential, problem.grid, eps, problem.params)
    s0 = s0 if s0 is not None else build_S0(problem)
    return s0.apply(problem)


# -- output plumbing ------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


@dataclass
class RunManifest:
    command: str
    cfg: dict
    seed: int
    out: Path
    files: list[Path] = field(default_factory=list)
    started: float = field(default_factory=time.time)
    extra: dict = field(default_factory=dict)

    def add(self, *paths):
        self.files.extend(Path(p) for p in paths)

    def write(self) -> Path:
        try:
            version = metadata.version("artifact")
        except metadata.PackageNotFoundError:
            version = "unknown"
        files = sorted({str(p.relative_to(self.out)) for p in self.files})
        missing = [f for f in files if not (self.out / f).exists()]
        if missing:
            raise RuntimeError(f"manifest lists missing files: {missing}")
        data = {
            "command": self.command,
            "config_digest": config_digest(self.cfg),
            "code_version": version,
            "config": self.cfg,
            "seed": self.seed,
            "started": self.started,
            "finished": time.time(),
            "files": files,
            **self.extra,
        }
        return write_json(self.out / "manifest.json", data)


def _eps_tag(eps: float) -> str:
    return f"eps_{eps:g}"


# -- commands ------------------------------------------------------------------------


def _s0_dir(out: Path) -> Path:
    return out / "limit" / "S0"


def cmd_limit(cfg, args) -> int:
    out = Path(args.out) / "limit"
    man = RunManifest("limit", cfg, args.seed, out)
    problem = base_problem(cfg)
    ms = cfg["limit"]["m"]
    if not ms:
        raise ConfigError("[limit] m: empty list of mass coefficients")
    try:
        curve = energy_curve(ms, problem)
        s0 = build_S0(problem)
    except (ShootingError, DomainError) as exc:
        print(f"limit: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    rows = []
    for m, E in curve:
        g = ground_state(m, problem)
        rows.append([m, E, g.amplitude, g.mass, g.pohozaev_relative, g.decay_rate])
    man.add(write_csv(out / "energy_curve.csv", ["m", "E_m", "amplitude", "mass", "pohozaev_rel", "decay_rate"], rows))
    man.add(*save_S0(s0, problem, _s0_dir(Path(args.out))))
    man.extra["box_threshold"] = box_threshold(cfg)
    man.write()
    for m, E in curve:
        print(f"m={m:g}  E_m={E:.6f}")
    return EXIT_OK


def _load_s0(cfg, args):
    return load_S0(base_problem(cfg), _s0_dir(Path(args.out)))


def _parse_eps(args, cfg) -> list[float]:
    if args.eps:
        try:
            return [float(t) for t in args.eps.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"--eps: cannot parse {args.eps!r}") from None
    return list(cfg["sweep"]["eps"])


def _solve_one(cfg: dict, eps: float, s0_dir: str, run_dir: str) -> tuple[dict, list[str]]:
    """Solve at one ε and write its artifacts; returns the record dict and file list."""
    cfg_problem = base_problem(cfg)
    s0 = load_S0(cfg_problem, s0_dir)
    problem = make_problem(cfg, eps, s0)
    run = Path(run_dir)
    files = []
    try:
        rec = solve(problem, s0)
        status = "ok"
    except SolveError as exc:
        rec, status = exc.record, f"failed: {exc}"
        if rec is None:
            return {"eps": eps, "status": status}, files
    data = rec.to_dict()
    data["status"] = status
    data["box_threshold"] = box_threshold(cfg)
    files.append(str(write_json(run / "record.json", data)))
    files.append(str(rec.trace.write_csv(run / "trace.csv")))
    files.append(str(write_field(run / "field.snls", rec.u, problem.grid)))
    return data, files


def cmd_solve(cfg, args) -> int:
    eps_list = _parse_eps(args, cfg)
    if len(eps_list) != 1:
        raise ConfigError("solve takes exactly one --eps value")
    eps = eps_list[0]
    out = Path(args.out) / "solve" / _eps_tag(eps)
    man = RunManifest("solve", cfg, args.seed, out)
    s0_dir = _s0_dir(Path(args.out))
    if not (s0_dir / "manifest.json").exists():
        raise ConfigError(f"no ground-state set at {s0_dir}; run the 'limit' command first")
    make_problem(cfg, eps, _load_s0(cfg, args))
    data, files = _solve_one(cfg, eps, str(s0_dir), str(out))
    man.add(*files)
    man.write()
    print(json.dumps(_jsonable({k: data.get(k) for k in ("eps", "status", "gamma", "residual", "penalty", "x_eps", "dist_V")})))
    return EXIT_OK if data["status"] == "ok" else EXIT_SOLVER


SWEEP_HEADER = ["eps", "status", "dist_V", "gamma", "c_eps", "decay_c", "decay_r2", "residual", "penalty", "in_Z", "iterations"]


def cmd_sweep(cfg, args) -> int:
    eps_list = _parse_eps(args, cfg)
    for a, b in zip(eps_list, eps_list[1:]):
        if not b < a:
            raise ConfigError(f"--eps must be strictly decreasing: {a} then {b}")
    s0_dir = _s0_dir(Path(args.out))
    if not (s0_dir / "manifest.json").exists():
        raise ConfigError(f"no ground-state set at {s0_dir}; run the 'limit' command first")
    threshold = box_threshold(cfg)
    bad = [e for e in eps_list if e > threshold]
    if bad:
        raise ConfigError(f"eps={bad[0]} exceeds the box-adequacy threshold {threshold:.4f}")
    out = Path(args.out) / "sweep"
    man = RunManifest("sweep", cfg, args.seed, out)
    jobs = [(cfg, e, str(s0_dir), str(out / _eps_tag(e))) for e in eps_list]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_solve_one, *zip(*jobs)))
    else:
        results = [_solve_one(*j) for j in jobs]
    rows = []
    for data, files in results:
        man.add(*files)
        rows.append([data.get(k) for k in SWEEP_HEADER])
    man.add(write_csv(out / "summary.csv", SWEEP_HEADER, rows))
    man.write()
    for row in rows:
        print("  ".join(f"{h}={_cell(v)}" for h, v in zip(SWEEP_HEADER[:5], row[:5])))
    return EXIT_OK if all(r[1] == "ok" for r in rows) else EXIT_SOLVER


# -- verify -------------------------------------------------------------------------------


def _verify_decay(cfg, args, out, man):
    v = cfg["verify"]
    m = v["soliton_m"]
    problem = base_problem(cfg, eps=0.1, L=40.0)
    u = soliton(problem.grid, m)
    rep = tail_profile(u, problem, window=tuple(v["window"]), center=np.zeros(problem.grid.d))
    man.add(write_json(out / "decay.json", rep.to_dict()))
    target = 2 * np.sqrt(m)
    ok = abs(rep.c - target) <= 0.05 * target and rep.r2 >= 0.99
    return ok, f"soliton m={m:g}: c={rep.c:.4f} (expect {target:.3f}), r2={rep.r2:.5f}"


def _verify_recursion(cfg, args, out, man):
    n = cfg["verify"]["n_instances"]
    rng = np.random.default_rng(args.seed)
    good = bad = 0
    rows = []
    for i, (Q, theta, b, _) in enumerate(recursion_instances(rng, n, True)):
        try:
            res = decay_recursion_check(Q, theta, b)
        except RecursionHypothesisError:
            res = False
        good += bool(res)
        rows.append([i, "valid", theta, b, bool(res)])
    for i, (Q, theta, b, k) in enumerate(recursion_instances(rng, n, False)):
        try:
            decay_recursion_check(Q, theta, b)
            rejected = False
        except RecursionHypothesisError as exc:
            rejected = exc.step == k
        bad += rejected
        rows.append([i, "violating", theta, b, rejected])
    man.add(write_csv(out / "recursion.csv", ["instance", "kind", "theta", "b", "ok"], rows))
    ok = good == n and bad == n
    return ok, f"accepted {good}/{n} valid instances, rejected {bad}/{n} violating instances"


def _verify_directional(cfg, args, out, man):
    z = np.array(cfg["verify"]["z"])
    eps_list = _parse_eps(args, cfg)
    rows, reps = [], []
    for eps in eps_list:
        problem = base_problem(cfg, eps)
        rep = directional_derivative_test(z, problem)
        reps.append(rep)
        rows.append([eps, rep.measured, rep.predicted, rep.ratio, rep.dual_residual, rep.upper_bound, rep.aux_distance])
    man.add(write_csv(out / "directional.csv", ["eps", "measured", "predicted", "ratio", "dual_residual", "upper_bound", "aux_distance"], rows))
    eps_arr = np.array(eps_list)
    slope = loglog_slope(eps_arr, np.abs([r.measured for r in reps])) if len(eps_list) > 1 else float("nan")
    man.add(write_json(out / "directional.json", {"slope": slope, "reports": [r.to_dict() for r in reps]}))
    ratios_ok = all(0.75 <= r.ratio <= 1.25 for e, r in zip(eps_list, reps) if e <= 0.1)
    slope_ok = len(eps_list) < 2 or abs(slope - 1.0) <= 0.15
    return ratios_ok and slope_ok, f"ratios {[round(r.ratio, 4) for r in reps]}, slope {slope:.4f}"


def _verify_floor(cfg, args, out, man):
    eps_list = _parse_eps(args, cfg)
    s0 = _load_s0(cfg, args)
    spec = EnsembleSpec(seed=args.seed)
    table = gradient_floor_experiment(eps_list, lambda e: make_problem(cfg, e, s0), s0, spec)
    header = ["eps", "regime", "min_dual_norm", "witness", "n_members", "n_in_set", "min_dual_norm_all", "witness_all"]
    man.add(write_csv(out / "floor.csv", header, [[r.to_dict()[h] for h in header] for r in table.rows]))
    e_a, a = table.column("a")
    e_b, b = table.column("b")
    slope_a = loglog_slope(e_a, a) if len(e_a) > 1 else float("nan")
    spread_b = float(np.max(b) / np.min(b)) if len(b) else float("nan")
    man.add(write_json(out / "floor.json", {
        "slope_a": slope_a, "spread_b": spread_b, "duality_ok": table.duality_ok(),
        "slope_a_all": loglog_slope(*table.column("a", "min_dual_norm_all")) if len(e_a) > 1 else None,
    }))
    ok = abs(slope_a - 1.0) <= 0.2 and spread_b <= 2.0 and table.duality_ok()
    return ok, f"regime a slope {slope_a:.4f}, regime b max/min {spread_b:.3f}, duality {table.duality_ok()}"


def _verify_diagnostics(cfg, args, out, man):
    eps_list = _parse_eps(args, cfg)
    s0 = _load_s0(cfg, args)
    rows = []
    for eps in eps_list:
        problem = make_problem(cfg, eps, s0)
        rec = solve(problem, s0)
        dg = convergence_diagnostics(rec.u, problem, s0)
        rows.append([eps, dg.dist, dg.m, dg.offset, dg.R0, dg.within_2R0])
    man.add(write_csv(out / "diagnostics.csv", ["eps", "distance", "m", "offset", "R0", "within_2R0"], rows))
    ok = all(r[-1] for r in rows)
    return ok, "distances " + ", ".join(f"{r[1]:.4g}" for r in rows)


VERIFIERS = {
    "decay": _verify_decay,
    "recursion": _verify_recursion,
    "directional": _verify_directional,
    "floor": _verify_floor,
    "diagnostics": _verify_diagnostics,
}


def cmd_verify(cfg, args) -> int:
    out = Path(args.out) / "verify" / args.which
    man = RunManifest(f"verify {args.which}", cfg, args.seed, out)
    try:
        ok, msg = VERIFIERS[args.which](cfg, args, out, man)
    except (SolveError, ShootingError) as exc:
        print(f"verify {args.which}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    man.extra["passed"] = bool(ok)
    man.write()
    print(f"{args.which}: {'PASS' if ok else 'FAIL'}  {msg}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_degree(cfg, args) -> int:
    eps_list = _parse_eps(args, cfg) if args.eps else [0.1]
    if len(eps_list) != 1:
        raise ConfigError("degree takes exactly one --eps value")
    eps = eps_list[0]
    if cfg["grid"]["dim"] != 1:
        raise ConfigError("[grid] dim: the degree command needs dim = 1")
    out = Path(args.out) / "degree" / _eps_tag(eps)
    man = RunManifest("degree", cfg, args.seed, out)
    s0 = _load_s0(cfg, args)
    problem = make_problem(cfg, eps, s0)
    d = cfg["degree"]
    try:
        rep = loop_degree(problem, s0, n=d["samples"], budget=d["budget"])
    except (OriginHit, Undersampled) as exc:
        print(f"degree: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    man.add(write_json(out / "degree.json", {"eps": eps, **rep.to_dict()}))
    man.add(write_csv(out / "loop.csv", ["k", "upsilon_offset", "pohozaev"], [[k, *v] for k, v in enumerate(rep.values)]))
    man.write()
    print(rep.degree)
    return EXIT_OK


COMMANDS = {"limit": cmd_limit, "solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify, "degree": cmd_degree}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--eps", metavar="LIST", help="comma-separated ε values")
    common.add_argument("--jobs", metavar="N", type=int, default=1, help="parallel workers for sweeps")
    common.add_argument("--out", metavar="DIR", default=os.environ.get(OUT_ENV, "runs"), help="output directory")
    common.add_argument("--seed", metavar="U64", type=_u64, default=0, help="seed for randomized ensembles")
    parser = argparse.ArgumentParser(prog="nlspeak", description="Penalized min-max solver for concentrating NLS bound states.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("limit", parents=[common], help="ground states of the limit problem and the set S0")
    sub.add_parser("solve", parents=[common], help="min-max solve at one ε")
    sub.add_parser("sweep", parents=[common], help="solve over a decreasing list of ε")
    v = sub.add_parser("verify", parents=[common], help="run one verification experiment")
    v.add_argument("which", choices=EXPERIMENTS)
    sub.add_parser("degree", parents=[common], help="winding degree of the boundary loop")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
