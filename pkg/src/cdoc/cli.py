"""Batch front-end: ``cdoc {solve, sweep, montecarlo, verify}``.

Every subcommand takes a TARGET that is either a registered problem name or a
config file (INI or JSON, see ``docs/config.md``).  Command-line flags
override config values.  Exit codes: 0 success, 2 usage or config error,
3 non-convergence or a failed verification.

All outputs are deterministic: JSON is written with a fixed key order, CSV
floats use the shortest round-trip representation, and no timestamps or
timings are recorded.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .augment import WeightSchedule
from .core import ControlSignal, TimeGrid
from .mc import evaluate_dispersion, sample_parameters, sensitivity_integral
from .problems import REGISTRY, default_fraction, get_problem
from .solver import SolverOptions, solve_cdoc
from .verify import SUITES, run_suite

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 2, 3
DEFAULT_SWEEP = [0.0, 1.0, 100.0, 1000.0, 10000.0]
TOOL = "cdoc"

log = logging.getLogger("cdoc")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved settings of one CLI run; echoed into every output file."""

    problem: str
    overrides: dict = field(default_factory=dict)
    N: Optional[int] = None
    weights: Optional[list] = None
    solver: dict = field(default_factory=dict)
    out: str = "."
    seed: int = 0
    samples: int = 100
    fraction: Optional[float] = None
    workers: int = 1
    suite: str = "all"

    def options(self) -> SolverOptions:
        known = {f.name for f in fields(SolverOptions)}
        bad = set(self.solver) - known
        if bad:
            raise ConfigError(f"unknown solver option(s): {', '.join(sorted(bad))}")
        return SolverOptions(**{**self.solver, "N": self.N, "seed": self.seed})

    def echo(self) -> dict:
        """Settings that determine the results; the output location and the
        worker count do not, so outputs are byte-identical across them."""
        out = asdict(self)
        del out["out"], out["workers"]
        return out


# ---------------------------------------------------------------- config files

_INT_KEYS = {"N", "seed", "samples", "workers"}
_SOLVER_INT = {"N", "outer_iterations", "inner_iterations", "seed", "starts", "memory",
               "precondition_refresh", "polish_steps"}
_SOLVER_BOOL = {"precondition"}
_SOLVER_STR = {"gradient_mode"}


def _parse_weights(text) -> list:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(v) for v in text]
    parts = [p for p in str(text).replace(",", " ").split() if p]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"cannot parse weights {text!r}") from None


def _coerce_solver(raw: dict) -> dict:
    out = {}
    for key, val in raw.items():
        if key in _SOLVER_STR:
            out[key] = str(val)
        elif key in _SOLVER_BOOL:
            out[key] = val if isinstance(val, bool) else str(val).strip().lower() in ("1", "true", "yes", "on")
        elif key in _SOLVER_INT:
            out[key] = int(val)
        else:
            out[key] = float(val)
    return out


def _from_mapping(data: dict) -> dict:
    problem = dict(data.get("problem", {}))
    name = problem.pop("name", None)
    if name is None:
        raise ConfigError("config lacks [problem] name")
    run = dict(data.get("run", {}))
    settings = {"problem": str(name), "overrides": {k: _number(v) for k, v in problem.items()}}
    for key, val in run.items():
        if key in _INT_KEYS:
            settings[key] = int(val)
        elif key == "fraction":
            settings[key] = float(val)
        elif key in ("out", "suite"):
            settings[key] = str(val)
        else:
            raise ConfigError(f"unknown [run] key {key!r}")
    if "weights" in data:
        w = data["weights"]
        settings["weights"] = _parse_weights(w.get("alpha", w) if isinstance(w, dict) else w)
    if "solver" in data:
        solver = dict(data["solver"])
        if "N" in solver:
            settings["N"] = int(solver.pop("N"))
        settings["solver"] = _coerce_solver(solver)
    return settings


def _number(text):
    if isinstance(text, (int, float)):
        return text
    try:
        return float(text)
    except ValueError:
        return str(text)


def load_config(path: Path) -> dict:
    """Settings from an INI or JSON config file (JSON if it parses as such)."""
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if raw.lstrip().startswith("{"):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON in {path}: {exc}") from None
    else:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read_string(raw, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"bad config {path}: {exc}") from None
        data = {s: dict(parser[s]) for s in parser.sections()}
        if "weights" in data:
            data["weights"] = data["weights"].get("alpha", "")
    return _from_mapping(data)


_DEFAULT_N = {"verify": 1001}
_DEFAULT_WEIGHTS = {"sweep": DEFAULT_SWEEP}


def resolve(args: argparse.Namespace) -> RunConfig:
    target = args.target
    if target in REGISTRY:
        settings = {"problem": target}
    else:
        path = Path(target)
        if not path.exists():
            raise ConfigError(f"{target!r} is neither a registered problem nor a config file")
        settings = load_config(path)
    if settings["problem"] not in REGISTRY:
        raise ConfigError(f"unknown problem {settings['problem']!r}")
    for key in ("N", "out", "seed", "samples", "fraction", "workers", "suite"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if getattr(args, "weight", None) is not None:
        settings["weights"] = [args.weight]
    if getattr(args, "weights", None) is not None:
        settings["weights"] = _parse_weights(args.weights)
    cfg = RunConfig(**settings)
    if cfg.N is None:
        cfg.N = _DEFAULT_N.get(args.command, 101)
    if cfg.weights is None:
        cfg.weights = list(_DEFAULT_WEIGHTS.get(args.command, [0.0]))
    if cfg.N < 2:
        raise ConfigError("grid must have at least 2 nodes")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if any(w < 0 for w in cfg.weights):
        raise ConfigError("weights must be non-negative")
    try:
        get_problem(cfg.problem, **cfg.overrides)
        cfg.options()
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ------------------------------------------------------------------- writers

def _meta(cfg: RunConfig) -> dict:
    prob = get_problem(cfg.problem, **cfg.overrides)
    return {
        "tool": TOOL,
        "version": __version__,
        "seed": cfg.seed,
        "grid": {"t0": prob.t0, "tf": prob.tf, "N": cfg.N},
        "config": cfg.echo(),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, meta: dict, header: list, rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# tool={meta['tool']} version={meta['version']} seed={meta['seed']}"
                 f" grid={json.dumps(meta['grid'])}\n")
        fh.write(f"# config={json.dumps(meta['config'])}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _names(prefix: str, count: int) -> list:
    return [f"{prefix}{i + 1}" for i in range(count)]


def trajectory_rows(t, z, u, n, l):
    header = (["t"] + _names("x", n) + _names("p", l) + _names("lambda", n)
              + _names("mu", l) + _names("u", u.shape[1]))
    return header, [[ti, *zi, *ui] for ti, zi, ui in zip(t, z, u)]


# ---------------------------------------------------------------- solve jobs

def _solve_job(problem: str, overrides: dict, weight: float, opts: dict) -> dict:
    """Picklable unit of work: one solve, returned as plain arrays and scalars."""
    prob = get_problem(problem, **overrides)
    sol = solve_cdoc(prob, WeightSchedule.constant([weight] * prob.l), SolverOptions(**opts))
    return {
        "weight": weight,
        "J": sol.J, "Jc": sol.Jc, "Js": sol.Js,
        "sensitivity": sensitivity_integral(prob, sol, np.ones(prob.l)),
        "converged": sol.converged, "status": sol.status,
        "residuals": sol.residuals, "iterations": sol.iterations,
        "costate_check": sol.costate_check,
        "t": sol.grid.nodes, "z": sol.z.states, "u": sol.u.values, "u_solved": sol.u_solved.values,
        "n": sol.n, "l": sol.l,
    }


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _solution_payload(res: dict, meta: dict) -> dict:
    return {
        **meta,
        "problem": meta["config"]["problem"],
        "weight": res["weight"],
        "J": res["J"], "Jc": res["Jc"], "Js": res["Js"],
        "sensitivity": res["sensitivity"],
        "converged": res["converged"], "status": res["status"],
        "residuals": res["residuals"], "iterations": res["iterations"],
        "costate_check": res["costate_check"],
    }


# ------------------------------------------------------------------ commands

def cmd_solve(cfg: RunConfig) -> int:
    if len(cfg.weights) != 1:
        raise ConfigError("solve takes a single weight; use sweep for several")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg)
    res = _solve_job(cfg.problem, cfg.overrides, cfg.weights[0], asdict(cfg.options()))
    _write_json(out / "solution.json", _solution_payload(res, meta))
    header, rows = trajectory_rows(res["t"], res["z"], res["u"], res["n"], res["l"])
    _write_csv(out / "trajectory.csv", meta, header, rows)
    return EXIT_OK if res["converged"] else EXIT_NOT_CONVERGED


def _weight_tag(w: float) -> str:
    return repr(float(w)).replace(".", "p").replace("-", "m").replace("+", "")


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.weights:
        raise ConfigError("empty weight list")
    if any(b <= a for a, b in zip(cfg.weights, cfg.weights[1:])):
        raise ConfigError("weights must be strictly ascending")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg)
    opts = asdict(cfg.options())
    results = _map(_solve_job, [(cfg.problem, cfg.overrides, w, opts) for w in cfg.weights], cfg.workers)
    rows = [[r["weight"], r["J"], r["Jc"], r["converged"], r["sensitivity"]] for r in results]
    _write_csv(out / "tradeoff.csv", meta, ["weight", "J", "Jc", "converged", "sensitivity"], rows)
    for r in results:
        header, trows = trajectory_rows(r["t"], r["z"], r["u"], r["n"], r["l"])
        _write_csv(out / f"trajectory_w{_weight_tag(r['weight'])}.csv", meta, header, trows)
    return EXIT_OK if all(r["converged"] for r in results) else EXIT_NOT_CONVERGED


def _dispersion_job(problem: str, overrides: dict, t, u_values, draws):
    prob = get_problem(problem, **overrides)
    u = ControlSignal(TimeGrid(np.asarray(t)), np.asarray(u_values))
    st = evaluate_dispersion(prob, u, draws)
    return st.costs, st.final_states, st.trajectories, st.diverged, st.nominal_cost


def cmd_montecarlo(cfg: RunConfig) -> int:
    if cfg.samples < 1:
        raise ConfigError("samples must be >= 1")
    if len(cfg.weights) != 1:
        raise ConfigError("montecarlo takes a single weight")
    fraction = default_fraction(cfg.problem) if cfg.fraction is None else cfg.fraction
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("fraction must lie in [0, 1]")
    cfg.fraction = fraction
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg)
    prob = get_problem(cfg.problem, **cfg.overrides)
    res = _solve_job(cfg.problem, cfg.overrides, cfg.weights[0], asdict(cfg.options()))
    draws = sample_parameters(prob.p0, fraction, cfg.samples, cfg.seed)
    chunks = [c for c in np.array_split(draws, max(1, min(cfg.workers, cfg.samples))) if len(c)]
    parts = _map(_dispersion_job,
                 [(cfg.problem, cfg.overrides, res["t"], res["u_solved"], c) for c in chunks], cfg.workers)
    costs = np.concatenate([p[0] for p in parts])
    finals = np.concatenate([p[1] for p in parts])
    trajs = np.concatenate([p[2] for p in parts])
    diverged = np.concatenate([p[3] for p in parts])
    nominal = parts[0][4]
    rows = [[i, *draws[i], costs[i], *finals[i], diverged[i]] for i in range(cfg.samples)]
    header = ["draw"] + _names("p", prob.l) + ["cost"] + _names("xf", prob.n) + ["diverged"]
    _write_csv(out / "mc_samples.csv", meta, header, rows)
    trows = [[i, t, *trajs[i, j]] for i in range(cfg.samples) for j, t in enumerate(res["t"])]
    _write_csv(out / "mc_trajectories.csv", meta, ["draw", "t"] + _names("x", prob.n), trows)
    ok = ~diverged
    stats = {
        "samples": cfg.samples,
        "excluded": int(np.count_nonzero(diverged)),
        "fraction": fraction,
        "nominal_cost": nominal,
    }
    for key, fn in (("mean", np.mean), ("std", np.std), ("min", np.min), ("max", np.max)):
        stats[key] = float(fn(costs[ok])) if ok.any() else None
    stats["final_state_std"] = np.std(finals[ok], axis=0).tolist() if ok.any() else None
    payload = {**meta, "problem": cfg.problem, "weight": cfg.weights[0],
               "solution": {"J": res["J"], "Jc": res["Jc"], "converged": res["converged"],
                            "status": res["status"]},
               "dispersion": stats}
    _write_json(out / "mc_summary.json", payload)
    return EXIT_OK if res["converged"] else EXIT_NOT_CONVERGED


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.suite not in SUITES:
        raise ConfigError(f"unknown suite {cfg.suite!r}; choose from {', '.join(SUITES)}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    prob = get_problem(cfg.problem, **cfg.overrides)
    report = run_suite(prob, cfg.suite, N=cfg.N, seed=cfg.seed)
    _write_json(out / "verify.json", {**_meta(cfg), "problem": cfg.problem, "suite": cfg.suite,
                                      "results": report})
    return EXIT_OK if report["passed"] else EXIT_NOT_CONVERGED


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "montecarlo": cmd_montecarlo, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cdoc", description="Cost-desensitized optimal control toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, grid_default=None):
        p.add_argument("target", help="registered problem name or config file (INI/JSON)")
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--grid", dest="N", type=int, help="number of grid nodes")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="process-pool size for independent solves/draws")

    p = sub.add_parser("solve", help="solve at one desensitization weight")
    common(p)
    p.add_argument("--weight", type=float, help="constant diagonal weight alpha")
    p = sub.add_parser("sweep", help="solve over a list of weights")
    common(p)
    p.add_argument("--weights", help="comma- or space-separated ascending weights "
                                     f"(default {','.join(str(w) for w in DEFAULT_SWEEP)})")
    p = sub.add_parser("montecarlo", help="open-loop dispersion of a solved control")
    common(p)
    p.add_argument("--weight", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--fraction", type=float, help="relative half-width of the parameter draws")
    p = sub.add_parser("verify", help="co-state and transition-matrix checks")
    common(p)
    p.add_argument("--suite", help="theorem1, stm or all")
    return ap


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"cdoc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
