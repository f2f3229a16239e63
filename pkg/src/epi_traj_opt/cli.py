"""Command-line interface: ``epi-traj-opt simulate|optimize|verify``.

Exit codes: 0 success, 1 invalid configuration, 2 solver failure or
divergence, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .integrator import ControlSchedule, TimeGrid, euler_simulate, write_trajectory_csv
from .metrics import peak, trajectory_metrics
from .model import DEFAULT_INITIAL_STATE, Control, DengueSystem, ParameterSet, State
from .solver import SolverConfig, solve_nlp
from .transcription import extract_trajectory, transcribe

log = logging.getLogger("epi_traj_opt")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
MODES = ("simulate", "optimize", "verify")


@dataclass
class ScenarioConfig:
    params: ParameterSet = field(default_factory=ParameterSet)
    h: float = 0.25
    initial: tuple = tuple(DEFAULT_INITIAL_STATE)
    controls: tuple = (0.0, 0.0)
    mode: str = "simulate"
    solver: SolverConfig = field(default_factory=SolverConfig)
    out: str = "out"
    nonnegative_controls: bool = True

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.params.t_final, self.h)


_TOP_KEYS = {"params", "grid", "initial", "controls", "mode", "solver", "out",
             "nonnegative_controls"}


def _parse_number(text: str, key: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    raise ConfigError(f"{key}: expected a number, got {text!r}")


def _parse_pairs(items, label):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"{label} override must look like key=value, got {item!r}")
        out[key.strip()] = _parse_number(value.strip(), f"{label} {key.strip()}")
    return out


def _named_vector(value, names, label):
    if isinstance(value, dict):
        unknown = set(value) - set(names)
        if unknown:
            raise ConfigError(f"{label}: unknown field(s) {', '.join(sorted(unknown))}")
        defaults = dict(zip(names, [None] * len(names)))
        defaults.update(value)
        missing = [k for k, v in defaults.items() if v is None]
        if missing:
            raise ConfigError(f"{label}: missing field(s) {', '.join(missing)}")
        value = [defaults[k] for k in names]
    try:
        vec = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{label}: expected {len(names)} numbers") from None
    if len(vec) != len(names) or not all(np.isfinite(vec)):
        raise ConfigError(f"{label}: expected {len(names)} finite numbers")
    return vec


def build_config(args, env=None) -> ScenarioConfig:
    """Merge the JSON file (if any) with flag overrides; flags win."""
    env = os.environ if env is None else env
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    mode = data.get("mode", args.command)
    if mode != args.command:
        log.info("config mode %r overridden by command %r", mode, args.command)

    param_data = dict(data.get("params", {}))
    grid_data = dict(data.get("grid", {}))
    unknown = set(grid_data) - {"h", "t_final"}
    if unknown:
        raise ConfigError(f"grid: unknown field(s) {', '.join(sorted(unknown))}")
    if "t_final" in grid_data:
        param_data["t_final"] = grid_data["t_final"]
    param_data.update(_parse_pairs(args.param, "param"))
    params = ParameterSet.from_dict(param_data)

    h = args.h if args.h is not None else grid_data.get("h", 0.25)
    if isinstance(h, bool) or not isinstance(h, (int, float)):
        raise ConfigError(f"grid h: expected a number, got {h!r}")

    solver_data = dict(data.get("solver", {}))
    solver_data.update(_parse_pairs(getattr(args, "solver", None), "solver"))
    if env.get("EPI_SEED") is not None:
        try:
            solver_data["seed"] = int(env["EPI_SEED"])
        except ValueError:
            raise ConfigError(f"EPI_SEED must be an integer, got {env['EPI_SEED']!r}") from None
    solver = SolverConfig.from_dict(solver_data)

    initial = _named_vector(data.get("initial", DEFAULT_INITIAL_STATE), State._fields, "initial")
    if min(initial) < 0.0:
        raise ConfigError("initial: states must be non-negative")
    if initial[4] != 0.0:
        raise ConfigError("initial: x5 (accumulated cost) must be 0")
    controls = _named_vector(data.get("controls", (0.0, 0.0)), Control._fields, "controls")

    cfg = ScenarioConfig(
        params=params,
        h=float(h),
        initial=initial,
        controls=controls,
        mode=args.command,
        solver=solver,
        out=args.out or data.get("out", "out"),
        nonnegative_controls=bool(data.get("nonnegative_controls", True)),
    )
    cfg.grid  # validates h against t_final
    return cfg


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _write_partial_csv(path, grid, states, controls):
    n = len(states)
    u = np.vstack([controls, controls[-1:]])[:n]
    with open(path, "w") as fh:
        fh.write("t,x1,x2,x3,x4,x5,u1,u2\n")
        for t, x, ui in zip(grid.times[:n], states, u):
            fh.write(",".join(f"{v:.17g}" for v in (t, *x, *ui)) + "\n")


def _summary(traj, params):
    x3_peak, x3_week = peak(traj.times, traj.states[:, 2])
    return {
        "final_state": dict(zip(traj.state_names, map(float, traj.states[-1]))),
        "total_cost": traj.total_cost,
        "peak_x3": x3_peak,
        "peak_x3_week": x3_week,
        "grid": {"h": traj.grid.h, "n_steps": traj.grid.n_steps, "t_final": traj.grid.t_final},
        "diagnostics": traj.diagnostics(params),
    }


def _figures(args, traj, out):
    if not args.figures:
        return
    from .plotting import save_trajectory_figures

    paths = save_trajectory_figures(traj, out)
    log.info("wrote %d figures", len(paths))


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    grid = cfg.grid
    sched = ControlSchedule.constant(grid, cfg.controls)
    path = os.path.join(cfg.out, "trajectory.csv")
    try:
        traj = euler_simulate(cfg.initial, sched, DengueSystem(cfg.params))
    except DivergenceError as exc:
        _write_partial_csv(path, grid, exc.partial, sched.values)
        log.error("simulation diverged: %s (partial trajectory kept in %s)", exc, path)
        return EXIT_SOLVER
    write_trajectory_csv(traj, path)
    _write_json(os.path.join(cfg.out, "summary.json"), _summary(traj, cfg.params))
    _figures(args, traj, cfg.out)
    return EXIT_OK


def cmd_optimize(cfg: ScenarioConfig, args) -> int:
    grid = cfg.grid
    system = DengueSystem(cfg.params)
    try:
        baseline = euler_simulate(cfg.initial, ControlSchedule.zeros(grid, 2), system)
    except DivergenceError as exc:
        log.error("zero-control baseline diverged: %s", exc)
        return EXIT_SOLVER
    nlp = transcribe(system, grid, cfg.initial, nonnegative_controls=cfg.nonnegative_controls)
    z, report = solve_nlp(nlp, None, cfg.solver)
    _write_json(os.path.join(cfg.out, "report.json"), report.to_dict())
    with open(os.path.join(cfg.out, "history.csv"), "w") as fh:
        fh.write(report.history_csv())
    if not np.all(np.isfinite(z)):
        log.error("solver diverged: %s", report.message)
        return EXIT_SOLVER
    traj = extract_trajectory(nlp, z, tol_feas=cfg.solver.tol_feas)
    write_trajectory_csv(traj, os.path.join(cfg.out, "trajectory.csv"))
    comparison = {
        "zero_control": trajectory_metrics(baseline),
        "optimized": trajectory_metrics(traj),
        "solver_status": report.status,
        "diagnostics": traj.diagnostics(cfg.params),
    }
    _write_json(os.path.join(cfg.out, "comparison.json"), comparison)
    _figures(args, traj, cfg.out)
    if not report.converged:
        log.error("solver stopped with status %s: %s", report.status, report.message)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_verify(cfg: ScenarioConfig, args) -> int:
    from .verification import Context, run_checks

    ctx = Context(cfg.params, cfg.grid, cfg.initial, cfg.solver, out_dir=cfg.out,
                  fault=args.inject_fault)

    clock = [time.perf_counter()]

    def progress(res):
        now = time.perf_counter()
        log.info("[%s] %-4s %s (%.2f s)", res.status.upper(), res.id, res.name, now - clock[0])
        clock[0] = now

    results = run_checks(ctx, skip=set(args.skip or ()), progress=progress)
    counted = [r for r in results if r.status != "skipped"]
    all_passed = all(r.passed for r in counted)
    payload = {
        "seed": cfg.solver.seed,
        "all_passed": all_passed,
        "counts": {
            "passed": sum(r.passed for r in counted),
            "failed": sum(not r.passed for r in counted),
            "skipped": len(results) - len(counted),
        },
        "checks": [r.to_dict() for r in results],
    }
    _write_json(os.path.join(cfg.out, "verify.json"), payload)
    return EXIT_OK if all_passed else EXIT_VERIFY


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epi-traj-opt",
        description="Dengue optimal control: simulate, optimise and verify.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--param", action="append", metavar="K=V",
                       help="override a model parameter (repeatable)")
        p.add_argument("--solver", action="append", metavar="K=V",
                       help="override a solver setting (repeatable)")
        p.add_argument("--h", type=float, help="time step in weeks")
        p.add_argument("--out", help="output directory (default: out)")
        if mode in ("simulate", "optimize"):
            p.add_argument("--figures", action="store_true",
                           help="also write PNG figures (requires matplotlib)")
        if mode == "verify":
            p.add_argument("--skip", action="append", metavar="ID",
                           help="skip a check id, or 'slow' for long checks")
            p.add_argument("--inject-fault", choices=["jacobian"], help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = build_config(args)
        os.makedirs(cfg.out, exist_ok=True)
    except (ConfigError, DomainError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot create output directory: %s", exc)
        return EXIT_CONFIG
    handler = {"simulate": cmd_simulate, "optimize": cmd_optimize, "verify": cmd_verify}[args.command]
    try:
        return handler(cfg, args)
    except (ConfigError, DomainError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("divergence: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
