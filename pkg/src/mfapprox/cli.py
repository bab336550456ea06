"""Config-driven experiment runner.

Every subcommand reads an optional INI file (section named after the
subcommand), applies ``--set key=value`` overrides and then ``--seed``.
The resolved configuration and the library version head every CSV it
writes, so identical configurations give byte-identical files.

Exit codes: 0 pass, 1 tolerance failure, 2 config or parse error,
3 shape error, 4 solver or simulator error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import os
import sys
import textwrap
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .dynamics import check_characteristics, constant_policy, ou_problem, simulate_batch, simulate_nparticle
from .empirical import read_cloud_csv, wasserstein2
from .errors import BoundViolation, ConfigError, ShapeError, SolverError
from .lab import TARGETS, InitialDataSchedule, build_initial_data, csv_text, run_chaos_experiment, run_value_convergence, svg_line_chart, write_text
from .presets import (
    OPERATOR_PRESETS,
    bounded_drift_problem,
    bounded_value_preset,
    heat_problem,
    heat_value,
    lq_value_preset,
    ou_chaos_preset,
    toward_origin_policy,
)
from .solvers import GridConfig, LQSpec, lq_feedback_policy, lq_problem, solve_hjb_grid, solve_vn_lq_riccati
from .suites import derivative_suite, lift_identity_suite, locality_suite

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_SHAPE, EXIT_RUNTIME = 0, 1, 2, 3, 4
OUTPUT_ENV = "MFAPPROX_OUTPUT_DIR"
DEFAULT_OUTPUT = "mfapprox-out"

_LQ_KEYS = {f.name: f.default for f in dataclasses.fields(LQSpec)}


# ---------------------------------------------------------------- config


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(tok) for tok in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {type(default).__name__}") from None


@dataclasses.dataclass
class ExperimentConfig:
    """Resolved settings of one run; ``values`` excludes output location and worker count."""

    command: str
    values: dict
    output_dir: Path
    workers: int = 1
    svg: bool = False

    def __getitem__(self, key):
        return self.values[key]

    def header(self) -> dict:
        return {"command": self.command, **self.values}


def resolve_config(command: str, defaults: dict, args, extra: Callable[[dict], dict] | None = None, seeded: bool = True) -> ExperimentConfig:
    """Merge defaults, INI section, ``--set`` overrides and ``--seed``.

    ``extra(partial)`` may contribute preset-specific keys once the preset is
    known; keys outside the resulting schema are rejected.
    """
    raw: dict[str, str] = {}
    if args.config:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys such as Ns are case-sensitive
        try:
            with open(args.config) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if parser.has_section(command):
            raw.update(parser[command])
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        raw[key.strip()] = val
    if args.seed is not None:
        raw["seed"] = str(args.seed)

    schema = dict(defaults)
    if extra is not None:
        partial = {k: _parse_value(k, raw[k], v) if k in raw else v for k, v in defaults.items()}
        schema.update(extra(partial))
    output_dir = raw.pop("output_dir", None)
    unknown = sorted(set(raw) - set(schema) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    values = {k: _parse_value(k, raw[k], v) if k in raw else v for k, v in schema.items()}
    if seeded:
        if "seed" not in raw:
            raise ConfigError("a seed is required (--seed or seed = ... in the config)")
        values["seed"] = _parse_value("seed", raw["seed"], 0)
        if values["seed"] < 0:
            raise ConfigError("seed must be nonnegative")
    out = args.output_dir or os.environ.get(OUTPUT_ENV) or output_dir or DEFAULT_OUTPUT
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    return ExperimentConfig(command, values, Path(out), args.workers, getattr(args, "svg", False))


def _require_positive(cfg: ExperimentConfig, *keys: str) -> None:
    for key in keys:
        if cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive, got {cfg[key]}")


def _emit(cfg: ExperimentConfig, name: str, text: str) -> Path:
    path = cfg.output_dir / name
    write_text(path, text)
    print(f"wrote {path}")
    return path


def _lq_spec(cfg: ExperimentConfig) -> LQSpec:
    return LQSpec(**{k: cfg[k] for k in _LQ_KEYS})


def _lq_keys(**overrides) -> dict:
    return {**_LQ_KEYS, **overrides}


# ---------------------------------------------------------------- w2


def cmd_w2(args) -> int:
    clouds = []
    for path in (args.file_a, args.file_b):
        try:
            clouds.append(read_cloud_csv(path))
        except (OSError, ValueError) as exc:
            # a ragged file is a parse failure, not a mismatch between clouds
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    dist, plan = wasserstein2(*clouds)
    print(repr(dist))
    if args.plan:
        rows = [[i, int(j)] for i, j in enumerate(plan.permutation)]
        text = csv_text(["i", "j"], rows, {"command": "w2", "file_a": args.file_a, "file_b": args.file_b}, {"w2": dist, "cost": plan.cost})
        write_text(args.plan, text)
    return EXIT_OK


# ---------------------------------------------------------------- lift-check

LIFT_DEFAULTS = {
    "preset": "random",
    "lift_instances": 200,
    "locality_instances": 50,
    "deriv_instances": 200,
    "lift_tol": 1e-12,
    "deriv_tol": 1e-5,
    "fd_step": 1e-4,
}


def cmd_lift_check(args) -> int:
    cfg = resolve_config("lift-check", LIFT_DEFAULTS, args)
    presets = OPERATOR_PRESETS if cfg["preset"] == "all" else (cfg["preset"],)
    for p in presets:
        if p not in OPERATOR_PRESETS:
            raise ConfigError(f"unknown operator preset {p!r}; choose from all, {', '.join(OPERATOR_PRESETS)}")
    _require_positive(cfg, "lift_instances", "locality_instances", "deriv_instances", "fd_step")
    if cfg["lift_tol"] < 0 or cfg["deriv_tol"] < 0:
        raise ConfigError("tolerances must be nonnegative")

    seed = cfg["seed"]
    results = []
    for p in presets:
        results.append(lift_identity_suite(p, cfg["lift_instances"], seed, cfg["lift_tol"]))
        results.append(locality_suite(p, cfg["locality_instances"], seed))
    results.append(derivative_suite(cfg["deriv_instances"], seed, h=cfg["fd_step"], tol=cfg["deriv_tol"]))

    rows = [[r.name, r.instances, r.tolerance, r.worst, len(r.failures), "pass" if r.passed else "fail"] for r in results]
    _emit(cfg, "lift_check.csv", csv_text(["suite", "instances", "tolerance", "worst", "failures", "verdict"], rows, cfg.header()))
    for r in results:
        print(f"{r.name}: {'pass' if r.passed else 'FAIL'} (worst {r.worst:.3e}, tolerance {r.tolerance:g}, {len(r.failures)}/{r.instances} failing)")
        if r.failures:
            print(f"{r.name}: first offending instance {json.dumps(r.failures[0], default=float)}", file=sys.stderr)
    return EXIT_OK if all(r.passed for r in results) else EXIT_TOLERANCE


# ---------------------------------------------------------------- converge

CONVERGE_DEFAULTS = {
    "preset": "lq",
    "target": "gaussian",
    "target_params": (1.0, 1.0),
    "method": "quantile",
    "Ns": (2, 8, 32, 128),
    "solver": "exact",
    "reps": 200,
    "dt": 0.01,
    "gap_tol": 0.01,
    "include_runtime": False,
}


def _converge_extra(partial: dict) -> dict:
    if partial["preset"] == "lq":
        return _lq_keys()
    if partial["preset"] == "bounded_drift":
        return {"sigma": 0.5, "c": 1.0, "T": 1.0, "points": 201}
    raise ConfigError(f"unknown value preset {partial['preset']!r}; choose from lq, bounded_drift")


def _make_target(name: str, params: tuple):
    if name not in TARGETS:
        raise ConfigError(f"unknown target {name!r}; choose from {', '.join(TARGETS)}")
    try:
        return TARGETS[name](*params)
    except TypeError as exc:
        raise ConfigError(f"parameters {params} do not fit target {name}: {exc}") from None


def cmd_converge(args) -> int:
    cfg = resolve_config("converge", CONVERGE_DEFAULTS, args, extra=_converge_extra)
    _require_positive(cfg, "reps", "dt")
    if cfg["preset"] == "lq":
        preset = lq_value_preset(_lq_spec(cfg), dt=cfg["dt"])
    else:
        preset = bounded_value_preset(cfg["sigma"], cfg["c"], cfg["T"], cfg["dt"], cfg["points"])
    schedule = InitialDataSchedule(_make_target(cfg["target"], cfg["target_params"]), cfg["Ns"], cfg["method"], cfg["seed"])
    report = run_value_convergence(preset, schedule, cfg["solver"], cfg["reps"], cfg["seed"], cfg.workers)
    report = dataclasses.replace(report, config={**cfg.header(), **report.config})

    name = f"converge_{cfg['preset']}"
    _emit(cfg, f"{name}.csv", report.to_csv(include_runtime=cfg["include_runtime"]))
    if cfg.svg:
        ns = [r.N for r in report.rows]
        series = {"|V^N/N - V|": report.gaps, "W2 to target": [r.w2 for r in report.rows]}
        _emit(cfg, f"{name}.svg", svg_line_chart(ns, series, f"value gap, {cfg['preset']}", "N", "gap"))

    for r in report.rows:
        print(f"N={r.N}: value/N={r.value:.10g} se={r.se:.3g} oracle={r.oracle:.10g} gap={r.gap:.3e} w2={r.w2:.3e}")
    final = report.rows[-1]
    ok = abs(final.gap) <= cfg["gap_tol"] * abs(report.oracle) + 3 * final.se
    if cfg["method"] == "quantile" and cfg["solver"] == "exact":
        ok = ok and bool(np.all(np.diff(report.gaps) < 0) or np.all(report.gaps == 0))
    if report.rate is not None:
        print(f"fitted rate {report.rate.slope:.3f} [{report.rate.ci_low:.3f}, {report.rate.ci_high:.3f}]")
    print("converge:", "pass" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_TOLERANCE


# ---------------------------------------------------------------- chaos

CHAOS_DEFAULTS = {
    "preset": "ou",
    "kappa": 1.0,
    "sigma": 1.0,
    "T": 1.0,
    "dt": 1e-3,
    "x0": 0.0,
    "Ns": (8, 64, 1024),
    "reps": 200,
    "pilot_Ns": (8, 16, 32),
    "pilot_reps": 200,
}


def cmd_chaos(args) -> int:
    cfg = resolve_config("chaos", CHAOS_DEFAULTS, args)
    if cfg["preset"] != "ou":
        raise ConfigError(f"unknown chaos preset {cfg['preset']!r}; only presets with an analytic limit law exist: ou")
    _require_positive(cfg, "reps", "pilot_reps", "dt", "T")
    if not cfg["Ns"] or min(cfg["Ns"] + cfg["pilot_Ns"]) < 1:
        raise ConfigError("Ns and pilot_Ns must hold positive particle counts")
    preset = ou_chaos_preset(cfg["kappa"], cfg["sigma"], cfg["T"], cfg["dt"], cfg["x0"])
    report = run_chaos_experiment(preset, cfg["Ns"], cfg["reps"], cfg["seed"], cfg["pilot_Ns"], cfg["pilot_reps"], cfg.workers)
    report = dataclasses.replace(report, config={**cfg.header(), **report.config})

    _emit(cfg, "chaos_ou.csv", report.to_csv())
    if cfg.svg:
        ns = [r.N for r in report.rows]
        series = {"|bias|": [abs(r.bias(report.target)) for r in report.rows], "bias budget": [r.budget for r in report.rows]}
        _emit(cfg, "chaos_ou.svg", svg_line_chart(ns, series, "propagation of chaos, ou", "N", "|bias|"))
    for r, ok in zip(report.rows, report.verdicts):
        print(f"N={r.N}: estimate={r.estimate:.10g} se={r.se:.3g} target={report.target:.10g} budget={r.budget:.3g} {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(report.verdicts) else EXIT_TOLERANCE


# ---------------------------------------------------------------- hjb-grid

GRID_DEFAULTS = {
    "preset": "heat",
    "N": 1,
    "lo": -5.8,
    "hi": 5.8,
    "points": 121,
    "dt": 0.0,
    "T": 1.0,
    "tol": 0.02,
}


def _grid_extra(partial: dict) -> dict:
    if partial["preset"] == "heat":
        return {"sigma": 0.8, "clip": 1.0}
    if partial["preset"] == "lq":
        return _lq_keys(a_max=4.0, state_bound=1.0, n_actions=801)
    if partial["preset"] == "bounded_drift":
        return {"sigma": 0.5, "c": 1.0, "n_actions": 21}
    raise ConfigError(f"unknown grid preset {partial['preset']!r}; choose from heat, lq, bounded_drift")


def cmd_hjb_grid(args) -> int:
    cfg = resolve_config("hjb-grid", GRID_DEFAULTS, args, extra=_grid_extra, seeded=False)
    N, preset = cfg["N"], cfg["preset"]
    if N not in (1, 2):
        raise ConfigError("the grid solver handles N = 1 or 2")
    if preset == "heat" and N != 1:
        raise ConfigError("the heat preset is a single-particle problem")
    _require_positive(cfg, "T")
    if preset == "heat":
        problem = heat_problem(cfg["sigma"], cfg["clip"], cfg["T"], dt=cfg["T"])
        oracle = lambda pts: heat_value(pts[:, 0], cfg["sigma"], cfg["clip"], cfg["T"])  # noqa: E731
    elif preset == "lq":
        spec = _lq_spec(cfg)
        problem = lq_problem(spec, dt=cfg["T"], n_actions=cfg["n_actions"])
        ric = solve_vn_lq_riccati(spec, N)
        oracle = lambda pts: np.array([N * ric.value_at(0.0, float(np.mean(p)), float(np.var(p))) for p in pts])  # noqa: E731
    else:
        problem = bounded_drift_problem(cfg["sigma"], cfg["c"], cfg["T"], dt=cfg["T"], n_actions=cfg["n_actions"])
        oracle = None
    grid = GridConfig(cfg["lo"], cfg["hi"], cfg["points"], dt=cfg["dt"] or None, time_homogeneous=True)
    sol = solve_hjb_grid(problem, N, grid)

    mesh = np.meshgrid(*([sol.axis] * N), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = sol.values.ravel()
    cols = [f"x{i}" for i in range(N)] + ["value", "value_per_particle"]
    footer = {"dt": sol.dt, "steps": sol.steps}
    ok = True
    if oracle is not None:
        exact = oracle(pts)
        err = np.abs(vals - exact)
        centre, half = 0.5 * (cfg["lo"] + cfg["hi"]), 0.25 * (cfg["hi"] - cfg["lo"])
        inner = np.all(np.abs(pts - centre) <= half, axis=1)
        worst = float(np.max(err[inner]))
        scale = float(np.max(np.abs(exact[inner])))
        ok = worst <= cfg["tol"] * scale
        cols += ["oracle", "error"]
        rows = [list(p) + [v, v / N, e, d] for p, v, e, d in zip(pts, vals, exact, err)]
        footer.update(interior_sup_error=worst, interior_sup_oracle=scale, verdict="pass" if ok else "fail")
        print(f"interior sup error {worst:.3e} against oracle scale {scale:.3e}: {'pass' if ok else 'FAIL'}")
    else:
        rows = [list(p) + [v, v / N] for p, v in zip(pts, vals)]
        print("no closed-form oracle for this preset; values written without a verdict")
    _emit(cfg, f"hjb_grid_{preset}_N{N}.csv", csv_text(cols, rows, cfg.header(), footer))
    return EXIT_OK if ok else EXIT_TOLERANCE


# ---------------------------------------------------------------- simulate

SIMULATE_DEFAULTS = {
    "dynamics": "ou",
    "policy": "zero",
    "theta": math.inf,
    "N": 8,
    "x0_target": "gaussian",
    "x0_params": (0.0, 1.0),
    "T": 1.0,
    "dt": 0.01,
    "reps": 1,
}


def _simulate_extra(partial: dict) -> dict:
    if partial["dynamics"] == "ou":
        return {"kappa": 1.0, "sigma": 1.0}
    if partial["dynamics"] == "lq":
        return _lq_keys()
    if partial["dynamics"] == "bounded_drift":
        return {"sigma": 0.5, "c": 1.0}
    raise ConfigError(f"unknown dynamics {partial['dynamics']!r}; choose from ou, lq, bounded_drift")


def cmd_simulate(args) -> int:
    cfg = resolve_config("simulate", SIMULATE_DEFAULTS, args, extra=_simulate_extra)
    _require_positive(cfg, "N", "reps", "dt", "T")
    dyn, N = cfg["dynamics"], cfg["N"]
    if dyn == "ou":
        problem = ou_problem(cfg["kappa"], cfg["sigma"], cfg["T"], cfg["dt"])
    elif dyn == "lq":
        spec = dataclasses.replace(_lq_spec(cfg), T=cfg["T"])
        problem = lq_problem(spec, dt=cfg["dt"])
    else:
        problem = bounded_drift_problem(cfg["sigma"], cfg["c"], cfg["T"], cfg["dt"])

    if cfg["policy"] == "zero":
        policy = constant_policy(0.0)
    elif cfg["policy"] == "lq_feedback" and dyn == "lq":
        policy = lq_feedback_policy(solve_vn_lq_riccati(spec, N))
    elif cfg["policy"] == "toward_origin" and dyn == "bounded_drift":
        policy = toward_origin_policy(cfg["theta"])
    else:
        raise ConfigError(f"policy {cfg['policy']!r} is not available for dynamics {dyn!r}")

    target = _make_target(cfg["x0_target"], cfg["x0_params"])
    method = "quantile" if target.d == 1 and target.ppf is not None else "iid"
    x0 = build_initial_data(InitialDataSchedule(target, (N,), method, cfg["seed"]))[0].x

    bundle = simulate_nparticle(problem, policy, x0, cfg["seed"])
    chars = check_characteristics(bundle, problem.L)
    steps, _, d = bundle.states.shape
    rows = [[k, bundle.times[k], i, *bundle.states[k, i]] for k in range(steps) for i in range(N)]
    footer = {"max_drift": chars.max_drift, "max_diffusion": chars.max_diff, "L": problem.L}
    _emit(cfg, f"simulate_{dyn}_paths.csv", csv_text(["step", "time", "particle"] + [f"x{j}" for j in range(d)], rows, cfg.header(), footer))

    batch = simulate_batch(problem, policy, x0, cfg["seed"], cfg["reps"], workers=cfg.workers)
    term = batch.terminal[..., 0]
    summary = [[r, batch.payoff[r], float(np.mean(term[r])), float(np.var(term[r]))] for r in range(cfg["reps"])]
    _emit(cfg, f"simulate_{dyn}_summary.csv", csv_text(["rep", "payoff_per_particle", "terminal_mean", "terminal_var"], summary, cfg.header()))
    print(f"max|b|={chars.max_drift:.4g} max|sigma|={chars.max_diff:.4g} within L={problem.L:g}; mean payoff {float(np.mean(batch.payoff)):.10g}")
    return EXIT_OK if chars.passed else EXIT_TOLERANCE


# ---------------------------------------------------------------- parser

_SCHEMAS = {
    "w2": "stdout: the distance.  --plan CSV columns: i, j (atom i of FILE_A goes to atom j of FILE_B); footer w2, cost.",
    "lift-check": "lift_check.csv columns: suite, instances, tolerance, worst, failures, verdict.",
    "converge": (
        "converge_<preset>.csv columns: N, value_per_particle, se, w2_to_target, oracle, gap [, runtime_s when include_runtime = true];\n"
        "footer rate_slope, rate_ci_low, rate_ci_high when at least four rows are usable."
    ),
    "chaos": "chaos_ou.csv columns: N, estimate, se, target, bias, bias_budget, verdict; footer bias_budget_C.",
    "hjb-grid": (
        "hjb_grid_<preset>_N<N>.csv columns: x0 [, x1], value, value_per_particle [, oracle, error];\n"
        "footer dt, steps and, when an oracle exists, interior_sup_error, interior_sup_oracle, verdict."
    ),
    "simulate": (
        "simulate_<dynamics>_paths.csv columns: step, time, particle, x0..x{d-1}; footer max_drift, max_diffusion, L.\n"
        "simulate_<dynamics>_summary.csv columns: rep, payoff_per_particle, terminal_mean, terminal_var."
    ),
}

_KEYS = {
    "lift-check": LIFT_DEFAULTS,
    "converge": CONVERGE_DEFAULTS,
    "chaos": CHAOS_DEFAULTS,
    "hjb-grid": GRID_DEFAULTS,
    "simulate": SIMULATE_DEFAULTS,
}


def _epilog(name: str) -> str:
    text = "output schema:\n" + textwrap.indent(_SCHEMAS[name], "  ")
    if name in _KEYS:
        keys = ", ".join(f"{k}={' '.join(map(str, v)) if isinstance(v, tuple) else v}" for k, v in _KEYS[name].items())
        text += f"\n\nconfig keys (section [{name}]) with defaults:\n  {keys}"
    return text + "\n\nEvery CSV starts with '#' lines giving the library version and the resolved configuration."


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfapprox", description="Particle approximations of mean-field control problems: checks and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; the section named after the subcommand is read")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed; required by every randomized subcommand")
    common.add_argument("--workers", type=int, default=1, help="worker threads (default 1; results do not depend on it)")
    common.add_argument("--output-dir", help=f"output directory (else ${OUTPUT_ENV}, else config output_dir, else ./{DEFAULT_OUTPUT})")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str, svg: bool = False, common_opts: bool = True):
        p = sub.add_parser(name, parents=[common] if common_opts else [], help=help_text, description=help_text,
                           epilog=_epilog(name), formatter_class=argparse.RawDescriptionHelpFormatter)
        if svg:
            p.add_argument("--svg", action="store_true", help="also write an SVG chart")
        p.set_defaults(func=func)
        return p

    w2 = add("w2", cmd_w2, "exact W2 distance between two equal-size point clouds (CSV, one particle per row)", common_opts=False)
    w2.add_argument("file_a")
    w2.add_argument("file_b")
    w2.add_argument("--plan", help="write the optimal permutation to this CSV")
    add("lift-check", cmd_lift_check, "randomized identity, locality and derivative suites for the operator lift")
    add("converge", cmd_converge, "per-particle value V^N/N against the mean-field value along a particle schedule", svg=True)
    add("chaos", cmd_chaos, "propagation-of-chaos Monte Carlo against an analytic limit law", svg=True)
    add("hjb-grid", cmd_hjb_grid, "explicit monotone grid solve of the N-particle HJB (N <= 2), checked against closed forms")
    add("simulate", cmd_simulate, "simulate one N-particle system and a batch of replicas")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShapeError as exc:
        print(f"mfapprox: shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (SolverError, BoundViolation) as exc:
        print(f"mfapprox: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"mfapprox: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mfapprox: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a failed run, never a tolerance verdict
        print(f"mfapprox: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
