"""Command-line front end.

Experiment subcommands take their settings from three layers, later ones
winning: built-in defaults, the ``--config`` JSON file, explicit flags.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .harness.runner import (
    ExperimentConfig,
    ExperimentError,
    PolicySpec,
    run_experiment,
    scaling_study,
    version_string,
)
from .harness.scenarios import (
    ADVERSARIAL_KINDS,
    SETTINGS,
    build_adversarial,
    build_exp1,
    build_exp2,
    build_finite_stationary,
    build_stationary_uniform,
    load_topology,
)
from .lp import LpNumericalError, LpProblem, lp_solve
from .model import instance_from_dict, load_instance, schedule_from_dict
from .oracle import OracleError, SolverConfig
from .policies import PolicyError
from .wasserstein import WassersteinError, per_phase_distances, wbdb, wbnb

log = logging.getLogger("onlinebudget")

DOMAIN_ERRORS = (
    ValueError,
    KeyError,
    OSError,
    ExperimentError,
    OracleError,
    PolicyError,
    LpNumericalError,
    WassersteinError,
)

COMMON_DEFAULTS = {
    "trials": 100,
    "out": None,
    "threads": None,
    "trace": False,
    "benchmark": "mean_hindsight",
    "saa_samples": 10_000,
    "dual_method": "subgradient",
    "step_schedule": "constant",
    "policies": None,
    "seed": None,
}

DEFAULTS = {
    "exp1": {
        **COMMON_DEFAULTS,
        "setting": "uniform",
        "alpha": 1.0,
        "beta": 0.0,
        "T": 1000,
        "m": 10,
        "c": 200.0,
        "clip": True,
        "normal_mode": "reject",
        "policies": "igdp,ugd,fbp,o2o",
    },
    "exp2": {
        **COMMON_DEFAULTS,
        "alpha": 0.0,
        "beta": 0.0,
        "T": 1000,
        "topology": None,
        "resolve_every": "1,50,100,200",
        "policies": "igdp,resolve",
    },
    "adversarial": {
        **COMMON_DEFAULTS,
        "kind": "egg_pair",
        "kappa": None,
        "eps": None,
        "T": 999,
        "policies": "igdp,ugd,fbp",
    },
    "scaling": {
        **COMMON_DEFAULTS,
        "scenario": "stationary_uniform",
        "policy": "ugd",
        "K": None,
        "T": "1000,4000,16000",
        "trials": 500,
        "policies": None,
    },
}

HELP_EPILOG = "Precedence: explicit flags > --config JSON values > built-in defaults."


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parser


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with default values for any flag of this subcommand")
    p.add_argument("--seed", type=int, default=S, help="master seed (required, here or in --config)")
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--out", default=S, help="output directory (created if absent)")
    p.add_argument("--threads", type=int, default=S, help="worker processes; default all cores, 1 = sequential")
    p.add_argument("--trace", action="store_true", default=S, help="also write dual_traj.csv")
    p.add_argument("--benchmark", choices=["mean_hindsight", "dual_value", "both"], default=S)
    p.add_argument("--saa-samples", dest="saa_samples", type=int, default=S)
    p.add_argument("--dual-method", dest="dual_method", choices=["subgradient", "lp"], default=S)
    p.add_argument("--step-schedule", dest="step_schedule", choices=["constant", "sqrt_t"], default=S, help="igdp/ugd step: 1/sqrt(T) or 1/sqrt(t)")
    p.add_argument("--policies", default=S, help="comma-separated policy kinds; bigd:K and igdp_resolve:k set the batch size and re-solve interval")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="onlinebudget", description="Online resource allocation with prior estimates.", epilog=HELP_EPILOG)
    parser.add_argument("--version", action="store_true", help="print the build identifier and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("exp1", help="two-phase online LP experiment", epilog=HELP_EPILOG)
    _add_common(p)
    p.add_argument("--setting", choices=SETTINGS, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--T", type=int, default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--c", type=float, default=S)
    p.add_argument("--no-clip", dest="clip", action="store_false", default=S, help="keep consumptions in [0.1, 1.1]")
    p.add_argument("--normal-mode", dest="normal_mode", choices=["reject", "censor"], default=S)

    p = sub.add_parser("exp2", help="network revenue management experiment", epilog=HELP_EPILOG)
    _add_common(p)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--T", type=int, default=S)
    p.add_argument("--topology", default=S, help="topology JSON (default: bundled hub-and-spoke network)")
    p.add_argument("--resolve-every", dest="resolve_every", default=S, help="comma-separated re-solve intervals for igdp_resolve")

    p = sub.add_parser("adversarial", help="point-mass counterexamples", epilog=HELP_EPILOG)
    _add_common(p)
    p.add_argument("--kind", choices=ADVERSARIAL_KINDS, default=S)
    p.add_argument("--kappa", type=float, default=S)
    p.add_argument("--eps", type=float, default=S)
    p.add_argument("--T", type=int, default=S)

    p = sub.add_parser("scaling", help="regret growth over a grid of horizons", epilog=HELP_EPILOG)
    _add_common(p)
    p.add_argument("--scenario", choices=["stationary_uniform", "finite_stationary"], default=S)
    p.add_argument("--policy", default=S)
    p.add_argument("--K", type=int, default=S)
    p.add_argument("--T", default=S, help="comma-separated horizons")

    p = sub.add_parser("wasserstein", help="deviation and non-stationarity budgets of schedule JSONs")
    p.add_argument("true_schedule", help="schedule or instance JSON")
    p.add_argument("prior_schedule", nargs="?", help="schedule JSON (default: prior_phases of the first file)")
    p.add_argument("--grid", type=int, default=10_000)

    p = sub.add_parser("lp", help="solve an LP read as JSON from a file or standard input")
    p.add_argument("problem", nargs="?", help="LpProblem JSON (default: standard input)")
    return parser


# ---------------------------------------------------------------- settings


def _settings(command: str, args: argparse.Namespace) -> dict:
    vals = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(doc) - set(vals)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        vals.update(doc)
    for k, v in vars(args).items():
        if k in vals:
            vals[k] = v
    if vals["seed"] is None:
        raise UsageError("--seed is required (no wall-clock seeding)")
    if vals["threads"] is None:
        vals["threads"] = os.cpu_count() or 1
    if int(vals["trials"]) < 1:
        raise UsageError("--trials must be at least 1")
    return vals


def _policy_specs(vals: dict, extra: Sequence[PolicySpec] = ()) -> list[PolicySpec]:
    pol = vals["policies"]
    specs = []
    if isinstance(pol, list):
        specs = [PolicySpec.from_dict(d) for d in pol]
    else:
        for kind in str(pol).split(","):
            kind = kind.strip()
            if not kind:
                continue
            kind, _, arg = kind.partition(":")
            sched = vals["step_schedule"] if kind in ("igdp", "ugd") else "constant"
            try:
                param = int(arg) if arg else None
            except ValueError:
                raise UsageError(f"bad policy parameter in {kind}:{arg}") from None
            if kind == "bigd":
                specs.append(PolicySpec(kind, K=param or 10))
            elif kind == "igdp_resolve":
                specs.append(PolicySpec(kind, resolve_every=param or 1))
            else:
                specs.append(PolicySpec(kind, step_schedule=sched))
    names = {s.name for s in specs}
    specs.extend(s for s in extra if s.name not in names)
    return specs


def _solver(vals: dict) -> SolverConfig:
    return SolverConfig(method=vals["dual_method"])


def _run(instance, specs, vals: dict, echo: dict) -> int:
    cfg = ExperimentConfig(
        instance=instance,
        policies=specs,
        trials=int(vals["trials"]),
        master_seed=int(vals["seed"]),
        out=vals["out"],
        benchmark=vals["benchmark"],
        threads=int(vals["threads"]),
        trace=bool(vals["trace"]),
        saa_samples=int(vals["saa_samples"]),
        solver=_solver(vals),
        echo=echo,
    )
    res = run_experiment(cfg)
    log.info("%s: %d trials, mean hindsight %.4f", instance.name, cfg.trials, res.mean_hindsight)
    _print_summary(res)
    return 0


def _print_summary(res) -> None:
    print(f"mean_hindsight {res.mean_hindsight:.4f} (se {res.hindsight_se:.4f})  dual_value {res.dual_value:.4f}")
    print(f"{'policy':<22}{'reward':>12}{'se':>9}{'regret':>11}{'pct_ub':>9}{'failed':>8}")
    for row in res.summary:
        print(f"{row.policy:<22}{row.mean_reward:>12.4f}{row.std_error:>9.4f}{row.mean_regret:>11.4f}{row.pct_of_ub:>9.2f}{row.failed:>8d}")


def cmd_exp1(args) -> int:
    vals = _settings("exp1", args)
    inst = build_exp1(vals["setting"], float(vals["alpha"]), float(vals["beta"]), int(vals["T"]), int(vals["m"]), float(vals["c"]), bool(vals["clip"]), vals["normal_mode"])
    return _run(inst, _policy_specs(vals), vals, {"command": "exp1", **_echo(vals)})


def cmd_exp2(args) -> int:
    vals = _settings("exp2", args)
    topo = load_topology(vals["topology"])
    inst = build_exp2(float(vals["alpha"]), float(vals["beta"]), topo, int(vals["seed"]), int(vals["T"]))
    extra = [PolicySpec("igdp_resolve", resolve_every=k) for k in _int_list(vals["resolve_every"])]
    return _run(inst, _policy_specs(vals, extra), vals, {"command": "exp2", **_echo(vals)})


def cmd_adversarial(args) -> int:
    vals = _settings("adversarial", args)
    kind = vals["kind"]
    param = vals["eps"] if kind == "egg_pair" else vals["kappa"]
    if param is None:
        raise UsageError("--eps is required for egg_pair" if kind == "egg_pair" else f"--kappa is required for {kind}")
    inst = build_adversarial(kind, int(vals["T"]), float(param))
    specs = [s for s in _policy_specs(vals) if inst.prior_schedule is not None or s.kind == "ugd"]
    if not specs:
        raise UsageError(f"{kind} has no prior; only ugd applies")
    return _run(inst, specs, vals, {"command": "adversarial", **_echo(vals)})


def cmd_scaling(args) -> int:
    vals = _settings("scaling", args)
    grid = _int_list(vals["T"])
    if not grid:
        raise UsageError("--T needs at least one horizon")
    base = build_stationary_uniform(grid[0]) if vals["scenario"] == "stationary_uniform" else build_finite_stationary(grid[0])
    spec = PolicySpec(vals["policy"], K=vals["K"], step_schedule=vals["step_schedule"] if vals["policy"] in ("igdp", "ugd") else "constant")
    rows = scaling_study(base, grid, spec, int(vals["trials"]), int(vals["seed"]), int(vals["threads"]), int(vals["saa_samples"]), _solver(vals))
    doc = {"version": version_string(), "config": _echo(vals), "rows": rows}
    if vals["out"]:
        out = Path(vals["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "scaling.json").write_text(json.dumps(doc, indent=2) + "\n")
        keys = list(rows[0])
        lines = [",".join(keys)] + [",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) for r in rows]
        (out / "scaling.csv").write_text("\n".join(lines) + "\n")
    print(json.dumps(rows, indent=2))
    return 0


def cmd_wasserstein(args) -> int:
    with open(args.true_schedule) as fh:
        doc = json.load(fh)
    true_sched = schedule_from_dict(doc)
    if args.prior_schedule:
        with open(args.prior_schedule) as fh:
            prior_sched = schedule_from_dict(json.load(fh))
    elif doc.get("prior_phases") is not None:
        prior_sched = instance_from_dict(doc).prior_schedule
    else:
        raise UsageError("need a prior schedule file or an instance with prior_phases")
    out = {
        "wbdb": wbdb(true_sched, prior_sched, args.grid),
        "wbnb_true": wbnb(true_sched, args.grid),
        "per_phase_distances": per_phase_distances(true_sched, prior_sched, args.grid),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_lp(args) -> int:
    text = Path(args.problem).read_text() if args.problem else sys.stdin.read()
    problem = LpProblem.from_dict(json.loads(text))
    print(json.dumps(lp_solve(problem).to_dict(), indent=2))
    return 0


def _echo(vals: dict) -> dict:
    return {k: v for k, v in vals.items() if k not in ("out", "threads")}


COMMANDS = {
    "exp1": cmd_exp1,
    "exp2": cmd_exp2,
    "adversarial": cmd_adversarial,
    "scaling": cmd_scaling,
    "wasserstein": cmd_wasserstein,
    "lp": cmd_lp,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    if args.version:
        print(f"onlinebudget {version_string()}")
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        print("onlinebudget: error: a subcommand is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"onlinebudget {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"onlinebudget {args.command}: invalid JSON: {exc}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        print(f"onlinebudget {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
