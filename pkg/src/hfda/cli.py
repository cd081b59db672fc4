"""Command-line front end.

Subcommands (all take ``--config FILE`` plus repeatable ``--set
section.key=value`` overrides):

* ``simulate``  write the synthetic observation CSV and its metadata sidecar
* ``modify``    apply one data-modification scheme and write the result
* ``solve``     run one solver and write its error-versus-time trace
* ``check``     run the cross-module consistency suite (exit 1 on failure)
* ``table1``    relative-error study over all schemes and target fractions
* ``race``      budget race over all solver/scheme combinations

The config file is a sectioned ``key = value`` text file; unknown sections
or keys are rejected.  Every random draw is controlled by config-declared
seeds, so all subcommands are idempotent given the same configuration and
output directory.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from . import harness, observe
from .harness import ExperimentConfig
from .modify import SCHEME_KINDS
from .optimize import StepSchedule, run_gauss_newton, run_gd, run_ksgd, run_sgd
from .stochastic import Sampler


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _to_optional_float(raw: str):
    return None if raw.strip().lower() in ("", "auto", "none") else float(raw)


def _to_optional_int(raw: str):
    return None if raw.strip().lower() in ("", "auto", "none") else int(raw)


def _to_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.replace(";", ",").split(",") if tok.strip())


# (section, key) -> (ExperimentConfig attribute, converter)
_SCHEMA = {
    ("experiment", "model"): ("model", str),
    ("experiment", "h"): ("h", float),
    ("experiment", "seed"): ("seed", int),
    ("experiment", "output_dir"): ("output_dir", str),
    ("experiment", "estimate_x0"): ("estimate_x0", _to_bool),
    ("experiment", "mode"): ("mode", str),
    ("observation", "period"): ("obs_period", float),
    ("observation", "sigma"): ("obs_sigma", float),
    ("observation", "seed"): ("obs_seed", int),
    ("modify", "scheme"): ("modify_scheme", str),
    ("modify", "potp"): ("modify_potp", float),
    ("modify", "seed"): ("modify_seed", int),
    ("modify", "reweight"): ("modify_reweight", _to_bool),
    ("solver", "name"): ("solver_name", str),
    ("solver", "schedule"): ("solver_schedule", str),
    ("solver", "eta0"): ("solver_eta0", _to_optional_float),
    ("solver", "k0"): ("solver_k0", float),
    ("solver", "alpha"): ("solver_alpha", float),
    ("solver", "damping"): ("solver_damping", _to_optional_float),
    ("solver", "sampler"): ("solver_sampler", str),
    ("solver", "kappa"): ("solver_kappa", _to_optional_int),
    ("solver", "form"): ("solver_form", str),
    ("solver", "budget"): ("solver_budget", float),
    ("solver", "max_iter"): ("solver_max_iter", int),
    ("solver", "gtol"): ("solver_gtol", float),
    ("solver", "seed"): ("solver_seed", int),
    ("solver", "record_every"): ("solver_record_every", int),
    ("solver", "theta0"): ("theta0_policy", str),
    ("solver", "theta0_scale"): ("theta0_scale", float),
    ("solver", "theta0_seed"): ("theta0_seed", int),
    ("solver", "theta0_values"): ("theta0_values", _to_floats),
    ("race", "budget"): ("race_budget", float),
    ("race", "potp"): ("race_potp", float),
    ("race", "max_iter"): ("race_max_iter", int),
    ("race", "record_every"): ("race_record_every", int),
    ("table1", "potps"): ("table1_potps", _to_floats),
    ("table1", "max_iter"): ("table1_max_iter", int),
    ("table1", "gtol"): ("table1_gtol", float),
    ("reference", "max_iter"): ("ref_max_iter", int),
    ("reference", "gtol"): ("ref_gtol", float),
}


class ConfigError(ValueError):
    pass


def parse_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a sectioned key=value file, apply dotted-key overrides, and
    build the experiment configuration with model defaults filled in."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None

    kwargs = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            try:
                attr, conv = _SCHEMA[(section, key)]
            except KeyError:
                raise ConfigError(f"unknown config key [{section}] {key}") from None
            try:
                kwargs[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from None

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} is not of the form section.key")
        section, key = dotted.strip().split(".", 1)
        try:
            attr, conv = _SCHEMA[(section.strip(), key.strip())]
        except KeyError:
            raise ConfigError(f"unknown override key {dotted.strip()!r}") from None
        try:
            kwargs[attr] = conv(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for override {dotted.strip()}: {exc}") from None

    if "model" not in kwargs:
        raise ConfigError("config must set [experiment] model")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_observation_metadata(config: ExperimentConfig, data, path: Path) -> None:
    obs = data.model
    lines = {
        "model": config.model,
        "period": config.obs_period,
        "sigma": config.obs_sigma,
        "seed": config.stream("observation", config.obs_seed),
        "n_observations": len(data),
        "h_matrix": ";".join(",".join(f"{v:.17g}" for v in row) for row in obs.h_matrix),
        "v_matrix": ";".join(",".join(f"{v:.17g}" for v in row) for row in obs.v_matrix),
    }
    with open(path, "w") as fh:
        for key, value in lines.items():
            fh.write(f"{key} = {value}\n")


def cmd_simulate(config: ExperimentConfig) -> int:
    model, data = harness.build_data(config)
    out = _out_dir(config)
    csv_path = out / f"{config.model}_observations.csv"
    observe.write_observations_csv(data, csv_path)
    _write_observation_metadata(config, data, out / f"{config.model}_observations.meta")
    print(f"simulate: {len(data)} observations of {model.name} -> {csv_path}")
    return 0


def cmd_modify(config: ExperimentConfig) -> int:
    if config.modify_scheme == "none":
        raise ConfigError("modify requires [modify] scheme (or --modify)")
    model, data = harness.build_data(config)
    seed = config.stream(
        f"modify/{config.modify_scheme}/{config.modify_potp}", config.modify_seed
    )
    scheme = harness.make_scheme(
        config.modify_scheme, model.t_span, config.obs_period, config.modify_potp, seed
    )
    modified = scheme.apply(data)
    out = _out_dir(config)
    csv_path = out / f"{config.model}_{config.modify_scheme}_observations.csv"
    observe.write_observations_csv(modified, csv_path)
    print(
        f"modify: {config.modify_scheme} potp={config.modify_potp:g} kept "
        f"{len(modified)} of {len(data)} rows -> {csv_path}"
    )
    return 0


def cmd_solve(config: ExperimentConfig) -> int:
    model, data = harness.build_data(config)
    problem = harness.build_problem(config, model, data)
    seed = config.stream(
        f"modify/{config.modify_scheme}/{config.modify_potp}", config.modify_seed
    )
    prob_run = harness.build_problem(
        config, model, data, config.modify_scheme, config.modify_potp, seed
    )
    out = _out_dir(config)
    theta_hat, g_ref = harness.reference_minimizer(config, problem, cache_dir=out)
    theta0 = harness.resolve_theta0(config, model)

    name = config.solver_name
    kappa = config.solver_kappa or max(1, harness.round_half_away(1.0 / config.modify_potp))
    kappa = min(kappa, len(prob_run.data))  # a thinned problem shortens the stride
    defaults = harness.MODEL_DEFAULTS.get(config.model, {})
    if name == "gd":
        eta0 = config.solver_eta0 or defaults.get("gd_eta0", 1e-7)
        eta0 = eta0 * len(data) / len(prob_run.data)
        trace = run_gd(
            prob_run,
            theta0,
            StepSchedule(config.solver_schedule, eta0, config.solver_k0, config.solver_alpha),
            budget=config.solver_budget,
            max_iter=config.solver_max_iter,
            gtol=config.solver_gtol,
            record_every=config.solver_record_every,
        )
    elif name == "sgd":
        eta0 = config.solver_eta0 or defaults.get("sgd_eta0", 1e-7)
        trace = run_sgd(
            prob_run,
            theta0,
            StepSchedule(config.solver_schedule, eta0, config.solver_k0, config.solver_alpha),
            _make_sampler(config, len(prob_run.data), kappa),
            budget=config.solver_budget,
            max_iter=config.solver_max_iter,
            seed=config.stream("sgd", config.solver_seed),
            record_every=config.solver_record_every,
        )
    elif name == "gn":
        trace = run_gauss_newton(
            prob_run,
            theta0,
            damping=config.solver_damping,
            budget=config.solver_budget,
            max_iter=config.solver_max_iter,
            gtol=config.solver_gtol,
            record_every=config.solver_record_every,
        )
    elif name == "ksgd":
        trace = run_ksgd(
            prob_run,
            theta0,
            _make_sampler(config, len(prob_run.data), kappa),
            form=config.solver_form,
            budget=config.solver_budget,
            max_iter=config.solver_max_iter,
            seed=config.stream("ksgd", config.solver_seed),
            record_every=config.solver_record_every,
        )
    else:
        raise ConfigError(f"unknown solver {name!r} (gd, gn, sgd, ksgd)")

    times, errors = harness.replay_trace(trace, problem, theta_hat)
    label = f"{name}_{config.modify_scheme}"
    run = harness.RaceRun(
        label=label,
        solver=name,
        scheme=config.modify_scheme,
        trace=trace,
        times=times,
        errors=errors,
        dropped_records=len(trace) - len(times),
    )
    csv_path = out / f"{config.model}_{label}.csv"
    harness.write_trace_csv(run, csv_path)
    harness._write_run_metadata(config, run, out / f"{config.model}_{label}.meta")
    print(
        f"solve: {name} on {config.model}/{config.modify_scheme} finished by "
        f"{trace.terminated_by} after {trace.n_iterations} iterations, "
        f"final error {run.final_error:.3e} -> {csv_path}"
    )
    return 0


def _make_sampler(config: ExperimentConfig, n_obs: int, kappa: int) -> Sampler:
    kind = config.solver_sampler
    if kind == "simple":
        return Sampler("simple", m=max(1, harness.round_half_away(n_obs / kappa)))
    return Sampler(kind, kappa=kappa)


def cmd_check(config: ExperimentConfig) -> int:
    results = harness.run_checks(config)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_table1(config: ExperimentConfig, jobs: int = 1) -> int:
    report = harness.run_table1_study(config, jobs=jobs)
    print(f"reference objective: {report.reference_objective:.6e}")
    print(f"{'scheme':<20} {'potp':>6} {'relative_error':>16}")
    for row in report.rows:
        print(f"{row.scheme:<20} {row.potp:>6g} {row.relative_error:>16.6e} {row.status}")
    out = Path(config.output_dir) / f"{config.model}_relative_error.csv"
    print(f"table1: wrote {out}")
    return 0 if all(r.status == "ok" for r in report.rows) else 1


def cmd_race(config: ExperimentConfig) -> int:
    race = harness.run_budget_race(config)
    print(f"race: {config.model}, budget {config.race_budget:g}s per solver")
    for run in race.runs:
        print(
            f"  {run.label:<28} iterations={run.trace.n_iterations:<6} "
            f"terminated_by={run.trace.terminated_by:<9} final_error={run.final_error: .3e}"
        )
    print(f"race: wrote {len(race.runs)} trace CSVs under {config.output_dir}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "modify": cmd_modify,
    "solve": cmd_solve,
    "check": cmd_check,
    "table1": cmd_table1,
    "race": cmd_race,
}


def _config_key_epilog() -> str:
    by_section: dict[str, list[str]] = {}
    for section, key in _SCHEMA:
        by_section.setdefault(section, []).append(key)
    lines = ["config file keys:"]
    for section, keys in by_section.items():
        lines.append(f"  [{section}] {', '.join(keys)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfda",
        description="ODE parameter estimation under high-frequency observations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(
            name,
            help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None,
            epilog=_config_key_epilog(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", required=True, help="sectioned key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--output-dir", default=None, help="override the output directory")
        p.add_argument(
            "--jobs",
            type=int,
            default=1,
            help="worker pool size for independent fits; default serial "
            "(the budget race always runs serially for timing fidelity)",
        )
        if name == "modify":
            p.add_argument("--modify", dest="scheme", choices=SCHEME_KINDS, default=None)
            p.add_argument("--potp", type=float, default=None)
            p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config, args.overrides)
        if args.output_dir is not None:
            config.output_dir = args.output_dir
        if getattr(args, "scheme", None) is not None:
            config.modify_scheme = args.scheme
        if getattr(args, "potp", None) is not None:
            config.modify_potp = args.potp
        if getattr(args, "seed", None) is not None:
            config.modify_seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.command == "table1":
            return cmd_table1(config, jobs=args.jobs)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
