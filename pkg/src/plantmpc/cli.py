"""Command-line interface: synthetic data, single runs, and benchmarks.

Configuration lives in a single JSON document (see ``--help`` of each
subcommand); command-line flags override file values, which override the
built-in defaults mirroring the reference experiment configuration
(168 h horizon and AR order, 100 forecast scenarios, 184-day history,
10% deterministic buffer, 0% stochastic buffer).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import bench, forecast, simulate
from .plant import PlantConfig


class CliError(Exception):
    """Fatal configuration or data problem; exits with code 1."""


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {p}: {exc}") from exc


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    data = _load_json(path)
    if not isinstance(data, dict):
        raise CliError(f"config root must be an object: {path}")
    return data


def _plant_config(cfg: dict) -> PlantConfig:
    try:
        return PlantConfig(**cfg.get("plant", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad plant config: {exc}") from exc


def _load_truth(path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(f"data file not found: {p}")
    try:
        return forecast.read_trajectory_csv(p)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _profile(arg: str) -> forecast.SeasonalProfile:
    if arg == "default":
        return forecast.DEFAULT_PROFILE
    data = _load_json(arg)
    try:
        channels = {
            name: forecast.ChannelProfile(**data[name])
            for name in ("load_elec", "load_cw", "load_hw", "price_elec")
        }
        return forecast.SeasonalProfile(
            **channels, start_weekday=data.get("start_weekday", 0)
        )
    except (KeyError, TypeError) as exc:
        raise CliError(f"bad profile {arg}: {exc}") from exc


def _parse_controller(token: str, run_cfg: dict, args) -> simulate.ControllerSpec:
    parts = token.split(":")
    kind = parts[0]
    if kind not in (simulate.DETERMINISTIC, simulate.STOCHASTIC, simulate.PERFECT):
        raise CliError(
            f"unknown controller token {token!r}; expected det[:beta], "
            "sto[:beta], or perf"
        )
    if len(parts) > 2:
        raise CliError(f"malformed controller token {token!r}")
    if kind == simulate.PERFECT:
        if len(parts) > 1:
            raise CliError("perf takes no buffer")
        return simulate.ControllerSpec(simulate.PERFECT)
    default_beta = (
        run_cfg.get("beta_det", 0.1)
        if kind == simulate.DETERMINISTIC
        else run_cfg.get("beta_sto", 0.0)
    )
    beta = args.beta if args.beta is not None else default_beta
    if len(parts) == 2:
        try:
            beta = float(parts[1])
        except ValueError as exc:
            raise CliError(f"bad buffer in {token!r}") from exc
    scenarios = args.scenarios or run_cfg.get("scenarios", 100)
    try:
        return simulate.ControllerSpec(kind, beta=beta, scenarios=scenarios)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _run_template(
    run_cfg: dict, args, controller: simulate.ControllerSpec, data_hours: int
) -> simulate.RunSpec:
    horizon = args.horizon or run_cfg.get("horizon", 168)
    ar_order = args.ar_order or run_cfg.get("ar_order", 168)
    history_days = args.history_days or run_cfg.get("history_days", 184)
    history_hours = 24 * history_days
    sim_hours = getattr(args, "sim_hours", None) or run_cfg.get("sim_hours")
    if sim_hours is None:
        sim_hours = data_hours - history_hours - horizon
    if sim_hours < 1 or data_hours < history_hours + sim_hours + horizon:
        raise CliError(
            f"data too short: have {data_hours} h but need history "
            f"{history_hours} h + simulation {max(sim_hours, 1)} h + horizon "
            f"{horizon} h"
        )
    try:
        return simulate.RunSpec(
            controller=controller,
            sim_hours=sim_hours,
            horizon=horizon,
            ar_order=ar_order,
            history_hours=history_hours,
            refit_every=run_cfg.get("refit_every", 24),
            scenario_seed=args.seed if args.seed is not None else run_cfg.get("seed", 1),
            zoh_seed=(args.seed if args.seed is not None else run_cfg.get("seed", 1)) + 1,
            apply_storage_noise=run_cfg.get("apply_storage_noise", True),
            scenario_resampling=run_cfg.get("scenario_resampling", "run"),
            lp_backend=run_cfg.get("lp_backend", "highs"),
            initial_soc=run_cfg.get("initial_soc", 0.5),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _cmd_gen_data(args) -> int:
    profile = _profile(args.profile)
    traj = forecast.generate_synthetic_campus(args.seed, args.days, profile)
    forecast.write_trajectory_csv(args.out, traj)
    print(f"wrote {len(traj)} hours to {args.out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    config = _plant_config(cfg)
    truth = _load_truth(args.data)
    controller = _parse_controller(args.controller, cfg.get("run", {}), args)
    spec = _run_template(cfg.get("run", {}), args, controller, len(truth))
    trace = simulate.run_closed_loop(config, spec, truth)
    trace.to_csv(args.out)
    summary_path = Path(args.out).with_suffix(".summary.json")
    trace.write_summary(summary_path)
    phi, components = bench.annual_cost(trace)
    print(
        f"{controller.label}: {len(trace)} h, total cost {phi:,.2f} USD "
        f"(elec {components.electricity:,.2f}, water {components.water:,.2f}, "
        f"gas {components.gas:,.2f}, demand {components.demand:,.2f}), "
        f"violations {trace.violation_hours}"
    )
    print(f"trace: {args.out}\nsummary: {summary_path}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    config = _plant_config(cfg)
    truth = _load_truth(args.data)
    run_cfg = cfg.get("run", {})
    tokens = [tok for tok in args.controllers.split(",") if tok]
    if not tokens:
        raise CliError("no controllers given")
    controllers = [_parse_controller(tok, run_cfg, args) for tok in tokens]
    labels = [c.label for c in controllers]
    if len(set(labels)) != len(labels):
        raise CliError(f"duplicate controllers after parsing: {labels}")
    template = _run_template(run_cfg, args, controllers[0], len(truth))
    report = bench.run_benchmark(
        config,
        controllers,
        truth,
        args.validation_count,
        template,
        seed=args.seed if args.seed is not None else run_cfg.get("seed", 0),
        jobs=args.jobs,
        validation_amplitude=cfg.get("validation", {}).get("amplitude", 0.05),
    )
    report.write_json(args.out)
    base = Path(args.out)
    report.write_runs_csv(base.with_suffix(".runs.csv"))
    report.write_cdf_csv(base.with_suffix(".ccp_cdf.csv"))
    for label in report.controllers:
        rows = report.by_controller(label)
        if not rows:
            print(f"{label}: all runs failed")
            continue
        ccp_mean, ccp_se = report.mean_se(label, "ccp")
        vio_mean, _ = report.mean_se(label, "violation_rate")
        print(
            f"{label}: CCP {ccp_mean:,.2f} ± {ccp_se:,.2f} USD, "
            f"violations/100h {vio_mean:.3f} ({len(rows)} runs)"
        )
    if report.failures():
        print(f"{len(report.failures())} runs failed; see report", file=sys.stderr)
    print(f"report: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plantmpc",
        description=(
            "Central-plant MPC: synthetic campus data, closed-loop runs, and "
            "controller benchmarks."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic campus CSV")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--days", type=_positive_int, required=True)
    gen.add_argument(
        "--profile", default="default",
        help="'default' or a JSON file with per-channel shape parameters",
    )
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_data)

    run = sub.add_parser("run", help="one closed-loop run, trace to CSV")
    run.add_argument("--controller", required=True, help="det | sto | perf")
    run.add_argument("--config", help="JSON config (plant + run sections)")
    run.add_argument("--data", required=True, help="truth CSV")
    run.add_argument("--out", required=True, help="trace CSV path")
    run.add_argument("--beta", type=float, default=None)
    run.add_argument("--scenarios", type=int, default=None)
    run.add_argument("--horizon", type=int, default=None)
    run.add_argument("--ar-order", dest="ar_order", type=int, default=None)
    run.add_argument("--history-days", dest="history_days", type=int, default=None)
    run.add_argument("--sim-hours", dest="sim_hours", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=_cmd_run)

    bn = sub.add_parser("bench", help="benchmark controllers on a validation set")
    bn.add_argument("--config", help="JSON config")
    bn.add_argument("--data", required=True, help="base truth CSV")
    bn.add_argument("--validation-count", type=_positive_int, required=True)
    bn.add_argument(
        "--controllers", required=True,
        help="comma list of det[:beta] / sto[:beta] / perf tokens",
    )
    bn.add_argument("--out", required=True, help="report JSON path")
    bn.add_argument("--jobs", type=_positive_int, default=1)
    bn.add_argument("--beta", type=float, default=None)
    bn.add_argument("--scenarios", type=int, default=None)
    bn.add_argument("--horizon", type=int, default=None)
    bn.add_argument("--ar-order", dest="ar_order", type=int, default=None)
    bn.add_argument("--history-days", dest="history_days", type=int, default=None)
    bn.add_argument("--sim-hours", dest="sim_hours", type=int, default=None)
    bn.add_argument("--seed", type=int, default=None)
    bn.set_defaults(func=_cmd_bench)
    return parser


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
