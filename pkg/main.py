#!/usr/bin/env python3
"""Channel tail rate selection - command-line entry point."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import structlog

from src.channel_sim import (
    build_grid,
    ground_truth_quantile,
    sample_locations_thomas,
    sample_locations_uniform,
    synthesize_profile,
)
from src.config import PRESETS, ConfigLoader
from src.config_generator import ConfigGenerator
from src.dataset_io import write_dataset
from src.errors import ConfigError, ExperimentError
from src.evt_core import calibrate_zeta, mean_deficit_curve, write_mean_deficit_csv
from src.gp_map import save_map
from src.harness import (
    RESULTS_FILE,
    SUMMARY_FILE,
    ExperimentRunner,
    bias_limit_experiment,
    fit_prior_maps,
    read_results,
    run_experiment,
    simulate_dataset,
    write_ecdf,
)
from src.log_config import configure_logging
from src.models import ExperimentConfig
from src.seeding import child_rng

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Load the experiment config and apply command-line overrides."""
    cfg = ConfigLoader(args.config, preset=args.preset).load()
    updates: dict[str, Any] = {}
    if getattr(args, "output_dir", None) is not None:
        updates["output_dir"] = args.output_dir
    if getattr(args, "dataset", None) is not None:
        updates["dataset_path"] = args.dataset
    if getattr(args, "workers", None) is not None:
        updates["workers"] = args.workers
    if not updates:
        return cfg
    try:
        return ExperimentConfig.model_validate({**cfg.model_dump(), **updates})
    except ValueError as e:
        raise ConfigError(f"Invalid command-line override: {e}") from e


def handle_simulate(args: argparse.Namespace) -> dict[str, Any]:
    """Write a synthetic measurement dataset."""
    cfg = load_config(args)
    scenario = cfg.scenario
    count = args.locations if args.locations is not None else cfg.d
    samples = args.samples if args.samples is not None else cfg.m
    grid = build_grid(scenario)
    rng = child_rng(scenario.master_seed, purpose="simulate")
    if cfg.location_sampling == "uniform":
        locations, _ = sample_locations_uniform(grid, count, 0, rng)
    else:
        locations, _ = sample_locations_thomas(scenario, grid, count, 0, rng)

    output = args.output or cfg.output_dir / "dataset.csv"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(output, simulate_dataset(scenario, locations, samples))
    return {
        "dataset_path": str(output.absolute()),
        "locations": len(locations),
        "samples_per_location": samples,
    }


def handle_calibrate_zeta(args: argparse.Namespace) -> dict[str, Any]:
    """Median linear-region threshold fraction over the prior locations."""
    cfg = load_config(args)
    runner = ExperimentRunner(cfg)
    if runner.dataset is not None:
        locations = runner.dataset.locations
    else:
        locations, _ = runner.draw_locations(0)
    samples = [runner.prior_samples(loc) for loc in locations]

    if args.curves_dir is not None:
        args.curves_dir.mkdir(parents=True, exist_ok=True)
        for loc, s in zip(locations, samples):
            thresholds = s.sorted_values[:: max(1, len(s) // 200)]
            write_mean_deficit_csv(
                args.curves_dir / f"mean_deficit_{loc.id}.csv", mean_deficit_curve(s, thresholds)
            )
    return {"zeta": calibrate_zeta(samples), "locations": len(samples)}


def handle_fit_maps(args: argparse.Namespace) -> dict[str, Any]:
    """Fit and persist the three CDI maps of the first redraw."""
    cfg = load_config(args)
    runner = ExperimentRunner(cfg)
    train, _ = runner.draw_locations(0)
    maps = fit_prior_maps(train, [runner.statistics_for(loc) for loc in train])

    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, cdi_map in maps._asdict().items():
        save_map(cdi_map, out_dir / f"map_{name}.csv", out_dir / f"map_{name}.toml")
        written[name] = cdi_map.hyper.model_dump()
    return {"output_dir": str(out_dir.absolute()), "maps": written}


def handle_run(args: argparse.Namespace) -> dict[str, Any]:
    """Run the full rate-selection experiment."""
    cfg = load_config(args)
    results_path = run_experiment(cfg)
    return {
        "results": str(results_path.absolute()),
        "summary": str((cfg.output_dir / SUMMARY_FILE).absolute()),
    }


def handle_bias_demo(args: argparse.Namespace) -> dict[str, Any]:
    """Coverage of a deliberately biased quantile bound as n grows."""
    cfg = load_config(args)
    scenario = cfg.scenario
    grid = build_grid(scenario)
    if args.location_id is None:
        loc = grid[len(grid) // 2]
    else:
        matches = [g for g in grid if g.id == args.location_id]
        if not matches:
            raise ConfigError(f"Location id {args.location_id} is not on the grid")
        loc = matches[0]

    profile = synthesize_profile(scenario, loc)
    rng = child_rng(scenario.master_seed, loc.id, purpose="bias-limit")
    c_eps = ground_truth_quantile(profile, scenario, cfg.spec.epsilon, cfg.n_ref, rng)
    bias = args.bias_fraction * c_eps
    points = bias_limit_experiment(
        profile, scenario, cfg.spec, bias, args.n_list, args.reps, rng=rng, c_eps=c_eps
    )
    return {
        "location_id": loc.id,
        "c_eps": c_eps,
        "bias": bias,
        "coverage": [p._asdict() for p in points],
    }


def handle_ecdf(args: argparse.Namespace) -> dict[str, Any]:
    """Outage-probability ECDF per method and n from a results CSV."""
    results = read_results(args.results)
    output = args.output or args.results.with_name("ecdf.csv")
    write_ecdf(output, results)
    return {"ecdf": str(output.absolute()), "rows": len(results)}


def handle_init_config(args: argparse.Namespace) -> dict[str, Any]:
    """Write a fully commented default configuration."""
    result = ConfigGenerator().generate_default(args.output, preset=args.preset or "desk")
    return result.model_dump()


HANDLERS: dict[str, Callable[[argparse.Namespace], dict[str, Any]]] = {
    "simulate": handle_simulate,
    "calibrate-zeta": handle_calibrate_zeta,
    "fit-maps": handle_fit_maps,
    "run": handle_run,
    "bias-demo": handle_bias_demo,
    "ecdf": handle_ecdf,
    "init-config": handle_init_config,
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(item)) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    """Command-line parser with one subcommand per handler."""
    parser = argparse.ArgumentParser(
        description="Tail-quantile rate selection from local samples and spatial priors"
    )
    parser.add_argument("--config", type=Path, default=None, help="Experiment TOML file")
    parser.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        default=None,
        help="Preset applied beneath the config file (default: desk)",
    )
    parser.add_argument("--log-level", default="INFO", help="Log level (default: INFO)")
    parser.add_argument("--log-json", action="store_true", help="Emit logs as JSON lines")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Write a synthetic dataset CSV")
    simulate.add_argument("--locations", type=int, default=None, help="Locations (default: d)")
    simulate.add_argument("--samples", type=int, default=None, help="Samples each (default: m)")
    simulate.add_argument("--output", type=Path, default=None, help="Dataset CSV path")
    simulate.add_argument("--output-dir", type=Path, default=None, help="Output directory")

    calibrate = sub.add_parser("calibrate-zeta", help="Calibrate the threshold fraction")
    calibrate.add_argument("--dataset", type=Path, default=None, help="Measurement CSV")
    calibrate.add_argument(
        "--curves-dir", type=Path, default=None, help="Also write mean-deficit CSVs here"
    )

    fit_maps = sub.add_parser("fit-maps", help="Fit and save the CDI maps")
    fit_maps.add_argument("--dataset", type=Path, default=None, help="Measurement CSV")
    fit_maps.add_argument("--output-dir", type=Path, default=None, help="Output directory")

    run = sub.add_parser("run", help="Run the full experiment")
    run.add_argument("--dataset", type=Path, default=None, help="Measurement CSV")
    run.add_argument("--output-dir", type=Path, default=None, help="Output directory")
    run.add_argument("--workers", type=int, default=None, help="Worker processes")

    bias = sub.add_parser("bias-demo", help="Coverage of a biased bound versus n")
    bias.add_argument("--location-id", type=int, default=None, help="Grid location id")
    bias.add_argument(
        "--bias-fraction", type=float, default=0.05, help="Bias as a fraction of C_eps"
    )
    bias.add_argument(
        "--n-list", type=_int_list, default=[100, 1_000, 10_000, 100_000], help="Sample sizes"
    )
    bias.add_argument("--reps", type=int, default=200, help="Replications per n")

    ecdf = sub.add_parser("ecdf", help="Outage ECDF from a results CSV")
    ecdf.add_argument(
        "--results", type=Path, default=Path("results") / RESULTS_FILE, help="Results CSV"
    )
    ecdf.add_argument("--output", type=Path, default=None, help="ECDF CSV path")

    init = sub.add_parser("init-config", help="Write a commented default config")
    init.add_argument("--output", type=Path, default=None, help="Config path")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Run one subcommand and return the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, json=args.log_json)
    try:
        payload = HANDLERS[args.command](args)
    except ConfigError as e:
        logger.error("config_error", error=str(e))
        return EXIT_CONFIG_ERROR
    except ExperimentError as e:
        logger.error(
            "experiment_failed",
            error=str(e),
            partial_results=str(e.partial_results) if e.partial_results else None,
        )
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.error("command_failed", command=args.command, error=str(e))
        return EXIT_RUNTIME_ERROR
    print(json.dumps(payload, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
