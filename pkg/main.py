"""
Spectra - Command-line entry point
Perturbed spectra of a rectangular billiard with point scatterers, their level
statistics and the strong-coupling band predictor
"""

import argparse
import json
import logging
import math
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from services import __version__
from services.coupling_predictor import (
    CouplingBand,
    band_coverage,
    crossover_energies,
    g_of_omega,
    is_strong,
)
from services.errors import SpectraError, exit_code_for
from services.experiment_config import ExperimentConfig, load_config
from services.experiment_runner import ExperimentRunner, run_stats
from services.plot_scripts import emit_plots

load_dotenv()

# --- Configuration & Logging ---
logging.basicConfig(
    level=os.getenv("SPECTRA_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
cli_logger = logging.getLogger(__name__)


# --- Command Handlers ---

def handle_run(args) -> int:
    config = load_config(args.config)
    result = ExperimentRunner(config, args.output).run_spectrum()
    cli_logger.info(f"Run complete: {len(result.spectrum)} levels, digest {result.manifest['config_digest'][:12]}")
    return 0


def handle_stats(args) -> int:
    config = load_config(args.config)
    result = run_stats(config, args.spectrum, args.output)
    cli_logger.info(
        f"Statistics written: KS(poisson)={result.report.distances['poisson']:.4f}, "
        f"KS(goe)={result.report.distances['goe']:.4f}"
    )
    return 0


def handle_sweep(args) -> int:
    config = load_config(args.config)
    result = ExperimentRunner(config, args.output).run_sweep()
    if result.failures:
        cli_logger.error(f"{len(result.failures)} sweep cell(s) failed: {sorted(result.failures)}")
    return result.exit_code


def handle_predict(args) -> int:
    band = CouplingBand(mass=args.mass, lam=args.lam)
    edge_lo, edge_hi = crossover_energies(band, args.vinv)
    verdicts = {}
    for name, omega in (("omega_lo", args.omega_lo), ("omega_hi", args.omega_hi)):
        strong, margin = is_strong(band, args.vinv, omega)
        verdicts[name] = {"omega": omega, "g": g_of_omega(band, omega), "strong": strong, "margin": margin}
    report = {
        "inverse_strength": args.vinv,
        "width": band.width,
        "threshold": band.half_width,
        "band": [edge_lo, edge_hi],
        **verdicts,
        "coverage": band_coverage(band, args.vinv, args.omega_lo, args.omega_hi),
    }
    print(json.dumps(report, indent=2))
    return 0


def handle_plots(args) -> int:
    emit_plots(args.results_dir, args.s_max)
    return 0


def handle_schema(args) -> int:
    print(json.dumps(ExperimentConfig.model_json_schema(by_alias=True), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectra",
        description="Point scatterers in a rectangular billiard: spectra, statistics, coupling band",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Solve the perturbed spectrum of one config")
    run.add_argument("config")
    run.add_argument("--output", help="Results directory (default: config output_dir)")
    run.set_defaults(handler=handle_run)

    stats = commands.add_parser("stats", help="Spacing distribution and Delta_3 of a spectrum.csv")
    stats.add_argument("config")
    stats.add_argument("spectrum")
    stats.add_argument("--output", help="Results directory (default: next to the spectrum file)")
    stats.set_defaults(handler=handle_stats)

    sweep = commands.add_parser("sweep", help="Run every cell of the config's sweep grid")
    sweep.add_argument("config")
    sweep.add_argument("--output", help="Results directory (default: config output_dir)")
    sweep.set_defaults(handler=handle_sweep)

    predict = commands.add_parser("predict", help="Strong-coupling band test for one inverse strength")
    predict.add_argument("--vinv", type=float, required=True, help="Inverse strength v^-1")
    predict.add_argument("--omega-lo", type=float, required=True)
    predict.add_argument("--omega-hi", type=float, required=True)
    predict.add_argument("--mass", type=float, default=2.0 * math.pi)
    predict.add_argument("--lambda", dest="lam", type=float, default=1.0)
    predict.set_defaults(handler=handle_predict)

    plots = commands.add_parser("plots", help="Write gnuplot scripts for a results directory")
    plots.add_argument("results_dir")
    plots.add_argument("--s-max", type=float, default=3.0)
    plots.set_defaults(handler=handle_plots)

    schema = commands.add_parser("schema", help="Print the experiment config JSON schema")
    schema.set_defaults(handler=handle_schema)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except SpectraError as err:
        cli_logger.error(f"{args.command} failed: {err}")
        return exit_code_for(err)
    except Exception as err:
        cli_logger.error(f"Unexpected error in {args.command}: {str(err)}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
