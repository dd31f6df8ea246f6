"""
=============================================================================
AVERAGED CONTROL - COMMAND-LINE APPLICATION
=============================================================================

Runs convergence studies for optimal control problems whose dynamics are
only known through a finite-support probability measure over candidate
vector fields: the value function of the averaged problem is compared with
the value function of the true dynamics as the measure concentrates on it.

Commands:
    test1               built-in scalar experiment (five lambda-fields, N = 1..8)
    test2               built-in planar experiment (three affine fields, N = 1..6)
    run <path>          experiment described by a config file (schema in
                        backend/lib/avgctl_core/config.py)
    dump-config <name>  print a built-in config in the config file format

Exit codes:
    0  success
    1  config could not be parsed or validated
    2  the error bound was violated for some N
    3  solver failure (every restart diverged for some row)

How to run:
    python application.py test1 --out results --jobs 4
=============================================================================
"""

# =============================================================================
# IMPORTS
# =============================================================================

import logging
import os
import sys
from functools import wraps
from pathlib import Path
from typing import List, Optional, Tuple

import click

# dotenv - process defaults (AVGCTL_OUT_DIR, AVGCTL_JOBS, AVGCTL_SEED,
# AVGCTL_LOG_LEVEL) can live in a .env file next to the code
from dotenv import load_dotenv

load_dotenv()

from backend.lib.artifact_service import ArtifactService
from backend.lib.avgctl_core.config import BUILTIN_CONFIGS, ExperimentConfig, builtin_config, dump_config, parse_config
from backend.lib.avgctl_core.errors import ConfigError, DivergenceError
from backend.lib.avgctl_core.experiments import EXIT_CONFIG, EXIT_SOLVER, run_study
from backend.lib.avgctl_core.io import format_report_table

logger = logging.getLogger("avgctl")

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


# =============================================================================
# SHARED OPTIONS
# =============================================================================

def _default_jobs() -> int:
    return os.cpu_count() or 1


def run_options(command):
    """Options shared by test1, test2 and run. Flags turn into config overrides."""
    @click.option("--out", "out_dir", envvar="AVGCTL_OUT_DIR", type=click.Path(file_okay=False),
                  help="Output directory for CSV artifacts.")
    @click.option("--seed", type=int, envvar="AVGCTL_SEED", help="Seed for the random restarts.")
    @click.option("--jobs", type=click.IntRange(min=1), envvar="AVGCTL_JOBS", default=_default_jobs,
                  show_default="available CPUs", help="Worker processes for the convergence rows.")
    @click.option("--horizon", type=float, help="Final time T.")
    @click.option("--n-max", type=click.IntRange(min=0), help="Largest N in the study.")
    @click.option("--grid", type=click.IntRange(min=2), help="Grid points per state coordinate.")
    @click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                  help="Override any config value; repeatable.")
    @wraps(command)
    def wrapper(*args, **kwargs):
        return command(*args, **kwargs)
    return wrapper


def flag_overrides(out_dir, seed, horizon, n_max, grid, overrides) -> List[str]:
    items = []
    if out_dir is not None:
        items.append(f"output.directory={out_dir}")
    if seed is not None:
        items.append(f"experiment.seed={seed}")
    if horizon is not None:
        items.append(f"problem.T={horizon!r}")
    if n_max is not None:
        items.append(f"schedule.n_max={n_max}")
    if grid is not None:
        items.append(f"grid.counts={grid}")
    return items + list(overrides)


# =============================================================================
# EXECUTION
# =============================================================================

def execute(config: ExperimentConfig, jobs: int) -> int:
    """Run one experiment, print the report table and artifact paths, return the exit code."""
    store = ArtifactService(config.output.directory)
    try:
        outcome = run_study(config, store, jobs)
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        return EXIT_CONFIG
    except DivergenceError as exc:
        click.echo(f"{config.experiment.name}: {exc}", err=True)
        return EXIT_SOLVER
    except ValueError as exc:
        # bad inputs only surfaced once the experiment is built (dimension mismatch)
        click.echo(f"{config.path}: {exc}", err=True)
        return EXIT_CONFIG

    if outcome.report is not None:
        click.echo(format_report_table(outcome.report))
    for kind, path in outcome.artifacts.items():
        click.echo(f"{kind}: {path}")
    for message in outcome.messages:
        click.echo(message, err=True)
    return outcome.status


def run_builtin(ctx: click.Context, name: str, jobs: int, overrides: List[str]):
    try:
        config = builtin_config(name, overrides)
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        ctx.exit(EXIT_CONFIG)
    ctx.exit(execute(config, jobs))


# =============================================================================
# COMMANDS
# =============================================================================

@click.group()
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), envvar="AVGCTL_LOG_LEVEL",
              default="WARNING", show_default=True, help="Diagnostics on stderr at this level and above.")
def cli(log_level: str):
    """Averaged optimal control under uncertain dynamics."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@run_options
@click.pass_context
def test1(ctx, out_dir, seed, jobs, horizon, n_max, grid, overrides):
    """Scalar lambda-sin experiment: N = 1..8, error bound checked."""
    run_builtin(ctx, "test1", jobs, flag_overrides(out_dir, seed, horizon, n_max, grid, overrides))


@cli.command()
@run_options
@click.pass_context
def test2(ctx, out_dir, seed, jobs, horizon, n_max, grid, overrides):
    """Planar affine experiment with angular control: N = 1..6."""
    run_builtin(ctx, "test2", jobs, flag_overrides(out_dir, seed, horizon, n_max, grid, overrides))


@cli.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@run_options
@click.pass_context
def run(ctx, path: Path, out_dir, seed, jobs, horizon, n_max, grid, overrides):
    """Run the experiment described by the config file PATH."""
    try:
        config = parse_config(path.read_text(encoding="utf-8"), str(path),
                              flag_overrides(out_dir, seed, horizon, n_max, grid, overrides))
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        ctx.exit(EXIT_CONFIG)
    ctx.exit(execute(config, jobs))


@cli.command("dump-config")
@click.argument("name", type=click.Choice(sorted(BUILTIN_CONFIGS)))
def dump_config_command(name: str):
    """Print the built-in config NAME in the config file format."""
    click.echo(dump_config(builtin_config(name)), nl=False)


def main(argv: Optional[Tuple[str, ...]] = None):
    cli.main(args=argv, prog_name="avgctl")


if __name__ == "__main__":
    main()
