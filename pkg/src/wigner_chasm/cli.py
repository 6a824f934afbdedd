"""CLI interface for wigner_chasm."""

import click
import logging
import functools
from importlib.metadata import version
from .config import apply_overrides, parse_config
from .errors import ConfigError, CflError, NumericalError, TransportError, WignerError
from .main import STUDY_PARAMETERS, WignerExperiment, compare_dumps


def _handle_errors(func):
    """Decorator that catches library exceptions and shows user-friendly messages.

    The exit code tells the failure category: 2 for configuration, 3 for
    numerical, 4 for transport, 1 for anything else.
    """

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(2)
        except (NumericalError, CflError) as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(3)
        except TransportError as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(4)
        except (WignerError, ValueError, OSError) as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(1)

    return wrapper


def _experiment(ctx, config_path, out, patches, precision):
    with open(config_path, "r") as f:
        text = f.read()
    config = parse_config(text)
    config = apply_overrides(config, out=out, patches=patches, precision=precision)
    return WignerExperiment(config, cache_location=ctx.obj["CACHE"])


def _common_options(func):
    """Options shared by the commands that run an experiment."""
    func = click.option(
        "--precision",
        type=click.Choice(["f32", "f64"]),
        help="Field storage precision, overrides the config file.",
    )(func)
    func = click.option(
        "--patches", type=int, help="Patches per spatial axis, overrides the config file."
    )(func)
    func = click.option(
        "--out", type=click.Path(file_okay=False), help="Output directory."
    )(func)
    func = click.option(
        "--config",
        "config_path",
        required=True,
        type=click.Path(exists=True, dir_okay=False),
        help="Experiment configuration file (key = value lines).",
    )(func)
    return func


@click.group()
@click.version_option(version=version("wigner-chasm"))
@click.option(
    "--cache",
    default=".cache",
    show_default=True,
    help="Directory of the convolution tensor cache. Empty disables it.",
)
@click.option(
    "--log-level",
    default="ERROR",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Set the logging level.",
)
@click.pass_context
def cli(ctx, cache, log_level):
    """A CLI to run 6-D Wigner-Coulomb experiments.

    Results are written as text tables and binary field dumps.
    """
    ctx.ensure_object(dict)
    ctx.obj["CACHE"] = cache

    # Convert string log level to logging module's constant
    numeric_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {log_level}")
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s %(levelname)s:%(name)s:%(message)s",
    )


@cli.command()
@_common_options
@click.pass_context
@_handle_errors
def run(ctx, config_path, out, patches, precision):
    """Run the experiment of a configuration file.

    Writes summary.txt, metrics.csv, moments.csv and field dumps to the output
    directory.
    """
    experiment = _experiment(ctx, config_path, out, patches, precision)
    click.echo(experiment.run())


@cli.command("tkm-table")
@_common_options
@click.pass_context
@_handle_errors
def tkm_table(ctx, config_path, out, patches, precision):
    """Errors and timing of the TKM convolution of a Gaussian, one row per Nk."""
    experiment = _experiment(ctx, config_path, out, patches, precision)
    click.echo("Nk,l_inf,l_2,seconds")
    for row in experiment.run_tkm_table():
        click.echo(f"{row.nk},{row.l_inf:.3e},{row.l_2:.3e},{row.seconds:.3f}")


@cli.command()
@_common_options
@click.option(
    "--parameter",
    required=True,
    type=click.Choice(STUDY_PARAMETERS),
    help="The resolution parameter swept over the 'values' key.",
)
@click.pass_context
@_handle_errors
def convergence(ctx, config_path, out, patches, precision, parameter):
    """Run a convergence study and print the fitted slope."""
    experiment = _experiment(ctx, config_path, out, patches, precision)
    study = experiment.run_convergence_study(parameter)
    for value, error in zip(study.values, study.errors):
        click.echo(f"{parameter}={value:g} error={error:.6e}")
    click.echo(f"slope={study.slope:.4f}")


@cli.command()
@click.argument("dump_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("dump_b", type=click.Path(exists=True, dir_okay=False))
@_handle_errors
def diff(dump_a, dump_b):
    """Compare two field dumps: eps_inf, eps_2 and the mass difference."""
    report = compare_dumps(dump_a, dump_b)
    click.echo(f"eps_inf={report.eps_inf:.6e}")
    click.echo(f"eps_2={report.eps_2:.6e}")
    click.echo(f"mass_difference={report.eps_mass:.6e}")


if __name__ == "__main__":
    cli(obj={})
