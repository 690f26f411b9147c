import pathlib
import typing

import click

from cli.validation import existing_config, parse_overrides, reported_errors
from dfsim import sweep
from dfsim.config import Override, parse_config

config_option = click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=pathlib.Path),
    required=True,
    callback=existing_config,
    help="The experiment config file.",
)

override_option = click.option(
    "-o",
    "--override",
    "overrides",
    multiple=True,
    callback=parse_overrides,
    metavar="SECTION.KEY=VALUE",
    help="Override a config value; the section defaults to `experiment`. May be repeated.",
)


@click.command(name="run")
@config_option
@override_option
def run_experiment(config_path: pathlib.Path, overrides: typing.Sequence[Override]):
    """Run every sweep cell and replicate of an experiment.

    Writes one metrics CSV per cell, a summary CSV and the charts to the
    config's output directory. Nothing is written unless the config and
    datasets validate.
    """
    with reported_errors():
        config = parse_config(config_path, overrides)
        outputs = sweep.run(config)

    click.echo(
        f"Wrote {len(outputs.metrics_files)} metrics files and "
        f"{len(outputs.charts)} charts to {outputs.root}"
    )
