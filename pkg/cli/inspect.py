import pathlib
import typing

import click

from cli.run import config_option, override_option
from cli.validation import reported_errors
from dfsim import sweep
from dfsim.config import Override, parse_config


@click.command(name="inspect-corruption")
@config_option
@override_option
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    required=True,
    help="Where to write the images and assignment manifests.",
)
@click.option(
    "-n",
    "--samples",
    type=click.IntRange(min=0),
    default=8,
    show_default=True,
    help="Corrupted samples to dump per sweep cell.",
)
def inspect_corruption(
    config_path: pathlib.Path,
    overrides: typing.Sequence[Override],
    out_dir: pathlib.Path,
    samples: int,
):
    """Dump corrupted samples beside their originals and exemplars.

    Uses the first replicate of every sweep cell. Images are binary PGM files.
    """
    with reported_errors():
        config = parse_config(config_path, overrides)
        written = sweep.inspect_corruption(config, out_dir, samples)

    for cell_dir in written:
        click.echo(cell_dir)
