import pathlib

import click

from cli.validation import reported_errors
from dfsim import sweep


@click.command(name="report")
@click.option(
    "-i",
    "--input",
    "input_dir",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    required=True,
    help="A results directory written by `run`.",
)
@click.option(
    "-o",
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    required=True,
    help="Where to write the summary CSV and charts.",
)
def report_results(input_dir: pathlib.Path, out_dir: pathlib.Path):
    """Summarize and chart existing results.

    Prints the final and best collateral- and target-class F1 of every cell.
    """
    with reported_errors():
        outputs, table = sweep.report(input_dir, out_dir)

    click.echo(table)
    click.echo(f"\nWrote {outputs.summary} and {len(outputs.charts)} charts")
