import click

from cli.inspect import inspect_corruption
from cli.report import report_results
from cli.run import run_experiment
from cli.validation import LOG_LEVELS, ValidatingGroup, configure_logging


@click.group(cls=ValidatingGroup)
@click.option(
    "-l",
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="WARNING",
    show_default=True,
    callback=configure_logging,
    expose_value=False,
    is_eager=True,
    help="The minimum severity of log messages to print.",
)
def cli():
    """Simulate decentralized and federated learning on corrupted data"""


cli.add_command(run_experiment)
cli.add_command(report_results)
cli.add_command(inspect_corruption)
