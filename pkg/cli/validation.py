import contextlib
import logging
import pathlib
import typing

import click
import pydantic

from cli.callbacks import mapped_callback, none_passthrough, plain_callback
from dfsim.config import Override, parse_override
from dfsim.errors import ConfigError, MissingResults, SimulationError

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ValidationFailed(click.ClickException):
    """Inputs were rejected before anything ran"""

    exit_code = 1

    def __init__(self, messages: typing.Sequence[str]):
        super().__init__("\n".join(messages))
        self.messages = list(messages)


class RuntimeFailure(click.ClickException):
    """A run started but couldn't finish"""

    exit_code = 2


@contextlib.contextmanager
def reported_errors() -> typing.Iterator[None]:
    """Turn simulator errors into `click` errors with the right exit code

    Raises:
        ValidationFailed: For config problems and missing inputs
        RuntimeFailure: For anything that went wrong once running
    """
    try:
        yield
    except ConfigError as error:
        raise ValidationFailed(error.messages)
    except pydantic.ValidationError as error:
        raise ValidationFailed([str(error)])
    except MissingResults as error:
        raise ValidationFailed([str(error)])
    except (SimulationError, OSError) as error:
        raise RuntimeFailure(str(error))


@plain_callback
def configure_logging(value: str) -> int:
    """Point the root logger at stderr with the chosen level"""
    level = getattr(logging, value.upper())
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    return level


@plain_callback
@none_passthrough
def existing_config(value: pathlib.Path) -> pathlib.Path:
    """Check a config file exists

    Raises:
        ValidationFailed: If there's no such file
    """
    if not value.is_file():
        raise ValidationFailed([f"Config file not found: {value}"])
    return value


@mapped_callback
def parse_overrides(value: str) -> Override:
    """Split a `section.key=value` override

    Raises:
        ValidationFailed: If the override has no `=`
    """
    try:
        return parse_override(value)
    except ConfigError as error:
        raise ValidationFailed(error.messages)


class ValidatingGroup(click.Group):
    """A command group whose usage errors exit like any other rejected input"""

    def make_context(self, *args, **kwargs) -> click.Context:
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as error:
            error.exit_code = ValidationFailed.exit_code
            raise

    def invoke(self, ctx: click.Context) -> typing.Any:
        # Subcommands parse their own arguments in here
        try:
            return super().invoke(ctx)
        except click.UsageError as error:
            error.exit_code = ValidationFailed.exit_code
            raise
