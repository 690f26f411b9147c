import typing


class SimulationError(Exception):
    """Base class for every error raised by the simulator"""


class ParameterError(SimulationError, ValueError):
    """An argument is outside the range an operation accepts"""

    def __init__(self, name: str, value: typing.Any, reason: str):
        """
        Args:
            name: The offending parameter
            value: The value that was passed
            reason: What the accepted range is
        """
        super().__init__(f"Invalid {name}={value!r}: {reason}.")
        self.name = name
        self.value = value
        self.reason = reason


class FormatError(SimulationError):
    """A file doesn't have the structure its format requires"""

    def __init__(self, path: typing.Any, reason: str):
        super().__init__(f"{path}: {reason}.")
        self.path = path
        self.reason = reason


class TruncatedFileError(SimulationError, OSError):
    """A file ended before all the data its header announces"""

    def __init__(self, path: typing.Any, expected: int, found: int):
        """
        Args:
            path: The truncated file
            expected: The number of payload bytes announced by the header
            found: The number of payload bytes actually present
        """
        super().__init__(f"{path}: expected {expected} bytes, found {found}.")
        self.path = path
        self.expected = expected
        self.found = found


class ConsistencyError(SimulationError):
    """Two pieces of data that must agree don't"""


class AggregationError(SimulationError):
    """Parameter sets can't be combined"""


class NumericError(SimulationError, ArithmeticError):
    """A non-finite value appeared in a computation"""

    def __init__(self, layer: str, detail: str = "non-finite values"):
        """
        Args:
            layer: The layer, or parameter tensor, holding the bad values
            detail: What went wrong
        """
        super().__init__(f"{detail} in {layer}")
        self.layer = layer
        self.detail = detail


class RoundAborted(SimulationError):
    """A communication round couldn't complete because one node failed"""

    def __init__(self, node: int, round_index: int, cause: Exception):
        super().__init__(f"Round {round_index} aborted at node {node}: {cause}")
        self.node = node
        self.round_index = round_index
        self.cause = cause


class ConfigError(SimulationError):
    """An experiment configuration failed validation

    Carries every problem found, not just the first.
    """

    def __init__(self, messages: list[str]):
        super().__init__("\n".join(messages))
        self.messages = messages


class MissingResults(SimulationError):
    """A results directory has nothing for a requested sweep cell"""

    def __init__(self, location: typing.Any, detail: str = "no metrics files"):
        """
        Args:
            location: The directory, or sweep cell, that was looked up
            detail: What's missing
        """
        super().__init__(f"{location}: {detail}.")
        self.location = location
        self.detail = detail
