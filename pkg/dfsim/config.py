"""Experiment configuration files

A config is an INI-style file with `[experiment]`, `[training]`, `[model]`,
`[corruption]` and `[data]` sections. The sweep axes (`paradigm`, `scheme`,
`alpha`, `p`) and `seeds` take comma-separated lists. Every missing key falls
back to its default; unknown sections or keys are rejected.
"""
import configparser
import itertools
import logging
import pathlib
import typing

import pydantic

from dfsim.cell import SweepCell
from dfsim.corruption import CorruptionSpec
from dfsim.errors import ConfigError
from dfsim.localtrain import TrainConfig
from dfsim.neuralnet import ArchitectureConfig
from dfsim.properties import N_CLASSES, Centrality, InterpolationMode, Paradigm, Scheme

logger = logging.getLogger(__name__)

DEFAULT_SECTION = "experiment"
PATH_SECTION = "data"


class Replicate(typing.NamedTuple):
    """The seeds of one replicate"""

    # Governs the communication graph only
    graph_seed: int
    # Governs everything else
    run_seed: int


def _split_list(value: typing.Any) -> typing.Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _parse_replicate(value: typing.Any) -> typing.Any:
    if isinstance(value, str):
        graph_seed, _, run_seed = value.partition(":")
        return Replicate(int(graph_seed), int(run_seed or graph_seed))
    if isinstance(value, int):
        return Replicate(value, value)
    return value


Fraction = typing.Annotated[float, pydantic.Field(ge=0, le=1)]


class ExperimentSection(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    paradigm: list[Paradigm] = pydantic.Field(default=[Paradigm.DFL], min_length=1)
    scheme: list[Scheme] = pydantic.Field(default=[Scheme.BALANCED], min_length=1)
    alpha: list[Fraction] = pydantic.Field(default=[0.95], min_length=1)
    p: list[Fraction] = pydantic.Field(default=[0.0], min_length=1)
    seeds: list[Replicate] = pydantic.Field(default=[Replicate(0, 0)], min_length=1)
    n_nodes: int = pydantic.Field(default=50, ge=2)
    rounds: int = pydantic.Field(default=1000, ge=0)
    subset_fraction: float = pydantic.Field(default=1.0, gt=0, le=1)
    test_fraction: float = pydantic.Field(default=1.0, gt=0, le=1)
    eval_every: int = pydantic.Field(default=1, ge=1)
    checkpoint_every: int = pydantic.Field(default=0, ge=0)
    workers: int = pydantic.Field(default=1, ge=1)
    centrality: Centrality = Centrality.DEGREE
    ci_level: float = pydantic.Field(default=0.95, gt=0, lt=1)
    output_dir: pathlib.Path = pathlib.Path("results")

    @pydantic.field_validator("paradigm", "scheme", "alpha", "p", mode="before")
    @classmethod
    def split_axes(cls, value: typing.Any) -> typing.Any:
        return _split_list(value)

    @pydantic.field_validator("seeds", mode="before")
    @classmethod
    def parse_replicates(cls, value: typing.Any) -> typing.Any:
        return [_parse_replicate(item) for item in _split_list(value)]


class CorruptionSection(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    target_class: int = pydantic.Field(default=9, ge=0, lt=N_CLASSES)
    collateral_class: int = pydantic.Field(default=4, ge=0, lt=N_CLASSES)
    mode: InterpolationMode = InterpolationMode.PIXEL_INTERPOLATION


class DataSection(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    train_images: pathlib.Path
    train_labels: pathlib.Path
    test_images: pathlib.Path
    test_labels: pathlib.Path

    @property
    def paths(self) -> list[pathlib.Path]:
        return [self.train_images, self.train_labels, self.test_images, self.test_labels]


class ExperimentConfig(pydantic.BaseModel):
    """A validated experiment: sweep axes, replicates and shared settings"""

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    experiment: ExperimentSection = ExperimentSection()
    training: TrainConfig = TrainConfig()
    model: ArchitectureConfig = ArchitectureConfig()
    corruption: CorruptionSection = CorruptionSection()
    data: DataSection

    @pydantic.model_validator(mode="after")
    def consistent_cells(self) -> "ExperimentConfig":
        if self.corruption.target_class == self.corruption.collateral_class:
            raise ValueError("corruption.target_class and corruption.collateral_class must differ")

        placing = [paradigm for paradigm in self.experiment.paradigm if paradigm is not Paradigm.CENTRALIZED]
        if placing and Scheme.NONE in self.experiment.scheme and any(self.experiment.p):
            raise ValueError("experiment.p must be 0 when experiment.scheme includes `none`")
        return self

    @property
    def cells(self) -> list[SweepCell]:
        """Every sweep cell, in paradigm, scheme, alpha, p order

        The centralized benchmark has no placement, so it contributes one cell
        per `(alpha, p)` under `Scheme.NONE` whatever schemes are listed.
        """
        experiment = self.experiment
        cells: set[SweepCell] = set()
        for paradigm, scheme, alpha, p in itertools.product(
            experiment.paradigm, experiment.scheme, experiment.alpha, experiment.p
        ):
            if paradigm is Paradigm.CENTRALIZED:
                scheme = Scheme.NONE
            cells.add(SweepCell(paradigm, scheme, alpha, p))
        return sorted(cells, key=lambda cell: cell.sort_key)

    def corruption_spec(self, cell: SweepCell) -> CorruptionSpec:
        return CorruptionSpec(
            target_class=self.corruption.target_class,
            collateral_class=self.corruption.collateral_class,
            alpha=cell.alpha,
            p=cell.p,
            mode=self.corruption.mode,
        )


Override = tuple[str, str]


def parse_override(raw: str) -> Override:
    """Split `section.key=value`; the section defaults to `experiment`

    Raises:
        ConfigError: If there's no `=`
    """
    key, separator, value = raw.partition("=")
    if not separator or not key.strip():
        raise ConfigError([f"Override `{raw}` is not of the form key=value."])
    key = key.strip()
    if "." not in key:
        key = f"{DEFAULT_SECTION}.{key}"
    return key, value.strip()


def _read_sections(path: pathlib.Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    # Keys are case-sensitive
    parser.optionxform = str  # type: ignore[assignment,method-assign]

    try:
        with path.open() as config_file:
            parser.read_file(config_file)
    except (configparser.Error, UnicodeDecodeError) as error:
        raise ConfigError([f"{path}: {error}"])

    return {section: dict(parser.items(section)) for section in parser.sections()}


def _validation_messages(error: pydantic.ValidationError) -> list[str]:
    messages = []
    for issue in error.errors():
        location = ".".join(str(part) for part in issue["loc"])
        messages.append(f"{location}: {issue['msg']}" if location else issue["msg"])
    return messages


def build_config(
    sections: dict[str, dict[str, typing.Any]],
    overrides: typing.Sequence[Override] = (),
    base_dir: typing.Optional[pathlib.Path] = None,
) -> ExperimentConfig:
    """Validate raw sections, after applying overrides

    Args:
        sections: Section name -> key -> raw value
        overrides: `(section.key, value)` pairs that win over the sections
        base_dir: Relative `[data]` paths are taken relative to this

    Raises:
        ConfigError: Listing every problem found
    """
    merged = {section: dict(values) for section, values in sections.items()}
    for dotted_key, value in overrides:
        section, _, key = dotted_key.partition(".")
        merged.setdefault(section, {})[key] = value

    if base_dir is not None:
        for key, value in merged.get(PATH_SECTION, {}).items():
            path = pathlib.Path(value)
            merged[PATH_SECTION][key] = path if path.is_absolute() else base_dir / path

    try:
        return ExperimentConfig.model_validate(merged)
    except pydantic.ValidationError as error:
        raise ConfigError(_validation_messages(error))


def parse_config(
    path: pathlib.Path, overrides: typing.Sequence[Override] = ()
) -> ExperimentConfig:
    """Read and validate a config file

    Raises:
        ConfigError: On duplicate keys or sections (with line numbers),
            unknown keys, or out-of-range values; every problem is listed
    """
    config = build_config(_read_sections(path), overrides, path.parent)
    logger.info("Loaded config %s: %d sweep cells", path, len(config.cells))
    return config


def preflight(config: ExperimentConfig) -> None:
    """Check the inputs exist before anything is computed or written

    Raises:
        ConfigError: Listing every missing dataset file
    """
    missing = [f"Dataset file not found: {path}" for path in config.data.paths if not path.is_file()]
    if missing:
        raise ConfigError(missing)


def resolved(config: ExperimentConfig) -> dict[str, typing.Any]:
    """The config as plain JSON-compatible data"""
    return config.model_dump(mode="json")
