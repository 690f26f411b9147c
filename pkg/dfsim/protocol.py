"""Communication rounds for the decentralized, federated and centralized paradigms"""
import concurrent.futures
import contextlib
import dataclasses
import logging
import math
import pathlib
import typing

from dfsim.cell import SweepCell
from dfsim.config import ExperimentConfig, Replicate
from dfsim.corruption import CorruptionOverlay, corrupt_assignment
from dfsim.dataset import (
    FederatedAssignment,
    LabeledDataset,
    allocate,
    pooled_assignment,
    split_validation,
    subsample,
)
from dfsim.errors import NumericError, RoundAborted
from dfsim.localtrain import NodeData, TrainConfig, run_epoch, train_local
from dfsim.metrics import ConfusionMatrix, RoundRecord, clean_neighbor_tags, evaluate
from dfsim.neuralnet import ParamSet, average_params, batch_loss, init_params, save_checkpoint
from dfsim.neuralnet.checkpoint import CHECKPOINT_SUFFIX
from dfsim.properties import Paradigm
from dfsim.seeding import Stream, stream
from dfsim.topology import (
    CentralityRanking,
    Graph,
    centrality_ranking,
    generate_ba,
    generate_empty,
    generate_star,
    neighborhood,
    star_hub,
)

logger = logging.getLogger(__name__)

# Each new node of the decentralized topology attaches to one existing node
BA_EDGES_PER_NODE: int = 1

T = typing.TypeVar("T")
R = typing.TypeVar("R")


@dataclasses.dataclass(frozen=True, eq=False)
class RoundState:
    """Every node's models at the start of a round"""

    round: int
    # Node -> the model the node starts the round from
    current: dict[int, ParamSet]
    # Node -> the model the node trained in the previous round
    trained: dict[int, ParamSet]
    # Node -> its number of training samples, the aggregation weight
    train_sizes: dict[int, int]

    @classmethod
    def initial(cls, params: ParamSet, data: typing.Mapping[int, NodeData]) -> "RoundState":
        """Round 0: every node holds the same model"""
        return cls(
            0,
            {node: params for node in data},
            {node: params for node in data},
            {node: node_data.train_size for node, node_data in data.items()},
        )


def _map(
    executor: typing.Optional[concurrent.futures.Executor],
    function: typing.Callable[[T], R],
    items: typing.Iterable[T],
) -> list[R]:
    if executor is None:
        return [function(item) for item in items]
    return list(executor.map(function, items))


def _train_nodes(
    state: RoundState,
    nodes: typing.Sequence[int],
    data: typing.Mapping[int, NodeData],
    cfg: TrainConfig,
    seed: int,
    executor: typing.Optional[concurrent.futures.Executor],
) -> dict[int, ParamSet]:
    """Train every listed node from its current model

    Raises:
        RoundAborted: Naming the lowest node whose training went non-finite
    """

    def train(node: int) -> typing.Union[ParamSet, NumericError]:
        try:
            return train_local(
                state.current[node], data[node], cfg, (seed, node, state.round)
            ).params
        except NumericError as error:
            return error

    results = dict(zip(nodes, _map(executor, train, nodes)))
    for node, result in results.items():
        if isinstance(result, NumericError):
            raise RoundAborted(node, state.round, result)
    return typing.cast(dict[int, ParamSet], results)


def dfl_round(
    state: RoundState,
    g: Graph,
    data: typing.Mapping[int, NodeData],
    cfg: TrainConfig,
    seed: int,
    executor: typing.Optional[concurrent.futures.Executor] = None,
) -> RoundState:
    """One decentralized round: train, exchange with neighbours, average

    Every node trains before any node aggregates, and aggregation reads only
    models trained in this round. A node replaces its model with the
    `|D_j|`-weighted average over its neighbourhood, itself included; if that
    neighbourhood holds no training data at all, it keeps its own model.

    Args:
        state: The models at the start of the round
        g: The communication graph, over the same node ids as `data`
        data: Each node's local data
        cfg: Optimisation settings
        seed: The run seed keying every node's random streams
        executor: Runs the nodes' training concurrently when given

    Raises:
        RoundAborted: If a node's training produced non-finite values
    """
    nodes = sorted(state.current)
    trained = _train_nodes(state, nodes, data, cfg, seed, executor)

    def aggregate(node: int) -> ParamSet:
        gathered = [(trained[j], float(state.train_sizes[j])) for j in sorted(neighborhood(g, node))]
        if not any(weight for _, weight in gathered):
            return trained[node]
        return average_params(gathered)

    updated = dict(zip(nodes, _map(executor, aggregate, nodes)))
    return RoundState(state.round + 1, updated, trained, state.train_sizes)


def fl_round(
    state: RoundState,
    star: Graph,
    data: typing.Mapping[int, NodeData],
    cfg: TrainConfig,
    seed: int,
    executor: typing.Optional[concurrent.futures.Executor] = None,
) -> RoundState:
    """One federated round: every client trains, the server averages them all

    The server is the star's hub. It holds no data and takes no part in the
    average; afterwards every node, server included, holds the global model.

    Raises:
        RoundAborted: If a client's training produced non-finite values
    """
    hub = star_hub(star)
    clients = [node for node in sorted(state.current) if node != hub]
    trained = _train_nodes(state, clients, data, cfg, seed, executor)

    global_model = average_params(
        [(trained[client], float(state.train_sizes[client])) for client in clients]
    )
    trained[hub] = state.current[hub]
    return RoundState(
        state.round + 1,
        {node: global_model for node in state.current},
        trained,
        state.train_sizes,
    )


def centralized_train(
    start: ParamSet,
    data: NodeData,
    test: LabeledDataset,
    cfg: TrainConfig,
    seed: int,
    epochs: int,
    evaluate_at: typing.Callable[[int], bool] = lambda epoch: True,
) -> typing.Iterator[tuple[int, ParamSet, typing.Optional[ConfusionMatrix]]]:
    """Train a single model on the pooled data

    Uses the same optimiser settings as the nodes, with one optimiser for the
    whole run and no early stopping.

    Args:
        evaluate_at: Which epochs to evaluate on the test set

    Yields:
        `(epoch, params, confusion)`, starting with the untrained model at
        epoch 0; `confusion` is `None` for epochs that aren't evaluated

    Raises:
        RoundAborted: With node 0, if training produced non-finite values
    """
    params = start
    velocity = start.zeros_like()
    yield 0, params, evaluate(params, test) if evaluate_at(0) else None

    for epoch in range(1, epochs + 1):
        try:
            params, velocity, train_loss = run_epoch(
                params,
                velocity,
                data.train_x,
                data.train_y,
                cfg,
                stream(Stream.CENTRALIZED, seed, epoch, Stream.TRAIN),
                stream(Stream.CENTRALIZED, seed, epoch, Stream.DROPOUT),
            )
        except NumericError as error:
            raise RoundAborted(0, epoch, error)

        if len(data.val_y):
            logger.debug(
                "Epoch %d: train loss %.4f, validation loss %.4f",
                epoch,
                train_loss,
                batch_loss(params, data.val_x, data.val_y),
            )
        yield epoch, params, evaluate(params, test) if evaluate_at(epoch) else None


@dataclasses.dataclass(frozen=True, eq=False)
class Scenario:
    """Everything one replicate of one sweep cell runs on"""

    cell: SweepCell
    replicate: Replicate
    graph: Graph
    assignment: FederatedAssignment
    overlay: CorruptionOverlay
    # The (possibly subsampled) pristine training set the assignment indexes
    train: LabeledDataset
    test: LabeledDataset
    data: dict[int, NodeData]
    initial: ParamSet

    @property
    def nodes(self) -> list[int]:
        """The nodes that hold data and get evaluated"""
        return sorted(self.assignment.per_node)

    @property
    def clean_neighbors(self) -> dict[int, bool]:
        if self.cell.paradigm is Paradigm.CENTRALIZED:
            return {node: False for node in self.nodes}
        return clean_neighbor_tags(self.graph, self.assignment)


def _build_graph(config: ExperimentConfig, cell: SweepCell, replicate: Replicate) -> Graph:
    n_nodes = config.experiment.n_nodes
    if cell.paradigm is Paradigm.DFL:
        return generate_ba(n_nodes, BA_EDGES_PER_NODE, stream(Stream.GRAPH, replicate.graph_seed))
    if cell.paradigm is Paradigm.FL:
        # `n_nodes` clients plus a dataless server
        return generate_star(n_nodes + 1)
    return generate_empty(1)


def prepare_scenario(
    config: ExperimentConfig,
    cell: SweepCell,
    replicate: Replicate,
    train: LabeledDataset,
    test: LabeledDataset,
) -> Scenario:
    """Build the topology, data placement, corruption and initial model

    Every random choice is drawn from a stream keyed by the replicate's seeds,
    so the same replicate of different cells shares what the cells don't vary.
    """
    run_seed = replicate.run_seed
    experiment = config.experiment
    target_class = config.corruption.target_class

    train = subsample(train, experiment.subset_fraction, stream(Stream.SUBSAMPLE, run_seed, 0))
    test = subsample(test, experiment.test_fraction, stream(Stream.SUBSAMPLE, run_seed, 1))

    graph = _build_graph(config, cell, replicate)
    allocation_rng = stream(Stream.ALLOCATION, run_seed)
    if cell.paradigm is Paradigm.CENTRALIZED:
        assignment = pooled_assignment(train, cell.p, target_class, allocation_rng)
    else:
        if cell.paradigm is Paradigm.DFL:
            ranking = centrality_ranking(graph, experiment.centrality)
        else:
            ranking = CentralityRanking.identity(experiment.n_nodes)
        assignment = allocate(train, ranking, cell.scheme, cell.p, target_class, allocation_rng)

    assignment = split_validation(
        train, assignment, config.training.val_fraction, stream(Stream.VALIDATION, run_seed)
    )
    assignment.validate(train)
    overlay = corrupt_assignment(
        train, assignment, config.corruption_spec(cell), stream(Stream.CORRUPTION, run_seed)
    )

    image_shape = train.images.shape[1:]
    data = {
        node: NodeData.from_shard(train, assignment.per_node[node], overlay)
        if node in assignment.per_node
        else NodeData.empty(image_shape)
        for node in range(graph.node_count)
    }

    logger.info(
        "Prepared %s seed %s: %d nodes, %d corrupted samples on nodes %s",
        cell.slug,
        replicate,
        graph.node_count,
        len(overlay),
        assignment.corrupt_nodes,
    )
    return Scenario(
        cell, replicate, graph, assignment, overlay, train, test, data,
        init_params(config.model, run_seed),
    )


def _checkpoint(
    directory: typing.Optional[pathlib.Path],
    scenario: Scenario,
    round_index: int,
    models: typing.Mapping[int, ParamSet],
) -> None:
    if directory is None:
        return

    directory.mkdir(parents=True, exist_ok=True)
    for node in scenario.nodes:
        save_checkpoint(
            models[node],
            directory
            / f"{scenario.cell.slug}-seed-{scenario.replicate.run_seed}-round-{round_index}-node-{node}{CHECKPOINT_SUFFIX}",
        )


class _Evaluator:
    """Scores a round's models, evaluating each distinct model once"""

    def __init__(self, scenario: Scenario, executor: typing.Optional[concurrent.futures.Executor]):
        self.scenario = scenario
        self.executor = executor
        self.holds_corrupt = {
            node: shard.holds_corrupt for node, shard in scenario.assignment.per_node.items()
        }
        self.clean_neighbors = scenario.clean_neighbors

    def records(self, round_index: int, models: typing.Mapping[int, ParamSet]) -> list[RoundRecord]:
        # Federated clients all share one model object
        distinct = {id(models[node]): models[node] for node in self.scenario.nodes}
        scores = dict(
            zip(
                distinct,
                _map(self.executor, lambda p: evaluate(p, self.scenario.test), distinct.values()),
            )
        )

        cell = self.scenario.cell
        return [
            RoundRecord.from_confusion(
                scores[id(models[node])],
                seed=self.scenario.replicate.run_seed,
                round=round_index,
                node=node,
                paradigm=cell.paradigm,
                scheme=cell.scheme,
                alpha=cell.alpha,
                p=cell.p,
                holds_corrupt=self.holds_corrupt[node],
                has_clean_neighbor=self.clean_neighbors[node],
            )
            for node in self.scenario.nodes
        ]


def _log_round(records: typing.Sequence[RoundRecord]) -> None:
    if records:
        logger.info(
            "Round %d: mean accuracy %.4f",
            records[0].round,
            math.fsum(record.accuracy for record in records) / len(records),
        )


def run_experiment(
    config: ExperimentConfig,
    scenario: Scenario,
    checkpoint_dir: typing.Optional[pathlib.Path] = None,
) -> typing.Iterator[RoundRecord]:
    """Run one replicate of one sweep cell, yielding each evaluated node's metrics

    The untrained models are evaluated as round 0, then every `eval_every`
    rounds and always after the last round. For the centralized benchmark a
    round is one epoch over the pooled data.

    Args:
        config: The experiment settings
        scenario: The prepared replicate
        checkpoint_dir: Receives every node's model every `checkpoint_every`
            rounds, when that's enabled

    Raises:
        RoundAborted: If training produced non-finite values
    """
    experiment = config.experiment
    checkpoint_every = experiment.checkpoint_every
    if not checkpoint_every:
        checkpoint_dir = None

    with contextlib.ExitStack() as stack:
        executor = None
        if experiment.workers > 1:
            executor = stack.enter_context(
                concurrent.futures.ThreadPoolExecutor(max_workers=experiment.workers)
            )
        evaluator = _Evaluator(scenario, executor)
        seed = scenario.replicate.run_seed

        def due(round_index: int) -> bool:
            return round_index % experiment.eval_every == 0 or round_index == experiment.rounds

        if scenario.cell.paradigm is Paradigm.CENTRALIZED:
            for epoch, params, confusion in centralized_train(
                scenario.initial,
                scenario.data[0],
                scenario.test,
                config.training,
                seed,
                experiment.rounds,
                evaluate_at=due,
            ):
                if checkpoint_dir is not None and epoch and epoch % checkpoint_every == 0:
                    _checkpoint(checkpoint_dir, scenario, epoch, {0: params})
                if confusion is not None:
                    record = RoundRecord.from_confusion(
                        confusion,
                        seed=seed,
                        round=epoch,
                        node=0,
                        paradigm=scenario.cell.paradigm,
                        scheme=scenario.cell.scheme,
                        alpha=scenario.cell.alpha,
                        p=scenario.cell.p,
                        holds_corrupt=evaluator.holds_corrupt[0],
                        has_clean_neighbor=False,
                    )
                    _log_round([record])
                    yield record
            return

        round_function = dfl_round if scenario.cell.paradigm is Paradigm.DFL else fl_round
        state = RoundState.initial(scenario.initial, scenario.data)
        records = evaluator.records(0, state.current)
        _log_round(records)
        yield from records

        while state.round < experiment.rounds:
            state = round_function(state, scenario.graph, scenario.data, config.training, seed, executor)
            if checkpoint_dir is not None and state.round % checkpoint_every == 0:
                _checkpoint(checkpoint_dir, scenario, state.round, state.current)
            if due(state.round):
                records = evaluator.records(state.round, state.current)
                _log_round(records)
                yield from records
