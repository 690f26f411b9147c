import io
import math

import numpy as np
import pytest
from scipy import stats

from dfsim.dataset import LabeledDataset, allocate
from dfsim.errors import FormatError, ParameterError
from dfsim.metrics import (
    CLEAN_GROUP,
    METRICS_HEADER,
    NETWORK_GROUP,
    SUMMARY_HEADER,
    UNCLEAN_GROUP,
    ConfusionMatrix,
    MetricsWriter,
    RoundRecord,
    aggregate_seeds,
    best_round,
    clean_neighbor_report,
    clean_neighbor_tags,
    confidence_interval,
    evaluate,
    f1_per_class,
    read_metrics,
    write_summary,
)
from dfsim.neuralnet import ParamSet, init_params
from dfsim.properties import N_CLASSES, Metric, Paradigm, Scheme
from dfsim.seeding import Stream, stream
from dfsim.topology import Graph, centrality_ranking, generate_star


def record(seed=1, round=0, node=0, accuracy=0.5, f1=None, paradigm=Paradigm.DFL, **flags) -> RoundRecord:
    return RoundRecord(
        seed=seed,
        round=round,
        node=node,
        paradigm=paradigm,
        scheme=Scheme.BALANCED,
        alpha=0.95,
        p=0.5,
        accuracy=accuracy,
        f1=f1 if f1 is not None else (accuracy,) * N_CLASSES,
        **flags,
    )


def biased_towards(mlp, class_id: int) -> ParamSet:
    """A model that predicts one class whatever the input"""
    return init_params(mlp, 0).map(
        lambda name, tensor: np.eye(1, N_CLASSES, class_id)[0] if name == "fc2.bias" else np.zeros_like(tensor)
    )


class TestConfusion:
    def test_perfect_predictor(self):
        cm = ConfusionMatrix(np.diag(np.full(N_CLASSES, 5)))

        assert cm.accuracy == 1.0
        assert cm.f1 == (1.0,) * N_CLASSES

    def test_constant_predictor(self, mlp):
        labels = np.repeat(np.arange(N_CLASSES), 3)
        test = LabeledDataset(np.zeros((len(labels), 8, 8), dtype=np.float32), labels)

        cm = evaluate(biased_towards(mlp, 2), test)

        assert cm.total == 30
        assert cm.accuracy == pytest.approx(0.1)
        assert cm.f1[2] == pytest.approx(2 * 3 / (2 * 3 + 27))
        assert all(score == 0.0 for class_id, score in enumerate(cm.f1) if class_id != 2)

    def test_f1_from_counts(self):
        counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        counts[0, 0] = 8
        counts[1, 0] = 2
        counts[0, 1] = 2

        assert f1_per_class(ConfusionMatrix(counts))[0] == pytest.approx(0.8)

    def test_f1_matches_precision_and_recall(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            counts = rng.integers(0, 20, size=(N_CLASSES, N_CLASSES))
            scores = f1_per_class(ConfusionMatrix(counts))
            for class_id in range(N_CLASSES):
                tp = counts[class_id, class_id]
                precision = tp / counts[:, class_id].sum() if counts[:, class_id].sum() else 0.0
                recall = tp / counts[class_id].sum() if counts[class_id].sum() else 0.0
                expected = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
                assert scores[class_id] == pytest.approx(expected, abs=1e-12)

    def test_empty_test_set(self, mlp):
        empty = LabeledDataset(np.zeros((0, 8, 8), dtype=np.float32), np.zeros(0, dtype=np.int64))

        with pytest.raises(ParameterError):
            evaluate(init_params(mlp, 0), empty)


class TestConfidenceInterval:
    def test_three_values(self):
        mean, half_width = confidence_interval([0.9, 1.0, 1.1])

        assert mean == pytest.approx(1.0)
        assert half_width == pytest.approx(0.2484, abs=1e-4)

    def test_single_value_has_no_interval(self):
        assert confidence_interval([0.7]) == (0.7, None)

    def test_identical_values(self):
        assert confidence_interval([0.5, 0.5, 0.5]) == (0.5, 0.0)

    def test_no_values(self):
        with pytest.raises(ParameterError):
            confidence_interval([])

    def test_half_width_shrinks_with_the_square_root_of_the_seed_count(self):
        rng = np.random.default_rng(5)

        for k in (2, 5, 20, 100):
            values = rng.normal(0, 1, k)
            values = (values - values.mean()) / values.std(ddof=1)

            _, half_width = confidence_interval(values.tolist())

            assert half_width * math.sqrt(k) / stats.t.ppf(0.975, k - 1) == pytest.approx(1.0)


def test_accuracy_and_micro_recall_are_the_trace_share():
    rng = np.random.default_rng(2)

    for _ in range(50):
        counts = rng.integers(0, 20, (N_CLASSES, N_CLASSES))
        cm = ConfusionMatrix(counts)
        true_positives = np.diag(counts)
        false_negatives = counts.sum(axis=1) - true_positives

        assert cm.accuracy == pytest.approx(np.trace(counts) / counts.sum())
        assert true_positives.sum() / (true_positives + false_negatives).sum() == pytest.approx(cm.accuracy)


def test_aggregate_ignores_seed_order():
    rng = np.random.default_rng(8)
    records = [
        record(seed=seed, round=round_index, node=node, accuracy=float(rng.random()))
        for seed in range(1, 6)
        for round_index in range(3)
        for node in range(4)
    ]
    shuffled = [records[index] for index in rng.permutation(len(records))]

    ordered = aggregate_seeds(records, metrics=[Metric.ACCURACY])
    reordered = aggregate_seeds(shuffled, metrics=[Metric.ACCURACY])

    assert [point.round for point in reordered] == [0, 1, 2]
    for point, again in zip(ordered, reordered):
        assert again.mean == pytest.approx(point.mean)
        assert again.half_width == pytest.approx(point.half_width)
        assert again.n_seeds == point.n_seeds == 5


def test_aggregate_averages_nodes_then_seeds():
    records = [
        record(seed=1, node=0, accuracy=0.2),
        record(seed=1, node=1, accuracy=0.4),
        record(seed=2, node=0, accuracy=0.6),
        record(seed=2, node=1, accuracy=0.8),
        record(seed=1, round=1, node=0, accuracy=1.0),
    ]

    points = aggregate_seeds(records, metrics=[Metric.ACCURACY])

    assert [(point.round, point.n_seeds) for point in points] == [(0, 2), (1, 1)]
    assert points[0].mean == pytest.approx(0.5)
    assert points[0].half_width is not None
    assert points[1].half_width is None
    assert best_round(points, Metric.ACCURACY).round == 1
    assert best_round(points, Metric.F1_0) is None


def test_record_metric_lookup():
    scores = tuple(class_id / 10 for class_id in range(N_CLASSES))

    assert record(f1=scores).metric(Metric.f1(4)) == 0.4
    assert record(accuracy=0.3).metric(Metric.ACCURACY) == 0.3
    assert Metric.f1(4).label == "F1(4)"


class TestMetricsFile:
    def test_header_is_exact(self):
        assert ",".join(METRICS_HEADER) == (
            "seed,round,node,paradigm,scheme,alpha,p,accuracy,"
            "f1_0,f1_1,f1_2,f1_3,f1_4,f1_5,f1_6,f1_7,f1_8,f1_9,"
            "holds_corrupt,has_clean_neighbor"
        )

    def test_written_rows(self):
        buffer = io.StringIO()
        MetricsWriter(buffer).write([record(accuracy=0.25, holds_corrupt=True)])

        header, row = buffer.getvalue().splitlines()
        assert header.split(",") == METRICS_HEADER
        assert row == "1,0,0,dfl,balanced,0.95,0.5,0.250000," + ",".join(["0.250000"] * 10) + ",1,0"

    def test_read_back(self, tmp_path):
        path = tmp_path / "metrics.csv"
        records = [record(node=node, accuracy=0.125 * node, has_clean_neighbor=True) for node in range(3)]
        with path.open("w", newline="") as metrics_file:
            MetricsWriter(metrics_file).write(records)

        assert read_metrics(path) == records

    def test_rejects_other_csv_files(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")

        with pytest.raises(FormatError):
            read_metrics(path)


def test_summary_file(tmp_path):
    points = aggregate_seeds(
        [record(seed=1, accuracy=0.9), record(seed=2, accuracy=1.0), record(seed=3, accuracy=1.1)],
        metrics=[Metric.ACCURACY],
    )
    path = tmp_path / "summary.csv"

    write_summary([((Paradigm.DFL, Scheme.BALANCED, 0.95, 0.5), points)], path)

    header, row = path.read_text().splitlines()
    assert header.split(",") == SUMMARY_HEADER
    assert row == "dfl,balanced,0.95,0.5,0,accuracy,1.000000,0.248414,3"


class TestCleanNeighbor:
    def star_assignment(self, p: float, scheme: Scheme = Scheme.BALANCED):
        labels = np.repeat(np.arange(N_CLASSES), 6)
        ds = LabeledDataset(np.zeros((len(labels), 2, 2), dtype=np.float32), labels)
        star = generate_star(4)
        assignment = allocate(ds, centrality_ranking(star), scheme, p, 9, stream(Stream.ALLOCATION, 0))
        return star, assignment

    def test_without_corruption_every_node_has_a_clean_neighbor(self):
        star, assignment = self.star_assignment(0.0)

        assert clean_neighbor_tags(star, assignment) == {node: True for node in range(4)}

    def test_a_corrupted_hub_isolates_its_leaves(self):
        star, assignment = self.star_assignment(0.25)

        assert assignment.corrupt_nodes == [3]
        assert clean_neighbor_tags(star, assignment) == {0: False, 1: False, 2: False, 3: True}

    def test_isolated_nodes_have_no_clean_neighbor(self):
        _, assignment = self.star_assignment(0.0)

        tags = clean_neighbor_tags(Graph.from_edges(4, []), assignment)

        assert not any(tags.values())

    def test_report_splits_the_network(self):
        star, assignment = self.star_assignment(0.25)
        f1 = lambda value: (0.0,) * 4 + (value,) + (0.0,) * 5  # noqa: E731
        records = [record(node=node, f1=f1(0.1 * (node + 1))) for node in range(4)]

        report = clean_neighbor_report(records, star, assignment, collateral_class=4)

        assert report.series[CLEAN_GROUP] == [(0, pytest.approx(0.4))]
        assert report.series[UNCLEAN_GROUP] == [(0, pytest.approx(0.2))]
        assert report.series[NETWORK_GROUP] == [(0, pytest.approx(0.25))]
        assert not report.is_empty

    def test_report_is_empty_outside_decentralized_runs(self, caplog):
        star, assignment = self.star_assignment(0.0)

        report = clean_neighbor_report([record(paradigm=Paradigm.FL)], star, assignment)

        assert report.is_empty
        assert "dfl" in report.notice
        assert "only applies" in caplog.text
