import math

import numpy as np
import pydantic
import pytest

from dfsim.errors import AggregationError, FormatError, NumericError, ParameterError, TruncatedFileError
from dfsim.neuralnet import (
    ArchitectureConfig,
    ParamSet,
    Preset,
    average_params,
    batch_loss,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    predict,
    save_checkpoint,
    sgd_momentum_step,
)
from dfsim.neuralnet import layers, model
from dfsim.neuralnet.checkpoint import CHECKPOINT_MAGIC

EPSILON = 1e-4
PROBES = 20


def random_batch(arch: ArchitectureConfig, count: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    return rng.random((count, arch.image_size, arch.image_size)), rng.integers(10, size=count)


def nudged(p: ParamSet, name: str, position: tuple, delta: float) -> ParamSet:
    def nudge(tensor_name, tensor):
        if tensor_name != name:
            return tensor
        tensor = tensor.copy()
        tensor[position] += delta
        return tensor

    return p.map(nudge)


def constant(arch: ArchitectureConfig, value: float) -> ParamSet:
    return init_params(arch, 0).map(lambda name, tensor: np.full_like(tensor, value))


class TestArchitecture:
    def test_default_shapes(self):
        shapes = ArchitectureConfig().shapes

        assert shapes["conv1.weight"] == (10, 1, 5, 5)
        assert shapes["conv2.weight"] == (20, 10, 5, 5)
        assert shapes["fc1.weight"] == (50, 320)
        assert shapes["fc2.weight"] == (10, 50)

    def test_mlp_shapes(self, mlp):
        assert list(mlp.shapes) == ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
        assert mlp.shapes["fc1.weight"] == (16, 64)

    @pytest.mark.parametrize("image_size", [10, 27])
    def test_rejects_odd_pooling_inputs(self, image_size):
        with pytest.raises(pydantic.ValidationError):
            ArchitectureConfig(image_size=image_size)


class TestInit:
    def test_same_seed_same_params(self, cnn):
        assert init_params(cnn, 3).identical(init_params(cnn, 3))
        assert not init_params(cnn, 3).identical(init_params(cnn, 4))

    def test_fan_in_scaled_variance(self):
        arch = ArchitectureConfig()
        weights = np.concatenate([init_params(arch, seed)["conv1.weight"].ravel() for seed in range(10)])

        expected = 2 / 25
        assert 0.5 * expected <= weights.var() <= 1.5 * expected

    def test_biases_start_at_zero(self, cnn):
        params = init_params(cnn, 0)

        assert all(not params[name].any() for name in params.names if name.endswith(".bias"))

    def test_tensors_are_read_only(self, mlp):
        with pytest.raises(ValueError):
            init_params(mlp, 0)["fc1.bias"][0] = 1.0


class TestForward:
    def test_logit_shape(self, cnn):
        batch, _ = random_batch(cnn, 3)

        assert forward(init_params(cnn, 0), batch).shape == (3, 10)

    def test_zero_model_gives_zero_logits(self, cnn):
        batch, _ = random_batch(cnn)

        assert not forward(constant(cnn, 0.0), batch).any()

    def test_eval_mode_is_deterministic(self, cnn):
        batch, _ = random_batch(cnn)
        params = init_params(cnn, 0)

        assert np.array_equal(forward(params, batch), forward(params, batch))

    def test_training_mode_drops_activations(self, cnn):
        batch, _ = random_batch(cnn)
        params = init_params(cnn, 0)

        first = forward(params, batch, True, np.random.default_rng(0))
        again = forward(params, batch, True, np.random.default_rng(0))
        other = forward(params, batch, True, np.random.default_rng(1))

        assert np.array_equal(first, again)
        assert not np.array_equal(first, other)

    def test_rejects_wrong_image_size(self, cnn):
        with pytest.raises(ParameterError):
            forward(init_params(cnn, 0), np.zeros((2, 28, 28)))

    def test_non_finite_activations_name_the_layer(self, mlp):
        params = init_params(mlp, 0).map(
            lambda name, tensor: np.full_like(tensor, np.inf) if name == "fc1.bias" else tensor
        )

        with pytest.raises(NumericError) as error:
            forward(params, np.zeros((1, 8, 8)))
        assert error.value.layer == "fc1"

    def test_predictions_break_ties_low(self, mlp):
        assert predict(constant(mlp, 0.0), np.zeros((2, 8, 8))).tolist() == [0, 0]

    def test_empty_batch(self, mlp):
        assert forward(init_params(mlp, 0), np.zeros((0, 8, 8))).shape == (0, 10)


def test_convolution_matches_direct_loops():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 7, 6))
    weight = rng.normal(size=(4, 3, 3, 3))
    bias = rng.normal(size=4)

    out, _ = layers.conv2d_forward(x, weight, bias)

    expected = np.zeros((2, 4, 5, 4))
    for b in range(2):
        for o in range(4):
            for r in range(5):
                for c in range(4):
                    expected[b, o, r, c] = bias[o] + sum(
                        x[b, i, r + dr, c + dc] * weight[o, i, dr, dc]
                        for i in range(3)
                        for dr in range(3)
                        for dc in range(3)
                    )
    assert np.allclose(out, expected, atol=1e-6)


def test_pooling_routes_gradients_to_the_maximum():
    x = np.array([[[[1.0, 4.0], [3.0, 2.0]]]])

    out, cache = layers.maxpool2_forward(x)
    dx = layers.maxpool2_backward(np.array([[[[5.0]]]]), cache)

    assert out.item() == 4.0
    assert dx.tolist() == [[[[0.0, 5.0], [0.0, 0.0]]]]


class TestLoss:
    def test_uniform_logits(self, mlp):
        batch, labels = random_batch(mlp)

        assert batch_loss(constant(mlp, 0.0), batch, labels) == pytest.approx(math.log(10))

    def test_large_logits_stay_finite(self):
        logits = np.array([[100.0, -100.0] + [0.0] * 8, [-100.0, 100.0] + [0.0] * 8])

        loss, dlogits = layers.cross_entropy(logits, np.array([1, 1]))

        assert math.isfinite(loss)
        assert np.isfinite(dlogits).all()
        assert loss == pytest.approx(100.0, rel=1e-6)

    def test_duplicated_batch(self, cnn):
        params = init_params(cnn, 0)
        batch, labels = random_batch(cnn)

        loss, grads = loss_and_grad(params, batch, labels, train_mode=False)
        doubled_loss, doubled_grads = loss_and_grad(
            params, np.concatenate([batch, batch]), np.concatenate([labels, labels]), train_mode=False
        )

        assert doubled_loss == pytest.approx(loss, rel=1e-12)
        assert np.allclose(doubled_grads.flat(), grads.flat(), rtol=1e-10, atol=1e-14)

    def test_rejects_bad_labels(self, mlp):
        batch, _ = random_batch(mlp, 1)

        with pytest.raises(ParameterError):
            loss_and_grad(init_params(mlp, 0), batch, np.array([10]))


def routing(params: ParamSet, batch, train_mode: bool, rng_seed) -> list[np.ndarray]:
    """Every ReLU mask and pooling winner of a forward pass"""
    rng = None if rng_seed is None else np.random.default_rng(rng_seed)
    _, tape = model._run(params, batch, train_mode, rng)
    return [
        cache[1] if kind is model.LayerKind.POOL else cache
        for (kind, _), cache in tape
        if kind in (model.LayerKind.RELU, model.LayerKind.POOL)
    ]


def same_routing(first: list[np.ndarray], second: list[np.ndarray]) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(first, second))


def finite_difference_check(params: ParamSet, batch, labels, rng_seed=None) -> None:
    """Compare every tensor's gradient with central differences at random probes

    Probes whose nudges flip a ReLU or a pooling winner straddle a kink and
    are redrawn.
    """
    train_mode = rng_seed is not None

    def rng():
        return None if rng_seed is None else np.random.default_rng(rng_seed)

    _, grads = loss_and_grad(params, batch, labels, rng(), train_mode=train_mode)
    base_routing = routing(params, batch, train_mode, rng_seed)
    probe_rng = np.random.default_rng(11)

    for name in params.names:
        shape = params[name].shape
        checked = 0
        for _ in range(10 * PROBES):
            position = tuple(int(probe_rng.integers(size)) for size in shape)
            up = nudged(params, name, position, EPSILON)
            down = nudged(params, name, position, -EPSILON)
            if not (
                same_routing(base_routing, routing(up, batch, train_mode, rng_seed))
                and same_routing(base_routing, routing(down, batch, train_mode, rng_seed))
            ):
                continue

            numeric = (
                batch_loss(up, batch, labels, train_mode, rng())
                - batch_loss(down, batch, labels, train_mode, rng())
            ) / (2 * EPSILON)
            analytic = grads[name][position]

            scale = max(abs(numeric), abs(analytic))
            assert abs(numeric - analytic) <= max(1e-3 * scale, 1e-7), (name, position)

            checked += 1
            if checked == PROBES:
                break
        assert checked == PROBES, name


@pytest.mark.parametrize("preset", [Preset.CNN, Preset.MLP_SMALL])
def test_gradients_match_finite_differences(cnn, mlp, preset):
    arch = cnn if preset is Preset.CNN else mlp

    finite_difference_check(init_params(arch, 2), *random_batch(arch, 3, seed=4))


def test_gradients_pass_through_fixed_dropout_masks(cnn):
    finite_difference_check(init_params(cnn, 2), *random_batch(cnn, 3, seed=4), rng_seed=9)


class TestOptimizer:
    def test_plain_sgd(self, mlp):
        params = init_params(mlp, 0)
        grads = init_params(mlp, 1)

        updated, _ = sgd_momentum_step(params, grads, params.zeros_like(), lr=1.0, momentum=0.0)

        assert np.allclose(updated.flat(), params.flat() - grads.flat(), rtol=0, atol=1e-15)

    def test_zero_gradient_keeps_params(self, mlp):
        params = init_params(mlp, 0)

        updated, velocity = sgd_momentum_step(
            params, params.zeros_like(), params.zeros_like(), lr=0.1, momentum=0.9
        )

        assert updated.identical(params)
        assert not velocity.flat().any()

    def test_momentum_accumulates(self, mlp):
        params = init_params(mlp, 0)
        grads = init_params(mlp, 1)

        first, velocity = sgd_momentum_step(params, grads, params.zeros_like(), lr=1e-3, momentum=0.9)
        second, _ = sgd_momentum_step(first, grads, velocity, lr=1e-3, momentum=0.9)

        assert np.allclose(first.flat() - second.flat(), 1e-3 * 1.9 * grads.flat(), rtol=1e-9, atol=1e-15)

    @pytest.mark.parametrize("lr, momentum", [(0.0, 0.9), (-1.0, 0.9), (0.1, 1.0), (0.1, -0.1)])
    def test_rejects_bad_hyperparameters(self, mlp, lr, momentum):
        params = init_params(mlp, 0)

        with pytest.raises(ParameterError):
            sgd_momentum_step(params, params, params.zeros_like(), lr, momentum)

    def test_rejects_non_finite_gradients(self, mlp):
        params = init_params(mlp, 0)

        with pytest.raises(NumericError):
            sgd_momentum_step(params, constant(mlp, np.nan), params.zeros_like(), 0.1, 0.9)


class TestAverage:
    def test_weighted_mean(self, mlp):
        averaged = average_params([(constant(mlp, 2.0), 1), (constant(mlp, 6.0), 3)])

        assert np.all(averaged.flat() == 5.0)

    def test_single_model_is_returned_unchanged(self, mlp):
        params = init_params(mlp, 0)

        assert average_params([(params, 7.0)]) is params

    def test_identical_inputs(self, mlp):
        params = init_params(mlp, 0)

        assert average_params([(params, 1.0), (params, 2.0)]).identical(params)

    def test_zero_weights_contribute_nothing(self, mlp):
        params = init_params(mlp, 0)

        assert average_params([(params, 2.0), (init_params(mlp, 1), 0.0)]).identical(params)

    def test_permutation_invariant_and_convex(self, mlp):
        models = [(init_params(mlp, seed), float(seed + 1)) for seed in range(4)]

        forward_order = average_params(models).flat()
        reverse_order = average_params(models[::-1]).flat()
        stacked = np.stack([params.flat() for params, _ in models])

        assert np.allclose(forward_order, reverse_order, rtol=1e-12, atol=1e-15)
        assert np.all(forward_order >= stacked.min(axis=0) - 1e-15)
        assert np.all(forward_order <= stacked.max(axis=0) + 1e-15)

    def test_matches_a_brute_force_sum(self):
        rng = np.random.default_rng(2024)
        for case in range(1000):
            arch = ArchitectureConfig(
                preset=Preset.MLP_SMALL,
                image_size=int(rng.integers(1, 5)),
                fc1_units=int(rng.integers(1, 5)),
            )
            count = int(rng.integers(1, 6))
            models = [
                (init_params(arch, case * 10 + index), float(rng.uniform(0.1, 10)))
                for index in range(count)
            ]

            averaged = average_params(models).flat()

            flats = [params.flat() for params, _ in models]
            total = sum(weight for _, weight in models)
            expected = [
                sum(weight * flat[position] for (_, weight), flat in zip(models, flats)) / total
                for position in range(len(flats[0]))
            ]
            assert np.allclose(averaged, expected, rtol=1e-12, atol=1e-12), case

    def test_rejects_mismatched_architectures(self, mlp, cnn):
        with pytest.raises(AggregationError):
            average_params([(init_params(mlp, 0), 1.0), (init_params(cnn, 0), 1.0)])

    @pytest.mark.parametrize("weights", [(0.0, 0.0), (-1.0, 2.0), (math.nan, 1.0)])
    def test_rejects_bad_weights(self, mlp, weights):
        params = init_params(mlp, 0)

        with pytest.raises(ParameterError):
            average_params([(params, weight) for weight in weights])

    def test_rejects_no_models(self):
        with pytest.raises(ParameterError):
            average_params([])


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, cnn):
        params = init_params(cnn, 0)
        path = tmp_path / "nested" / "model.ckpt"

        save_checkpoint(params, path)
        loaded = load_checkpoint(path)

        assert loaded.architecture == cnn
        assert loaded.identical(params)

    def test_bad_magic(self, tmp_path, mlp):
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(mlp, 0), path)
        path.write_bytes(b"X" * len(CHECKPOINT_MAGIC) + path.read_bytes()[len(CHECKPOINT_MAGIC):])

        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, mlp):
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(mlp, 0), path)
        path.write_bytes(path.read_bytes()[:-8])

        with pytest.raises(TruncatedFileError):
            load_checkpoint(path)
