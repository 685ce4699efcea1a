import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from llaca.core.params import ParamVector
from llaca.core.tinynet import (
    Model,
    accuracy,
    gradient_check,
    init_model,
    logits,
    loss_and_grad,
    param_layout,
    predict,
    sgd_step,
    zero_params,
)
from llaca.exceptions import IncompatibleLayoutError, ShapeError
from llaca.models import NetSpec


def test_layout_of_small_net():
    spec = NetSpec(layer_sizes=[2, 3, 2])
    assert [(name, length) for name, _, length in param_layout(spec)] == [("W0", 6), ("b0", 3), ("W1", 6), ("b1", 2)]
    assert len(init_model(spec).params) == 17


def test_init_is_deterministic_per_seed():
    spec = NetSpec(layer_sizes=[4, 5, 3], init_seed=7)
    assert init_model(spec).params.equals(init_model(spec).params)
    other = init_model(NetSpec(layer_sizes=[4, 5, 3], init_seed=8))
    assert not init_model(spec).params.equals(other.params)


def test_init_ranges():
    spec = NetSpec(layer_sizes=[4, 6, 2], init_seed=3)
    model = init_model(spec)
    for (W, b), (fan_in, fan_out) in zip(model.weights(), [(4, 6), (6, 2)]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        assert W.shape == (fan_in, fan_out)
        assert np.all(np.abs(W) <= limit)
        assert_array_equal(b, np.zeros(fan_out))


def test_invalid_spec():
    with pytest.raises(ValueError):
        NetSpec(layer_sizes=[3])
    with pytest.raises(ValueError):
        NetSpec(layer_sizes=[3, 0, 2])


def test_model_rejects_foreign_layout():
    spec = NetSpec(layer_sizes=[2, 2])
    with pytest.raises(IncompatibleLayoutError):
        Model(spec, ParamVector.from_layers([("W0", np.zeros(4))]))


def test_uniform_logits_give_log_c():
    spec = NetSpec(layer_sizes=[2, 3, 2])
    model = Model(spec, zero_params(spec))
    loss, grads = loss_and_grad(model, [[0.3, -1.2]], [1])
    assert loss == pytest.approx(math.log(2.0))
    assert grads.is_compatible(model.params)


def test_loss_is_non_negative(rng):
    model = init_model(NetSpec(layer_sizes=[3, 4, 3], init_seed=1))
    for _ in range(20):
        loss, _ = loss_and_grad(model, rng.normal(size=(6, 3)), rng.integers(0, 3, size=6))
        assert loss >= 0.0


@pytest.mark.parametrize("instance", range(20))
def test_gradient_matches_finite_differences(instance):
    rng = np.random.default_rng(instance)
    hidden = [int(h) for h in rng.integers(1, 5, size=rng.integers(1, 3))]
    sizes = [int(rng.integers(1, 5))] + hidden + [int(rng.integers(2, 4))]
    model = init_model(NetSpec(layer_sizes=sizes, activation="tanh", init_seed=instance))
    model = Model(model.spec, model.params.with_values(model.params.values + rng.normal(scale=0.1, size=len(model.params))))
    X = rng.normal(size=(5, sizes[0]))
    y = rng.integers(0, sizes[-1], size=5)
    assert gradient_check(model, X, y, step=1e-4) <= 1e-5


def test_gradient_check_on_seventeen_parameters(rng):
    model = init_model(NetSpec(layer_sizes=[2, 3, 2], activation="tanh", init_seed=11))
    assert gradient_check(model, rng.normal(size=(8, 2)), rng.integers(0, 2, size=8)) <= 1e-5


def test_duplicated_batch_leaves_loss_and_grad_unchanged(rng):
    model = init_model(NetSpec(layer_sizes=[4, 5, 3], init_seed=2))
    X = rng.normal(size=(7, 4))
    y = rng.integers(0, 3, size=7)
    loss, grads = loss_and_grad(model, X, y)
    loss2, grads2 = loss_and_grad(model, np.vstack([X, X]), np.concatenate([y, y]))
    assert loss2 == pytest.approx(loss, rel=1e-12)
    assert_allclose(grads2.values, grads.values, rtol=1e-10, atol=1e-15)


def test_shape_errors():
    model = init_model(NetSpec(layer_sizes=[3, 2]))
    with pytest.raises(ShapeError):
        loss_and_grad(model, np.zeros((2, 4)), [0, 1])
    with pytest.raises(ShapeError):
        loss_and_grad(model, np.zeros((2, 3)), [0])
    with pytest.raises(ShapeError):
        loss_and_grad(model, np.zeros((1, 3)), [2])
    with pytest.raises(ShapeError):
        accuracy(model, np.zeros((0, 3)), [])


def test_sgd_step_examples():
    spec = NetSpec(layer_sizes=[1, 1])
    model = Model(spec, ParamVector.from_layers([("W0", [1.0]), ("b0", [0.5])]))
    grads = model.params.with_values([2.0, 1.0])
    assert sgd_step(model, grads, 0.0).params.equals(model.params)
    assert_array_equal(sgd_step(model, grads, 0.5).params.values, [0.0, 0.0])
    twice = sgd_step(sgd_step(model, grads, 0.1), grads, 0.1)
    once = sgd_step(model, grads.with_values(2.0 * grads.values), 0.1)
    assert_allclose(twice.params.values, once.params.values, rtol=1e-12)
    with pytest.raises(IncompatibleLayoutError):
        sgd_step(model, ParamVector.from_layers([("W1", [1.0, 1.0])]), 0.1)


def _forced_model(target_class, num_classes=3):
    # all weights zero, bias of the target class positive
    spec = NetSpec(layer_sizes=[2, num_classes])
    params = zero_params(spec).with_layers({"b0": np.eye(num_classes)[target_class]})
    return Model(spec, params)


def test_accuracy_extremes(rng):
    model = _forced_model(1)
    X = rng.normal(size=(10, 2))
    assert accuracy(model, X, np.ones(10, dtype=int)) == 1.0
    assert accuracy(model, X, np.zeros(10, dtype=int)) == 0.0


def test_untrained_symmetric_model_predicts_class_zero(golden):
    rng = np.random.default_rng(99)
    spec = NetSpec(layer_sizes=[4, 6, 2], init_seed=0)
    model = Model(spec, zero_params(spec))
    X = rng.normal(size=(1000, 4))
    y = rng.integers(0, 2, size=1000)
    assert_array_equal(predict(model, X), np.zeros(1000, dtype=int))
    acc = accuracy(model, X, y)
    assert acc == float(np.mean(y == 0))
    assert 0.4 < acc < 0.6
    golden("tinynet.untrained_symmetric_accuracy_seed99_n1000", acc)


def test_accuracy_invariant_to_positive_logit_scaling(rng):
    model = init_model(NetSpec(layer_sizes=[4, 6, 3], init_seed=5))
    X = rng.normal(size=(50, 4))
    y = rng.integers(0, 3, size=50)
    base = accuracy(model, X, y)
    for factor in (0.01, 3.0, 1e3):
        W1 = model.params.layer("W1").values * factor
        b1 = model.params.layer("b1").values * factor
        scaled = Model(model.spec, model.params.with_layers({"W1": W1, "b1": b1}))
        assert_allclose(logits(scaled, X), factor * logits(model, X), rtol=1e-10, atol=1e-12)
        assert accuracy(scaled, X, y) == base
