import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from archforge.data import Dataset, synthetic_splits
from archforge.errors import ConfigError, ContractError, DivergenceError
from archforge.network import build_layered, init_weights
from archforge.numerics import Rng
from archforge.training import (
    EarlyStopping,
    OptimizerState,
    RunRecord,
    TrainConfig,
    accuracy,
    correlation_with_grad,
    crossentropy,
    error_correlation,
    evaluate,
    fit,
    replay_early_stopping,
    rmsprop_step,
    sgd_step,
)
from oracles import naive_crossentropy, naive_early_stop, naive_error_correlation, naive_rmsprop, naive_sgd


def test_crossentropy_examples():
    Y = np.eye(3)
    assert crossentropy(Y, Y) <= 1e-11
    P = np.full((3, 3), 1 / 3)
    assert math.isclose(crossentropy(P, Y), math.log(3))
    zero = np.array([[0.0, 1.0]])
    assert math.isclose(crossentropy(zero, np.array([[1.0, 0.0]])), -math.log(1e-12))


@given(st.integers(0, 10_000))
def test_crossentropy_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(4), size=5)
    Y = np.eye(4)[rng.integers(0, 4, size=5)]
    assert math.isclose(crossentropy(P, Y), naive_crossentropy(P.tolist(), Y.tolist()), rel_tol=1e-12)


def test_crossentropy_shape_mismatch():
    with pytest.raises(ContractError):
        crossentropy(np.ones((2, 3)), np.ones((2, 2)))


def test_accuracy_ties_go_to_lowest_index():
    P = np.array([[0.5, 0.5], [0.2, 0.8], [0.4, 0.4]])
    assert accuracy(P, np.array([0, 1, 0])) == 1.0
    assert accuracy(P, np.array([1, 1, 1])) == pytest.approx(1 / 3)
    with pytest.raises(ContractError):
        accuracy(P, np.array([0, 2, 0]))
    with pytest.raises(ContractError):
        accuracy(P, np.array([0, 1]))


def test_error_correlation_oracle_and_gradient():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(12)
    E = rng.standard_normal((12, 3))
    S = error_correlation(v, E)
    assert math.isclose(S, naive_error_correlation(v.tolist(), E.tolist()), rel_tol=1e-12)
    total, dV = correlation_with_grad(v, E)
    assert math.isclose(total, S, rel_tol=1e-12)
    eps = 1e-6
    for p in range(3):
        up, down = v.copy(), v.copy()
        up[p] += eps
        down[p] -= eps
        fd = (error_correlation(up, E) - error_correlation(down, E)) / (2 * eps)
        assert math.isclose(dV[p, 0], fd, rel_tol=1e-6, abs_tol=1e-8)


def test_error_correlation_constant_candidate_is_zero():
    assert error_correlation(np.ones(5), np.random.default_rng(0).standard_normal((5, 2))) == 0.0
    with pytest.raises(ContractError):
        error_correlation(np.ones(4), np.ones((5, 2)))


def test_rmsprop_matches_scalar_oracle():
    grads = [0.3, -1.2, 0.05, 2.0, -0.7]
    cfg = TrainConfig(optimizer="rmsprop")
    theta = np.array([0.5])
    state = OptimizerState("rmsprop", [(1,)])
    for g in grads:
        rmsprop_step([theta], [np.array([g])], state, cfg)
    assert theta[0] == pytest.approx(naive_rmsprop(0.5, grads, 0.001, 0.9, 1e-8), rel=1e-14)


def test_rmsprop_constant_gradient_step_tends_to_lr():
    cfg = TrainConfig(optimizer="rmsprop")
    theta = np.zeros(1)
    state = OptimizerState("rmsprop", [(1,)])
    for _ in range(200):
        before = theta.copy()
        rmsprop_step([theta], [np.array([3.0])], state, cfg)
    step = abs(theta[0] - before[0])
    assert abs(step - cfg.lr) <= 0.01 * cfg.lr


def test_sgd_matches_scalar_oracle():
    grads = [0.3, -1.2, 0.05, 2.0, -0.7]
    cfg = TrainConfig(optimizer="sgd")
    theta = np.array([0.5])
    state = OptimizerState("sgd", [(1,)])
    for g in grads:
        sgd_step([theta], [np.array([g])], state, cfg)
    assert theta[0] == pytest.approx(naive_sgd(0.5, grads, 0.01, 0.9, 1e-6), rel=1e-14)


def test_optimizers_skip_frozen_tensors():
    cfg = TrainConfig()
    a, b = np.ones(3), np.ones(3)
    state = OptimizerState("rmsprop", [(3,), (3,)])
    rmsprop_step([a, b], [np.ones(3), np.ones(3)], state, cfg, frozen=[True, False])
    assert np.all(a == 1.0) and np.all(b < 1.0)


def test_train_config_validation():
    assert TrainConfig().lr == 0.001
    assert TrainConfig(optimizer="sgd").lr == 0.01
    for bad in ({"optimizer": "adam"}, {"monitor": "loss"}, {"batch_size": 0}, {"patience": 0},
                {"gamma": 1.0}, {"learning_rate": -1.0}, {"loss": "mse"}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


EARLY_STOP_TABLE = [
    ([.90, .91, .91, .91, .91, .91, .91], 5, "val_accuracy", (7, 2)),
    ([.5, .6, .7, .8], 2, "val_accuracy", (4, 4)),
    ([.5, .5, .5], 2, "val_accuracy", (3, 1)),
    ([.5, .4, .6, .6, .6], 2, "val_accuracy", (5, 3)),
    ([1.0, .9, .95, .8, .85, .86], 2, "val_loss", (6, 4)),
    ([1.0, 1.0, 1.0, 1.0], 3, "val_loss", (4, 1)),
    ([.1, .2, .1, .2, .1], None, "val_accuracy", (5, 2)),
]


@pytest.mark.parametrize("values,patience,monitor,expected", EARLY_STOP_TABLE)
def test_early_stopping_table(values, patience, monitor, expected):
    assert replay_early_stopping(values, patience, monitor) == expected
    assert naive_early_stop(values, patience, monitor == "val_accuracy") == expected


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 6))
def test_early_stopping_matches_oracle(values, patience):
    assert replay_early_stopping(values, patience) == naive_early_stop(values, patience)


def test_early_stopping_rejects_unknown_monitor():
    with pytest.raises(ConfigError):
        EarlyStopping("train_loss", 3)


def _toy_task():
    rng = Rng(0)
    X = rng.uniform(-1, 1, size=(400, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    data = Dataset.from_arrays(X, y, 2)
    return data.take(np.arange(300)), data.take(np.arange(300, 400))


def test_fit_learns_linear_task_and_records_epochs():
    train, val = _toy_task()
    net = init_weights(build_layered(2, [(8, "tanh")], 2), Rng(1))
    net, rec = fit(net, train, val, TrainConfig(max_epochs=30, patience=None, learning_rate=0.01), Rng(2))
    assert rec.epochs == 30 and rec.stopped_epoch == 30
    assert rec.final("val_acc") > 0.95
    assert len(rec.seconds) == 30 and all(s >= 0 for s in rec.seconds)


def test_fit_restores_best_epoch():
    train, val = _toy_task()
    net = init_weights(build_layered(2, [(8, "tanh")], 2), Rng(1))
    cfg = TrainConfig(max_epochs=40, patience=3, monitor="val_loss", learning_rate=0.05)
    net, rec = fit(net, train, val, cfg, Rng(2))
    loss, acc = evaluate(net, val)
    assert loss == pytest.approx(rec.best("val_loss"), rel=1e-12)
    assert rec.stopped_epoch - rec.best_epoch <= 3


def test_fit_is_deterministic():
    train, val = _toy_task()
    out = []
    for _ in range(2):
        net = init_weights(build_layered(2, [(5, "relu")], 2), Rng(3))
        fit(net, train, val, TrainConfig(optimizer="sgd", max_epochs=3, patience=None), Rng(4))
        out.append(net.get_flat().tobytes())
    assert out[0] == out[1]


def test_fit_never_moves_frozen_layers_or_data():
    train, val = _toy_task()
    before = train.inputs.copy()
    net = init_weights(build_layered(2, [(5, "tanh"), (4, "tanh")], 2), Rng(3))
    net.freeze(0)
    W0 = net.layers[0].W.copy()
    fit(net, train, val, TrainConfig(max_epochs=3, patience=None), Rng(4))
    assert net.layers[0].W.tobytes() == W0.tobytes()
    assert np.array_equal(train.inputs, before)
    assert not train.inputs.flags.writeable


def test_fit_raises_on_divergence():
    train, val = _toy_task()
    net = init_weights(build_layered(2, [(16, "relu")], 2), Rng(0))
    with pytest.raises(DivergenceError):
        fit(net, train.with_inputs(train.inputs * 1e200), val, TrainConfig(optimizer="sgd", learning_rate=10.0), Rng(0))


def test_fit_last_batch_may_be_short():
    train, val = _toy_task()
    net = init_weights(build_layered(2, [(3, "tanh")], 2), Rng(0))
    _, rec = fit(net, train, val, TrainConfig(batch_size=128, max_epochs=1), Rng(0))
    assert rec.epochs == 1


def test_run_record_round_trip():
    rec = RunRecord([1.0], [0.5], [0.9], [0.6], [0.1], 1, 1, 0.7)
    assert RunRecord.from_dict(rec.to_dict()) == rec
    rows = list(rec.csv_rows(timing=False))
    assert rows[0]["seconds"] == "" and rows[0]["epoch"] == 1


def test_synthetic_fitness_regime_is_learnable():
    """A 1 x 100 tanh net trained three epochs on the polygon task passes 0.9 validation accuracy."""
    from archforge.network import ArchitectureSpec
    from archforge.search import evaluate_fitness

    result = evaluate_fitness(ArchitectureSpec(1, 100, "tanh", "rmsprop"), synthetic_splits(10_000, 0), 3, 3, Rng(0))
    assert result.fitness > 0.9
