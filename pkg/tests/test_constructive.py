import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from archforge.constructive import (
    CASCADE_CFG,
    CURVE_CSV_COLUMNS,
    FORWARD_CFG,
    CandidatePoolConfig,
    LayerPerformanceCurve,
    _pick,
    _pool_jobs,
    _train_loss_candidate,
    auto_forward_thinking,
    cascor_train,
    caser_re_train,
    choose_depth,
    forward_thinking_train,
    prune_to_tradeoff,
    push_through,
    train_candidate_pool,
)
from archforge.data import synthetic_splits
from archforge.errors import ConfigError, ContractError
from archforge.network import CascadeNetwork, Dense, LayeredNetwork, build_layered, init_weights
from archforge.numerics import Rng, softmax
from archforge.training import evaluate, fit

FAST = CASCADE_CFG.with_(max_epochs=4)
FAST_FT = FORWARD_CFG.with_(max_epochs=4)


@pytest.fixture(scope="module")
def data():
    return synthetic_splits(400, 2)


def test_pool_config_validation():
    assert CandidatePoolConfig().width == 1
    assert CandidatePoolConfig(insert_kind="layer", layer_width=7).width == 7
    assert CandidatePoolConfig.parse_policy("threshold(0.05)") == ("threshold", 0.05)
    assert CandidatePoolConfig.parse_policy("never") == ("never", None)
    for bad in ({"pool_size": 0}, {"objective": "x"}, {"reuse_policy": "sometimes"},
                {"reuse_policy": "threshold", "threshold_drop": 1.5},
                {"reuse_policy": "pool_member", "pool_size": 1}, {"insert_kind": "block"}):
        with pytest.raises(ConfigError):
            CandidatePoolConfig(**bad)


def test_pick_ties_and_nan():
    assert _pick([0.5, 0.9, 0.9]) == 1
    assert _pick([float("nan"), 0.1]) == 1
    assert _pick([None, -1.0]) == 1
    assert _pick([0.3]) == 0


def _base(data, seed=0):
    net = init_weights(CascadeNetwork(data.train.dim, data.train.class_count), Rng(seed))
    return net


def test_pool_of_one_wins(data):
    winner, cands = train_candidate_pool(_base(data), CandidatePoolConfig(pool_size=1), data, Rng(1), FAST)
    assert winner == 0 and len(cands) == 1


def test_pool_member_winner_beats_reuse_candidate(data):
    pool = CandidatePoolConfig(pool_size=4, reuse_policy="pool_member")
    winner, cands = train_candidate_pool(_base(data), pool, data, Rng(2), FAST)
    assert cands[0].reuse and not any(c.reuse for c in cands[1:])
    assert cands[winner].val_acc >= cands[0].val_acc


def test_pool_is_order_independent(data):
    pool = CandidatePoolConfig(pool_size=4)
    base = _base(data)
    feats = data.map_inputs(lambda X: base.features(X)[0])
    jobs = _pool_jobs(pool, FAST, Rng(3), 2, base.output)
    forward = {c.candidate_id: c.score for c in (_train_loss_candidate(feats, j) for j in jobs)}
    backward = {c.candidate_id: c.score for c in (_train_loss_candidate(feats, j) for j in reversed(jobs))}
    assert forward == backward


def test_pool_jobs_parity(data):
    pool = CandidatePoolConfig(pool_size=3, objective="correlation_max")
    one = train_candidate_pool(_base(data), pool, data, Rng(4), FAST, jobs=1)
    two = train_candidate_pool(_base(data), pool, data, Rng(4), FAST, jobs=2)
    assert one[0] == two[0]
    assert [c.score for c in one[1]] == [c.score for c in two[1]]
    assert [c.block.W.tobytes() for c in one[1]] == [c.block.W.tobytes() for c in two[1]]


def test_cascor_zero_units_is_linear_softmax(data):
    net, rec = cascor_train(data, 0, cfg=FAST, rng=Rng(0))
    assert net.blocks == [] and rec.insertions == []
    assert net.parameter_count == 2 * 2 + 2
    X = data.val.inputs
    assert np.allclose(net.predict(X), softmax(X @ net.output.W.T + net.output.b), atol=1e-14)


def test_cascor_freezes_and_wires(data):
    net, rec = cascor_train(data, 3, CandidatePoolConfig(pool_size=2, candidate_epochs=1,
                                                         objective="correlation_max"), FAST, Rng(5))
    assert len(rec.insertions) == 3
    assert all(b.frozen for b in net.blocks)
    assert [b.fan_in for b in net.blocks] == [2, 3, 4]
    assert net.output.fan_in == 5
    assert 0 <= rec.final_val_acc <= 1
    assert rec.candidate_seconds >= 0 and rec.main_seconds >= 0
    with pytest.raises(ConfigError):
        cascor_train(data, 1, CandidatePoolConfig(), FAST)


def test_cascor_final_accuracy_matches_full_network(data):
    net, rec = cascor_train(data, 2, CandidatePoolConfig(pool_size=2, objective="correlation_max"), FAST, Rng(6))
    assert rec.test_acc == pytest.approx(evaluate(net, data.test)[1], abs=1e-12)


@pytest.mark.parametrize("policy", ["never", "always", "threshold", "pool_member"])
def test_caser_policies_keep_invariants(data, policy):
    pool = CandidatePoolConfig(pool_size=3, reuse_policy=policy, insert_kind="layer", layer_width=3)
    net, rec = caser_re_train(data, 2, pool, FAST, Rng(7))
    assert net.widths == [3, 3]
    assert [b.fan_in for b in net.blocks] == [2, 5]
    assert net.output.fan_in == 8
    assert all(b.frozen for b in net.blocks)
    if policy == "always":
        assert all(ins.reused_output for ins in rec.insertions)
    if policy == "never":
        assert not any(ins.reused_output for ins in rec.insertions)
    for ins in rec.insertions:
        assert ins.val_acc == pytest.approx(ins.main.best("val_acc"))
    assert rec.test_acc == pytest.approx(evaluate(net, data.test)[1], abs=1e-12)


def test_caser_reproducible_and_serializable(data):
    pool = CandidatePoolConfig(pool_size=2, reuse_policy="pool_member")
    a = caser_re_train(data, 2, pool, FAST, Rng(8))
    b = caser_re_train(data, 2, pool, FAST, Rng(8))
    assert a[0].get_flat().tobytes() == b[0].get_flat().tobytes()
    payload = json.loads(a[1].to_json())
    assert payload["algorithm"] == "caser-pool_member" and len(payload["insertions"]) == 2
    rows = list(a[1].curve_rows())
    assert set(rows[0]) == set(CURVE_CSV_COLUMNS)
    assert {r["phase"] for r in rows} == {"pool", "main"}
    buf = io.StringIO()
    csv.DictWriter(buf, CURVE_CSV_COLUMNS).writerows(rows)


def _frozen_prefix(seed, dims=((2, 5), (5, 4))):
    rng = Rng(seed)
    layers = []
    for fan_in, fan_out in dims:
        layer = Dense(rng.uniform(-1, 1, (fan_out, fan_in)), rng.uniform(-1, 1, fan_out), "tanh")
        layer.frozen = True
        layers.append(layer)
    return layers


def test_push_through_basics(data):
    assert push_through(data.train, None) is data.train
    assert push_through(data.train, []) is data.train
    prefix = _frozen_prefix(0)
    pushed = push_through(data.train, prefix)
    assert pushed.dim == 4
    assert np.array_equal(pushed.labels, data.train.labels)
    prefix[0].frozen = False
    with pytest.raises(ContractError):
        push_through(data.train, prefix)


def test_push_through_equivalence(data):
    prefix = _frozen_prefix(1)
    head = init_weights(build_layered(4, [], 2), Rng(2))
    out = head.layers[0]
    full = LayeredNetwork(prefix + [Dense(out.W.copy(), out.b.copy(), "softmax")])
    full.initialized = True
    pushed_train = push_through(data.train, prefix)
    pushed_val = push_through(data.val, prefix)
    cfg = CASCADE_CFG.with_(max_epochs=5, patience=None)
    _, a = fit(head, pushed_train, pushed_val, cfg, Rng(3))
    _, b = fit(full, data.train, data.val, cfg, Rng(3))
    assert abs(a.final("val_acc") - b.final("val_acc")) <= 1e-9
    assert np.allclose(head.layers[0].W, full.layers[-1].W, atol=1e-9)
    assert all(np.array_equal(l.W, p.W) for l, p in zip(full.layers, _frozen_prefix(1)))


def test_forward_thinking_single_layer_is_plain_fit(data):
    net, recs = forward_thinking_train(data, [(6, "tanh")], FAST_FT, Rng(9), last_patience=3)
    ref = init_weights(build_layered(2, [(6, "tanh")], 2), Rng(9).derive(0, 0))
    fit(ref, data.train, data.val, FAST_FT.with_(patience=3), Rng(9).derive(0, 1))
    assert net.get_flat().tobytes() == ref.get_flat().tobytes()
    assert len(recs) == 1 and net.layers[0].frozen


def test_forward_thinking_stack(data):
    net, recs = forward_thinking_train(data, [(6, "tanh"), (5, "relu")], FAST_FT, Rng(10))
    assert [l.fan_out for l in net.hidden_layers] == [6, 5]
    assert all(l.frozen for l in net.hidden_layers)
    assert recs[-1].test_acc == pytest.approx(evaluate(net, data.test)[1])
    with pytest.raises(ConfigError):
        forward_thinking_train(data, [])


@pytest.mark.parametrize("seed", range(3))
def test_aft_monotone_and_curve(data, seed):
    net, curve = auto_forward_thinking(data, pool_size=3, widths=range(2, 13, 2), candidate_epochs=1,
                                       max_layers=3, cfg=FAST_FT, rng=Rng(seed))
    assert curve.depth == len(net.hidden_layers) == 3
    assert all(a >= b for a, b in zip(curve.widths, curve.widths[1:]))
    assert curve.widths == [l.fan_out for l in net.hidden_layers]
    assert [r["depth"] for r in curve.rows()] == [1, 2, 3]
    json.loads(curve.to_json())


def test_aft_stops_when_cap_empties(data):
    _, curve = auto_forward_thinking(data, pool_size=2, widths=[3], candidate_epochs=1, max_layers=3,
                                     cfg=FAST_FT, rng=Rng(0))
    assert curve.widths == [3, 3, 3] and not curve.flags


def test_aft_jobs_parity(data):
    kw = dict(pool_size=3, widths=range(2, 9, 2), candidate_epochs=1, max_layers=2, cfg=FAST_FT)
    a, _ = auto_forward_thinking(data, rng=Rng(1), jobs=1, **kw)
    b, _ = auto_forward_thinking(data, rng=Rng(1), jobs=2, **kw)
    assert a.get_flat().tobytes() == b.get_flat().tobytes()


def test_choose_depth_examples():
    assert choose_depth([0.90, 0.92, 0.95]) == 3
    assert choose_depth([0.95, 0.974, 0.9745, 0.9746, 0.9747], 0.001) == 2
    assert choose_depth([0.95, 0.974, 0.9745, 0.9746, 0.9747], 0.0) == 5
    with pytest.raises(ContractError):
        choose_depth([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0, 0.1))
def test_choose_depth_properties(curve, eps):
    d = choose_depth(curve, eps)
    assert 1 <= d <= len(curve)
    assert curve[d - 1] >= max(curve) - eps
    assert all(a < max(curve) - eps for a in curve[: d - 1])


def test_prune_to_tradeoff(data):
    net, curve = auto_forward_thinking(data, pool_size=2, widths=range(2, 9, 2), candidate_epochs=1,
                                       max_layers=3, cfg=FAST_FT, rng=Rng(2))
    pruned, depth, rec = prune_to_tradeoff(curve, net, 0.001, data, FAST_FT, Rng(3))
    assert depth == choose_depth(curve.val_acc, 0.001)
    assert len(pruned.hidden_layers) == depth <= curve.depth
    assert all(l.frozen for l in pruned.hidden_layers)
    assert rec.test_acc == pytest.approx(evaluate(pruned, data.test)[1])
    with pytest.raises(ContractError):
        prune_to_tradeoff(LayerPerformanceCurve(), net, data=data)
