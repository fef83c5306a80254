"""Constructive learners.

Cascade family (Cascor, Caser, CaserRe) grows a :class:`CascadeNetwork` one
block at a time; the forward-thinking family grows a :class:`LayeredNetwork`
one frozen hidden layer at a time.

Every block already inserted is frozen, so its activations are a fixed
function of the input. Both families therefore train each new block on
cached features (input plus frozen activations) instead of re-running the
frozen part every batch. The result is the same computation, only cheaper.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, Splits
from .errors import ConfigError, ContractError, DivergenceError
from .network import (
    CascadeNetwork,
    Dense,
    LayeredNetwork,
    _apply,
    _glorot,
    _hidden_backward,
    build_layered,
    extend_output,
    init_weights,
    new_block,
)
from .numerics import Rng, derive_seed
from .parallel import pmap
from .training import (
    OptimizerState,
    RunRecord,
    TrainConfig,
    correlation_with_grad,
    evaluate,
    fit,
    rmsprop_step,
    sgd_step,
)

OBJECTIVES = ("loss_min", "correlation_max")
REUSE_POLICIES = ("never", "always", "threshold", "pool_member")
CURVE_CSV_COLUMNS = ("insertion", "candidate_id", "phase", "epoch", "val_acc", "val_loss")
LAYER_CURVE_COLUMNS = ("depth", "width", "val_acc", "val_loss", "train_acc", "parameter_count", "test_acc")

CASCADE_CFG = TrainConfig(monitor="val_accuracy", patience=3)
FORWARD_CFG = TrainConfig(monitor="val_loss", patience=2)
_PUSH_CHUNK = 8192


@dataclass(frozen=True)
class CandidatePoolConfig:
    """How each insertion round builds, trains and picks candidates.

    ``insert_kind='unit'`` inserts single units; ``'layer'`` inserts
    cascading layers of ``layer_width`` units.
    """

    pool_size: int = 8
    candidate_epochs: int = 1
    objective: str = "loss_min"
    reuse_policy: str = "never"
    threshold_drop: float = 0.05
    insert_kind: str = "unit"
    layer_width: int = 50
    activation: str = "tanh"

    def __post_init__(self):
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if self.candidate_epochs < 1:
            raise ConfigError("candidate_epochs must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.reuse_policy not in REUSE_POLICIES:
            raise ConfigError(f"unknown reuse policy {self.reuse_policy!r}")
        if self.reuse_policy == "threshold" and not 0.0 < self.threshold_drop < 1.0:
            raise ConfigError("threshold drop must lie in (0, 1)")
        if self.reuse_policy == "pool_member" and self.pool_size < 2:
            raise ConfigError("pool_member needs pool_size >= 2")
        if self.insert_kind not in ("unit", "layer"):
            raise ConfigError(f"unknown insert kind {self.insert_kind!r}")
        if self.layer_width < 1:
            raise ConfigError("layer_width must be >= 1")

    @property
    def width(self):
        return 1 if self.insert_kind == "unit" else self.layer_width

    @staticmethod
    def parse_policy(text):
        """``'threshold(0.05)'`` -> ``('threshold', 0.05)``; other names pass through."""
        m = re.fullmatch(r"\s*threshold\s*\(\s*([0-9.eE+-]+)\s*\)\s*", text)
        if m:
            return "threshold", float(m.group(1))
        return text.strip(), None


@dataclass
class Candidate:
    candidate_id: int
    reuse: bool
    block: Dense
    output: Dense | None
    score: float
    val_acc: float | None = None
    val_loss: float | None = None
    history: list = field(default_factory=list)
    seconds: float = 0.0
    diverged: bool = False

    def metrics(self):
        return {
            "candidate_id": self.candidate_id,
            "reuse": self.reuse,
            "width": self.block.fan_out,
            "score": self.score,
            "val_acc": self.val_acc,
            "val_loss": self.val_loss,
            "seconds": self.seconds,
            "diverged": self.diverged,
        }


@dataclass
class InsertionRecord:
    insertion: int
    winner: int
    candidates: list
    candidate_curves: list
    main: RunRecord
    reused_output: bool
    widths: list
    parameter_count: int
    val_acc: float
    val_loss: float
    candidate_seconds: float
    main_seconds: float


@dataclass
class ConstructiveRecord:
    algorithm: str
    max_insertions: int
    initial: RunRecord | None = None
    insertions: list = field(default_factory=list)
    candidate_seconds: float = 0.0
    main_seconds: float = 0.0
    test_acc: float | None = None
    flags: list = field(default_factory=list)

    @property
    def final_val_acc(self):
        if self.insertions:
            return self.insertions[-1].val_acc
        return self.initial.best("val_acc") if self.initial else float("nan")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, default=float)

    def curve_rows(self):
        if self.initial is not None:
            yield from _main_rows(0, "", self.initial)
        for ins in self.insertions:
            yield from _pool_rows(ins.insertion, ins.candidate_curves)
            yield from _main_rows(ins.insertion, ins.winner, ins.main)


@dataclass
class LayerPerformanceCurve:
    """One entry per constructed depth, starting at 1."""

    widths: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    parameter_count: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    candidate_widths: list = field(default_factory=list)
    winners: list = field(default_factory=list)
    candidate_curves: list = field(default_factory=list)
    records: list = field(default_factory=list)
    candidate_seconds: float = 0.0
    main_seconds: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def depth(self):
        return len(self.val_acc)

    def append(self, width, val_loss, val_acc, train_acc, params, test_acc=None):
        self.widths.append(int(width))
        self.val_loss.append(float(val_loss))
        self.val_acc.append(float(val_acc))
        self.train_acc.append(float(train_acc))
        self.parameter_count.append(int(params))
        self.test_acc.append(None if test_acc is None else float(test_acc))

    def rows(self):
        for d in range(self.depth):
            yield {
                "depth": d + 1,
                "width": self.widths[d],
                "val_acc": self.val_acc[d],
                "val_loss": self.val_loss[d],
                "train_acc": self.train_acc[d],
                "parameter_count": self.parameter_count[d],
                "test_acc": "" if self.test_acc[d] is None else self.test_acc[d],
            }

    def curve_rows(self):
        for d in range(self.depth):
            yield from _pool_rows(d + 1, self.candidate_curves[d])
            yield from _main_rows(d + 1, self.winners[d], self.records[d])

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, default=float)


def _pool_rows(insertion, curves):
    for cid, history in enumerate(curves):
        for epoch, (acc, loss) in enumerate(history, start=1):
            yield {"insertion": insertion, "candidate_id": cid, "phase": "pool",
                   "epoch": epoch, "val_acc": _blank(acc), "val_loss": _blank(loss)}


def _main_rows(insertion, cid, record):
    for epoch in range(record.epochs):
        yield {"insertion": insertion, "candidate_id": cid, "phase": "main", "epoch": epoch + 1,
               "val_acc": record.val_acc[epoch], "val_loss": record.val_loss[epoch]}


def _blank(x):
    return "" if x is None else x


# -- shared plumbing ----------------------------------------------------------

def _pick(scores):
    """Index of the largest score, lowest index on ties; NaN never wins."""
    clean = [s if s is not None and not math.isnan(s) else -math.inf for s in scores]
    return max(range(len(clean)), key=lambda i: (clean[i], -i))


def _layer_map(layer):
    def fn(X):
        out = np.empty((X.shape[0], layer.fan_out))
        for s in range(0, X.shape[0], _PUSH_CHUNK):
            out[s:s + _PUSH_CHUNK] = _apply(layer.activation, X[s:s + _PUSH_CHUNK] @ layer.W.T + layer.b)
        return out
    return fn


def _append_block_features(splits, block):
    act = _layer_map(block)
    return splits.map_inputs(lambda F: np.hstack([F, act(F)]))


def _softmax_only(output):
    head = LayeredNetwork([output])
    head.initialized = True
    return head


def _candidate_head(fdim, block, output):
    head = CascadeNetwork(fdim, output.fan_out, [block], output)
    head.initialized = True
    return head


def _check_wiring(net):
    fan_in = net.input_dim
    for block in net.blocks:
        if block.fan_in != fan_in:
            raise ContractError("cascade fan-in arithmetic violated")
        fan_in += block.fan_out
    if net.output.fan_in != fan_in:
        raise ContractError("cascade output fan-in violated")


def _check_frozen(blocks, saved):
    for block, (W, b) in zip(blocks, saved):
        if not block.frozen or not (np.array_equal(block.W, W) and np.array_equal(block.b, b)):
            raise ContractError("a frozen block changed after insertion")


# -- candidate pools -----------------------------------------------------------

def _train_loss_candidate(fsplits, job):
    """Block plus output layer trained on the loss for a few epochs."""
    t0 = time.perf_counter()
    rng = Rng(job["seed"])
    fdim = fsplits.train.dim
    block = new_block(rng.derive(0), fdim, job["width"], job["activation"])
    if job["reuse_from"] is not None:
        output = extend_output(job["reuse_from"], job["width"], rng.derive(1), "reuse_previous")
    else:
        output = Dense(_glorot(rng.derive(1), job["classes"], fdim + job["width"]),
                       np.zeros(job["classes"]), "softmax")
    head = _candidate_head(fdim, block, output)
    cand = Candidate(job["id"], job["reuse_from"] is not None, block, output, -math.inf)
    try:
        _, rec = fit(head, fsplits.train, fsplits.val, job["cfg"], rng.derive(2))
    except DivergenceError:
        cand.diverged = True
    else:
        cand.val_acc, cand.val_loss = rec.final("val_acc"), rec.final("val_loss")
        cand.score = cand.val_acc
        cand.history = list(zip(rec.val_acc, rec.val_loss))
    cand.seconds = time.perf_counter() - t0
    return cand


def _train_correlation_candidate(shared, job):
    """Block trained by mini-batch ascent on the error correlation S.

    The batch objective is S over the batch divided by its size; the
    configured optimizer minimizes its negation.
    """
    fsplits, E = shared
    t0 = time.perf_counter()
    rng = Rng(job["seed"])
    cfg = job["cfg"]
    X = fsplits.train.inputs
    block = new_block(rng.derive(0), X.shape[1], job["width"], job["activation"])
    params = [block.W, block.b]
    state = OptimizerState.for_params(cfg.optimizer, params)
    step = rmsprop_step if cfg.optimizer == "rmsprop" else sgd_step
    order_rng = rng.derive(1)
    act = _layer_map(block)
    history = []
    n = X.shape[0]
    for _ in range(job["epochs"]):
        order = order_rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            Fb = X[idx]
            pre = Fb @ block.W.T + block.b
            V = _apply(block.activation, pre)
            _, dV = correlation_with_grad(V, E[idx])
            dpre = _hidden_backward(block.activation, pre, V, dV)
            B = idx.size
            step(params, [-(dpre.T @ Fb) / B, -dpre.sum(axis=0) / B], state, cfg)
        history.append((None, None))
    score, _ = correlation_with_grad(act(X), E)
    if not math.isfinite(score):
        return Candidate(job["id"], False, block, None, -math.inf, history=history,
                         seconds=time.perf_counter() - t0, diverged=True)
    return Candidate(job["id"], False, block, None, score, history=history,
                     seconds=time.perf_counter() - t0)


def _pool_jobs(pool, cfg, rng, classes, prev_output):
    cand_cfg = cfg.with_(max_epochs=pool.candidate_epochs, patience=None, restore_best=False)
    jobs = []
    for i in range(pool.pool_size):
        reuse = pool.reuse_policy == "always" or (pool.reuse_policy == "pool_member" and i == 0)
        jobs.append({
            "id": i,
            "seed": derive_seed(rng.seed, i),
            "width": pool.width,
            "activation": pool.activation,
            "classes": classes,
            "reuse_from": prev_output if reuse and pool.objective == "loss_min" else None,
            "cfg": cand_cfg,
            "epochs": pool.candidate_epochs,
        })
    return jobs


def _run_pool(fsplits, prev_output, pool, cfg, rng, E=None, jobs=1):
    job_list = _pool_jobs(pool, cfg, rng, fsplits.train.class_count, prev_output)
    if pool.objective == "correlation_max":
        if E is None:
            raise ContractError("correlation objective needs residual errors")
        cands = pmap(_train_correlation_candidate, job_list, jobs, shared=(fsplits, E))
    else:
        cands = pmap(_train_loss_candidate, job_list, jobs, shared=fsplits)
    return _pick([c.score for c in cands]), cands


def train_candidate_pool(base: CascadeNetwork, pool: CandidatePoolConfig, data: Splits, rng: Rng,
                         cfg: TrainConfig = CASCADE_CFG, jobs=1):
    """Train one round of candidates on top of ``base``; returns ``(winner, candidates)``.

    Every candidate owns a seed derived from ``rng`` and its index, so the
    pool's outcome does not depend on evaluation order or ``jobs``.
    """
    base_feats = data.map_inputs(lambda X: base.features(X)[0])
    E = None
    if pool.objective == "correlation_max":
        E = base.predict(data.train.inputs) - data.train.targets
    return _run_pool(base_feats, base.output, pool, cfg, rng, E, jobs)


# -- cascade family ----------------------------------------------------------

def _cascade_start(data, cfg, rng):
    net = init_weights(CascadeNetwork(data.train.dim, data.train.class_count), rng.derive(0))
    t0 = time.perf_counter()
    _, initial = fit(_softmax_only(net.output), data.train, data.val, cfg, rng.derive(1))
    net.touch()
    return net, initial, time.perf_counter() - t0


def _finish(net, record, data, feats, saved):
    _check_wiring(net)
    _check_frozen(net.blocks, saved)
    if len(data.test):
        record.test_acc = evaluate(_softmax_only(net.output), feats.test)[1]
    return net, record


def cascor_train(data: Splits, max_units: int, pool: CandidatePoolConfig = None,
                 cfg: TrainConfig = CASCADE_CFG, rng: Rng = None, jobs=1):
    """Cascade-correlation: maximize error correlation, freeze, retrain outputs.

    Residual errors ``E = P - Y`` are computed once per round on the training
    set and shared by the whole pool. The winner (largest S over the full
    training residuals) is inserted frozen, the output layer keeps its old
    weights, gains fresh columns for the new block and is retrained.
    """
    pool = pool or CandidatePoolConfig(candidate_epochs=2, objective="correlation_max")
    if pool.objective != "correlation_max":
        raise ConfigError("cascor needs the correlation_max objective")
    if max_units < 0:
        raise ConfigError("max_units must be >= 0")
    rng = rng or Rng(0)
    net, initial, secs = _cascade_start(data, cfg, rng)
    record = ConstructiveRecord("cascor", max_units, initial, main_seconds=secs)
    feats = data
    saved = []
    for k in range(1, max_units + 1):
        E = _softmax_only(net.output).predict(feats.train.inputs) - feats.train.targets
        t0 = time.perf_counter()
        winner, cands = _run_pool(feats, None, pool, cfg, rng.derive(k, 2), E, jobs)
        t_pool = time.perf_counter() - t0

        t0 = time.perf_counter()
        block = cands[winner].block
        block.frozen = True
        net.append_block(block, rng.derive(k, 3), "reuse_previous")
        feats = _append_block_features(feats, block)
        _, main = fit(_softmax_only(net.output), feats.train, feats.val, cfg, rng.derive(k, 4))
        net.touch()
        t_main = time.perf_counter() - t0

        saved.append((block.W.copy(), block.b.copy()))
        _check_wiring(net)
        _check_frozen(net.blocks, saved)
        record.insertions.append(InsertionRecord(
            insertion=k, winner=winner, candidates=[c.metrics() for c in cands],
            candidate_curves=[c.history for c in cands], main=main, reused_output=True,
            widths=net.widths, parameter_count=net.parameter_count,
            val_acc=main.best("val_acc"), val_loss=main.best("val_loss"),
            candidate_seconds=t_pool, main_seconds=t_main,
        ))
        record.candidate_seconds += t_pool
        record.main_seconds += t_main
    return _finish(net, record, data, feats, saved)


def caser_re_train(data: Splits, max_insertions: int, pool: CandidatePoolConfig = None,
                   cfg: TrainConfig = CASCADE_CFG, rng: Rng = None, jobs=1):
    """Caser and its output-reuse variants.

    Each round trains the pool on the loss, inserts the candidate with the
    best validation accuracy and keeps training it (block and output layer)
    until the monitor stalls; then the block is frozen. ``reuse_policy``
    controls where the output layer of a new block starts:

    * ``never``: fresh weights;
    * ``always``: previous output weights plus fresh columns for the block;
    * ``threshold``: fresh, unless the best fresh candidate falls more than
      ``threshold_drop`` below the previous accuracy, in which case the
      winner's block is inserted with reused output weights;
    * ``pool_member``: candidate 0 uses reused weights, the others are fresh.
    """
    pool = pool or CandidatePoolConfig()
    if pool.objective != "loss_min":
        raise ConfigError("caser needs the loss_min objective")
    if max_insertions < 0:
        raise ConfigError("max_insertions must be >= 0")
    rng = rng or Rng(0)
    net, initial, secs = _cascade_start(data, cfg, rng)
    record = ConstructiveRecord(f"caser-{pool.reuse_policy}", max_insertions, initial, main_seconds=secs)
    prev_acc = initial.best("val_acc")
    feats = data
    saved = []
    for k in range(1, max_insertions + 1):
        t0 = time.perf_counter()
        winner, cands = _run_pool(feats, net.output, pool, cfg, rng.derive(k, 2), None, jobs)
        t_pool = time.perf_counter() - t0

        t0 = time.perf_counter()
        chosen = cands[winner]
        output, reused = chosen.output, chosen.reuse
        if pool.reuse_policy == "threshold" and chosen.score < prev_acc - pool.threshold_drop:
            output = extend_output(net.output, pool.width, rng.derive(k, 3), "reuse_previous")
            reused = True
        if pool.reuse_policy == "pool_member" and chosen.score < cands[0].score:
            raise ContractError("pool_member winner scored below the reuse candidate")
        block = chosen.block
        head = _candidate_head(feats.train.dim, block, output)
        _, main = fit(head, feats.train, feats.val, cfg, rng.derive(k, 4))
        block.frozen = True
        net.splice(block, head.output)
        feats = _append_block_features(feats, block)
        t_main = time.perf_counter() - t0

        saved.append((block.W.copy(), block.b.copy()))
        _check_wiring(net)
        _check_frozen(net.blocks, saved)
        prev_acc = main.best("val_acc")
        record.insertions.append(InsertionRecord(
            insertion=k, winner=winner, candidates=[c.metrics() for c in cands],
            candidate_curves=[c.history for c in cands], main=main, reused_output=reused,
            widths=net.widths, parameter_count=net.parameter_count,
            val_acc=prev_acc, val_loss=main.best("val_loss"),
            candidate_seconds=t_pool, main_seconds=t_main,
        ))
        record.candidate_seconds += t_pool
        record.main_seconds += t_main
    return _finish(net, record, data, feats, saved)


# -- forward-thinking family ---------------------------------------------------

def _prefix_layers(prefix):
    if prefix is None:
        return []
    if isinstance(prefix, LayeredNetwork):
        return list(prefix.hidden_layers)
    return list(prefix)


def push_through(data: Dataset, prefix) -> Dataset:
    """Replace inputs by the top activations of a frozen layer stack.

    ``prefix`` is a :class:`LayeredNetwork` (its head, if any, is ignored),
    a sequence of :class:`Dense` layers, or ``None``.
    """
    layers = _prefix_layers(prefix)
    if not layers:
        return data
    if not all(layer.frozen for layer in layers):
        raise ContractError("push_through needs a fully frozen prefix")
    if layers[0].fan_in != data.dim:
        raise ContractError("prefix input width does not match the data")
    X = data.inputs
    for layer in layers:
        X = _layer_map(layer)(X)
    return data.with_inputs(X)


def _push_splits(splits, layer):
    return splits.map_inputs(_layer_map(layer))


def forward_thinking_train(data: Splits, layer_plan, cfg: TrainConfig = FORWARD_CFG, rng: Rng = None,
                           last_patience=3):
    """Greedy layer-wise training.

    Layer ``i`` is trained with a fresh softmax head on the data pushed
    through layers ``0..i-1``, frozen, and its head discarded (except the
    last one, which becomes the network's output layer). Layers before the
    last use ``cfg.patience``; the last uses ``last_patience``.
    Returns ``(network, [RunRecord per layer])``.
    """
    plan = [(int(w), a) for w, a in layer_plan]
    if not plan:
        raise ConfigError("layer_plan must not be empty")
    rng = rng or Rng(0)
    cur = data
    layers, records = [], []
    head = None
    for i, (width, act) in enumerate(plan):
        last = i == len(plan) - 1
        net = init_weights(build_layered(cur.train.dim, [(width, act)], cur.train.class_count), rng.derive(i, 0))
        layer_cfg = cfg.with_(patience=last_patience) if last else cfg
        _, rec = fit(net, cur.train, cur.val, layer_cfg, rng.derive(i, 1))
        records.append(rec)
        hidden, head = net.layers
        hidden.frozen = True
        layers.append(hidden)
        if not last:
            cur = _push_splits(cur, hidden)
    out = LayeredNetwork(layers + [head])
    out.initialized = True
    if len(data.test):
        records[-1].test_acc = evaluate(out, data.test)[1]
    return out, records


def _train_layer_candidate(splits, job):
    t0 = time.perf_counter()
    rng = Rng(job["seed"])
    net = init_weights(build_layered(splits.train.dim, [(job["width"], job["activation"])],
                                     splits.train.class_count), rng.derive(0))
    cand = Candidate(job["id"], False, net.layers[0], net.layers[1], -math.inf)
    try:
        _, rec = fit(net, splits.train, splits.val, job["cfg"], rng.derive(1))
    except DivergenceError:
        cand.diverged = True
    else:
        cand.val_acc, cand.val_loss = rec.final("val_acc"), rec.final("val_loss")
        cand.score = cand.val_acc
        cand.history = list(zip(rec.val_acc, rec.val_loss))
    cand.seconds = time.perf_counter() - t0
    return cand


def auto_forward_thinking(data: Splits, pool_size=8, widths=tuple(range(50, 1001, 50)), candidate_epochs=2,
                          monotone=True, max_layers=10, activation="tanh", cfg: TrainConfig = FORWARD_CFG,
                          rng: Rng = None, jobs=1):
    """Forward thinking with each layer's width picked from a trained pool.

    At every depth ``pool_size`` widths are drawn uniformly (with
    replacement) from ``widths``, capped at the previous width when
    ``monotone``. Each candidate layer trains ``candidate_epochs`` epochs;
    the best by validation accuracy keeps training until ``cfg`` stops it,
    is frozen, and the data is pushed through it. Construction always runs
    to ``max_layers``; use :func:`prune_to_tradeoff` afterwards.
    """
    if max_layers < 1:
        raise ConfigError("max_layers must be >= 1")
    if pool_size < 1 or candidate_epochs < 1:
        raise ConfigError("pool_size and candidate_epochs must be >= 1")
    widths = sorted(int(w) for w in widths)
    rng = rng or Rng(0)
    cand_cfg = cfg.with_(max_epochs=candidate_epochs, patience=None, restore_best=False)
    curve = LayerPerformanceCurve()
    cur = data
    layers = []
    head = None
    prev = None
    for depth in range(1, max_layers + 1):
        allowed = [w for w in widths if not monotone or prev is None or w <= prev]
        if not allowed:
            curve.flags.append(f"no admissible width at depth {depth}; construction stopped")
            break
        draw = rng.derive(depth, 0)
        picks = [draw.choice(allowed) for _ in range(pool_size)]
        jobs_ = [{"id": i, "seed": derive_seed(rng.seed, depth, 1, i), "width": w,
                  "activation": activation, "cfg": cand_cfg} for i, w in enumerate(picks)]
        t0 = time.perf_counter()
        cands = pmap(_train_layer_candidate, jobs_, jobs, shared=cur)
        winner = _pick([c.score for c in cands])
        curve.candidate_seconds += time.perf_counter() - t0

        t0 = time.perf_counter()
        hidden, head = cands[winner].block, cands[winner].output
        net = LayeredNetwork([hidden, head])
        net.initialized = True
        _, rec = fit(net, cur.train, cur.val, cfg, rng.derive(depth, 2))
        hidden.frozen = True
        layers.append(hidden)
        val_loss, val_acc = evaluate(net, cur.val)
        train_acc = evaluate(net, cur.train)[1]
        test_acc = evaluate(net, cur.test)[1] if len(cur.test) else None
        params = sum(l.size for l in layers) + head.size
        curve.append(hidden.fan_out, val_loss, val_acc, train_acc, params, test_acc)
        curve.candidate_widths.append(picks)
        curve.winners.append(winner)
        curve.candidate_curves.append([c.history for c in cands])
        curve.records.append(rec)
        cur = _push_splits(cur, hidden)
        curve.main_seconds += time.perf_counter() - t0
        prev = hidden.fan_out
    out = LayeredNetwork(layers + [head])
    out.initialized = True
    return out, curve


def choose_depth(val_acc, eps=0.001):
    """Smallest depth (1-based) whose accuracy is within ``eps`` of the best."""
    if not val_acc:
        raise ContractError("empty performance curve")
    target = max(val_acc) - eps
    return next(d for d, a in enumerate(val_acc, start=1) if a >= target)


def prune_to_tradeoff(curve: LayerPerformanceCurve, net: LayeredNetwork, eps=0.001, data: Splits = None,
                      cfg: TrainConfig = None, rng: Rng = None):
    """Cut ``net`` to :func:`choose_depth` layers and retrain a fresh head.

    Returns ``(network, depth, RunRecord of the head)``.
    """
    hidden = list(net.hidden_layers)
    if curve.depth != len(hidden):
        raise ContractError("curve does not cover the network's depth")
    if data is None:
        raise ContractError("pruning retrains a head and needs data")
    cfg = cfg or FORWARD_CFG.with_(patience=3)
    rng = rng or Rng(0)
    depth = choose_depth(curve.val_acc, eps)
    keep = hidden[:depth]
    cur = data
    for layer in keep:
        cur = _push_splits(cur, layer)
    head_net = init_weights(build_layered(cur.train.dim, [], cur.train.class_count), rng.derive(0))
    _, rec = fit(head_net, cur.train, cur.val, cfg, rng.derive(1))
    if len(cur.test):
        rec.test_acc = evaluate(head_net, cur.test)[1]
    out = LayeredNetwork(keep + [head_net.layers[0]])
    out.initialized = True
    return out, depth, rec
