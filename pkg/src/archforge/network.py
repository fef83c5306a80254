"""Layered and cascaded feedforward networks.

Weights are stored as ``(fan_out, fan_in)`` matrices, so a batch ``X`` of
row vectors maps to ``X @ W.T + b``. Every network ends in a softmax layer.
Gradients are those of the batch-mean loss; frozen tensors receive zeros
and are never touched by the optimizers.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError
from .numerics import ACTIVATIONS, Rng, softmax

FORMAT_TAG = "archforge-net-v1"
OPTIMIZERS = ("sgd", "rmsprop")


@dataclass(frozen=True, order=True)
class ArchitectureSpec:
    """A point of the discrete search space: uniform-width MLP + optimizer."""

    depth: int
    width: int
    activation: str
    optimizer: str

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ContractError(f"depth and width must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @property
    def hidden(self):
        return [(self.width, self.activation)] * self.depth

    def label(self):
        return f"{self.depth} x {self.width}"


@dataclass
class Dense:
    """One affine map followed by an activation (``relu``, ``tanh`` or ``softmax``)."""

    W: np.ndarray
    b: np.ndarray
    activation: str
    frozen: bool = False

    @property
    def fan_in(self):
        return self.W.shape[1]

    @property
    def fan_out(self):
        return self.W.shape[0]

    @property
    def size(self):
        return self.W.size + self.b.size


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    a = glorot_bound(fan_in, fan_out)
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def _zeros_layer(fan_in, fan_out, activation):
    if activation not in ACTIVATIONS + ("softmax",):
        raise ConfigError(f"unknown activation {activation!r}")
    return Dense(np.zeros((fan_out, fan_in)), np.zeros(fan_out), activation)


def _hidden_backward(kind, pre, out, dout):
    dout = np.ascontiguousarray(dout)
    dpre = np.empty_like(dout)
    if kind == "tanh":
        kernels.tanh_backward(np.ascontiguousarray(out).reshape(-1), dout.reshape(-1), dpre.reshape(-1))
    elif kind == "relu":
        kernels.relu_backward(np.ascontiguousarray(pre).reshape(-1), dout.reshape(-1), dpre.reshape(-1))
    else:
        raise ConfigError(f"unknown activation {kind!r}")
    return dpre


def _apply(kind, pre):
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "relu":
        return np.maximum(pre, 0.0)
    raise ConfigError(f"unknown activation {kind!r}")


def _softmax_backward(P, d_output):
    """Push dL/dP through the row-wise softmax Jacobian."""
    return P * (d_output - np.sum(d_output * P, axis=1, keepdims=True))


@dataclass
class Cache:
    owner: int
    version: int
    probs: np.ndarray
    data: dict = field(default_factory=dict)


class _Network:
    """Shared plumbing for both topologies."""

    initialized: bool
    _version: int

    def layers_in_order(self):
        raise NotImplementedError

    def tensors(self):
        out = []
        for layer in self.layers_in_order():
            out.extend((layer.W, layer.b))
        return out

    def frozen_flags(self):
        flags = []
        for layer in self.layers_in_order():
            flags.extend((layer.frozen, layer.frozen))
        return flags

    @property
    def parameter_count(self):
        return sum(t.size for t in self.tensors())

    @property
    def output_dim(self):
        return self.layers_in_order()[-1].fan_out

    def touch(self):
        """Invalidate outstanding forward caches (parameters changed)."""
        self._version += 1

    def copy(self):
        return copy.deepcopy(self)

    def get_flat(self):
        return np.concatenate([t.ravel() for t in self.tensors()])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.parameter_count:
            raise ContractError("flat parameter vector has the wrong length")
        pos = 0
        for t in self.tensors():
            t[...] = theta[pos:pos + t.size].reshape(t.shape)
            pos += t.size
        self.touch()

    def snapshot(self):
        return [t.copy() for t in self.tensors()]

    def restore(self, saved):
        for t, s in zip(self.tensors(), saved):
            t[...] = s
        self.touch()

    def _check_batch(self, X):
        if not self.initialized:
            raise ContractError("network weights are not initialized")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ContractError(f"batch of shape {X.shape} does not match input_dim {self.input_dim}")
        return X

    def _check_cache(self, cache):
        if cache.owner != id(self) or cache.version != self._version:
            raise ContractError("stale forward cache: parameters changed since forward()")

    def _output_grad(self, cache, d_output, d_logits):
        if d_logits is None:
            if d_output is None:
                raise ContractError("backward needs d_output or d_logits")
            d_output = np.asarray(d_output, dtype=np.float64)
            if d_output.shape != cache.probs.shape:
                raise ContractError("d_output shape does not match the forward output")
            return _softmax_backward(cache.probs, d_output)
        d_logits = np.asarray(d_logits, dtype=np.float64)
        if d_logits.shape != cache.probs.shape:
            raise ContractError("d_logits shape does not match the forward output")
        return d_logits

    def predict(self, X):
        return self.forward(X)[0]


class LayeredNetwork(_Network):
    """Plain MLP: hidden layers followed by a softmax output layer."""

    def __init__(self, layers):
        if not layers:
            raise ContractError("a layered network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.fan_out != b.fan_in:
                raise ContractError("consecutive layer shapes do not chain")
        for layer in layers[:-1]:
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"hidden activation {layer.activation!r} not allowed")
        self.layers = list(layers)
        self.initialized = False
        self._version = 0

    def layers_in_order(self):
        return self.layers

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def has_head(self):
        return self.layers[-1].activation == "softmax"

    @property
    def hidden_layers(self):
        return self.layers[:-1] if self.has_head else self.layers

    @property
    def widths(self):
        return [layer.fan_out for layer in self.hidden_layers]

    def freeze(self, index, frozen=True):
        self.layers[index].frozen = frozen

    def hidden_forward(self, X):
        """Activations of the top hidden layer (the input itself if there is none)."""
        X = self._check_batch(X)
        a = X
        for layer in self.hidden_layers:
            a = _apply(layer.activation, a @ layer.W.T + layer.b)
        return a

    def forward(self, X):
        X = self._check_batch(X)
        if not self.has_head:
            raise ContractError("network has no softmax output layer")
        inputs, pres, outs = [], [], []
        a = X
        for layer in self.layers[:-1]:
            inputs.append(a)
            pre = a @ layer.W.T + layer.b
            a = _apply(layer.activation, pre)
            pres.append(pre)
            outs.append(a)
        inputs.append(a)
        head = self.layers[-1]
        P = softmax(a @ head.W.T + head.b)
        return P, Cache(id(self), self._version, P, {"inputs": inputs, "pres": pres, "outs": outs})

    def backward(self, cache, d_output=None, *, d_logits=None):
        self._check_cache(cache)
        dZ = self._output_grad(cache, d_output, d_logits)
        inputs, pres, outs = cache.data["inputs"], cache.data["pres"], cache.data["outs"]
        n = len(self.layers)
        trainable = [i for i, layer in enumerate(self.layers) if not layer.frozen]
        lowest = trainable[0] if trainable else n
        grads = [None] * (2 * n)
        for k in range(n - 1, -1, -1):
            layer = self.layers[k]
            if k < n - 1:
                if k < lowest:
                    break
                dZ = _hidden_backward(layer.activation, pres[k], outs[k], dA)
            if layer.frozen:
                grads[2 * k] = np.zeros_like(layer.W)
                grads[2 * k + 1] = np.zeros_like(layer.b)
            else:
                grads[2 * k] = dZ.T @ inputs[k]
                grads[2 * k + 1] = dZ.sum(axis=0)
            if k > lowest:
                dA = dZ @ layer.W
        for i, t in enumerate(self.tensors()):
            if grads[i] is None:
                grads[i] = np.zeros_like(t)
        return grads

    def describe(self):
        return {
            "kind": "layered",
            "layers": [
                {"fan_in": l.fan_in, "fan_out": l.fan_out, "activation": l.activation, "frozen": l.frozen}
                for l in self.layers
            ],
        }


class CascadeNetwork(_Network):
    """Cascade topology: each block sees the input and every earlier block.

    The output layer sees the input concatenated with all block outputs.
    """

    def __init__(self, input_dim, output_dim, blocks=(), output=None):
        self._input_dim = int(input_dim)
        self.blocks = list(blocks)
        fan_in = self._input_dim
        for block in self.blocks:
            if block.fan_in != fan_in:
                raise ContractError("cascade block fan-in breaks the wiring rule")
            if block.activation not in ACTIVATIONS:
                raise ConfigError(f"block activation {block.activation!r} not allowed")
            fan_in += block.fan_out
        if output is None:
            output = _zeros_layer(fan_in, output_dim, "softmax")
        if output.fan_in != fan_in or output.fan_out != output_dim:
            raise ContractError("cascade output layer has the wrong shape")
        self.output = output
        self.initialized = False
        self._version = 0

    @property
    def input_dim(self):
        return self._input_dim

    @property
    def feature_dim(self):
        return self._input_dim + sum(b.fan_out for b in self.blocks)

    @property
    def widths(self):
        return [b.fan_out for b in self.blocks]

    def block_start(self, k):
        return self._input_dim + sum(b.fan_out for b in self.blocks[:k])

    def layers_in_order(self):
        return self.blocks + [self.output]

    def features(self, X):
        """Input concatenated with every block's activations."""
        X = self._check_batch(X)
        F = np.empty((X.shape[0], self.feature_dim))
        F[:, :self._input_dim] = X
        pres = []
        s = self._input_dim
        for block in self.blocks:
            pre = F[:, :s] @ block.W.T + block.b
            F[:, s:s + block.fan_out] = _apply(block.activation, pre)
            pres.append(pre)
            s += block.fan_out
        return F, pres

    def forward(self, X):
        F, pres = self.features(X)
        P = softmax(F @ self.output.W.T + self.output.b)
        return P, Cache(id(self), self._version, P, {"features": F, "pres": pres})

    def backward(self, cache, d_output=None, *, d_logits=None):
        self._check_cache(cache)
        dZ = self._output_grad(cache, d_output, d_logits)
        F, pres = cache.data["features"], cache.data["pres"]
        nb = len(self.blocks)
        grads = [None] * (2 * nb + 2)
        if self.output.frozen:
            grads[-2] = np.zeros_like(self.output.W)
            grads[-1] = np.zeros_like(self.output.b)
        else:
            grads[-2] = dZ.T @ F
            grads[-1] = dZ.sum(axis=0)
        trainable = [k for k, b in enumerate(self.blocks) if not b.frozen]
        if trainable:
            lo = trainable[0]
            base = self.block_start(lo)
            # gradient w.r.t. feature columns [base, feature_dim)
            dF = dZ @ self.output.W[:, base:]
            for k in range(nb - 1, lo - 1, -1):
                block = self.blocks[k]
                s = self.block_start(k)
                e = s + block.fan_out
                dpre = _hidden_backward(block.activation, pres[k], F[:, s:e], dF[:, s - base:e - base])
                if not block.frozen:
                    grads[2 * k] = dpre.T @ F[:, :s]
                    grads[2 * k + 1] = dpre.sum(axis=0)
                if k > lo:
                    dF[:, :s - base] += dpre @ block.W[:, base:s]
        for i, t in enumerate(self.tensors()):
            if grads[i] is None:
                grads[i] = np.zeros_like(t)
        return grads

    def append_block(self, block, rng, init_output_weights="fresh"):
        """Append ``block`` and rebuild the output layer around it."""
        if block.fan_in != self.feature_dim:
            raise ContractError("new block fan-in must equal input_dim + sum of previous widths")
        if block.activation not in ACTIVATIONS:
            raise ConfigError(f"block activation {block.activation!r} not allowed")
        old = self.output
        output = extend_output(old, block.fan_out, rng, init_output_weights)
        self.blocks.append(block)
        output.frozen = old.frozen
        self.output = output
        self.touch()
        return self

    def splice(self, block, output):
        """Append an already trained ``block`` together with its output layer."""
        if block.fan_in != self.feature_dim:
            raise ContractError("new block fan-in must equal input_dim + sum of previous widths")
        if output.fan_in != self.feature_dim + block.fan_out or output.fan_out != self.output_dim:
            raise ContractError("spliced output layer has the wrong shape")
        self.blocks.append(block)
        self.output = output
        self.touch()
        return self

    def describe(self):
        return {
            "kind": "cascade",
            "input_dim": self._input_dim,
            "blocks": [{"width": b.fan_out, "activation": b.activation, "frozen": b.frozen} for b in self.blocks],
            "output": {"fan_in": self.output.fan_in, "fan_out": self.output.fan_out, "frozen": self.output.frozen},
        }


def extend_output(old: Dense, extra: int, rng: Rng, policy="fresh") -> Dense:
    """Softmax layer for ``extra`` new input columns after ``old``'s columns.

    ``fresh`` draws every weight anew; ``reuse_previous`` keeps ``old``'s
    weights and bias and draws only the new columns.
    """
    fan_in = old.fan_in + extra
    C = old.fan_out
    if policy == "fresh":
        return Dense(_glorot(rng, C, fan_in), np.zeros(C), "softmax")
    if policy == "reuse_previous":
        W = np.empty((C, fan_in))
        W[:, :old.fan_in] = old.W
        a = glorot_bound(fan_in, C)
        W[:, old.fan_in:] = rng.uniform(-a, a, size=(C, extra))
        return Dense(W, old.b.copy(), "softmax")
    raise ConfigError(f"unknown output init policy {policy!r}")


def build_layered(input_dim, hidden, output_dim):
    """Shapes for ``input_dim -> hidden... -> output_dim`` (weights zero until init)."""
    dims = [int(input_dim)] + [int(w) for w, _ in hidden] + [int(output_dim)]
    if min(dims) < 1:
        raise ContractError(f"all widths must be >= 1, got {dims}")
    acts = [a for _, a in hidden] + ["softmax"]
    layers = [_zeros_layer(i, o, a) for i, o, a in zip(dims, dims[1:], acts)]
    return LayeredNetwork(layers)


def build_cascade(input_dim, output_dim):
    return CascadeNetwork(input_dim, output_dim)


def init_weights(net, rng: Rng):
    """Glorot-uniform weights, zero biases, drawn layer by layer in order."""
    for layer in net.layers_in_order():
        layer.W[...] = _glorot(rng, layer.fan_out, layer.fan_in)
        layer.b[...] = 0.0
    net.initialized = True
    net.touch()
    return net


def new_block(rng: Rng, fan_in, width, activation):
    if width < 1:
        raise ContractError("block width must be >= 1")
    return Dense(_glorot(rng, width, fan_in), np.zeros(width), activation)


def add_cascade_block(net: CascadeNetwork, width, activation, rng: Rng, init_output_weights="fresh"):
    block = new_block(rng, net.feature_dim, width, activation)
    return net.append_block(block, rng, init_output_weights)


def forward(net, batch):
    return net.forward(batch)


def backward(net, cache, d_output=None, *, d_logits=None):
    return net.backward(cache, d_output, d_logits=d_logits)


def parameter_count(input_dim, hidden_widths, output_dim):
    dims = [input_dim] + list(hidden_widths) + [output_dim]
    return sum((i + 1) * o for i, o in zip(dims, dims[1:]))


# -- checkpoints -------------------------------------------------------------

def save_network(net, path, seed_lineage=None):
    """Write a JSON header line followed by a little-endian float64 blob."""
    tensors = net.tensors()
    header = {
        "format": FORMAT_TAG,
        "topology": net.describe(),
        "output_dim": net.output_dim,
        "shapes": [list(t.shape) for t in tensors],
        "initialized": net.initialized,
        "seed_lineage": list(seed_lineage or []),
    }
    blob = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors)
    header["blob_bytes"] = len(blob)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob)


def load_network(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    if header.get("format") != FORMAT_TAG:
        raise ContractError(f"not an {FORMAT_TAG} checkpoint")
    if len(blob) != header["blob_bytes"]:
        raise ContractError("checkpoint parameter blob is truncated")
    topo = header["topology"]
    if topo["kind"] == "layered":
        layers = [
            Dense(np.zeros((l["fan_out"], l["fan_in"])), np.zeros(l["fan_out"]), l["activation"], l["frozen"])
            for l in topo["layers"]
        ]
        net = LayeredNetwork(layers)
    elif topo["kind"] == "cascade":
        blocks = []
        fan_in = topo["input_dim"]
        for b in topo["blocks"]:
            blocks.append(Dense(np.zeros((b["width"], fan_in)), np.zeros(b["width"]), b["activation"], b["frozen"]))
            fan_in += b["width"]
        out = topo["output"]
        output = Dense(np.zeros((out["fan_out"], out["fan_in"])), np.zeros(out["fan_out"]), "softmax", out["frozen"])
        net = CascadeNetwork(topo["input_dim"], out["fan_out"], blocks, output)
    else:
        raise ContractError(f"unknown topology {topo['kind']!r}")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    pos = 0
    for t in net.tensors():
        t[...] = flat[pos:pos + t.size].reshape(t.shape)
        pos += t.size
    net.initialized = header["initialized"]
    return net, header.get("seed_lineage", [])
