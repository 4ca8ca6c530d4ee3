"""Small fully-connected networks with hand-written backprop and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
LOSSES = ("smooth_l1", "mse")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (in, out) and bias (out,)")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[1] for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)


def init_net(sizes: list[int], activations: list[str], seed: int) -> DenseNet:
    """Uniform(+-1/sqrt(fan_in)) initialisation for weights and biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(sizes, sizes[1:], activations):
        bound = 1.0 / math.sqrt(n_in)
        layers.append(Layer(rng.uniform(-bound, bound, (n_in, n_out)),
                            rng.uniform(-bound, bound, n_out), act))
    return DenseNet(layers)


def mlp(input_dim: int, output_dim: int, hidden: int, n_layers: int, activation: str,
        seed: int, output_activation: str = "identity") -> DenseNet:
    sizes = [input_dim] + [hidden] * (n_layers - 1) + [output_dim]
    acts = [activation] * (n_layers - 1) + [output_activation]
    return init_net(sizes, acts, seed)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, h):
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


def forward(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != net.input_dim:
        raise ValueError(f"input has {h.shape[1]} features, network expects {net.input_dim}")
    for layer in net.layers:
        h = _act(layer.activation, h @ layer.weight + layer.bias)
    return h[0] if single else h


def loss_value(pred: np.ndarray, target: np.ndarray, kind: str) -> tuple[float, np.ndarray]:
    """Batch-mean of the per-sample loss summed over outputs, with d(loss)/d(pred)."""
    e = pred - target
    n = len(e)
    if kind == "smooth_l1":
        ae = np.abs(e)
        quad = ae < 1.0
        per = np.where(quad, 0.5 * e * e, ae - 0.5)
        grad = np.where(quad, e, np.sign(e))
    elif kind == "mse":
        per = e * e
        grad = 2.0 * e
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return float(per.sum() / n), grad / n


def loss_and_grad(net: DenseNet, x, target, kind: str = "smooth_l1") -> tuple[float, list[np.ndarray]]:
    """Mean loss over the batch and gradients ordered like ``net.params()``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    if x.shape[1] != net.input_dim or target.shape != (len(x), net.output_dim):
        raise ValueError("batch dimensions do not match the network")
    zs, hs = [], [x]
    h = x
    for layer in net.layers:
        z = h @ layer.weight + layer.bias
        h = _act(layer.activation, z)
        zs.append(z)
        hs.append(h)
    loss, g = loss_value(h, target, kind)
    grads: list[np.ndarray] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dz = g * _act_grad(layer.activation, zs[i], hs[i + 1])
        grads.append(dz.sum(axis=0))
        grads.append(hs[i].T @ dz)
        if i:
            g = dz @ layer.weight.T
    grads.reverse()
    return loss, grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    loss: str = "smooth_l1"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit_batches(net: DenseNet, epochs: Iterable[Iterator[tuple[np.ndarray, np.ndarray]]],
                cfg: TrainConfig) -> tuple[DenseNet, list[float]]:
    """Run Adam over an iterable of epochs, each an iterator of (x, y) minibatches.

    Returns a trained copy and the per-epoch mean minibatch loss.
    """
    net = net.copy()
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    params = net.params()
    history = []
    for epoch, batches in enumerate(epochs, start=1):
        total, count = 0.0, 0
        for xb, yb in batches:
            loss, grads = loss_and_grad(net, xb, yb, cfg.loss)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            opt.step(params, grads)
            total += loss
            count += 1
        mean = total / max(count, 1)
        if not math.isfinite(mean) or not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError(epoch, mean)
        history.append(mean)
    return net, history


def shuffled_epochs(x: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        yield ((x[order[i:i + cfg.batch_size]], y[order[i:i + cfg.batch_size]])
               for i in range(0, n, cfg.batch_size))


def train(net: DenseNet, x, y, cfg: TrainConfig) -> tuple[DenseNet, list[float]]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(len(x), -1)
    if len(x) == 0:
        raise ValueError("empty dataset")
    return fit_batches(net, shuffled_epochs(x, y, cfg), cfg)


# --- checkpoint format -------------------------------------------------------


def dumps(net: DenseNet) -> str:
    lines = [f"densenet layers={len(net.layers)}"]
    for layer in net.layers:
        n_in, n_out = layer.weight.shape
        lines.append(f"layer in={n_in} out={n_out} activation={layer.activation}")
        lines.append(" ".join(repr(float(v)) for v in layer.weight.ravel()))
        lines.append(" ".join(repr(float(v)) for v in layer.bias))
    return "\n".join(lines) + "\n"


def loads(text: str) -> DenseNet:
    lines = text.splitlines()
    n = int(lines[0].split("layers=")[1])
    layers = []
    for i in range(n):
        head = dict(kv.split("=") for kv in lines[1 + 3 * i].split()[1:])
        n_in, n_out = int(head["in"]), int(head["out"])
        w = np.array([float(v) for v in lines[2 + 3 * i].split()]).reshape(n_in, n_out)
        b = np.array([float(v) for v in lines[3 + 3 * i].split()])
        layers.append(Layer(w, b, head["activation"]))
    return DenseNet(layers)


def save(net: DenseNet, path) -> None:
    Path(path).write_text(dumps(net))


def load(path) -> DenseNet:
    return loads(Path(path).read_text())
