"""Minimal dense feedforward network engine.

Construction, deterministic SGD training, forward passes with per-layer
activation capture, gradients with respect to the input, and magnitude-based
neuron pruning. Parameters are stored as float32; all products and reductions
run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "softmax")

# activation name -> tag byte used by the model file format
ACTIVATION_TAGS = {"identity": 0, "relu": 1, "softmax": 2}
TAG_ACTIVATIONS = {v: k for k, v in ACTIVATION_TAGS.items()}


class ShapeError(ValueError):
    """Batch or layer dimensions do not line up."""


class UnknownLayerError(KeyError):
    """No layer with the requested name."""


class TrainingDivergenceError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss in epoch {epoch}")
        self.epoch = epoch


@dataclass
class DenseLayer:
    """One fully connected layer; each output unit is one neuron."""

    name: str
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float32)
        if self.weights.ndim != 2:
            raise ShapeError(f"layer {self.name}: weights must be 2-D")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"layer {self.name}: biases shape {self.biases.shape} does not "
                f"match out_dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"layer {self.name}: unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError(f"layer {self.name}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def clone(self) -> "DenseLayer":
        return DenseLayer(self.name, self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class Network:
    """An ordered stack of dense layers. Treated as immutable once built."""

    layers: list[DenseLayer]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {a.name} out_dim {a.out_dim} does not chain into "
                    f"layer {b.name} in_dim {b.in_dim}"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ValueError(f"layer {layer.name}: softmax is only allowed at the output")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise UnknownLayerError(f"no layer named {name!r}")

    def layer(self, name: str) -> DenseLayer:
        return self.layers[self.layer_index(name)]

    def clone(self) -> "Network":
        return Network([l.clone() for l in self.layers], dict(self.metadata))


@dataclass
class ActivationTrace:
    """Post-activation outputs of every layer for one batch."""

    outputs: list[np.ndarray]  # each (batch, out_dim), float64

    @property
    def final(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class Dataset:
    """Labelled inputs for training and probing."""

    inputs: np.ndarray  # (D, input_dim)
    labels: np.ndarray  # (D,) integer class ids

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) < 1:
            raise ShapeError("inputs must be a nonempty 2-D matrix")
        if self.labels.shape != (len(self.inputs),):
            raise ShapeError("labels length must equal sample count")
        if self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class TrainConfig:
    epochs: int
    lr: float
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0
    # optional regularizer: net -> (loss, {layer_name: weight gradient})
    extra_loss: Optional[Callable[[Network], tuple[float, dict[str, np.ndarray]]]] = None


@dataclass
class TriggerObjective:
    """Quadratic pull of one layer's outputs toward per-neuron targets.

    targets[n] is where neuron n of the named layer should land; the loss is
    the squared deviation summed over neurons and, for an ensemble, over
    networks scaled by ensemble_weights.
    """

    layer_name: str
    targets: np.ndarray  # (N,)
    ensemble_weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim != 1:
            raise ShapeError("targets must be a vector")


def init_network(
    input_dim: int,
    widths: Sequence[int],
    seed: int,
    hidden_activation: str = "relu",
    output_activation: str = "softmax",
) -> Network:
    """Build a seeded network: hidden layers per `widths[:-1]`, output `widths[-1]`.

    Weights are uniform(-a, a) with a = sqrt(6 / (in + out)).
    """
    rng = np.random.default_rng(seed)
    layers = []
    dims = [input_dim, *widths]
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        a = np.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-a, a, size=(d_out, d_in)).astype(np.float32)
        b = np.zeros(d_out, dtype=np.float32)
        act = output_activation if i == len(widths) - 1 else hidden_activation
        layers.append(DenseLayer(f"dense{i}", w, b, act))
    return Network(layers, metadata={"seed": str(seed)})


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    return z


def _forward_layers(layers: Sequence[DenseLayer], batch: np.ndarray) -> list[np.ndarray]:
    """Post-activation outputs for each layer, computed in float64."""
    a = np.asarray(batch, dtype=np.float64)
    outputs = []
    for layer in layers:
        z = a @ layer.weights.astype(np.float64).T + layer.biases.astype(np.float64)
        a = _apply_activation(z, layer.activation)
        outputs.append(a)
    return outputs


def forward(net: Network, batch: np.ndarray) -> ActivationTrace:
    """Run a batch through the network, capturing every layer's output."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError("batch must be 2-D (rows are samples)")
    if batch.shape[1] != net.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns but layer {net.layers[0].name} "
            f"expects {net.input_dim}"
        )
    return ActivationTrace(_forward_layers(net.layers, batch))


def _activation_grad_mask(post: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (post > 0.0).astype(np.float64)
    if activation == "identity":
        return np.ones_like(post)
    raise ValueError(f"no elementwise derivative for activation {activation!r}")


def _softmax_cross_entropy(final_post: np.ndarray, activation: str, labels: np.ndarray):
    """Mean cross-entropy and d(loss)/d(final pre-activation)."""
    n = len(labels)
    if activation == "softmax":
        probs = final_post
    else:
        probs = _apply_activation(final_post, "softmax")
    eps = 1e-12
    loss = -np.log(probs[np.arange(n), labels] + eps).mean()
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    d /= n
    if activation == "relu":
        d *= _activation_grad_mask(final_post, "relu")
    return loss, d


def cross_entropy(net: Network, data: Dataset) -> float:
    outputs = forward(net, data.inputs).final
    loss, _ = _softmax_cross_entropy(outputs, net.layers[-1].activation, data.labels)
    return float(loss)


def accuracy(net: Network, data: Dataset) -> float:
    scores = forward(net, data.inputs).final
    return float((scores.argmax(axis=1) == data.labels).mean())


def train(net: Network, data: Dataset, hp: TrainConfig) -> Network:
    """SGD with cross-entropy; deterministic given hp.seed. Returns a new network."""
    if hp.lr <= 0:
        raise ValueError("lr must be positive")
    if hp.epochs < 0:
        raise ValueError("epochs must be nonnegative")
    if data.labels.max() >= net.output_dim:
        raise ValueError("label id exceeds output width")
    out = net.clone()
    if hp.epochs == 0:
        return out
    rng = np.random.default_rng(hp.seed)
    n = len(data)
    batch_size = min(hp.batch_size, n)
    epoch_losses = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss = _sgd_step(out, data.inputs[idx], data.labels[idx], hp)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDivergenceError(epoch)
        epoch_losses.append(mean_loss)
    out.metadata["optimizer"] = "sgd"
    out.metadata["first_epoch_loss"] = repr(epoch_losses[0])
    out.metadata["final_epoch_loss"] = repr(epoch_losses[-1])
    return out


def _sgd_step(net: Network, x: np.ndarray, y: np.ndarray, hp: TrainConfig) -> float:
    posts = _forward_layers(net.layers, x)
    loss, delta = _softmax_cross_entropy(posts[-1], net.layers[-1].activation, y)

    extra_grads: dict[str, np.ndarray] = {}
    if hp.extra_loss is not None:
        extra, extra_grads = hp.extra_loss(net)
        loss += extra

    acts = [np.asarray(x, dtype=np.float64)] + posts[:-1]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        w64 = layer.weights.astype(np.float64)
        dw = delta.T @ acts[i]
        if hp.l2:
            dw += hp.l2 * w64
        if layer.name in extra_grads:
            dw += np.asarray(extra_grads[layer.name], dtype=np.float64)
        db = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w64) * _activation_grad_mask(posts[i - 1], net.layers[i - 1].activation)
        layer.weights = (w64 - hp.lr * dw).astype(np.float32)
        layer.biases = (layer.biases.astype(np.float64) - hp.lr * db).astype(np.float32)
    return float(loss)


def input_gradient(
    nets: Sequence[Network], x: np.ndarray, objective: TriggerObjective
) -> np.ndarray:
    """Gradient of the summed ensemble objective with respect to the input.

    All network parameters are left untouched; the gradient flows to the
    input only.
    """
    grad, _ = gradient_for_objective(nets, x, objective)
    return grad


def input_gradient_batch(
    nets: Sequence[Network],
    x: np.ndarray,
    targets: np.ndarray,
    layer_name: str,
    ensemble_weights: Optional[Sequence[float]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched input gradient and per-row loss for a per-row target matrix.

    targets is (batch, N); row b drives the named layer's outputs on x[b].
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if not nets:
        raise ValueError("need at least one network")
    if len({net.input_dim for net in nets}) != 1:
        raise ShapeError("ensemble networks disagree on input_dim")
    if x.shape[1] != nets[0].input_dim:
        raise ShapeError(f"input width {x.shape[1]} != network input_dim {nets[0].input_dim}")
    weights = np.ones(len(nets)) if ensemble_weights is None else np.asarray(ensemble_weights, dtype=np.float64)
    if weights.shape != (len(nets),):
        raise ShapeError("ensemble_weights length must match ensemble size")

    total_grad = np.zeros_like(x)
    total_loss = np.zeros(x.shape[0])
    for net, w_net in zip(nets, weights):
        li = net.layer_index(layer_name)
        sub = net.layers[: li + 1]
        if sub[-1].out_dim != targets.shape[1]:
            raise ShapeError(
                f"layer {layer_name} width {sub[-1].out_dim} != targets width {targets.shape[1]}"
            )
        posts = _forward_layers(sub, x)
        resid = posts[-1] - targets
        total_loss += w_net * (resid**2).sum(axis=1)
        delta = 2.0 * w_net * resid * _activation_grad_mask(posts[-1], sub[-1].activation)
        for i in range(li, 0, -1):
            delta = (delta @ sub[i].weights.astype(np.float64)) * _activation_grad_mask(
                posts[i - 1], sub[i - 1].activation
            )
        total_grad += delta @ sub[0].weights.astype(np.float64)
    return total_grad, total_loss


def gradient_for_objective(nets: Sequence[Network], x: np.ndarray, objective: TriggerObjective):
    """Like input_gradient but also returns the scalar objective value."""
    grads, losses = input_gradient_batch(
        nets, np.asarray(x, dtype=np.float64)[None, :], objective.targets[None, :],
        objective.layer_name, objective.ensemble_weights,
    )
    return grads[0], float(losses[0])


def finetune_variant(
    net: Network, data: Dataset, epochs: int, seed: int, lr: float = 0.01, batch_size: int = 32
) -> Network:
    """Fine-tune a deep copy; the original network is untouched."""
    return train(net, data, TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed))


def prune_variant(net: Network, layer_name: str, fraction: float, seed: int = 0) -> Network:
    """Zero the incoming rows and biases of the lowest-|w| neurons in one layer.

    Ranks neurons by the L1 norm of their incoming weight row and zeroes the
    floor(fraction * N) smallest. The seed is recorded for provenance only;
    magnitude ranking is deterministic.
    """
    if not (0.0 <= fraction < 1.0):
        raise ValueError("fraction must be in [0, 1)")
    out = net.clone()
    layer = out.layer(layer_name)
    count = int(np.floor(fraction * layer.out_dim))
    if count == 0:
        return out
    norms = np.abs(layer.weights.astype(np.float64)).sum(axis=1)
    doomed = np.argsort(norms, kind="stable")[:count]
    layer.weights[doomed, :] = 0.0
    layer.biases[doomed] = 0.0
    out.metadata["pruned"] = f"{layer_name}:{fraction}:{count}"
    return out


def networks_equal(a: Network, b: Network) -> bool:
    """Bit-level equality of architecture and parameters."""
    if len(a.layers) != len(b.layers):
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.activation != lb.activation or la.weights.shape != lb.weights.shape:
            return False
        if not (np.array_equal(la.weights, lb.weights) and np.array_equal(la.biases, lb.biases)):
            return False
    return True
