"""Trigger synthesis: inputs that pin neuron outputs to codeword centroids.

For trigger position t, every neuron n of the watermarked layer should land
on the centroid of its assigned symbol codewords[n, t]. Gradient descent on
the input drives the summed squared deviation down; optimizing against an
ensemble that also contains fine-tuned and pruned variants of the model
makes the readout survive those attacks at the price of a harder objective.

All T positions are optimized as one batch; each row keeps its best-so-far
input so a late bad step cannot lose a good solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import CentroidSet, Codebook, codebook_digest
from .network import (
    Dataset,
    Network,
    ShapeError,
    TriggerObjective,
    finetune_variant,
    forward,
    input_gradient_batch,
    prune_variant,
)
from .serialize import (
    MAGIC_TRIGGERS,
    PayloadReader,
    PayloadWriter,
    read_container,
    write_container,
)

MODE_SINGLE = "t1"  # optimize against the watermarked model alone
MODE_ENSEMBLE = "t2"  # optimize against the model plus J variants


class OptimizationError(RuntimeError):
    """Trigger optimization produced a non-finite loss."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class VariantEnsemble:
    """The watermarked model at index 0, then attack-simulating variants."""

    networks: list
    provenance: list

    def __post_init__(self):
        if not self.networks:
            raise ValueError("ensemble must contain at least the original model")
        if len(self.provenance) != len(self.networks):
            raise ValueError("one provenance entry per network required")

    @property
    def j(self) -> int:
        return len(self.networks) - 1


def make_variant_ensemble(
    net: Network,
    data: Dataset,
    layer_name: str,
    j: int,
    seed: int,
    finetune_lr: float = 0.01,
    batch_size: int = 32,
    prune_step: float = 0.05,
) -> VariantEnsemble:
    """Original plus J/2 fine-tuned (1, 2, ... epochs) and J/2 pruned variants
    (fractions prune_step, 2*prune_step, ...)."""
    if j < 0 or j % 2 != 0:
        raise ValueError("variant count must be even (half fine-tuned, half pruned)")
    nets = [net]
    provenance = ["original"]
    half = j // 2
    for i in range(1, half + 1):
        nets.append(
            finetune_variant(net, data, epochs=i, seed=seed + i, lr=finetune_lr, batch_size=batch_size)
        )
        provenance.append(f"finetune:epochs={i}:lr={finetune_lr}:seed={seed + i}")
    for i in range(1, half + 1):
        frac = prune_step * i
        nets.append(prune_variant(net, layer_name, frac, seed=seed + half + i))
        provenance.append(f"prune:layer={layer_name}:fraction={frac:.4f}")
    return VariantEnsemble(nets, provenance)


@dataclass(frozen=True)
class OptConfig:
    steps: int = 2000
    lr: float = 0.05
    seed: int = 0
    box_low: float = -4.0
    box_high: float = 4.0
    restarts: int = 8  # independent seeded starts per trigger; best one wins
    init_low: float | None = None  # init box defaults to the clamp box
    init_high: float | None = None

    def __post_init__(self):
        if self.steps < 0 or self.lr <= 0:
            raise ValueError("need steps >= 0 and lr > 0")
        if self.restarts < 1:
            raise ValueError("need at least one start")
        if not self.box_low < self.box_high:
            raise ValueError("clamp box must be non-empty")

    @property
    def init_box(self) -> tuple:
        lo = self.box_low if self.init_low is None else self.init_low
        hi = self.box_high if self.init_high is None else self.init_high
        return lo, hi


@dataclass(frozen=True)
class TriggerSet:
    """Owner-side evidence: T inputs plus the quantization frame they encode."""

    inputs: np.ndarray  # (T, input_dim) float32
    centroid_set: CentroidSet
    codebook_ref: str  # digest of the codebook the targets came from
    mode: str  # MODE_SINGLE or MODE_ENSEMBLE
    variant_count: int
    layer_name: str
    final_losses: np.ndarray  # (T,) float32, best loss per trigger
    converged: np.ndarray  # (T,) bool, best loss within the per-network budget

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float32)
        losses = np.asarray(self.final_losses, dtype=np.float32)
        conv = np.asarray(self.converged, dtype=bool)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("inputs must be a (T, input_dim) array")
        if losses.shape != (inputs.shape[0],) or conv.shape != (inputs.shape[0],):
            raise ValueError("per-trigger logs must have length T")
        if self.mode not in (MODE_SINGLE, MODE_ENSEMBLE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_ENSEMBLE and self.variant_count < 1:
            raise ValueError("ensemble mode requires at least one variant")
        if self.mode == MODE_SINGLE and self.variant_count != 0:
            raise ValueError("single mode carries no variants")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "final_losses", losses)
        object.__setattr__(self, "converged", conv)

    @property
    def t(self) -> int:
        return int(self.inputs.shape[0])


def loss_budget(n: int, gap: float, network_count: int = 1) -> float:
    """Convergence ceiling: every neuron within gap/4 of its target keeps the
    readout on the correct side of the fold boundary with margin."""
    return network_count * n * (gap / 4.0) ** 2


def synthesize_trigger(
    nets: list, objective: TriggerObjective, opt: OptConfig
) -> tuple[np.ndarray, float]:
    """Plain projected gradient descent on one input; returns best (x, loss)."""
    if not nets:
        raise ValueError("need at least one network")
    targets = np.asarray(objective.targets, dtype=np.float64)
    best_x, best_loss = _descend(
        nets, np.tile(targets, (opt.restarts, 1)), objective.layer_name, opt,
        weights=objective.ensemble_weights,
    )
    pick = int(best_loss.argmin())
    return best_x[pick], float(best_loss[pick])


def _descend(nets, targets, layer_name, opt: OptConfig, weights=None):
    """Batched projected descent; returns per-row best (inputs, losses)."""
    rng = np.random.default_rng(opt.seed)
    init_lo, init_hi = opt.init_box
    x = rng.uniform(init_lo, init_hi, size=(targets.shape[0], nets[0].input_dim))
    best_x, best_loss = x.copy(), np.full(targets.shape[0], np.inf)
    for step in range(opt.steps + 1):
        grads, losses = input_gradient_batch(nets, x, targets, layer_name, weights)
        if not np.all(np.isfinite(losses)):
            bad = int(np.flatnonzero(~np.isfinite(losses))[0])
            raise OptimizationError(f"non-finite loss for row {bad} at step {step}", step)
        improved = losses < best_loss
        best_loss[improved] = losses[improved]
        best_x[improved] = x[improved]
        if step == opt.steps:
            break
        x = np.clip(x - opt.lr * grads, opt.box_low, opt.box_high)
    return best_x, best_loss


def synthesize_trigger_set(
    ensemble: VariantEnsemble,
    layer_name: str,
    cs: CentroidSet,
    cb: Codebook,
    opt: OptConfig,
) -> TriggerSet:
    """Optimize all T trigger positions as one batch against the ensemble."""
    nets = ensemble.networks
    width = nets[0].layer(layer_name).out_dim
    if width != cb.n:
        raise ShapeError(f"layer {layer_name!r} has {width} neurons, codebook has {cb.n} words")
    if cs.k != cb.k:
        raise ValueError(f"centroid set has {cs.k} folds, codebook uses {cb.k} symbols")
    t = cb.t
    targets = cs.centroids[cb.codewords.T.astype(np.int64)]  # (T, N)
    all_x, all_loss = _descend(nets, np.tile(targets, (opt.restarts, 1)), layer_name, opt)
    pick = all_loss.reshape(opt.restarts, t).argmin(axis=0)
    best_x = all_x.reshape(opt.restarts, t, -1)[pick, np.arange(t)]
    best_loss = all_loss.reshape(opt.restarts, t)[pick, np.arange(t)]
    budget = loss_budget(cb.n, cs.min_gap, len(nets))
    return TriggerSet(
        inputs=best_x.astype(np.float32),
        centroid_set=cs,
        codebook_ref=codebook_digest(cb),
        mode=MODE_SINGLE if ensemble.j == 0 else MODE_ENSEMBLE,
        variant_count=ensemble.j,
        layer_name=layer_name,
        final_losses=best_loss.astype(np.float32),
        converged=best_loss <= budget,
    )


def layer_outputs(net: Network, layer_name: str, inputs: np.ndarray) -> np.ndarray:
    """(N, T) matrix of the layer's activations, one column per input."""
    idx = net.layer_index(layer_name)
    outs = forward(net, np.asarray(inputs, dtype=np.float64)).outputs[idx]
    return outs.T


def dead_neurons(outputs: np.ndarray, tol: float = 1e-12) -> list:
    """Rows that never leave zero across all columns."""
    return [int(i) for i in np.flatnonzero(np.max(np.abs(outputs), axis=1) <= tol)]


@dataclass(frozen=True)
class ClusterStats:
    inter: float | None  # mean distance between occupied cluster means
    intra: float  # mean distance of points to their cluster mean
    occupied: int


def cluster_quality(values: np.ndarray, cs: CentroidSet) -> ClusterStats:
    """How cleanly one trigger's neuron outputs split into the K folds.

    Points are assigned to their nearest centroid. With fewer than two
    occupied clusters the between-cluster distance is undefined and reported
    as None rather than zero.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    assign = np.abs(vals[:, None] - cs.centroids).argmin(axis=1)
    labels = np.unique(assign)
    means = np.array([vals[assign == c].mean() for c in labels])
    intra = float(np.mean(np.abs(vals - means[np.searchsorted(labels, assign)])))
    if labels.size < 2:
        return ClusterStats(inter=None, intra=intra, occupied=int(labels.size))
    diffs = [abs(means[i] - means[j]) for i in range(len(labels)) for j in range(i + 1, len(labels))]
    return ClusterStats(inter=float(np.mean(diffs)), intra=intra, occupied=int(labels.size))


def separation_stats(net: Network, triggers: "TriggerSet") -> dict:
    """Mean inter/intra statistics across triggers, dead neurons excluded."""
    outs = layer_outputs(net, triggers.layer_name, triggers.inputs)
    dead = dead_neurons(outs)
    live = np.setdiff1d(np.arange(outs.shape[0]), dead)
    inters, intras = [], []
    for t in range(outs.shape[1]):
        stats = cluster_quality(outs[live, t], triggers.centroid_set)
        intras.append(stats.intra)
        if stats.inter is not None:
            inters.append(stats.inter)
    return {
        "mean_inter": float(np.mean(inters)) if inters else None,
        "mean_intra": float(np.mean(intras)),
        "dead_neurons": dead,
    }


def save_trigger_set(ts: TriggerSet, path) -> None:
    w = PayloadWriter()
    w.text(ts.mode)
    w.u16(ts.variant_count)
    w.text(ts.layer_name)
    w.u32(ts.t)
    w.u32(ts.inputs.shape[1])
    cs = ts.centroid_set
    w.u16(cs.k)
    w.f64_array(cs.centroids)
    w.f64_array(cs.boundaries)
    w.text(ts.codebook_ref)
    w.f32_array(ts.inputs)
    w.f32_array(ts.final_losses)
    w.raw(np.packbits(ts.converged.astype(np.uint8), bitorder="little").tobytes())
    write_container(path, MAGIC_TRIGGERS, w.bytes_value())


def load_trigger_set(path) -> TriggerSet:
    r = PayloadReader(read_container(path, MAGIC_TRIGGERS))
    mode = r.text()
    variant_count = r.u16()
    layer_name = r.text()
    t = r.u32()
    in_dim = r.u32()
    k = r.u16()
    centroids = r.f64_array(k)
    boundaries = r.f64_array(k - 1)
    codebook_ref = r.text()
    inputs = r.f32_array(t * in_dim).reshape(t, in_dim)
    losses = r.f32_array(t)
    conv = np.unpackbits(
        np.frombuffer(r.raw((t + 7) // 8), dtype=np.uint8), count=t, bitorder="little"
    ).astype(bool)
    r.expect_end()
    return TriggerSet(
        inputs=inputs,
        centroid_set=CentroidSet(centroids, boundaries),
        codebook_ref=codebook_ref,
        mode=mode,
        variant_count=variant_count,
        layer_name=layer_name,
        final_losses=losses,
        converged=conv,
    )
