"""Recovering the original neuron order of a suspect model.

Feeding the owner's triggers through the suspect model gives each neuron an
observed codeword; matching observed words to the codebook identifies where
each original neuron went. A one-to-one assignment that minimizes the summed
decode distance (rather than an independent nearest-word choice per neuron)
guarantees a usable permutation even when noisy readouts collide on the same
codeword.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .attacks import PermutationSpec, inverse_permutation, permute_neurons
from .coding import Codebook, codebook_digest, nearest_centroid
from .network import Network
from .serialize import IntegrityError
from .triggers import TriggerSet, dead_neurons, layer_outputs
from .watermark import OVResult, TamperError, WatermarkRecord, verify


@dataclass(frozen=True)
class ObservedCodeMatrix:
    codes: np.ndarray  # (N, T) uint8, symbol per neuron and trigger
    raw_outputs: np.ndarray  # (N, T) float64 activations behind the codes
    layer_name: str

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.uint8)
        raw = np.asarray(self.raw_outputs, dtype=np.float64)
        if codes.ndim != 2 or codes.shape != raw.shape:
            raise ValueError("codes and raw outputs must be matching 2-D arrays")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "raw_outputs", raw)


@dataclass(frozen=True)
class AlignmentResult:
    """perm_estimate[i] is the estimated current position of original neuron i."""

    perm_estimate: np.ndarray  # (N,) int64 bijection
    per_neuron_distance: np.ndarray  # (N,) int64, decode distance at each position
    collisions_resolved: int  # positions an independent nearest-word pick would have tied
    dead: list  # positions silent on every trigger
    layer_name: str

    @property
    def n(self) -> int:
        return int(self.perm_estimate.size)


def read_codes(net: Network, triggers: TriggerSet) -> ObservedCodeMatrix:
    """Quantize the suspect layer's outputs on the owner's triggers."""
    if net.input_dim != triggers.inputs.shape[1]:
        raise TamperError(
            f"suspect expects {net.input_dim}-dim inputs, triggers are "
            f"{triggers.inputs.shape[1]}-dim"
        )
    try:
        raw = layer_outputs(net, triggers.layer_name, triggers.inputs)
    except KeyError as exc:
        raise TamperError(f"suspect model has no layer {triggers.layer_name!r}") from exc
    codes = nearest_centroid(raw, triggers.centroid_set)
    return ObservedCodeMatrix(codes=codes, raw_outputs=raw, layer_name=triggers.layer_name)


def align_to_matrix(
    observed_codes: np.ndarray,
    reference_codes: np.ndarray,
    raw_outputs: np.ndarray | None = None,
    layer_name: str = "",
) -> AlignmentResult:
    """Minimum-total-distance bijection between observed and reference rows."""
    obs = np.asarray(observed_codes, dtype=np.int64)
    ref = np.asarray(reference_codes, dtype=np.int64)
    if obs.shape != ref.shape or obs.ndim != 2:
        raise TamperError(
            f"observed code matrix {obs.shape} does not match reference {ref.shape}"
        )
    # cost[p, i] = decode distance between the neuron at position p and word i
    cost = np.abs(obs[:, None, :] - ref[None, :, :]).sum(axis=2)
    _, assign = linear_sum_assignment(cost)
    greedy = cost.argmin(axis=1)
    hits = np.bincount(greedy, minlength=cost.shape[0])
    collisions = int(np.sum(hits[greedy] > 1))
    dead = dead_neurons(raw_outputs) if raw_outputs is not None else []
    return AlignmentResult(
        perm_estimate=inverse_permutation(assign),
        per_neuron_distance=cost[np.arange(cost.shape[0]), assign].astype(np.int64),
        collisions_resolved=collisions,
        dead=dead,
        layer_name=layer_name,
    )


def align(observed: ObservedCodeMatrix, cb: Codebook) -> AlignmentResult:
    if observed.codes.shape[0] != cb.n:
        raise TamperError(
            f"suspect layer has {observed.codes.shape[0]} neurons, codebook has {cb.n} words"
        )
    if observed.codes.shape[1] != cb.t:
        raise TamperError(
            f"observed codes have length {observed.codes.shape[1]}, codebook words {cb.t}"
        )
    return align_to_matrix(
        observed.codes, cb.codewords, observed.raw_outputs, observed.layer_name
    )


def apply_alignment(net: Network, result: AlignmentResult) -> Network:
    """Send the neuron at position p back to its estimated original index."""
    spec = PermutationSpec(result.layer_name, inverse_permutation(result.perm_estimate))
    return permute_neurons(net, spec)


def alignment_accuracy(
    result: AlignmentResult, true_perm: np.ndarray, include_dead: bool = False
) -> float:
    """Fraction of neurons mapped to their true position.

    Dead neurons carry no code, so by default they are left out of the
    denominator; their count is visible on the result itself.
    """
    truth = np.asarray(true_perm, dtype=np.int64)
    if truth.shape != result.perm_estimate.shape:
        raise ValueError("true permutation has the wrong length")
    correct = result.perm_estimate == truth
    if not include_dead and result.dead:
        live = ~np.isin(truth, np.asarray(result.dead))
        if not live.any():
            return float("nan")
        return float(correct[live].mean())
    return float(correct.mean())


def normalize_layer(net: Network, layer_name: str) -> Network:
    """Rescale each neuron so its (row, bias) vector has unit L2 norm.

    The inverse scale moves into the successor column, preserving function
    through relu. This cancels any positive rescaling an attacker applied;
    zero-norm neurons stay untouched. Running it twice is a no-op up to
    float32 rounding.
    """
    idx = net.layer_index(layer_name)
    if idx == len(net.layers) - 1:
        raise ValueError("cannot normalize the output layer: no successor to compensate")
    layer = net.layers[idx]
    if layer.activation != "relu":
        raise ValueError("normalization preserves the function only through relu")
    out = net.clone()
    lay, nxt = out.layers[idx], out.layers[idx + 1]
    w = lay.weights.astype(np.float64)
    b = lay.biases.astype(np.float64)
    norms = np.sqrt((w**2).sum(axis=1) + b**2)
    scale = np.where(norms > 0, norms, 1.0)
    lay.weights = (w / scale[:, None]).astype(np.float32)
    lay.biases = (b / scale).astype(np.float32)
    nxt.weights = (nxt.weights.astype(np.float64) * scale[None, :]).astype(np.float32)
    return out


@dataclass(frozen=True)
class AlignedVerification:
    ov: OVResult | None
    alignment: AlignmentResult | None
    tamper_cause: str | None = None

    @property
    def accepted(self) -> bool:
        return self.ov is not None and self.ov.accepted


def verify_with_alignment(
    net: Network,
    triggers: TriggerSet,
    cb: Codebook,
    record: WatermarkRecord,
    normalize: bool = False,
) -> AlignedVerification:
    """Full owner-side pipeline: read codes, align, undo the permutation, verify.

    Code readout optionally runs on a normalized copy so rescaling cannot
    distort the fold boundaries, but the recovered permutation is applied to
    the suspect exactly as given. Shape inconsistencies count as tampering
    and come back as a refusal rather than an exception.
    """
    if codebook_digest(cb) != triggers.codebook_ref:
        raise IntegrityError("trigger set was built for a different codebook")
    basis = normalize_layer(net, triggers.layer_name) if normalize else net
    try:
        observed = read_codes(basis, triggers)
        result = align(observed, cb)
    except TamperError as exc:
        return AlignedVerification(ov=None, alignment=None, tamper_cause=str(exc))
    aligned = apply_alignment(net, result)
    try:
        ov = verify(aligned, record)
    except TamperError as exc:
        return AlignedVerification(ov=None, alignment=result, tamper_cause=str(exc))
    return AlignedVerification(ov=ov, alignment=result, tamper_cause=None)
