"""White-box watermark backend over a dense layer's flattened weights.

The payload bit b_i is carried by the sign of the projection <k_i, w> of the
flattened layer weights onto a secret Gaussian key row. Embedding adds a
sigmoid cross-entropy penalty on those projections to the task loss, which
pushes every projection to the payload's side of zero while training keeps
the model accurate. Verification reads the signs back and accepts when the
bit-error rate stays within the record's threshold.

Because the projection mixes weight rows in a fixed order, reordering the
layer's neurons scrambles the extracted bits; that is the failure the
alignment stage exists to undo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, TrainConfig, accuracy, train
from .serialize import (
    MAGIC_RECORD,
    PayloadReader,
    PayloadWriter,
    read_container,
    write_container,
)


class TamperError(RuntimeError):
    """Suspect model shape is inconsistent with the owner's artifacts."""


class EmbedFailure(RuntimeError):
    """Embedding could not reach a zero bit-error rate."""


@dataclass(frozen=True)
class WatermarkRecord:
    """Secret key material and payload for one watermarked layer."""

    layer_name: str
    key: np.ndarray  # (B, W) float32 Gaussian projection rows
    payload: np.ndarray  # (B,) uint8 bits
    threshold: float  # accept when BER <= threshold
    seed: int

    def __post_init__(self):
        key = np.asarray(self.key, dtype=np.float32)
        payload = np.asarray(self.payload, dtype=np.uint8)
        if key.ndim != 2 or key.size == 0:
            raise ValueError("key must be a non-empty 2-D array")
        if payload.shape != (key.shape[0],):
            raise ValueError("payload length must match key rows")
        if np.any(payload > 1):
            raise ValueError("payload must be bits")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        object.__setattr__(self, "key", key)
        object.__setattr__(self, "payload", payload)

    @property
    def bits(self) -> int:
        return int(self.key.shape[0])


@dataclass(frozen=True)
class OVResult:
    accepted: bool
    ber: float
    bits_extracted: np.ndarray  # (B,) uint8


def make_record(
    net: Network, layer_name: str, bits: int = 32, threshold: float = 0.15, seed: int = 0
) -> WatermarkRecord:
    layer = net.layer(layer_name)
    if bits < 1:
        raise ValueError("need at least one payload bit")
    rng = np.random.default_rng(seed)
    key = rng.standard_normal((bits, layer.weights.size)).astype(np.float32)
    payload = rng.integers(0, 2, size=bits).astype(np.uint8)
    return WatermarkRecord(layer_name, key, payload, threshold, seed)


def _projections(net: Network, record: WatermarkRecord) -> np.ndarray:
    try:
        layer = net.layer(record.layer_name)
    except KeyError as exc:
        raise TamperError(f"suspect model has no layer {record.layer_name!r}") from exc
    if layer.weights.size != record.key.shape[1]:
        raise TamperError(
            f"layer {record.layer_name!r} has {layer.weights.size} weights, "
            f"record key expects {record.key.shape[1]}"
        )
    w = layer.weights.astype(np.float64).ravel()
    return record.key.astype(np.float64) @ w


def extract_bits(net: Network, record: WatermarkRecord) -> np.ndarray:
    """Sign readout: projection >= 0 reads as bit 1, otherwise 0."""
    return (_projections(net, record) >= 0.0).astype(np.uint8)


def verify(net: Network, record: WatermarkRecord) -> OVResult:
    bits = extract_bits(net, record)
    ber = float(np.mean(bits != record.payload))
    return OVResult(accepted=ber <= record.threshold, ber=ber, bits_extracted=bits)


@dataclass(frozen=True)
class EmbedConfig:
    epochs: int = 4
    lr: float = 0.05
    batch_size: int = 32
    strength: float = 4.0
    max_rounds: int = 4
    seed: int = 0


def embed(net: Network, record: WatermarkRecord, data, hp: EmbedConfig = EmbedConfig()) -> Network:
    """Train with the sign penalty until extraction is error free.

    Runs up to max_rounds training passes, stopping at the first with zero
    bit-error rate; later rounds keep growing the projection margins only if
    the first pass leaves residual errors. Accuracy before and after lands in
    the returned network's metadata.
    """
    layer = net.layer(record.layer_name)
    if layer.weights.size != record.key.shape[1]:
        raise TamperError(
            f"record key expects {record.key.shape[1]} weights, layer has {layer.weights.size}"
        )
    key64 = record.key.astype(np.float64)
    target = record.payload.astype(np.float64)
    shape = layer.weights.shape
    b = record.bits

    def sign_penalty(model: Network):
        w = model.layer(record.layer_name).weights.astype(np.float64).ravel()
        z = key64 @ w
        # log(1 + e^-|z|) + max(-z*y', 0) form keeps the loss finite for large |z|
        zy = np.where(target > 0.5, z, -z)
        loss = float(np.mean(np.log1p(np.exp(-np.abs(zy))) + np.maximum(-zy, 0.0)))
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
        dz = (p - target) / b
        grad = (key64.T @ dz).reshape(shape)
        return hp.strength * loss, {record.layer_name: hp.strength * grad}

    acc_before = accuracy(net, data)
    current = net
    for round_idx in range(hp.max_rounds):
        current = train(
            current,
            data,
            TrainConfig(
                epochs=hp.epochs,
                lr=hp.lr,
                batch_size=hp.batch_size,
                seed=hp.seed + round_idx,
                extra_loss=sign_penalty,
            ),
        )
        if verify(current, record).ber == 0.0:
            break
    else:
        final = verify(current, record).ber
        raise EmbedFailure(
            f"bit-error rate still {final:.3f} after {hp.max_rounds} rounds; "
            f"raise strength or epochs"
        )
    current.metadata["accuracy_before_embed"] = f"{acc_before:.6f}"
    current.metadata["accuracy_after_embed"] = f"{accuracy(current, data):.6f}"
    return current


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits, bitorder="little").tobytes()


def _unpack_bits(raw: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=count, bitorder="little")


def save_record(record: WatermarkRecord, path) -> None:
    w = PayloadWriter()
    w.text(record.layer_name)
    w.u32(record.bits)
    w.u32(record.key.shape[1])
    w.f64(record.threshold)
    w.u64(record.seed & 0xFFFFFFFFFFFFFFFF)
    w.f32_array(record.key)
    w.raw(_pack_bits(record.payload))
    write_container(path, MAGIC_RECORD, w.bytes_value())


def load_record(path) -> WatermarkRecord:
    r = PayloadReader(read_container(path, MAGIC_RECORD))
    layer_name = r.text()
    bits = r.u32()
    width = r.u32()
    threshold = r.f64()
    seed = r.u64()
    key = r.f32_array(bits * width).reshape(bits, width)
    payload = _unpack_bits(r.raw((bits + 7) // 8), bits)
    r.expect_end()
    return WatermarkRecord(layer_name, key, payload, threshold, seed)
