"""Experiment configuration: one dataclass tree, JSON in and out.

Validation reports dotted field paths ("coding.k_corrupted: ...") so a bad
config file points at the exact key. Unknown keys are rejected rather than
ignored; a typo should fail loudly, not silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

ATTACK_KINDS = ("np", "ftp", "npp", "rescale")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass
class DataSpec:
    samples: int = 2400
    input_dim: int = 48
    classes: int = 4
    spread: float = 0.4
    holdout: int = 400


@dataclass
class ModelSpec:
    widths: list = field(default_factory=lambda: [128, 32, 16])
    watermarked_layer: str = "dense1"
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 32


@dataclass
class CodingSpec:
    k: int = 2
    t: int = 60
    k_corrupted: int = 1


@dataclass
class TriggerSpec:
    mode: str = "t1"
    j: int = 6
    steps: int = 2000
    lr: float = 0.05
    restarts: int = 8
    box_low: float = -4.0
    box_high: float = 4.0
    variant_lr: float = 0.01
    prune_step: float = 0.05


@dataclass
class WatermarkSpec:
    bits: int = 32
    threshold: float = 0.15
    strength: float = 2.0
    embed_epochs: int = 4
    embed_lr: float = 0.05
    max_rounds: int = 4


@dataclass
class AttackSpec:
    kind: str = "np"
    trials: int = 100
    epochs: int = 2  # ftp only
    lr: float = 0.01  # ftp only
    fraction: float = 0.10  # npp only
    scale_low: float = 0.5  # rescale only
    scale_high: float = 2.0  # rescale only


@dataclass
class ExperimentConfig:
    seed: int = 0
    normalize: bool = False
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    coding: CodingSpec = field(default_factory=CodingSpec)
    triggers: TriggerSpec = field(default_factory=TriggerSpec)
    watermark: WatermarkSpec = field(default_factory=WatermarkSpec)
    attacks: list = field(
        default_factory=lambda: [
            AttackSpec(kind="np"),
            AttackSpec(kind="ftp"),
            AttackSpec(kind="npp"),
            AttackSpec(kind="rescale", scale_low=0.2, scale_high=5.0),
        ]
    )

    def watermarked_index(self) -> int:
        return int(self.model.watermarked_layer.removeprefix("dense"))

    def watermarked_width(self) -> int:
        return int(self.model.widths[self.watermarked_index()])


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    d, m, c, t, w = cfg.data, cfg.model, cfg.coding, cfg.triggers, cfg.watermark
    _require(d.classes >= 2, "data.classes", "need at least two classes")
    _require(d.input_dim >= 2, "data.input_dim", "need at least two dimensions")
    _require(d.samples > d.holdout >= 1, "data.holdout", "holdout must leave training data")
    _require(d.spread > 0, "data.spread", "must be positive")
    _require(len(m.widths) >= 1 and all(int(x) >= 1 for x in m.widths), "model.widths",
             "need positive layer widths")
    _require(m.epochs >= 0 and m.lr > 0 and m.batch_size >= 1, "model.epochs",
             "need epochs >= 0, lr > 0, batch_size >= 1")
    name = m.watermarked_layer
    _require(
        name.startswith("dense") and name.removeprefix("dense").isdigit(),
        "model.watermarked_layer", f"unknown layer name {name!r}",
    )
    idx = int(name.removeprefix("dense"))
    _require(idx < len(m.widths), "model.watermarked_layer",
             f"layer {name!r} must be a hidden layer with a successor "
             f"(dense0..dense{len(m.widths) - 1})")
    _require(2 <= c.k <= 256, "coding.k", "symbol count must be in [2, 256]")
    _require(c.t >= 1, "coding.t", "need at least one trigger position")
    _require(1 <= c.k_corrupted <= c.k - 1, "coding.k_corrupted",
             "corrupted alternatives per position lie in [1, k-1]")
    _require(t.mode in ("t1", "t2"), "triggers.mode", "mode is 't1' or 't2'")
    _require(t.j >= 0 and t.j % 2 == 0, "triggers.j", "variant count must be even")
    _require(t.mode == "t1" or t.j >= 2, "triggers.j", "ensemble mode needs variants")
    _require(t.steps >= 0 and t.lr > 0, "triggers.steps", "need steps >= 0 and lr > 0")
    _require(t.restarts >= 1, "triggers.restarts", "need at least one restart")
    _require(t.box_low < t.box_high, "triggers.box_low", "clamp box must be non-empty")
    _require(0 < t.prune_step and t.prune_step * (t.j // 2) < 1, "triggers.prune_step",
             "prune fractions must stay below 1")
    _require(w.bits >= 1, "watermark.bits", "need at least one payload bit")
    _require(0 < w.threshold < 1, "watermark.threshold", "threshold lies in (0, 1)")
    _require(w.strength > 0 and w.embed_epochs >= 1 and w.max_rounds >= 1,
             "watermark.strength", "need positive strength, epochs and rounds")
    for i, a in enumerate(cfg.attacks):
        path = f"attacks[{i}]"
        _require(a.kind in ATTACK_KINDS, f"{path}.kind",
                 f"unknown kind {a.kind!r}, expected one of {ATTACK_KINDS}")
        _require(a.trials >= 1, f"{path}.trials", "need at least one trial")
        if a.kind == "ftp":
            _require(a.epochs >= 1 and a.lr > 0, f"{path}.epochs", "need epochs >= 1, lr > 0")
        if a.kind == "npp":
            _require(0 <= a.fraction < 1, f"{path}.fraction", "fraction lies in [0, 1)")
        if a.kind == "rescale":
            _require(0 < a.scale_low <= a.scale_high, f"{path}.scale_low",
                     "need 0 < scale_low <= scale_high")
    return cfg


def _build(dc_type, value, path: str):
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(value) - set(known)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for key, val in value.items():
        sub = f"{path}.{key}" if path else key
        if key == "attacks":
            if not isinstance(val, list):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[key] = [_build(AttackSpec, item, f"{sub}[{i}]") for i, item in enumerate(val)]
        elif key in ("data", "model", "coding", "triggers", "watermark"):
            kwargs[key] = _build(
                {"data": DataSpec, "model": ModelSpec, "coding": CodingSpec,
                 "triggers": TriggerSpec, "watermark": WatermarkSpec}[key], val, sub)
        else:
            kwargs[key] = val
    try:
        return dc_type(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or dc_type.__name__}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    return validate_config(_build(ExperimentConfig, raw, ""))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
