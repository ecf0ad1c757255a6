"""End-to-end experiment stages: train, encode, forge, attack, align, report.

Every stage is a standalone function over (config, run directory). A stage
reads only artifacts earlier stages declared, derives all of its randomness
from the config seed via `derive_seed`, and writes byte-deterministic outputs,
so deleting any intermediate file and re-running just that stage reproduces it
bit for bit. Wall-clock timings go to separate `timings_*.json` files that are
deliberately excluded from that guarantee; the final report folds them into a
single top-level "timings" object and is otherwise reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import platform
import time
from pathlib import Path

import jsonschema
import numpy as np

from .align import (
    align_to_matrix,
    alignment_accuracy,
    normalize_layer,
    read_codes,
    verify_with_alignment,
)
from .attacks import (
    attack_ftp,
    attack_npp,
    attack_rescale,
    functional_drift,
    permute_neurons,
    random_permutation,
    random_scales,
    PermutationSpec,
)
from .coding import (
    Codebook,
    CentroidSet,
    codebook_digest,
    compute_centroids,
    default_codebook,
    load_codebook,
    max_correctable,
    save_codebook,
)
from .config import ATTACK_KINDS, ExperimentConfig, config_to_dict, save_config
from .data import make_blobs, split_dataset
from .network import Dataset, Network, TrainConfig, accuracy, init_network, train
from .serialize import file_sha256, load_model, save_model
from .triggers import (
    MODE_ENSEMBLE,
    MODE_SINGLE,
    OptConfig,
    TriggerSet,
    layer_outputs,
    load_trigger_set,
    loss_budget,
    make_variant_ensemble,
    save_trigger_set,
    separation_stats,
    synthesize_trigger_set,
)
from .watermark import EmbedConfig, embed, load_record, make_record, save_record, verify

TRIGGER_MODES = (MODE_SINGLE, MODE_ENSEMBLE)

# capacity grid printed by the encode stage: layer widths x code lengths
GRID_N = (64, 128)
GRID_T = tuple(range(20, 161, 20))

CONFIG_FILE = "config.json"
MODEL_BASE_FILE = "model_base.naf"
MODEL_FILE = "model.naf"
RECORD_FILE = "record.nar"
CODEBOOK_FILE = "codebook.nac"
TRAIN_SUMMARY = "train_summary.json"
ENCODE_SUMMARY = "encode_summary.json"
REPORT_FILE = "report.json"

REPORT_SCHEMA_VERSION = 1


def trigger_file(mode: str) -> str:
    return f"triggers_{mode}.nat"


def forge_summary_file(mode: str) -> str:
    return f"forge_summary_{mode}.json"


def attack_summary_file(kind: str) -> str:
    return f"attack_summary_{kind}.json"


def align_summary_file(kind: str, mode: str) -> str:
    return f"align_summary_{kind}_{mode}.json"


def suspect_dir(out: Path, kind: str) -> Path:
    return Path(out) / "suspects" / kind


def suspect_file(out: Path, kind: str, trial: int) -> Path:
    return suspect_dir(out, kind) / f"trial_{trial:03d}.naf"


def derive_seed(base: int, *tags) -> int:
    """Stable 64-bit stream seed for a named purpose under one master seed."""
    h = hashlib.sha256(str(int(base)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def _jsonable(x):
    """NaN has no JSON spelling; report it as null."""
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def write_json(path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


class _StageTimer:
    """Record a stage's wall time off to the side, outside the artifact set."""

    def __init__(self, out: Path, stage: str):
        self.path = Path(out) / f"timings_{stage}.json"
        self.stage = stage

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            elapsed = time.perf_counter() - self.start
            self.path.write_text(
                json.dumps({"stage": self.stage, "seconds": elapsed}) + "\n"
            )
        return False


def make_experiment_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Regenerate the train/heldout split; any stage can rebuild it from cfg."""
    ds = make_blobs(
        cfg.data.samples,
        cfg.data.input_dim,
        cfg.data.classes,
        spread=cfg.data.spread,
        seed=derive_seed(cfg.seed, "data"),
    )
    return split_dataset(ds, cfg.data.holdout, seed=derive_seed(cfg.seed, "split"))


def attack_spec_for(cfg: ExperimentConfig, kind: str):
    for a in cfg.attacks:
        if a.kind == kind:
            return a
    raise ValueError(f"config lists no attack of kind {kind!r}")


# ---------------------------------------------------------------- stages


def stage_train(cfg: ExperimentConfig, out) -> dict:
    """Train the task model, embed the watermark, write model + record."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with _StageTimer(out, "train"):
        save_config(cfg, out / CONFIG_FILE)
        train_ds, held = make_experiment_data(cfg)
        net0 = init_network(
            cfg.data.input_dim, [*cfg.model.widths, cfg.data.classes],
            seed=derive_seed(cfg.seed, "init"),
        )
        base = train(
            net0, train_ds,
            TrainConfig(
                epochs=cfg.model.epochs, lr=cfg.model.lr,
                batch_size=cfg.model.batch_size, seed=derive_seed(cfg.seed, "train"),
            ),
        )
        record = make_record(
            base, cfg.model.watermarked_layer, bits=cfg.watermark.bits,
            threshold=cfg.watermark.threshold, seed=derive_seed(cfg.seed, "record"),
        )
        marked = embed(
            base, record, train_ds,
            EmbedConfig(
                epochs=cfg.watermark.embed_epochs, lr=cfg.watermark.embed_lr,
                batch_size=cfg.model.batch_size, strength=cfg.watermark.strength,
                max_rounds=cfg.watermark.max_rounds, seed=derive_seed(cfg.seed, "embed"),
            ),
        )
        save_model(base, out / MODEL_BASE_FILE)
        save_model(marked, out / MODEL_FILE)
        save_record(record, out / RECORD_FILE)
        ov = verify(marked, record)
        summary = {
            "accuracy_base_train": accuracy(base, train_ds),
            "accuracy_base_heldout": accuracy(base, held),
            "accuracy_marked_train": accuracy(marked, train_ds),
            "accuracy_marked_heldout": accuracy(marked, held),
            "ber_after_embed": ov.ber,
            "accepted_after_embed": ov.accepted,
            "bits": record.bits,
            "threshold": record.threshold,
            "watermarked_layer": record.layer_name,
        }
        summary["accuracy_drop_heldout"] = (
            summary["accuracy_base_heldout"] - summary["accuracy_marked_heldout"]
        )
        write_json(out / TRAIN_SUMMARY, summary)
    return summary


def capacity_grid(k: int = 2, k_corrupted: int = 1) -> dict:
    bounds = [[max_correctable(n, t, k, k_corrupted) for t in GRID_T] for n in GRID_N]
    return {
        "k": k,
        "k_corrupted": k_corrupted,
        "n_values": list(GRID_N),
        "t_values": list(GRID_T),
        "bounds": bounds,
    }


def format_capacity_grid(grid: dict) -> str:
    """Plain text table: rows are layer widths, columns code lengths."""
    head = "correctable positions (K={k}, corrupted alternatives={kc})".format(
        k=grid["k"], kc=grid["k_corrupted"]
    )
    widths = [6] + [5] * len(grid["t_values"])
    lines = [head]
    cells = ["N\\T"] + [str(t) for t in grid["t_values"]]
    lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    for n, row in zip(grid["n_values"], grid["bounds"]):
        cells = [str(n)] + [str(b) for b in row]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def stage_encode(cfg: ExperimentConfig, out) -> dict:
    """Derive fold centroids from the marked model and build the codebook."""
    out = Path(out)
    with _StageTimer(out, "encode"):
        model = load_model(out / MODEL_FILE)
        basis = (
            normalize_layer(model, cfg.model.watermarked_layer)
            if cfg.normalize else model
        )
        train_ds, _ = make_experiment_data(cfg)
        pooled = layer_outputs(
            basis, cfg.model.watermarked_layer, train_ds.inputs
        ).ravel()
        cs = compute_centroids(pooled, cfg.coding.k)
        n = cfg.watermarked_width()
        cb = default_codebook(
            n, cfg.coding.t, cfg.coding.k, cfg.coding.k_corrupted,
            seed=derive_seed(cfg.seed, "codebook"),
        )
        save_codebook(cb, out / CODEBOOK_FILE)
        gap = cs.min_gap
        bound = max_correctable(n, cfg.coding.t, cfg.coding.k, cfg.coding.k_corrupted)
        summary = {
            "centroids": [float(c) for c in cs.centroids],
            "boundaries": [float(b) for b in cs.boundaries],
            "min_gap": gap,
            "separation_bound": gap / 10.0,
            "pooled_count": int(pooled.size),
            "normalized_basis": bool(cfg.normalize),
            "codebook": {
                "digest": codebook_digest(cb),
                "n": cb.n,
                "t": cb.t,
                "k": cb.k,
                "min_distance": cb.d_min,
                "guaranteed_radius": (cb.d_min - 1) // 2,
            },
            "capacity": {
                "configured": {
                    "n": n,
                    "t": cfg.coding.t,
                    "k": cfg.coding.k,
                    "k_corrupted": cfg.coding.k_corrupted,
                    "counting_bound": bound,
                },
                "grid": capacity_grid(),
            },
        }
        write_json(out / ENCODE_SUMMARY, summary)
    return summary


def load_centroids(out) -> CentroidSet:
    summary = read_json(Path(out) / ENCODE_SUMMARY)
    return CentroidSet(
        np.array(summary["centroids"], dtype=np.float64),
        np.array(summary["boundaries"], dtype=np.float64),
    )


def stage_forge(cfg: ExperimentConfig, out, mode: str) -> dict:
    """Synthesize the trigger set for one scheme (single model or ensemble)."""
    if mode not in TRIGGER_MODES:
        raise ValueError(f"unknown trigger mode {mode!r}")
    out = Path(out)
    with _StageTimer(out, f"forge_{mode}"):
        model = load_model(out / MODEL_FILE)
        layer = cfg.model.watermarked_layer
        basis = normalize_layer(model, layer) if cfg.normalize else model
        cb = load_codebook(out / CODEBOOK_FILE)
        cs = load_centroids(out)
        train_ds, _ = make_experiment_data(cfg)
        j = 0 if mode == MODE_SINGLE else cfg.triggers.j
        ensemble = make_variant_ensemble(
            basis, train_ds, layer, j,
            seed=derive_seed(cfg.seed, "variants", mode),
            finetune_lr=cfg.triggers.variant_lr,
            batch_size=cfg.model.batch_size,
            prune_step=cfg.triggers.prune_step,
        )
        opt = OptConfig(
            steps=cfg.triggers.steps, lr=cfg.triggers.lr,
            seed=derive_seed(cfg.seed, "forge", mode),
            box_low=cfg.triggers.box_low, box_high=cfg.triggers.box_high,
            restarts=cfg.triggers.restarts,
        )
        ts = synthesize_trigger_set(ensemble, layer, cs, cb, opt)
        save_trigger_set(ts, out / trigger_file(mode))
        stats = separation_stats(basis, ts)
        observed = read_codes(basis, ts)
        symbol_errors = int(np.sum(observed.codes != cb.codewords))
        budget = loss_budget(cb.n, cs.min_gap, len(ensemble.networks))
        bound = cs.min_gap / 10.0
        summary = {
            "mode": mode,
            "t": ts.t,
            "variant_count": ts.variant_count,
            "variants": list(ensemble.provenance),
            "converged": int(ts.converged.sum()),
            "loss_budget": budget,
            "mean_loss": float(ts.final_losses.mean()),
            "max_loss": float(ts.final_losses.max()),
            "separation": {
                "mean_inter": _jsonable(stats["mean_inter"]),
                "mean_intra": stats["mean_intra"],
                "dead_neurons": stats["dead_neurons"],
            },
            "separation_bound": bound,
            "passes_separation": bool(stats["mean_intra"] <= bound),
            "residual_symbol_errors": symbol_errors,
        }
        write_json(out / forge_summary_file(mode), summary)
    return summary


def _forge_suspect(cfg, kind, model, layer, spec, attacker_data, trial_seed):
    a = attack_spec_for(cfg, kind)
    if kind == "np":
        return permute_neurons(model, spec)
    if kind == "ftp":
        return attack_ftp(
            model, attacker_data, a.epochs, spec,
            seed=derive_seed(trial_seed, "finetune"),
            lr=a.lr, batch_size=cfg.model.batch_size,
        )
    if kind == "npp":
        return attack_npp(model, a.fraction, spec, seed=derive_seed(trial_seed, "prune"))
    if kind == "rescale":
        scales = random_scales(
            spec.n, derive_seed(trial_seed, "scales"), a.scale_low, a.scale_high
        )
        return permute_neurons(attack_rescale(model, layer, scales), spec)
    raise ValueError(f"unknown attack kind {kind!r}")


def stage_attack(cfg: ExperimentConfig, out, kind: str, trials: int | None = None) -> dict:
    """Run seeded attack trials against the marked model and save each suspect."""
    if kind not in ATTACK_KINDS:
        raise ValueError(f"unknown attack kind {kind!r}")
    out = Path(out)
    a = attack_spec_for(cfg, kind)
    trials = a.trials if trials is None else int(trials)
    if trials < 1:
        raise ValueError("need at least one trial")
    with _StageTimer(out, f"attack_{kind}"):
        model = load_model(out / MODEL_FILE)
        layer = cfg.model.watermarked_layer
        n = model.layer(layer).out_dim
        train_ds, held = make_experiment_data(cfg)
        sdir = suspect_dir(out, kind)
        sdir.mkdir(parents=True, exist_ok=True)
        base_acc = accuracy(model, held)
        records = []
        for i in range(trials):
            trial_seed = derive_seed(cfg.seed, "attack", kind, i)
            spec = random_permutation(n, derive_seed(trial_seed, "perm"), layer)
            suspect = _forge_suspect(cfg, kind, model, layer, spec, held, trial_seed)
            save_model(suspect, suspect_file(out, kind, i))
            records.append({
                "trial": i,
                "perm": [int(p) for p in spec.perm],
                "drift": functional_drift(model, suspect, held.inputs),
                "accuracy": accuracy(suspect, held),
            })
        drifts = [r["drift"] for r in records]
        accs = [r["accuracy"] for r in records]
        summary = {
            "kind": kind,
            "layer": layer,
            "trials": trials,
            "spec": dataclasses.asdict(a),
            "base_accuracy": base_acc,
            "mean_drift": float(np.mean(drifts)),
            "max_drift": float(np.max(drifts)),
            "mean_accuracy": float(np.mean(accs)),
            "min_accuracy": float(np.min(accs)),
            "records": records,
        }
        write_json(out / attack_summary_file(kind), summary)
    return summary


def bootstrap_rate_ci(
    outcomes, n_boot: int = 1000, seed: int = 0, alpha: float = 0.05
) -> tuple[float, float]:
    """Percentile bootstrap interval for a Bernoulli rate."""
    x = np.asarray(outcomes, dtype=np.float64)
    if x.size == 0:
        raise ValueError("need at least one outcome")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    means = x[idx].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def bootstrap_ordering(
    lesser, greater, n_boot: int = 1000, seed: int = 0
) -> float:
    """Bootstrap confidence that mean(greater) >= mean(lesser); ties count."""
    a = np.asarray(lesser, dtype=np.float64)
    b = np.asarray(greater, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("need outcomes on both sides")
    rng = np.random.default_rng(seed)
    am = a[rng.integers(0, a.size, size=(n_boot, a.size))].mean(axis=1)
    bm = b[rng.integers(0, b.size, size=(n_boot, b.size))].mean(axis=1)
    return float(np.mean(bm >= am))


def stage_align(cfg: ExperimentConfig, out, kind: str, mode: str) -> dict:
    """Re-identify neurons of every suspect and verify the watermark."""
    if mode not in TRIGGER_MODES:
        raise ValueError(f"unknown trigger mode {mode!r}")
    out = Path(out)
    with _StageTimer(out, f"align_{kind}_{mode}"):
        record = load_record(out / RECORD_FILE)
        cb = load_codebook(out / CODEBOOK_FILE)
        ts = load_trigger_set(out / trigger_file(mode))
        attack = read_json(out / attack_summary_file(kind))
        records = []
        for rec in attack["records"]:
            i = rec["trial"]
            suspect = load_model(suspect_file(out, kind, i))
            plain = verify(suspect, record)
            av = verify_with_alignment(suspect, ts, cb, record, normalize=cfg.normalize)
            true_perm = np.array(rec["perm"], dtype=np.int64)
            entry = {
                "trial": i,
                "no_align_ber": plain.ber,
                "no_align_accepted": plain.accepted,
                "tamper_cause": av.tamper_cause,
                "accepted": av.accepted,
                "ber": av.ov.ber if av.ov is not None else None,
            }
            if av.alignment is not None:
                entry["neuron_accuracy"] = _jsonable(
                    alignment_accuracy(av.alignment, true_perm)
                )
                entry["collisions_resolved"] = av.alignment.collisions_resolved
                entry["dead"] = len(av.alignment.dead)
            else:
                entry["neuron_accuracy"] = None
                entry["collisions_resolved"] = None
                entry["dead"] = None
            records.append(entry)
        accepts = [1.0 if r["accepted"] else 0.0 for r in records]
        plain_accepts = [1.0 if r["no_align_accepted"] else 0.0 for r in records]
        accs = [r["neuron_accuracy"] for r in records if r["neuron_accuracy"] is not None]
        bers = [r["ber"] for r in records if r["ber"] is not None]
        ci = bootstrap_rate_ci(accepts, seed=derive_seed(cfg.seed, "ci", kind, mode))
        summary = {
            "kind": kind,
            "mode": mode,
            "normalize": bool(cfg.normalize),
            "trials": len(records),
            "accept_rate": float(np.mean(accepts)),
            "accept_ci": [ci[0], ci[1]],
            "no_align_accept_rate": float(np.mean(plain_accepts)),
            "mean_neuron_accuracy": _jsonable(np.mean(accs)) if accs else None,
            "min_neuron_accuracy": _jsonable(np.min(accs)) if accs else None,
            "mean_ber": float(np.mean(bers)) if bers else None,
            "records": records,
        }
        write_json(out / align_summary_file(kind, mode), summary)
    return summary


# ---------------------------------------------------------------- report

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "schema_version", "generator", "versions", "config", "artifacts",
        "watermark", "capacity", "codebook", "triggers", "attacks",
        "orderings", "timings",
    ],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "generator": {"type": "string"},
        "versions": {
            "type": "object",
            "required": ["python", "numpy", "scipy"],
            "additionalProperties": {"type": "string"},
        },
        "config": {"type": "object"},
        "artifacts": {
            "type": "object",
            "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        },
        "watermark": {
            "type": "object",
            "required": [
                "bits", "threshold", "ber_after_embed", "accuracy_drop_heldout",
            ],
        },
        "capacity": {
            "type": "object",
            "required": ["configured", "grid"],
            "properties": {
                "grid": {
                    "type": "object",
                    "required": ["n_values", "t_values", "bounds"],
                },
            },
        },
        "codebook": {
            "type": "object",
            "required": ["digest", "n", "t", "k", "min_distance", "guaranteed_radius"],
        },
        "triggers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "scheme", "mean_inter", "mean_intra", "separation_bound",
                    "passes_separation", "dead_neurons", "shuffle_accuracy",
                ],
            },
        },
        "attacks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "kind", "mode", "trials", "accept_rate", "accept_ci",
                    "no_align_accept_rate", "mean_neuron_accuracy",
                ],
            },
        },
        "orderings": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "kind", "accept_rate_t1", "accept_rate_t2", "confidence_t2_ge_t1",
                ],
            },
        },
        "timings": {
            "type": "object",
            "additionalProperties": {"type": "number"},
        },
    },
}


def validate_report(report: dict) -> dict:
    jsonschema.validate(report, REPORT_SCHEMA)
    return report


def _normal_baseline(cfg: ExperimentConfig, out: Path, cb: Codebook, cs: CentroidSet,
                     shuffles: int = 20) -> dict:
    """Transcription scheme: plain heldout samples as probes, frame codes as
    the reference. Measures how identifiable neurons are without synthesis."""
    model = load_model(out / MODEL_FILE)
    layer = cfg.model.watermarked_layer
    basis = normalize_layer(model, layer) if cfg.normalize else model
    _, held = make_experiment_data(cfg)
    probes = held.inputs[: cb.t].astype(np.float32)
    ts = TriggerSet(
        inputs=probes,
        centroid_set=cs,
        codebook_ref=codebook_digest(cb),
        mode=MODE_SINGLE,
        variant_count=0,
        layer_name=layer,
        final_losses=np.zeros(len(probes), dtype=np.float32),
        converged=np.zeros(len(probes), dtype=bool),
    )
    stats = separation_stats(basis, ts)
    reference = read_codes(basis, ts)
    accs = []
    n = model.layer(layer).out_dim
    for s in range(shuffles):
        spec = random_permutation(n, derive_seed(cfg.seed, "baseline", s), layer)
        shuffled = permute_neurons(basis, spec)
        observed = read_codes(shuffled, ts)
        result = align_to_matrix(
            observed.codes, reference.codes, observed.raw_outputs, layer
        )
        accs.append(alignment_accuracy(result, spec.perm))
    bound = cs.min_gap / 10.0
    return {
        "scheme": "normal",
        "mean_inter": _jsonable(stats["mean_inter"]),
        "mean_intra": stats["mean_intra"],
        "separation_bound": bound,
        "passes_separation": bool(stats["mean_intra"] <= bound),
        "dead_neurons": len(stats["dead_neurons"]),
        "shuffle_accuracy": _jsonable(np.nanmean(accs)),
        "shuffles": shuffles,
    }


def _collect_timings(out: Path) -> dict:
    timings = {}
    for path in sorted(out.glob("timings_*.json")):
        entry = read_json(path)
        timings[entry["stage"]] = float(entry["seconds"])
    return timings


def _artifact_hashes(out: Path) -> dict:
    names = [MODEL_BASE_FILE, MODEL_FILE, RECORD_FILE, CODEBOOK_FILE]
    names += [trigger_file(m) for m in TRIGGER_MODES]
    hashes = {}
    for name in names:
        path = out / name
        if path.exists():
            hashes[name] = file_sha256(path)
    for kind in ATTACK_KINDS:
        sdir = suspect_dir(out, kind)
        if sdir.is_dir():
            for path in sorted(sdir.glob("trial_*.naf")):
                hashes[str(path.relative_to(out))] = file_sha256(path)
    return hashes


def stage_report(cfg: ExperimentConfig, out) -> dict:
    """Aggregate all stage summaries into one validated report plus CSVs."""
    from . import __version__

    out = Path(out)
    with _StageTimer(out, "report"):
        train_summary = read_json(out / TRAIN_SUMMARY)
        encode_summary = read_json(out / ENCODE_SUMMARY)
        cb = load_codebook(out / CODEBOOK_FILE)
        cs = load_centroids(out)

        triggers = [_normal_baseline(cfg, out, cb, cs)]
        for mode in TRIGGER_MODES:
            path = out / forge_summary_file(mode)
            if not path.exists():
                continue
            forge = read_json(path)
            row = {
                "scheme": mode,
                "mean_inter": forge["separation"]["mean_inter"],
                "mean_intra": forge["separation"]["mean_intra"],
                "separation_bound": forge["separation_bound"],
                "passes_separation": forge["passes_separation"],
                "dead_neurons": len(forge["separation"]["dead_neurons"]),
                "shuffle_accuracy": None,
                "converged": forge["converged"],
                "t": forge["t"],
                "residual_symbol_errors": forge["residual_symbol_errors"],
            }
            np_path = out / align_summary_file("np", mode)
            if np_path.exists():
                row["shuffle_accuracy"] = read_json(np_path)["mean_neuron_accuracy"]
            triggers.append(row)

        attacks = []
        accept_by = {}
        for kind in ATTACK_KINDS:
            for mode in TRIGGER_MODES:
                path = out / align_summary_file(kind, mode)
                if not path.exists():
                    continue
                s = read_json(path)
                attack_meta = read_json(out / attack_summary_file(kind))
                attacks.append({
                    "kind": kind,
                    "mode": mode,
                    "trials": s["trials"],
                    "accept_rate": s["accept_rate"],
                    "accept_ci": s["accept_ci"],
                    "no_align_accept_rate": s["no_align_accept_rate"],
                    "mean_neuron_accuracy": s["mean_neuron_accuracy"],
                    "mean_ber": s["mean_ber"],
                    "mean_drift": attack_meta["mean_drift"],
                    "mean_task_accuracy": attack_meta["mean_accuracy"],
                })
                accept_by[(kind, mode)] = [
                    1.0 if r["accepted"] else 0.0 for r in s["records"]
                ]

        orderings = []
        for kind in ("ftp", "npp"):
            t1 = accept_by.get((kind, MODE_SINGLE))
            t2 = accept_by.get((kind, MODE_ENSEMBLE))
            if t1 is None or t2 is None:
                continue
            orderings.append({
                "kind": kind,
                "accept_rate_t1": float(np.mean(t1)),
                "accept_rate_t2": float(np.mean(t2)),
                "confidence_t2_ge_t1": bootstrap_ordering(
                    t1, t2, seed=derive_seed(cfg.seed, "ordering", kind)
                ),
            })

        import scipy

        report = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "generator": f"neuralign {__version__}",
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "config": config_to_dict(cfg),
            "artifacts": _artifact_hashes(out),
            "watermark": train_summary,
            "capacity": encode_summary["capacity"],
            "codebook": encode_summary["codebook"],
            "triggers": triggers,
            "attacks": attacks,
            "orderings": orderings,
            "timings": _collect_timings(out),
        }
        validate_report(report)
        write_json(out / REPORT_FILE, report)
        _write_csvs(out, report)
    return report


def _write_csvs(out: Path, report: dict) -> None:
    grid = report["capacity"]["grid"]
    with (out / "capacity_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"n{n}" for n in grid["n_values"]])
        for j, t in enumerate(grid["t_values"]):
            w.writerow([t] + [grid["bounds"][i][j] for i in range(len(grid["n_values"]))])
    with (out / "trigger_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([
            "scheme", "mean_inter", "mean_intra", "separation_bound",
            "passes_separation", "dead_neurons", "shuffle_accuracy",
        ])
        for row in report["triggers"]:
            w.writerow([
                row["scheme"], row["mean_inter"], row["mean_intra"],
                row["separation_bound"], row["passes_separation"],
                row["dead_neurons"], row["shuffle_accuracy"],
            ])
    with (out / "attack_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([
            "kind", "mode", "trials", "no_align_accept_rate", "accept_rate",
            "accept_ci_low", "accept_ci_high", "mean_neuron_accuracy",
        ])
        for row in report["attacks"]:
            w.writerow([
                row["kind"], row["mode"], row["trials"],
                row["no_align_accept_rate"], row["accept_rate"],
                row["accept_ci"][0], row["accept_ci"][1],
                row["mean_neuron_accuracy"],
            ])


def run_all(cfg: ExperimentConfig, out, trials: int | None = None) -> dict:
    """Every stage in order: both trigger schemes, all configured attacks."""
    out = Path(out)
    stage_train(cfg, out)
    stage_encode(cfg, out)
    for mode in TRIGGER_MODES:
        stage_forge(cfg, out, mode)
    kinds = [a.kind for a in cfg.attacks]
    for kind in kinds:
        stage_attack(cfg, out, kind, trials=trials)
    for kind in kinds:
        for mode in TRIGGER_MODES:
            stage_align(cfg, out, kind, mode)
    return stage_report(cfg, out)
