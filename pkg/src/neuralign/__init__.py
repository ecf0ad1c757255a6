"""Neuron alignment defense for white-box neural network watermarks.

The owner encodes each neuron of the watermarked layer as a codeword read off
quantized activations on synthesized trigger inputs. An adversary may permute,
fine-tune, prune, or rescale neurons without changing the network function;
re-reading the codes on a suspect model and solving an assignment problem
recovers the original neuron order so the watermark verifies again.
"""

from .align import (
    AlignedVerification,
    AlignmentResult,
    ObservedCodeMatrix,
    align,
    align_to_matrix,
    alignment_accuracy,
    apply_alignment,
    normalize_layer,
    read_codes,
    verify_with_alignment,
)
from .attacks import (
    AttackReport,
    PermutationSpec,
    attack_ftp,
    attack_npp,
    attack_rescale,
    functional_drift,
    inverse_permutation,
    permute_neurons,
    random_permutation,
    random_scales,
)
from .coding import (
    CapacityError,
    CentroidSet,
    Codebook,
    codebook_digest,
    compute_centroids,
    decode_codeword,
    default_codebook,
    generate_codebook,
    load_codebook,
    max_correctable,
    min_pairwise_distance,
    nearest_centroid,
    save_codebook,
)
from .config import (
    ATTACK_KINDS,
    AttackSpec,
    CodingSpec,
    ConfigError,
    DataSpec,
    ExperimentConfig,
    ModelSpec,
    TriggerSpec,
    WatermarkSpec,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .data import make_blobs, split_dataset
from .network import (
    Dataset,
    DenseLayer,
    Network,
    ShapeError,
    TrainConfig,
    TrainingDivergenceError,
    UnknownLayerError,
    accuracy,
    cross_entropy,
    forward,
    init_network,
    train,
)
from .pipeline import (
    bootstrap_ordering,
    bootstrap_rate_ci,
    capacity_grid,
    derive_seed,
    format_capacity_grid,
    make_experiment_data,
    run_all,
    stage_align,
    stage_attack,
    stage_encode,
    stage_forge,
    stage_report,
    stage_train,
    validate_report,
)
from .serialize import (
    FormatError,
    IntegrityError,
    file_sha256,
    load_model,
    model_digest,
    save_model,
)
from .triggers import (
    OptConfig,
    OptimizationError,
    TriggerSet,
    VariantEnsemble,
    cluster_quality,
    dead_neurons,
    layer_outputs,
    load_trigger_set,
    loss_budget,
    make_variant_ensemble,
    save_trigger_set,
    separation_stats,
    synthesize_trigger,
    synthesize_trigger_set,
)
from .watermark import (
    EmbedConfig,
    EmbedFailure,
    OVResult,
    TamperError,
    WatermarkRecord,
    embed,
    extract_bits,
    load_record,
    make_record,
    save_record,
    verify,
)

__version__ = "0.1.0"
