"""Exact weight fusion for skipless transformers.

Serial blocks can drop their Q (or K, or V) projection by folding it into
the previous block's output projection; parallel blocks can drop Q via a
change of basis on the inter-block activations. Both transforms preserve
the model function exactly, so fused checkpoints verify against their
originals to floating-point accuracy.
"""

from .analysis import (
    WeightCountReport,
    count_stored_weights,
    count_weights,
    machine_lines,
    render_table,
    savings_and_speedup,
)
from .checkpoint import load, save, tensor_entries
from .config import (
    Activation,
    FfnKind,
    ModelConfig,
    PRESETS,
    Positional,
    ReducedForm,
    Topology,
    compute_e,
    config_from_lines,
    config_to_lines,
    parse_config,
)
from .errors import (
    ApplicabilityError,
    BadMagic,
    CheckpointError,
    ConfigError,
    ConfigMismatch,
    CorruptHeader,
    DimensionMismatch,
    InconsistentForm,
    InvalidConfig,
    InvalidModel,
    InvalidValue,
    IoFailure,
    MissingKey,
    NonFinite,
    NonSquare,
    ShapeMismatch,
    SingularMatrix,
    SkipfuseError,
    TokenOutOfRange,
    TruncatedPayload,
    UnknownKey,
)
from .fusion import (
    EquivalenceReport,
    FusionVariant,
    fold_k,
    fold_q,
    fold_q_parallel,
    fold_v,
    fuse_model,
    merge_pm,
    run_equivalence,
)
from .linalg import (
    condition_1norm,
    invert,
    matmul,
    norm_1,
    random_gaussian,
)
from .model import (
    BlockWeights,
    ModelWeights,
    attention_forward,
    block_forward,
    block_layout,
    copy_model,
    ffn_forward,
    forward_trace,
    model_forward,
    random_model,
    validate_model,
    with_form,
)

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "ApplicabilityError",
    "BadMagic",
    "BlockWeights",
    "CheckpointError",
    "ConfigError",
    "ConfigMismatch",
    "CorruptHeader",
    "DimensionMismatch",
    "EquivalenceReport",
    "FfnKind",
    "FusionVariant",
    "InconsistentForm",
    "InvalidConfig",
    "InvalidModel",
    "InvalidValue",
    "IoFailure",
    "MissingKey",
    "ModelConfig",
    "ModelWeights",
    "NonFinite",
    "NonSquare",
    "PRESETS",
    "Positional",
    "ReducedForm",
    "ShapeMismatch",
    "SingularMatrix",
    "SkipfuseError",
    "TokenOutOfRange",
    "Topology",
    "TruncatedPayload",
    "UnknownKey",
    "WeightCountReport",
    "attention_forward",
    "block_forward",
    "block_layout",
    "compute_e",
    "condition_1norm",
    "config_from_lines",
    "config_to_lines",
    "copy_model",
    "count_stored_weights",
    "count_weights",
    "ffn_forward",
    "fold_k",
    "fold_q",
    "fold_q_parallel",
    "fold_v",
    "forward_trace",
    "fuse_model",
    "invert",
    "load",
    "machine_lines",
    "matmul",
    "merge_pm",
    "model_forward",
    "norm_1",
    "parse_config",
    "random_gaussian",
    "random_model",
    "render_table",
    "run_equivalence",
    "save",
    "savings_and_speedup",
    "tensor_entries",
    "validate_model",
    "with_form",
    "__version__",
]
