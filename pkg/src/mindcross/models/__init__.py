from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .layers import (
    DomainClassifier,
    Encoder,
    LayerNorm,
    Linear,
    Module,
    Reconstructer,
    ResFuse,
    ResidualBlock,
    SharedDecoder,
)
from .mindcross import (
    ForwardOutputs,
    MindCrossModel,
    ParameterGroup,
    SubjectStats,
    add_new_subject,
    branch_predict,
    build,
    encode,
    fit_subject_stats,
    forward_train,
    parameter_count,
    set_trainable,
    subject_prefixes,
)

__all__ = [
    "DomainClassifier",
    "Encoder",
    "ForwardOutputs",
    "LayerNorm",
    "Linear",
    "LoadedCheckpoint",
    "MindCrossModel",
    "Module",
    "ParameterGroup",
    "Reconstructer",
    "ResFuse",
    "ResidualBlock",
    "SharedDecoder",
    "SubjectStats",
    "add_new_subject",
    "branch_predict",
    "build",
    "encode",
    "fit_subject_stats",
    "forward_train",
    "load_checkpoint",
    "parameter_count",
    "save_checkpoint",
    "set_trainable",
    "subject_prefixes",
]
