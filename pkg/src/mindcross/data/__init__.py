from .container import DatasetContainer, load, read_container, save, write_container
from .features import DifferentialEntropy, de_feature, differential_entropy, pool_features
from .records import (
    Dataset,
    SubjectArrays,
    TrialRecord,
    container_to_records,
    export_jsonl,
    records_to_container,
    stack_records,
)
from .split import split, subsample_stratified
from .synthetic import generate_synthetic, generate_synthetic_async

__all__ = [
    "Dataset",
    "DatasetContainer",
    "DifferentialEntropy",
    "SubjectArrays",
    "TrialRecord",
    "container_to_records",
    "de_feature",
    "differential_entropy",
    "export_jsonl",
    "generate_synthetic",
    "generate_synthetic_async",
    "load",
    "pool_features",
    "read_container",
    "records_to_container",
    "save",
    "split",
    "stack_records",
    "subsample_stratified",
    "write_container",
]
