from .history import EpochRecord, TrainHistory, rng_digest
from .inference import (
    SimilarityVector,
    combine_topk,
    nearest_subject,
    predict,
    select_topk,
    similarity,
    topk_collaborate,
)
from .optim import AdamState, adam_step
from .phases import (
    add_calibration_branch,
    calibrate,
    resolve_batch_mode,
    train,
    train_from_scratch,
)

__all__ = [
    "AdamState",
    "EpochRecord",
    "SimilarityVector",
    "TrainHistory",
    "adam_step",
    "add_calibration_branch",
    "calibrate",
    "combine_topk",
    "nearest_subject",
    "predict",
    "resolve_batch_mode",
    "rng_digest",
    "select_topk",
    "similarity",
    "topk_collaborate",
    "train",
    "train_from_scratch",
]
