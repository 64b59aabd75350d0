"""Test phase: similarity to training subjects and Top-K collaborative prediction."""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..config import RunConfig
from ..engine import no_grad
from ..models.mindcross import MindCrossModel, branch_predict, encode
from ..utilities.constants import NEW_SUBJECT_KEY
from ..utilities.errors import ConfigError, DimensionError
from ..utilities.logging import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class SimilarityVector:
    """Probability of a new subject resembling each training subject."""
    subjects: tuple[str, ...]
    p: np.ndarray

    @classmethod
    def from_logits(cls, subjects: Sequence[str], mean_logits: np.ndarray) -> "SimilarityVector":
        shifted = np.exp(mean_logits - np.max(mean_logits))
        return cls(tuple(subjects), shifted / shifted.sum())

    def top(self, k: int) -> list[str]:
        return [self.subjects[i] for i in select_topk(self.p, k)]


def similarity(model: MindCrossModel, x_new: Any,
               subject: str = NEW_SUBJECT_KEY) -> SimilarityVector:
    """Softmax over training subjects of the batch-mean dc logits of E_subject(x_new)."""
    with no_grad():
        s, _ = encode(model, x_new, subject)
        logits = model.dc_classifier(s).data
    result = SimilarityVector.from_logits(model.config.subjects, logits.mean(axis=0))
    logger.debug(f"Similarity of {subject}: {dict(zip(result.subjects, result.p.round(4)))}")
    return result


def nearest_subject(model: MindCrossModel, x_new: Any) -> str:
    """
    Training subject whose recorded input mean lies closest to the mean of `x_new`.

    Distances are mean squared differences in each candidate's own standard units;
    ties go to the earlier subject.
    """
    x = np.asarray(x_new, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.in_dim or len(x) == 0:
        raise DimensionError(f"need a non-empty (B, {model.config.in_dim}) batch, got {x.shape}")
    candidates = [s for s in model.config.subjects if s in model.subject_stats]
    if not candidates:
        logger.error("No training subject has input statistics; train the model first")
        raise ConfigError("no input statistics recorded for any training subject")
    centre = x.mean(axis=0)
    distances = {}
    for subject in candidates:
        stats = model.subject_stats[subject]
        distances[subject] = float(np.mean(((centre - stats.input_mean) / stats.input_std) ** 2))
    best = min(candidates, key=distances.__getitem__)
    logger.info(f"Nearest training subject is {best!r} "
                f"({', '.join(f'{s}={d:.3g}' for s, d in distances.items())})")
    return best


def select_topk(p: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries; ties go to the lower index."""
    if not 1 <= k <= p.shape[0]:
        raise ConfigError(f"K must lie in [1, {p.shape[0]}], got {k}")
    return np.argsort(-p, kind="stable")[:k]


def combine_topk(p: np.ndarray, selected: np.ndarray, predictions: Sequence[np.ndarray],
                 renormalize: bool = False) -> np.ndarray:
    """sum_k p_k e_k over the selected subjects."""
    if len(predictions) != len(selected):
        raise DimensionError(f"{len(predictions)} predictions for {len(selected)} subjects")
    weights = p[selected]
    if renormalize:
        weights = weights / weights.sum()
    combined = np.zeros_like(predictions[0])
    for w, e_k in zip(weights, predictions):
        combined += w * e_k
    return combined


def topk_collaborate(model: MindCrossModel, x_new: Any, p: SimilarityVector, k: int,
                     renormalize: bool = False, subject: str = NEW_SUBJECT_KEY) -> np.ndarray:
    """Routes `subject`'s x_new through the K most similar subjects' branches and mixes them."""
    selected = select_topk(p.p, k)
    with no_grad():
        predictions = [branch_predict(model, x_new, subject, via=p.subjects[i]).data
                       for i in selected]
    return combine_topk(p.p, selected, predictions, renormalize)


def predict(model: MindCrossModel, x_new: Any, config: RunConfig,
            subject: str = NEW_SUBJECT_KEY, p: SimilarityVector | None = None) -> np.ndarray:
    """
    e_t + lambda * e_c for a calibrated subject, or the subject's own branch otherwise.

    With lambda = 0 the result is exactly the subject's branch prediction.
    """
    with no_grad():
        e_t = branch_predict(model, x_new, subject).data
    if subject not in model.new_subjects or config.lambda_collab == 0.0:
        return e_t
    if p is None:
        cached = model.similarity_cache.get(subject)
        p = (SimilarityVector(tuple(model.config.subjects), cached) if cached is not None
             else similarity(model, x_new, subject))
    e_c = topk_collaborate(model, x_new, p, config.top_k, config.renormalize_topk, subject)
    return e_t + config.lambda_collab * e_c
