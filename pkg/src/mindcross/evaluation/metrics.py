"""N-way top-K accuracy over a centroid classifier in embedding space."""

import itertools
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from ..utilities.constants import CLASSIFIER_TEMPERATURE
from ..utilities.errors import ConfigError, DimensionError
from ..utilities.logging import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class CentroidClassifier:
    """Softmax over cosine similarity to l2-normalized class centroids."""
    centroids: np.ndarray
    temperature: float = CLASSIFIER_TEMPERATURE

    @property
    def n_classes(self) -> int:
        return int(self.centroids.shape[0])

    def __call__(self, pred: np.ndarray) -> np.ndarray:
        pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
        if pred.shape[1] != self.centroids.shape[1]:
            raise DimensionError(f"prediction width {pred.shape[1]} vs centroid width "
                                 f"{self.centroids.shape[1]}")
        norms = np.linalg.norm(pred, axis=1, keepdims=True)
        unit = pred / np.maximum(norms, np.finfo(np.float64).tiny)
        logits = unit @ self.centroids.T / self.temperature
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)


def centroid_classifier(embeddings_by_class: Mapping[int, np.ndarray],
                        temperature: float = CLASSIFIER_TEMPERATURE) -> CentroidClassifier:
    """Builds the classifier from embeddings of classes 0..C-1."""
    n_classes = max(embeddings_by_class) + 1 if embeddings_by_class else 0
    centroids = []
    for c in range(n_classes):
        rows = np.atleast_2d(np.asarray(embeddings_by_class.get(c, np.empty((0, 0)))))
        if rows.size == 0:
            logger.error(f"Class {c} has no embeddings")
            raise ConfigError(f"class {c} has no embeddings to form a centroid")
        centroid = rows.mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm == 0.0:
            raise ConfigError(f"class {c} has a zero centroid")
        centroids.append(centroid / norm)
    if n_classes < 2:
        raise ConfigError("centroid classifier needs at least two classes")
    return CentroidClassifier(np.stack(centroids), temperature)


def _check_protocol(n_classes: int, n_way: int, k_top: int) -> None:
    if n_way > n_classes:
        raise ConfigError(f"n_way {n_way} exceeds the {n_classes} available classes")
    if n_way < 2:
        raise ConfigError(f"n_way must be at least 2, got {n_way}")
    if not 1 <= k_top < n_way:
        raise ConfigError(f"k_top must lie in [1, n_way), got {k_top} for n_way {n_way}")


def _ranks_within_top(probs: np.ndarray, gt: int, distractors: np.ndarray,
                      k_top: int) -> np.ndarray:
    """Whether gt stays in the top k_top; a distractor outranks gt on higher probability,
    or on equal probability with a lower class index."""
    p_gt = probs[gt]
    p_d = probs[distractors]
    beats = (p_d > p_gt) | ((p_d == p_gt) & (distractors < gt))
    return np.asarray(beats.sum(axis=-1) < k_top)


def nway_topk(classifier: CentroidClassifier, pred: np.ndarray, gt_class: np.ndarray | int,
              n_way: int, k_top: int, trials: int, rng: np.random.Generator) -> float:
    """
    N-way top-K accuracy.

    For every prediction and each of `trials` repetitions, n_way - 1 distractor classes
    are drawn without replacement from the classes other than the ground truth. A
    repetition succeeds when the ground truth ranks within the top k_top of the
    restricted class set.
    """
    probs = classifier(pred)
    gt = np.atleast_1d(np.asarray(gt_class, dtype=np.int64))
    if gt.shape[0] != probs.shape[0]:
        raise DimensionError(f"{gt.shape[0]} labels for {probs.shape[0]} predictions")
    n_classes = probs.shape[1]
    _check_protocol(n_classes, n_way, k_top)
    if trials < 1:
        raise ConfigError(f"trials must be positive, got {trials}")

    hits = 0
    for row, label in zip(probs, gt):
        keys = rng.random((trials, n_classes))
        keys[:, label] = np.inf
        distractors = np.argsort(keys, axis=1)[:, :n_way - 1]
        hits += int(_ranks_within_top(row, int(label), distractors, k_top).sum())
    return hits / (trials * gt.shape[0])


def nway_topk_exact(probs: np.ndarray, gt_class: np.ndarray | int, n_way: int, k_top: int) -> float:
    """Success probability of `nway_topk` by enumerating every distractor set."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    gt = np.atleast_1d(np.asarray(gt_class, dtype=np.int64))
    n_classes = probs.shape[1]
    _check_protocol(n_classes, n_way, k_top)
    total = 0.0
    for row, label in zip(probs, gt):
        others = [c for c in range(n_classes) if c != label]
        combos = np.array(list(itertools.combinations(others, n_way - 1)), dtype=np.int64)
        total += float(_ranks_within_top(row, int(label), combos, k_top).mean())
    return total / gt.shape[0]


def retrieval_accuracy(classifier: CentroidClassifier, pred: np.ndarray,
                       gt_class: np.ndarray) -> float:
    """Fraction of predictions whose most probable class is the ground truth."""
    probs = classifier(pred)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(gt_class)))
