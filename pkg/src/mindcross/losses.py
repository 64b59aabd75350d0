"""
Loss terms of the training and calibration objectives.

Every function maps engine tensors to a scalar `Tensor` so the result can be
passed straight to `backward`.
"""

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from .config import LossWeights
from .engine import Tensor
from .engine import functional as F
from .models.layers import Linear
from .utilities.errors import ConfigError, DimensionError, LabelError, NumericalError
from .utilities.logging import get_logger

logger = get_logger(__name__)

_LP_EPS = 1e-30


def _check_shapes(op: str, *tensors: Tensor) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"{op}: shape mismatch {[t.shape for t in tensors]}")


def cross_entropy(logits: Tensor, labels: Any, reduction: Literal["sum", "mean"] = "sum") -> Tensor:
    """-sum_j y_j log softmax(logits)_j against integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, n_classes = logits.shape
    if labels.shape[0] != batch:
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {batch} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        logger.error(f"Labels {labels.tolist()} outside [0, {n_classes})")
        raise LabelError(f"label out of range [0, {n_classes})")
    one_hot = np.zeros((batch, n_classes))
    one_hot[np.arange(batch), labels] = 1.0
    total = F.neg(F.sum_(F.mul(F.log_softmax(logits), one_hot)))
    return F.scale(total, 1.0 / batch) if reduction == "mean" else total


def reconstruction_loss(x_hat_s: Tensor, x_hat_r: Tensor, x: Any) -> Tensor:
    """Batch mean of ||x_hat_s - x||^2 / m + ||x_hat_r - x||^2 / m."""
    x = F.as_tensor(x)
    _check_shapes("reconstruction_loss", x_hat_s, x_hat_r, x)
    return F.add(F.mean(F.square(F.sub(x_hat_s, x))), F.mean(F.square(F.sub(x_hat_r, x))))


def domain_classification_loss(y_dc: Tensor, labels: Any,
                               reduction: Literal["sum", "mean"] = "sum") -> Tensor:
    return cross_entropy(y_dc, labels, reduction)


def domain_alignment_loss_grl(y_da: Tensor, labels: Any,
                              reduction: Literal["sum", "mean"] = "sum") -> Tensor:
    """Plain cross-entropy; the adversarial sign comes from grad_reverse upstream of y_da."""
    return cross_entropy(y_da, labels, reduction)


def _subject_means(features_by_subject: Mapping[str, Tensor]) -> list[Tensor]:
    means = []
    for subject, r in features_by_subject.items():
        if r.shape[0] == 0:
            logger.debug(f"Subject {subject} has no samples in this batch; skipping its pairs")
            continue
        means.append(F.mean(r, axis=0, keepdims=True))
    return means


def mean_pairwise_kl(logits: Tensor) -> Tensor:
    """(1/n^2) sum over ordered row pairs (i, k) of KL(softmax(l_i) || softmax(l_k))."""
    n = logits.shape[0]
    log_p = F.log_softmax(logits)
    p = F.exp(log_p)
    total: Tensor | None = None
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            row_i = F.mul(log_p, _row_mask(n, i))
            row_k = F.mul(log_p, _row_mask(n, k))
            # KL(p_i || p_k) = sum_j p_ij (log p_ij - log p_kj)
            diff = F.sub(F.sum_(row_i, axis=0), F.sum_(row_k, axis=0))
            p_i = F.sum_(F.mul(p, _row_mask(n, i)), axis=0)
            term = F.sum_(F.mul(p_i, diff))
            total = term if total is None else F.add(total, term)
    if total is None:
        return F.scale(F.sum_(logits), 0.0)
    return F.scale(total, 1.0 / (n * n))


def _row_mask(n: int, i: int) -> np.ndarray:
    mask = np.zeros((n, 1))
    mask[i, 0] = 1.0
    return mask


def domain_alignment_loss_kl(features_by_subject: Mapping[str, Tensor],
                             projection: Linear) -> Tensor:
    """Mean pairwise KL between softmax(projection(mean shared feature)) of each subject."""
    means = _subject_means(features_by_subject)
    if len(means) < 2:
        raise ConfigError("KL alignment needs at least two subjects with samples in the batch")
    return mean_pairwise_kl(projection(F.concat_rows(means)))


def domain_alignment_loss_lp(features_by_subject: Mapping[str, Tensor], p: int = 2) -> Tensor:
    """(1/n^2) sum over ordered subject pairs of ||mean_i - mean_k||_p."""
    if p not in (1, 2):
        raise ConfigError(f"Lp alignment supports p in {{1, 2}}, got {p}")
    means = _subject_means(features_by_subject)
    n = len(means)
    if n < 2:
        raise ConfigError("Lp alignment needs at least two subjects with samples in the batch")
    total: Tensor | None = None
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            delta = F.sub(means[i], means[k])
            if p == 1:
                dist = F.sum_(F.abs_(delta))
            else:
                dist = F.sqrt(F.add(F.sum_(F.square(delta)), _LP_EPS))
            total = dist if total is None else F.add(total, dist)
    assert total is not None
    return F.scale(total, 1.0 / (n * n))


def difference_loss(s: Tensor, r: Tensor) -> Tensor:
    """Batch mean of ||s (.) r||^2."""
    prod = F.hadamard(s, r)
    return F.scale(F.sum_(F.square(prod)), 1.0 / s.shape[0])


def _unit_rows(x: Tensor, name: str) -> Tensor:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms == 0.0).tolist()
        logger.error(f"softclip_loss: zero-norm rows {rows} in {name}")
        raise NumericalError(f"cannot normalize zero-norm rows {rows} of {name}")
    return F.l2_normalize(x)


def softclip_loss(pred: Tensor, target: Any, tau: float, normalize: bool = True) -> Tensor:
    """
    Soft contrastive loss with targets softmax(e e^T / tau).

    Rows are l2-normalized first when `normalize` is set; the double sum is divided
    by the batch size.
    """
    target = F.as_tensor(target)
    _check_shapes("softclip_loss", pred, target)
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if pred.shape[0] < 1:
        raise DimensionError("softclip_loss needs at least one row")
    if normalize:
        pred = _unit_rows(pred, "prediction")
        e = _unit_rows(Tensor(target.data), "target").data
    else:
        e = target.data

    sims = e @ e.T / tau
    shifted = np.exp(sims - sims.max(axis=1, keepdims=True))
    soft_targets = shifted / shifted.sum(axis=1, keepdims=True)

    log_probs = F.log_softmax(F.scale(F.matmul(pred, Tensor(e.T)), 1.0 / tau))
    return F.scale(F.neg(F.sum_(F.mul(log_probs, soft_targets))), 1.0 / pred.shape[0])


def alignment_loss(pred: Tensor, target: Any, tau: float, normalize: bool = True) -> Tensor:
    """softclip_loss plus the batch mean of ||e - e_hat||^2."""
    target = F.as_tensor(target)
    mse = F.scale(F.sum_(F.square(F.sub(target, pred))), 1.0 / pred.shape[0])
    return F.add(softclip_loss(pred, target, tau, normalize), mse)


@dataclass
class TrainLossComponents:
    """Terms of the training objective; a term left as None is excluded."""
    align: Tensor
    rec: Tensor | None = None
    dc: Tensor | None = None
    da: Tensor | None = None
    diff: Tensor | None = None

    def values(self) -> dict[str, float]:
        return {name: term.item() for name, term in self._terms()}

    def _terms(self) -> list[tuple[str, Tensor]]:
        pairs = [("align", self.align), ("rec", self.rec), ("dc", self.dc),
                 ("da", self.da), ("diff", self.diff)]
        return [(name, term) for name, term in pairs if term is not None]


def _weighted_sum(base: Tensor, terms: list[tuple[Tensor | None, float]]) -> Tensor:
    total = base
    for term, weight in terms:
        if term is not None:
            total = F.add(total, F.scale(term, weight))
    return total


def total_train_loss(components: TrainLossComponents, w: LossWeights) -> Tensor:
    """L_align + alpha L_rec + beta L_dc + gamma L_da + zeta L_diff."""
    return _weighted_sum(components.align, [
        (components.rec, w.alpha),
        (components.dc, w.beta),
        (components.da, w.gamma),
        (components.diff, w.zeta),
    ])


def total_calibration_loss(align: Tensor, rec: Tensor | None, diff: Tensor | None,
                           w: LossWeights) -> Tensor:
    """L_align + alpha_c L_rec(new subject) + beta_c L_diff."""
    return _weighted_sum(align, [(rec, w.alpha_c), (diff, w.beta_c)])
