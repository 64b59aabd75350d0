"""Gradient self-check of every loss on a 4-unit model."""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .config import LossWeights, ModelConfig, settings
from .engine import Tape, Tensor, backward, finite_difference_check, zero_grad
from .engine import functional as F
from .losses import (
    TrainLossComponents,
    alignment_loss,
    difference_loss,
    domain_alignment_loss_grl,
    domain_alignment_loss_kl,
    domain_alignment_loss_lp,
    domain_classification_loss,
    reconstruction_loss,
    softclip_loss,
    total_calibration_loss,
    total_train_loss,
)
from .models.mindcross import (
    ForwardOutputs,
    MindCrossModel,
    add_new_subject,
    build,
    fit_subject_stats,
    forward_train,
    subject_prefixes,
)
from .utilities.constants import NEW_SUBJECT_KEY
from .utilities.logging import get_logger

logger = get_logger(__name__)

GRL_TOLERANCE = 1e-10
_SUBJECTS = ["a", "b"]
_IN_DIM, _HIDDEN, _EMBED, _BATCH = 5, 4, 3, 3


@dataclass(frozen=True)
class GradcheckRow:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _fixture(seed: int) -> tuple[MindCrossModel, dict[str, tuple[np.ndarray, np.ndarray]]]:
    config = ModelConfig(in_dim=_IN_DIM, hidden=_HIDDEN, embed_dim=_EMBED, subjects=_SUBJECTS,
                         dropout_p=0.0, seed=seed)
    model = build(config)
    add_new_subject(model, NEW_SUBJECT_KEY)
    rng = np.random.default_rng(seed)
    batches = {}
    for subject in [*_SUBJECTS, NEW_SUBJECT_KEY]:
        e = rng.standard_normal((_BATCH, _EMBED))
        batches[subject] = (rng.standard_normal((_BATCH, _IN_DIM)),
                            e / np.linalg.norm(e, axis=1, keepdims=True))
        fit_subject_stats(model, subject, 1.5 * rng.standard_normal((2 * _BATCH, _IN_DIM)) + 0.3)
    return model, batches


def _loss_closures(model: MindCrossModel, batches: dict[str, tuple[np.ndarray, np.ndarray]],
                   w: LossWeights) -> dict[str, Callable[[], Tensor]]:
    x, e = batches[_SUBJECTS[0]]
    labels = np.zeros(_BATCH, dtype=np.int64)

    def out(subject: str = _SUBJECTS[0], batch_stats: bool = False) -> ForwardOutputs:
        return forward_train(model, batches[subject][0], subject, reverse_gradients=False,
                             batch_stats=batch_stats)

    def shared_by_subject() -> dict[str, Tensor]:
        return {s: out(s).r for s in _SUBJECTS}

    def total_train() -> Tensor:
        outs = [out(s, batch_stats=True) for s in _SUBJECTS]
        cat = F.concat_rows
        xs = np.concatenate([batches[s][0] for s in _SUBJECTS])
        es = np.concatenate([batches[s][1] for s in _SUBJECTS])
        domain = np.repeat(np.arange(len(_SUBJECTS)), _BATCH)
        y_dc = [o.y_dc for o in outs if o.y_dc is not None]
        y_da = [o.y_da for o in outs if o.y_da is not None]
        components = TrainLossComponents(
            align=alignment_loss(cat([o.e_hat for o in outs]), es, w.tau),
            rec=reconstruction_loss(cat([o.x_hat_s for o in outs]),
                                    cat([o.x_hat_r for o in outs]), xs),
            dc=domain_classification_loss(cat(y_dc), domain),
            da=domain_alignment_loss_grl(cat(y_da), domain),
            diff=difference_loss(cat([o.s for o in outs]), cat([o.r for o in outs])),
        )
        return total_train_loss(components, w)

    def total_calibration() -> Tensor:
        x_new, e_new = batches[NEW_SUBJECT_KEY]
        o = forward_train(model, x_new, NEW_SUBJECT_KEY, with_domain_heads=False)
        return total_calibration_loss(alignment_loss(o.e_hat, e_new, w.tau),
                                      reconstruction_loss(o.x_hat_s, o.x_hat_r, x_new),
                                      difference_loss(o.s, o.r), w)

    return {
        "reconstruction": lambda: reconstruction_loss(out().x_hat_s, out().x_hat_r, x),
        "domain_classification": lambda: domain_classification_loss(out().y_dc, labels),
        "domain_alignment_grl": lambda: domain_alignment_loss_grl(out().y_da, labels),
        "domain_alignment_kl": lambda: domain_alignment_loss_kl(shared_by_subject(),
                                                                model.da_projection),
        "domain_alignment_lp1": lambda: domain_alignment_loss_lp(shared_by_subject(), 1),
        "domain_alignment_lp2": lambda: domain_alignment_loss_lp(shared_by_subject(), 2),
        "difference": lambda: difference_loss(out().s, out().r),
        "softclip": lambda: softclip_loss(out().e_hat, e, w.tau),
        "alignment": lambda: alignment_loss(out().e_hat, e, w.tau),
        "total_train": total_train,
        "total_calibration": total_calibration,
    }


def grl_negation_error(model: MindCrossModel, x: np.ndarray, labels: np.ndarray,
                       subject: str = _SUBJECTS[0]) -> float:
    """
    Max |g_reversed + scale * g_plain| over the shared-encoder parameters, where the
    gradients are of the da cross-entropy with and without the reversal node.

    Returns inf when the two forward values differ at all.
    """
    shared = [t for _, t in model.shared_encoder.named_parameters()]
    grads = {}
    values = {}
    for reverse in (True, False):
        zero_grad(shared)
        with Tape():
            y_da = forward_train(model, x, subject, reverse_gradients=reverse).y_da
            assert y_da is not None
            values[reverse] = y_da.data.tobytes()
            backward(domain_alignment_loss_grl(y_da, labels))
        grads[reverse] = [t.grad.copy() for t in shared if t.grad is not None]
    zero_grad(shared)
    if values[True] != values[False]:
        return float("inf")
    return max(float(np.max(np.abs(g_rev + model.grl_scale * g_plain)))
               for g_rev, g_plain in zip(grads[True], grads[False]))


def run_gradient_suite(seed: int = 0, tolerance: float | None = None) -> list[GradcheckRow]:
    """Central-difference check of each loss, then the gradient-reversal negation check."""
    tolerance = settings.gradcheck_tolerance if tolerance is None else tolerance
    model, batches = _fixture(seed)
    w = LossWeights()
    params = [g.tensor for g in model.groups()]
    new_params = [g.tensor for g in model.groups()
                  if g.name.startswith(subject_prefixes(NEW_SUBJECT_KEY))]

    rows = []
    for name, closure in _loss_closures(model, batches, w).items():
        checked = new_params if name == "total_calibration" else params
        error = finite_difference_check(closure, checked)
        rows.append(GradcheckRow(name, error, tolerance))
        logger.debug(f"gradcheck {name}: {error:.3e}")

    x, _ = batches[_SUBJECTS[0]]
    rows.append(GradcheckRow("grl_negation",
                             grl_negation_error(model, x, np.zeros(_BATCH, dtype=np.int64)),
                             GRL_TOLERANCE))
    failed = [r.name for r in rows if not r.passed]
    if failed:
        logger.error(f"Gradient check failed for {failed}")
    else:
        logger.info(f"Gradient check passed for {len(rows)} checks")
    return rows
