"""Linear softmax probe predicting subject identity from features."""

from collections.abc import Mapping

import numpy as np

from ..engine import Tape, Tensor, backward
from ..engine import functional as F
from ..losses import cross_entropy
from ..utilities.errors import ConfigError
from ..utilities.logging import get_logger

logger = get_logger(__name__)

PROBE_STEPS = 300
PROBE_LEARNING_RATE = 0.5


def _stratified_split(n: int, heldout_fraction: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ConfigError(f"each subject needs at least two samples for a probe, got {n}")
    order = rng.permutation(n)
    n_test = min(max(1, round(heldout_fraction * n)), n - 1)
    return order[n_test:], order[:n_test]


def domain_probe(features_by_subject: Mapping[str, np.ndarray], heldout_fraction: float = 0.2,
                 seed: int = 0, steps: int = PROBE_STEPS,
                 learning_rate: float = PROBE_LEARNING_RATE) -> float:
    """
    Held-out accuracy of a fresh linear probe from features to subject labels.

    The probe is fit by full-batch gradient descent on the mean cross-entropy of
    standardized features; standardization uses training statistics only.
    """
    if len(features_by_subject) < 2:
        raise ConfigError("a domain probe needs features from at least two subjects")
    if not 0.0 < heldout_fraction < 1.0:
        raise ConfigError(f"heldout_fraction must lie in (0, 1), got {heldout_fraction}")
    rng = np.random.default_rng(seed)
    train_x, train_y, test_x, test_y = [], [], [], []
    for label, features in enumerate(features_by_subject.values()):
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        train_idx, test_idx = _stratified_split(features.shape[0], heldout_fraction, rng)
        train_x.append(features[train_idx])
        test_x.append(features[test_idx])
        train_y.append(np.full(train_idx.shape[0], label))
        test_y.append(np.full(test_idx.shape[0], label))
    x_tr, x_te = np.concatenate(train_x), np.concatenate(test_x)
    y_tr, y_te = np.concatenate(train_y), np.concatenate(test_y)

    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0.0] = 1.0
    x_tr, x_te = (x_tr - mu) / sd, (x_te - mu) / sd

    n_classes = len(features_by_subject)
    weight = Tensor(np.zeros((x_tr.shape[1], n_classes)), requires_grad=True)
    bias = Tensor(np.zeros(n_classes), requires_grad=True)
    inputs = Tensor(x_tr)
    for _ in range(steps):
        weight.zero_grad()
        bias.zero_grad()
        with Tape():
            loss = cross_entropy(F.linear(inputs, weight, bias), y_tr, reduction="mean")
            backward(loss)
        assert weight.grad is not None and bias.grad is not None
        weight.data -= learning_rate * weight.grad
        bias.data -= learning_rate * bias.grad

    logits = x_te @ weight.data + bias.data
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y_te))
    logger.debug(f"Domain probe over {n_classes} subjects: held-out accuracy {accuracy:.3f}")
    return accuracy
