from collections.abc import Callable, Sequence

import numpy as np

from ..utilities.constants import GRADCHECK_FLOOR, GRADCHECK_STEP
from ..utilities.logging import get_logger
from .tensor import Tape, Tensor, backward, no_grad, zero_grad

logger = get_logger(__name__)


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = GRADCHECK_STEP,
) -> float:
    """
    Compares analytic gradients against central differences.

    Args:
        f: Deterministic closure that rebuilds the scalar loss from the current
            parameter values.
        params: Leaf tensors with requires_grad set.
        h: Central-difference step.

    Returns:
        max |analytic - numeric| / max(1e-8, |analytic| + |numeric|) over all
        parameter elements.
    """
    for p in params:
        if not p.requires_grad:
            raise ValueError(f"finite_difference_check: {p!r} does not require grad")
    zero_grad(params)
    with Tape():
        loss = f()
        backward(loss)
    analytic = [p.grad.copy() for p in params if p.grad is not None]

    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            for idx in np.ndindex(p.shape):
                original = p.data[idx]
                p.data[idx] = original + h
                f_plus = f().item()
                p.data[idx] = original - h
                f_minus = f().item()
                p.data[idx] = original
                numeric = (f_plus - f_minus) / (2.0 * h)
                err = abs(grad[idx] - numeric) / max(GRADCHECK_FLOOR, abs(grad[idx]) + abs(numeric))
                worst = max(worst, err)
    zero_grad(params)
    logger.debug(f"finite_difference_check over {len(params)} tensors: max rel err {worst:.3e}")
    return worst
