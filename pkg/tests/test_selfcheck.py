from unittest.mock import patch

from mindcross.engine import Tensor
from mindcross.engine.tensor import record
from mindcross.selfcheck import GRL_TOLERANCE, GradcheckRow, run_gradient_suite


def _sign_bug_reverse(x: Tensor, scale: float = 1.0) -> Tensor:
    return record("grad_reverse", (x,), Tensor(x.data), lambda g: (scale * g,))


def test_gradient_suite_passes():
    """Test that every loss matches its central-difference gradient."""
    rows = run_gradient_suite(seed=0)
    names = [r.name for r in rows]
    assert names[-1] == "grl_negation"
    assert {"softclip", "domain_alignment_kl", "total_train", "total_calibration"} <= set(names)
    failed = [(r.name, r.max_error) for r in rows if not r.passed]
    assert failed == []


def test_reversal_sign_bug_is_caught():
    with patch("mindcross.engine.functional.grad_reverse", _sign_bug_reverse):
        rows = {r.name: r for r in run_gradient_suite(seed=0)}
    assert not rows["grl_negation"].passed
    assert rows["grl_negation"].tolerance == GRL_TOLERANCE
    assert rows["reconstruction"].passed


def test_row_pass_threshold():
    assert GradcheckRow("x", 1e-5, 1e-4).passed
    assert not GradcheckRow("x", float("nan"), 1e-4).passed
    assert not GradcheckRow("x", 2e-4, 1e-4).passed
