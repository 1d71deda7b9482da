import numpy as np
import pytest

from momakd import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_check(build_loss, tensors, h=1e-5):
    """Max relative error between tape gradients and central differences."""
    for t in tensors:
        t.grad = None
    tape = T.Tape()
    with tape:
        loss = build_loss()
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.values) if t.grad is None else t.grad
        numeric = T.numerical_grad(build_loss, t, h)
        worst = max(worst, T.relative_error(analytic, numeric))
    return worst


# acceptance criteria register their verdicts here; printed once at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
