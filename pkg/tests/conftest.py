import numpy as np
import pytest

from novelty_rl.nn import GaussianPolicyParams, MlpParams


def constant_policy(mean, log_std=0.0, state_dim=2, hidden=(32, 32)) -> GaussianPolicyParams:
    """Policy whose action mean is ``mean`` at every state."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    dims = (state_dim, *hidden, len(mean))
    weights = tuple(np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:]))
    biases = tuple(np.zeros(o) for o in dims[1:-1]) + (mean.copy(),)
    return GaussianPolicyParams(MlpParams(dims, weights, biases), np.full(len(mean), float(log_std)))


def scripted(action):
    """Callable actor for ``evaluate``: the same action everywhere."""
    action = np.asarray(action, dtype=np.float64)

    def act(states, rng):
        return np.broadcast_to(action, (len(states), len(action))).copy()

    return act


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
