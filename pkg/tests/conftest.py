import sys

import numpy as np
import pytest

from qutnet import Architecture, Dataset, NetworkParams, forward, sqrt_l2_loss


def central_differences(arch, params, dataset, h=1e-6):
    """Finite-difference gradient of the square-root loss; independent of backprop."""
    v0 = params.ravel()
    out = np.empty_like(v0)
    for i in range(v0.size):
        vp, vm = v0.copy(), v0.copy()
        vp[i] += h
        vm[i] -= h
        fp = sqrt_l2_loss(dataset.y, forward(NetworkParams.from_vector(arch, vp), arch, dataset.x))
        fm = sqrt_l2_loss(dataset.y, forward(NetworkParams.from_vector(arch, vm), arch, dataset.x))
        out[i] = (fp - fm) / (2 * h)
    return out


def random_problem(rng, depth=None, max_width=5, max_n=20):
    depth = depth or int(rng.integers(2, 4))
    widths = tuple(int(rng.integers(1, max_width + 1)) for _ in range(depth))
    arch = Architecture(widths)
    n = int(rng.integers(2, max_n + 1))
    ds = Dataset(rng.standard_normal((n, widths[0])), rng.standard_normal(n))
    params = NetworkParams.from_vector(arch, rng.standard_normal(arch.n_params))
    return arch, params, ds


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
