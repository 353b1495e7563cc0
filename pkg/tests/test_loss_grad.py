import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qutnet import (Architecture, ConstantResponse, Dataset, DegenerateResidual, NetworkParams,
                    gradient, null_gradient_sup, null_statistic, objective, sqrt_l2_loss)
from qutnet.optimizer import null_params

from conftest import central_differences, random_problem


def test_sqrt_loss_values():
    assert sqrt_l2_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert sqrt_l2_loss([1.0, 1.0], [0.0, 0.0]) == pytest.approx(math.sqrt(2))
    assert sqrt_l2_loss([3.0, -1.0, 2.0], [1.0, 1.0, 1.0]) == 3.0


def test_objective_values():
    y, p = [3.0, -1.0, 2.0], [1.0, 1.0, 1.0]
    assert objective(y, p, [[1.0, -2.0]], 0.0) == 3.0
    assert objective(y, p, np.zeros((2, 2)), 4.0) == 3.0
    assert objective(y, p, [[1.0, -2.0]], 0.5) == 4.5
    with pytest.raises(ValueError):
        objective(y, p, [[1.0]], -1.0)


@pytest.mark.parametrize("seed", range(30))
def test_gradient_matches_finite_differences(seed):
    arch, params, ds = random_problem(np.random.default_rng(seed))
    g = gradient(params, arch, ds).ravel()
    fd = central_differences(arch, params, ds)
    assert np.all(np.abs(g - fd) <= np.maximum(1e-5 * np.abs(g), 1e-7))


def test_gradient_shapes(rng):
    arch, params, ds = random_problem(rng, depth=3)
    g = gradient(params, arch, ds)
    assert [w.shape for w in g.weights] == arch.weight_shapes()
    assert [b.shape for b in g.biases] == arch.bias_shapes()


def test_degenerate_residual():
    arch = Architecture((1, 1))
    ds = Dataset(np.array([[0.0], [1.0]]), np.array([2.0, 2.0]))
    p = NetworkParams((np.zeros((1, 1)), np.ones((1, 1))), (np.zeros(1), np.array(2.0)))
    with pytest.raises(DegenerateResidual):
        gradient(p, arch, ds)


def test_null_point_formula(rng):
    # derivative of ||y - mu|| carries a minus sign relative to the centered score
    n, p1, p2 = 25, 4, 3
    ds = Dataset(rng.standard_normal((n, p1)), rng.standard_normal(n))
    arch = Architecture((p1, p2))
    w2 = rng.standard_normal((1, p2))
    params = null_params(arch, ds, w_out=w2)
    g = gradient(params, arch, ds).w1
    yc = ds.y - ds.y.mean()
    expected = -0.5 * np.outer(w2[0], yc @ ds.x) / (np.linalg.norm(w2) * np.linalg.norm(yc))
    np.testing.assert_allclose(g, expected, rtol=1e-10, atol=1e-14)


def test_shifting_response_and_intercept_keeps_gradient(rng):
    arch, params, ds = random_problem(rng, depth=2)
    shifted = Dataset(ds.x, ds.y + 3.25)
    p2 = params.replace(biases=list(params.biases[:-1]) + [params.biases[-1] + 3.25])
    np.testing.assert_allclose(gradient(p2, arch, shifted).w1, gradient(params, arch, ds).w1,
                               rtol=1e-9, atol=1e-12)


class TestNullGradientSup:
    def test_hand_value(self):
        v = null_statistic([1.0, -1.0], [[1.0], [-1.0]], 0.5)
        assert v == pytest.approx(1 / math.sqrt(2), rel=1e-15)

    def test_orthogonal_design(self):
        y = np.array([1.0, -1.0, 1.0, -1.0])
        x = np.array([[1.0, 2.0], [1.0, 2.0], [3.0, 0.0], [3.0, 0.0]])
        assert null_statistic(y, x, 0.5) == 0.0

    def test_constant_response(self):
        with pytest.raises(ConstantResponse):
            null_statistic(np.full(5, 2.0), np.ones((5, 2)), 0.5)

    def test_dataset_form(self, rng):
        ds = Dataset(rng.standard_normal((9, 3)), rng.standard_normal(9))
        assert null_gradient_sup(ds, 0.5) == null_statistic(ds.y, ds.x, 0.5)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
    def test_pivotal(self, seed, c, d):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((30, 5))
        y = rng.standard_normal(30)
        a = null_statistic(y, x, 0.5)
        b = null_statistic(c * y + d, x, 0.5)
        assert b == pytest.approx(a, rel=1e-9)

    def test_supremum_over_unit_output_rows(self, rng):
        n, p1, p2 = 40, 6, 5
        ds = Dataset(rng.standard_normal((n, p1)), rng.standard_normal(n))
        arch = Architecture((p1, p2))
        sup = null_gradient_sup(ds, 0.5)
        e = np.zeros((1, p2))
        e[0, 2] = 1.0
        g = gradient(null_params(arch, ds, w_out=e), arch, ds).w1
        assert np.abs(g).max() == pytest.approx(sup, rel=1e-10)
        for _ in range(50):
            w = rng.standard_normal((1, p2))
            w /= np.linalg.norm(w)
            g = gradient(null_params(arch, ds, w_out=w), arch, ds).w1
            assert np.abs(g).max() <= sup + 1e-12
