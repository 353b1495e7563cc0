import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qutnet import (ActivationSpec, Architecture, Dataset, NetworkParams, ShapeError,
                    bias_bounds, forward, shifted_softplus, validate_params)


def two_layer(w1, b1, w2, b2):
    return NetworkParams((np.atleast_2d(w1), np.atleast_2d(w2)), (np.ravel(b1), np.array(b2)))


class TestActivation:
    def test_default_vanishes_at_zero(self):
        assert shifted_softplus.eval(np.array([0.0]))[0] == 0.0
        assert shifted_softplus.deriv_at_zero == 0.5
        assert shifted_softplus.deriv(np.array([0.0]))[0] == 0.5

    def test_unbounded_above(self):
        s = shifted_softplus.eval(np.array([10.0, 50.0]))
        assert s[1] > s[0] > 0

    def test_matches_naive_formula(self):
        u = np.linspace(-30, 30, 121)
        naive = np.log1p(np.exp(u)) - math.log(2)
        np.testing.assert_allclose(shifted_softplus.eval(u), naive, rtol=1e-12, atol=1e-15)

    def test_no_overflow_for_large_inputs(self):
        v = shifted_softplus.eval(np.array([1e4, -1e4]))
        assert np.all(np.isfinite(v))
        assert v[0] == pytest.approx(1e4 - math.log(2))

    def test_rejects_bad_activation(self):
        with pytest.raises(ValueError):
            ActivationSpec(eval=np.tanh, deriv=lambda u: 1 - np.tanh(u) ** 2, deriv_at_zero=0.0)
        with pytest.raises(ValueError):
            ActivationSpec(eval=lambda u: np.asarray(u) + 1.0, deriv=np.ones_like, deriv_at_zero=1.0)


class TestArchitecture:
    def test_needs_two_layers(self):
        with pytest.raises(ValueError):
            Architecture((3,))

    def test_positive_widths(self):
        with pytest.raises(ValueError):
            Architecture((3, 0))

    def test_shapes(self):
        arch = Architecture((5, 4, 3))
        assert arch.weight_shapes() == [(4, 5), (3, 4), (1, 3)]
        assert arch.bias_shapes() == [(4,), (3,), ()]
        assert arch.n_params == 20 + 12 + 3 + 4 + 3 + 1


class TestForward:
    def test_constant_when_first_layer_zero(self, rng):
        arch = Architecture((6, 4, 3))
        p = NetworkParams.from_vector(arch, rng.standard_normal(arch.n_params))
        p = p.replace(weights=[np.zeros((4, 6))] + list(p.weights[1:]),
                      biases=[np.zeros(4), np.zeros(3), np.array(7.5)])
        out = forward(p, arch, rng.standard_normal((10, 6)))
        assert np.all(np.abs(out - 7.5) <= 1e-12)

    def test_zero_input(self):
        p = two_layer([[1.0]], [0.0], [[2.0]], 0.0)
        assert forward(p, Architecture((1, 1)), np.zeros((1, 1)))[0] == 0.0

    def test_hand_evaluation(self):
        p = two_layer([[1.0]], [0.0], [[3.0]], 1.0)
        expected = 1 + (math.log(1 + math.e) - math.log(2))
        assert forward(p, Architecture((1, 1)), np.ones((1, 1)))[0] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(1.62011, abs=1e-5)

    def test_shape_error_names_layer(self):
        arch = Architecture((3, 2))
        p = NetworkParams((np.zeros((2, 3)), np.zeros((1, 3))), (np.zeros(2), np.array(0.0)))
        with pytest.raises(ShapeError, match="layer 2"):
            forward(p, arch, np.zeros((4, 3)))
        good = NetworkParams.zeros(arch)
        with pytest.raises(ShapeError, match="layer 1"):
            forward(good, arch, np.zeros((4, 5)))

    def test_zero_row_in_normalized_layer_gives_zero(self):
        arch = Architecture((2, 2, 2))
        p = NetworkParams.from_vector(arch, np.ones(arch.n_params))
        w2 = np.array([[0.0, 0.0], [1.0, 1.0]])
        p = p.replace(weights=[p.weights[0], w2, p.weights[2]])
        assert np.all(np.isfinite(forward(p, arch, np.ones((3, 2)))))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0), st.integers(1, 2))
    def test_inner_layer_scale_invariance(self, seed, c, layer):
        rng = np.random.default_rng(seed)
        arch = Architecture((3, 4, 3))
        p = NetworkParams.from_vector(arch, rng.standard_normal(arch.n_params))
        x = rng.standard_normal((7, 3))
        w = [np.array(a) for a in p.weights]
        row = int(rng.integers(w[layer].shape[0]))
        w[layer][row] *= c
        a, b = forward(p, arch, x), forward(p.replace(weights=w), arch, x)
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)

    def test_params_are_read_only(self):
        p = NetworkParams.zeros(Architecture((2, 2)))
        with pytest.raises(ValueError):
            p.weights[0][0, 0] = 1.0

    def test_vector_round_trip(self, rng):
        arch = Architecture((4, 3, 2))
        v = rng.standard_normal(arch.n_params)
        np.testing.assert_array_equal(NetworkParams.from_vector(arch, v).ravel(), v)
        assert np.array_equal(NetworkParams.from_vector(arch, v).w1.ravel(), v[:12])


class TestBiasBounds:
    def test_zero_row_first_layer(self, rng):
        assert bias_bounds(np.zeros(3), rng.standard_normal((5, 3)), 1) == (0.0, 0.0)

    def test_zero_row_inner_layer(self, rng):
        assert bias_bounds(np.zeros(3), rng.standard_normal((5, 3)), 2) == (0.0, 0.0)

    def test_output_layer_unbounded(self, rng):
        assert bias_bounds(np.ones(3), rng.standard_normal((5, 3)), 3, n_layers=3) == (-np.inf, np.inf)

    def test_min_max(self):
        assert bias_bounds([1.0], [[-2.0], [3.0]], 1) == (-2.0, 3.0)

    def test_inner_layer_normalized(self):
        lo, hi = bias_bounds([3.0, 4.0], [[1.0, 0.0], [0.0, 1.0]], 2)
        assert (lo, hi) == (pytest.approx(0.6), pytest.approx(0.8))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_more_rows_never_shrink(self, seed, k):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(4)
        u = rng.standard_normal((6, 4))
        more = np.vstack([u, rng.standard_normal((3, 4))])
        lo, hi = bias_bounds(w, u, k)
        lo2, hi2 = bias_bounds(w, more, k)
        assert lo2 <= lo <= hi <= hi2


class TestValidate:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.arch = Architecture((3, 2))
        self.ds = Dataset(rng.standard_normal((10, 3)), rng.standard_normal(10))

    def test_bias_outside_interval(self):
        w1 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        hi = self.ds.x[:, 0].max()
        p = NetworkParams((w1, np.ones((1, 2))), (np.array([hi + 1.0, 0.0]), np.array(0.0)))
        v = validate_params(p, self.arch, self.ds)
        assert len(v) == 1 and "layer 1, unit 0" in v[0]

    def test_zero_first_layer_is_valid(self):
        p = NetworkParams((np.zeros((2, 3)), np.ones((1, 2))), (np.zeros(2), np.array(3.0)))
        assert validate_params(p, self.arch, self.ds) == []

    def test_shape_violation(self):
        p = NetworkParams((np.zeros((2, 3)), np.ones((1, 3))), (np.zeros(2), np.array(3.0)))
        v = validate_params(p, self.arch, self.ds)
        assert len(v) == 1 and v[0].startswith("shape") and "layer 2" in v[0]


class TestDataset:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[1.0], [np.nan]]), np.zeros(2))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((1, 2)), np.ones(1))
