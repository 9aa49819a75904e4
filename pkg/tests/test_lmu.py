import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miniatures import check_miniature
from trajforecast.autograd import DimensionError, Tensor
from trajforecast.models import LMUForecaster
from trajforecast.models.lmu import (discretize, init_lmu_layer, init_lmu_net, lmu_cell, lmu_forecast, lmu_layer,
                                     lmu_matrices)
from trajforecast.nn import set_constant


def _taylor_expm(M: np.ndarray, terms: int = 30) -> np.ndarray:
    """Scaling and squaring around a truncated Taylor series."""
    norm = np.abs(M).sum(axis=1).max()
    s = max(0, int(np.ceil(np.log2(norm / 0.25))) if norm > 0 else 0)
    X = M / 2.0 ** s
    E = np.eye(len(M))
    term = np.eye(len(M))
    for k in range(1, terms):
        term = term @ X / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def _symbolic_matrices(d: int):
    """Entries by exact rational substitution of the index formulas."""
    A = [[Fraction(-1) if i < j else Fraction((-1) ** (i - j + 1)) for j in range(d)] for i in range(d)]
    B = [Fraction((2 * i + 1) * (-1) ** i) for i in range(d)]
    return A, B


def _scalar_lmu_rollout(p, xs, A_bar, B_bar):
    """Step-by-step reference with explicit loops, batch of one."""
    n_in, hidden = len(p["W_x"]), len(p["W_x"][0])
    d = len(B_bar)
    h, m = [0.0] * hidden, [0.0] * d
    for x in xs:
        u = sum(x[j] * p["e_x"][j][0] for j in range(n_in))
        u += sum(h[j] * p["e_h"][j][0] for j in range(hidden))
        u += sum(m[j] * p["e_m"][j][0] for j in range(d))
        m = [sum(A_bar[i][j] * m[j] for j in range(d)) + B_bar[i] * u for i in range(d)]
        h = [math.tanh(sum(x[j] * p["W_x"][j][k] for j in range(n_in))
                       + sum(h[j] * p["W_h"][j][k] for j in range(hidden))
                       + sum(m[j] * p["W_m"][j][k] for j in range(d))) for k in range(hidden)]
    return h, m


def _random_layer(rng, n_in, hidden, order):
    p = init_lmu_layer(rng, n_in, hidden, order)
    for t in p.values():
        t.data = rng.normal(scale=0.5, size=t.shape)
    return p


class TestMatrices:
    def test_order_two(self):
        A, B = lmu_matrices(2)
        np.testing.assert_array_equal(A, [[-1, -1], [1, -1]])
        np.testing.assert_array_equal(B, [1, -3])

    def test_order_three_input(self):
        np.testing.assert_array_equal(lmu_matrices(3)[1], [1, -3, 5])

    @pytest.mark.parametrize("d", range(1, 9))
    def test_symbolic_substitution(self, d):
        A, B = lmu_matrices(d)
        A_ref, B_ref = _symbolic_matrices(d)
        np.testing.assert_array_equal(A, np.array(A_ref, dtype=float))
        np.testing.assert_array_equal(B, np.array(B_ref, dtype=float))

    @pytest.mark.parametrize("d", [1, 5, 64])
    def test_diagonal_is_minus_one(self, d):
        np.testing.assert_array_equal(np.diag(lmu_matrices(d)[0]), -1.0)

    def test_scaled_variant_rows(self):
        A, _ = lmu_matrices(4)
        A_s, _ = lmu_matrices(4, scaled=True)
        np.testing.assert_array_equal(A_s, A * np.array([1, 3, 5, 7])[:, None])

    def test_order_must_be_positive(self):
        with pytest.raises(ValueError, match="order"):
            lmu_matrices(0)


class TestDiscretize:
    def test_euler_at_unit_window(self):
        A, B = lmu_matrices(4)
        A_bar, B_bar = discretize(A, B, 1.0, "euler")
        np.testing.assert_array_equal(A_bar, np.eye(4) + A)
        np.testing.assert_array_equal(B_bar, B)

    def test_zoh_zero_state_matrix(self):
        B = np.array([1.0, -3.0, 5.0])
        A_bar, B_bar = discretize(np.zeros((3, 3)), B, 4.0, "zoh")
        np.testing.assert_array_equal(A_bar, np.eye(3))
        np.testing.assert_allclose(B_bar, B / 4.0, rtol=1e-15)

    @pytest.mark.parametrize("d,theta", [(4, 25.0), (4, 1.0), (8, 3.0), (8, 25.0)])
    def test_zoh_matches_taylor_oracle(self, d, theta):
        A, B = lmu_matrices(d)
        A_bar, B_bar = discretize(A, B, theta, "zoh")
        aug = np.zeros((d + 1, d + 1))
        aug[:d, :d], aug[:d, d] = A / theta, B / theta
        E = _taylor_expm(aug)
        np.testing.assert_allclose(A_bar, E[:d, :d], rtol=0, atol=1e-10)
        np.testing.assert_allclose(B_bar, E[:d, d], rtol=0, atol=1e-10)

    def test_zoh_input_matches_closed_form(self):
        A, B = lmu_matrices(4)
        A_bar, B_bar = discretize(A, B, 5.0, "zoh")
        np.testing.assert_allclose(B_bar, np.linalg.solve(A, (A_bar - np.eye(4)) @ B), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("d,theta", [(4, 25.0), (8, 2.0), (16, 25.0)])
    def test_semigroup(self, d, theta):
        A, B = lmu_matrices(d)
        one, _ = discretize(A, B, theta, "zoh", dt=1.0)
        two, _ = discretize(A, B, theta, "zoh", dt=2.0)
        np.testing.assert_allclose(two, one @ one, rtol=0, atol=1e-9)

    def test_errors(self):
        A, B = lmu_matrices(3)
        with pytest.raises(ValueError, match="theta"):
            discretize(A, B, 0.0)
        with pytest.raises(ValueError, match="unknown"):
            discretize(A, B, 1.0, "tustin")
        with pytest.raises(DimensionError):
            discretize(A, B[:2], 1.0)


class TestCell:
    def test_zero_params_stay_at_rest(self, rng):
        p = init_lmu_layer(rng, 3, 4, 5)
        set_constant(p, 0.0)
        A_bar, B_bar = discretize(*lmu_matrices(5), 25.0)
        outs, (h, m) = lmu_layer(p, list(rng.normal(size=(6, 2, 3))), A_bar, B_bar)
        np.testing.assert_array_equal(m.data, 0.0)
        np.testing.assert_array_equal(h.data, 0.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 16), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
    def test_memory_is_linear_in_the_drive(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        p = _random_layer(rng, 1, 3, 6)
        p["e_h"].data[:] = 0.0
        p["e_m"].data[:] = 0.0
        p["e_x"].data[:] = 1.0
        A_bar, B_bar = discretize(*lmu_matrices(6), 4.0)
        u, v = rng.normal(size=(7, 1, 1)), rng.normal(size=(7, 1, 1))

        def memory(stream):
            return lmu_layer(p, list(stream), A_bar, B_bar)[1][1].data

        combined = memory(alpha * u + beta * v)
        np.testing.assert_allclose(combined, alpha * memory(u) + beta * memory(v), rtol=0, atol=1e-9)

    @pytest.mark.parametrize("k", [-3, 1, 5])
    def test_memory_scales_exactly_by_powers_of_two(self, rng, k):
        # power-of-two scaling commutes with rounding, so this holds bit for bit
        p = _random_layer(rng, 1, 3, 6)
        p["e_h"].data[:] = 0.0
        p["e_m"].data[:] = 0.0
        A_bar, B_bar = discretize(*lmu_matrices(6), 4.0)
        u = rng.normal(size=(7, 2, 1))
        base = lmu_layer(p, list(u), A_bar, B_bar)[1][1].data
        scaled = lmu_layer(p, list(u * 2.0 ** k), A_bar, B_bar)[1][1].data
        np.testing.assert_array_equal(scaled, base * 2.0 ** k)

    def test_single_step_memory_update_exact(self, rng):
        p = _random_layer(rng, 2, 3, 4)
        A_bar, B_bar = discretize(*lmu_matrices(4), 6.0)
        x, h, m = rng.normal(size=(1, 2)), rng.normal(size=(1, 3)), rng.normal(size=(1, 4))
        _, m_new = lmu_cell(p, x, h, m, A_bar, B_bar)
        u = x @ p["e_x"].data + h @ p["e_h"].data + m @ p["e_m"].data
        np.testing.assert_array_equal(m_new.data, m @ A_bar.T + u * B_bar[None])

    def test_matches_scalar_reference(self, rng):
        p = _random_layer(rng, 2, 3, 4)
        A_bar, B_bar = discretize(*lmu_matrices(4), 6.0)
        xs = rng.normal(size=(5, 2))
        _, (h, m) = lmu_layer(p, [x[None] for x in xs], A_bar, B_bar)
        plain = {k: t.data.tolist() for k, t in p.items()}
        h_ref, m_ref = _scalar_lmu_rollout(plain, xs.tolist(), A_bar.tolist(), B_bar.tolist())
        np.testing.assert_allclose(h.data[0], h_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(m.data[0], m_ref, rtol=0, atol=1e-12)

    def test_streaming_equivalence(self, rng):
        p = _random_layer(rng, 2, 3, 4)
        A_bar, B_bar = discretize(*lmu_matrices(4), 6.0)
        xs = list(rng.normal(size=(8, 2, 2)))
        _, whole = lmu_layer(p, xs, A_bar, B_bar)
        state = None
        for x in xs:
            _, state = lmu_layer(p, [x], A_bar, B_bar, state)
        np.testing.assert_allclose(state[0].data, whole[0].data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(state[1].data, whole[1].data, rtol=0, atol=1e-12)

    def test_shape_errors(self, rng):
        p = init_lmu_layer(rng, 3, 4, 5)
        A_bar, B_bar = discretize(*lmu_matrices(5), 25.0)
        with pytest.raises(DimensionError, match="width"):
            lmu_cell(p, np.zeros((1, 2)), np.zeros((1, 4)), np.zeros((1, 5)), A_bar, B_bar)
        A6, B6 = discretize(*lmu_matrices(6), 25.0)
        with pytest.raises(DimensionError, match="order"):
            lmu_cell(p, np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 6)), A6, B6)


class TestForecaster:
    def test_output_shape(self, rng):
        A_bar, B_bar = discretize(*lmu_matrices(8), 8.0)
        params = init_lmu_net(rng, 22, 100, hidden=5, order=8)
        assert lmu_forecast(params, rng.normal(size=(3, 6, 22)), A_bar, B_bar).shape == (3, 100)

    def test_deterministic_at_evaluation(self, rng):
        A_bar, B_bar = discretize(*lmu_matrices(8), 8.0)
        params = init_lmu_net(rng, 4, 6, hidden=5, order=8)
        x = rng.normal(size=(3, 6, 4))
        a = lmu_forecast(params, x, A_bar, B_bar, dropout_p=0.5, training=False).data
        b = lmu_forecast(params, x, A_bar, B_bar, dropout_p=0.5, training=False).data
        np.testing.assert_array_equal(a, b)

    def test_default_layout(self, small_windows):
        model = LMUForecaster().prepare(small_windows)
        assert model.A_bar_.shape == (256, 256)
        assert len(model.params_["layers"]) == 2
        assert model.params_["layers"][1]["W_m"].shape == (256, 256)
        assert model.theta == 25.0

    def test_position_velocity_inputs(self, small_windows):
        model = LMUForecaster(hidden_size=4, order=4, inputs="pos_vel").prepare(small_windows)
        assert model._features(small_windows)["x"].shape[-1] == small_windows.n_objects * 4

    @pytest.mark.parametrize("seed", [0, 1])
    def test_gradient_check(self, seed):
        report, _ = check_miniature("lmu", seed)
        assert report.max_error < 1e-4, report.worst()

    def test_state_matrices_are_constants(self, small_windows):
        model = LMUForecaster(hidden_size=4, order=4).prepare(small_windows)
        names = set()
        for layer in model.params_["layers"]:
            names |= set(layer)
        assert not {"A", "B", "A_bar", "B_bar"} & names
        assert not isinstance(model.A_bar_, Tensor)
