import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nfpf import autodiff as ad
from nfpf.autodiff import gradient_check
from nfpf.dynamics import (
    DynamicsModel,
    DynamicsNet,
    LinearDynamics,
    controllability_rank,
    dynamics_forward,
    frobenius_normalize,
    predict_mean,
    sample_transition,
    spectral_radius,
)
from nfpf.errors import CovarianceError, DegenerateMatrixError, DimensionError

finite = st.floats(-10, 10, allow_nan=False)


def loop_predict(A, B, x, u):
    d, m = len(x), len(u)
    out = []
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += A[i][j] * x[j]
        for j in range(m):
            acc += B[i][j] * u[j]
        out.append(acc)
    return np.array(out)


class TestFrobeniusNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(frobenius_normalize([[3.0, 4.0], [0.0, 0.0]]), [[0.6, 0.8], [0.0, 0.0]])

    def test_identity4(self):
        np.testing.assert_allclose(frobenius_normalize(np.eye(4)), np.eye(4) / 2.0, rtol=0, atol=1e-15)

    def test_idempotent(self):
        M = frobenius_normalize(np.random.default_rng(0).normal(size=(3, 3)))
        np.testing.assert_allclose(frobenius_normalize(M), M, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateMatrixError):
            frobenius_normalize(np.zeros((2, 2)))
        with pytest.raises(DegenerateMatrixError):
            frobenius_normalize(ad.Tensor(np.full((2, 2), 1e-14)))

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=finite))
    def test_unit_norm_and_radius_bound(self, M):
        if np.linalg.norm(M) <= 1e-6:
            return
        N = frobenius_normalize(M)
        assert abs(np.linalg.norm(N) - 1.0) < 1e-10
        assert spectral_radius(N) <= 1.0 + 1e-10

    def test_tensor_batch(self):
        M = np.random.default_rng(3).normal(size=(5, 2, 3))
        out = frobenius_normalize(ad.Tensor(M)).data
        for k in range(5):
            np.testing.assert_allclose(out[k], M[k] / np.linalg.norm(M[k]), atol=1e-15)


class TestDynamicsForward:
    def test_bias_only_net(self):
        net = DynamicsNet(2, 1, 4, np.random.default_rng(0))
        net.mlp.zero_()
        net.mlp.output.b.data[:] = [2.0, 0.0, 0.0, 2.0, 1.0, 0.0]
        A, B = dynamics_forward(net, np.array([0.3, -1.0]))
        np.testing.assert_allclose(A.data, np.eye(2) / np.sqrt(2.0), atol=1e-15)
        np.testing.assert_allclose(B.data, [[1.0], [0.0]])

    def test_unit_norm_postcondition(self):
        rng = np.random.default_rng(4)
        net = DynamicsNet(4, 2, 16, rng)
        A, B = dynamics_forward(net, rng.normal(size=(50, 4)))
        np.testing.assert_allclose(np.linalg.norm(A.data, axis=(1, 2)), 1.0, atol=1e-10)
        np.testing.assert_allclose(np.linalg.norm(B.data, axis=(1, 2)), 1.0, atol=1e-10)

    def test_gradient_of_Ax_squared(self):
        rng = np.random.default_rng(11)
        net = DynamicsNet(3, 1, 6, rng)
        x = rng.normal(size=3)

        def f():
            A, _ = dynamics_forward(net, x)
            return ad.square(A @ x).sum()

        params = [p for _, p in net.named_parameters()]
        assert gradient_check(f, params, h=1e-6) < 1e-4

    def test_dimension_mismatch(self):
        net = DynamicsNet(2, 1, 4, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            dynamics_forward(net, np.zeros(3))

    def test_model_matrices_are_batched(self):
        model = DynamicsModel.create(3, 1, hidden=8, rng=np.random.default_rng(0))
        A, B = model.matrices(np.random.default_rng(1).normal(size=(7, 3)))
        assert A.shape == (7, 3, 3) and B.shape == (7, 3, 1)


class TestPredictMean:
    def test_projection(self):
        np.testing.assert_array_equal(predict_mean([[1.0, 0.0], [0.0, 0.0]], np.zeros((2, 0)), [1.0, 1.0], []), [1.0, 0.0])

    def test_zero(self):
        A = np.random.default_rng(0).normal(size=(3, 3))
        np.testing.assert_array_equal(predict_mean(A, np.ones((3, 2)), np.zeros(3), np.zeros(2)), np.zeros(3))

    def test_loop_oracle(self):
        rng = np.random.default_rng(3)
        A, B, x, u = rng.normal(size=(4, 4)), rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=2)
        np.testing.assert_allclose(predict_mean(A, B, x, u), loop_predict(A, B, x, u), atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            predict_mean(np.eye(2), np.ones((2, 1)), np.ones(3), [1.0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite),
           arrays(np.float64, 2, elements=finite), arrays(np.float64, 2, elements=finite))
    def test_linearity(self, x1, x2, u1, u2):
        rng = np.random.default_rng(0)
        A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
        lhs = predict_mean(A, B, x1 + x2, u1 + u2)
        rhs = predict_mean(A, B, x1, u1) + predict_mean(A, B, x2, u2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestSampleTransition:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.A, self.B = rng.normal(size=(2, 2)), rng.normal(size=(2, 1))
        self.x, self.u = np.array([0.5, -1.0]), np.array([0.3])

    def test_zero_noise_is_mean(self):
        out = sample_transition(self.A, self.B, self.x, self.u, np.zeros((2, 2)), np.random.default_rng(0))
        assert np.array_equal(out, predict_mean(self.A, self.B, self.x, self.u))

    def test_monte_carlo_mean(self):
        rng = np.random.default_rng(5)
        draws = np.array([sample_transition(self.A, self.B, self.x, self.u, np.eye(2), rng) for _ in range(100_000)])
        assert np.all(np.abs(draws.mean(axis=0) - predict_mean(self.A, self.B, self.x, self.u)) < 0.02)

    def test_monte_carlo_variance(self):
        rng = np.random.default_rng(6)
        Q = np.diag([4.0, 1.0])
        draws = np.array([sample_transition(self.A, self.B, self.x, self.u, Q, rng) for _ in range(100_000)])
        np.testing.assert_allclose(draws.var(axis=0), [4.0, 1.0], rtol=0.05)

    def test_non_psd(self):
        with pytest.raises(CovarianceError):
            sample_transition(self.A, self.B, self.x, self.u, np.diag([1.0, -1.0]), np.random.default_rng(0))


class TestSpectralRadius:
    def test_diagonal(self):
        assert spectral_radius(np.diag([0.5, 0.25])) == pytest.approx(0.5, abs=1e-15)

    def test_nilpotent(self):
        assert spectral_radius([[0.0, 1.0], [0.0, 0.0]]) == 0.0

    def test_complex_pair(self):
        R = 0.9 * np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
        assert spectral_radius(R) == pytest.approx(0.9, abs=1e-14)

    def test_power_iteration_is_spectral_norm(self):
        A = np.random.default_rng(2).normal(size=(5, 5))
        assert spectral_radius(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-9)
        assert spectral_radius(A) >= np.max(np.abs(np.linalg.eigvals(A))) - 1e-9

    def test_unit_frobenius_bound(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            A = frobenius_normalize(rng.normal(size=(4, 4)))
            assert spectral_radius(A) <= 1.0 + 1e-10

    def test_warns_at_margin(self, caplog):
        with caplog.at_level(logging.WARNING, logger="nfpf.dynamics"):
            spectral_radius(np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert "stability margin" in caplog.text


class TestControllability:
    def test_uncontrollable(self):
        assert controllability_rank(np.eye(2), [[1.0], [0.0]]) == 1

    def test_controllable(self):
        assert controllability_rank([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]]) == 2

    def test_zero_input(self):
        assert controllability_rank(np.eye(3), np.zeros((3, 1))) == 0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
    def test_scale_invariance(self, c):
        rng = np.random.default_rng(0)
        A, B = rng.normal(size=(4, 4)), rng.normal(size=(4, 1))
        assert controllability_rank(A, c * B) == controllability_rank(A, B) == 4


def test_linear_dynamics_interface():
    lin = LinearDynamics(np.eye(2), [[0.0], [1.0]], 0.1 * np.eye(2))
    A, B = lin.matrices(np.zeros((3, 2)))
    assert A.shape == (3, 2, 2) and B.shape == (3, 2, 1)
    assert lin.control_dim == 1 and np.array_equal(lin.Sigma0, np.eye(2))
