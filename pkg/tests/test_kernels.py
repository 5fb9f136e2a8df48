import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from svgp.errors import ShapeError, UnsupportedMean
from svgp.inducing import DerivativeFeatures, InducingPoints, init_inducing_points, kfu, kuu, prior_mu_u
from svgp.kernels import RBF, Constant, Identity, Linear, Zero, kern_cross_hess, kern_grad, kern_matrix

H = 1e-5


def rbf_np(a, b, var, ls):
    return var * np.exp(-0.5 * np.sum(((a - b) / ls) ** 2))


class TestRBF:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 3), st.floats(0.1, 3))
    def test_zero_distance_gives_variance(self, x, var, ls):
        k = RBF(3, var, ls)
        assert k.K(torch.tensor([x], dtype=torch.float64)).item() == pytest.approx(var, rel=1e-12)

    def test_one_lengthscale_apart(self):
        k = RBF(1, 1.0, 0.7)
        v = kern_matrix(k, [[0.0]], [[0.7]]).item()
        assert v == pytest.approx(math.exp(-0.5), abs=1e-14)

    def test_linear_in_variance(self, rng):
        A, B = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
        k1, k2 = RBF(2, 1.0, [0.5, 1.5]), RBF(2, 2.0, [0.5, 1.5])
        np.testing.assert_allclose(k2.K(torch.tensor(A), torch.tensor(B)).detach().numpy(),
                                   2 * k1.K(torch.tensor(A), torch.tensor(B)).detach().numpy(), rtol=1e-12)

    def test_matches_numpy_formula(self, rng):
        ls = np.array([0.4, 1.3])
        A, B = rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
        expected = np.array([[rbf_np(a, b, 1.7, ls) for b in B] for a in A])
        got = RBF(2, 1.7, ls).K(torch.tensor(A), torch.tensor(B)).detach().numpy()
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_wrong_input_width(self):
        with pytest.raises(ShapeError):
            RBF(2).K(torch.zeros(3, 1, dtype=torch.float64))


class TestDerivatives:
    def test_grad_zero_at_coincident_points(self):
        k = RBF(2, 1.0, [0.5, 2.0])
        assert kern_grad(k, [0.3, -1.0], [0.3, -1.0], 1).item() == 0.0

    @pytest.mark.parametrize("ls", [0.3, 0.7, 2.0])
    def test_cross_hess_zero_lag(self, ls):
        k = RBF(1, 1.0, ls)
        assert kern_cross_hess(k, [0.4], [0.4], 0, 0).item() == pytest.approx(1 / ls**2, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_grad_and_hess_match_central_differences(self, seed):
        r = np.random.default_rng(seed)
        ls = r.uniform(0.5, 2.0, 3)
        var = r.uniform(0.5, 2.0)
        x, xp = r.standard_normal(3), r.standard_normal(3)
        d, dp = r.integers(0, 3, 2)
        k = RBF(3, var, ls)
        e, ep = np.eye(3)[d] * H, np.eye(3)[dp] * H
        fd_grad = (rbf_np(x, xp + ep, var, ls) - rbf_np(x, xp - ep, var, ls)) / (2 * H)
        assert kern_grad(k, x, xp, dp).item() == pytest.approx(fd_grad, abs=1e-5)
        fd_hess = (rbf_np(x + e, xp + ep, var, ls) - rbf_np(x + e, xp - ep, var, ls)
                   - rbf_np(x - e, xp + ep, var, ls) + rbf_np(x - e, xp - ep, var, ls)) / (4 * H * H)
        assert kern_cross_hess(k, x, xp, d, dp).item() == pytest.approx(fd_hess, abs=1e-5)

    def test_bad_dimension_index(self):
        with pytest.raises(ShapeError):
            kern_grad(RBF(2), [0.0, 0.0], [1.0, 1.0], 2)


class TestMeans:
    def test_zero(self, rng):
        assert not Zero(3, 2)(torch.tensor(rng.standard_normal((4, 3)))).any()

    def test_identity(self):
        out = Identity(2)(torch.tensor([[1.5, -2.0]], dtype=torch.float64))
        np.testing.assert_array_equal(out.detach().numpy(), [[1.5, -2.0]])

    def test_linear(self):
        m = Linear(1, 1, A=torch.tensor([[2.0]], dtype=torch.float64), b=torch.tensor([1.0], dtype=torch.float64))
        assert m(torch.tensor([[3.0]], dtype=torch.float64)).item() == 7.0

    def test_constant(self):
        m = Constant(2, 1, c=0.25)
        np.testing.assert_array_equal(m(torch.zeros(3, 2, dtype=torch.float64)).detach().numpy(), 0.25)


class TestInducing:
    def test_dirac_single_point(self):
        assert kuu(InducingPoints([[0.2]]), RBF(1, 1.7, 0.3)).item() == pytest.approx(1.7, rel=1e-14)

    @pytest.mark.parametrize("ls", [0.5, 1.3])
    def test_derivative_single_point(self, ls):
        assert kuu(DerivativeFeatures([[0.2]], [0]), RBF(1, 1.0, ls)).item() == pytest.approx(1 / ls**2, rel=1e-12)

    def test_dirac_pair(self):
        K = kuu(InducingPoints([[0.0], [0.7]]), RBF(1, 1.0, 0.7))
        assert K[0, 1].item() == pytest.approx(math.exp(-0.5), abs=1e-14)

    def test_dirac_kfu_at_z_equals_kuu(self, rng):
        Z = rng.standard_normal((4, 2))
        k = RBF(2, 1.2, [0.6, 1.1])
        ind = InducingPoints(Z)
        np.testing.assert_array_equal(kfu(Z, ind, k).detach().numpy(), kuu(ind, k).detach().numpy())

    def test_derivative_kfu_zero_at_own_point(self, rng):
        Z = rng.standard_normal((3, 2))
        K = kfu(Z, DerivativeFeatures(Z, [0, 1, 0]), RBF(2, 1.0, [0.8, 1.4]))
        np.testing.assert_array_equal(torch.diagonal(K).detach().numpy(), 0.0)

    def test_derivative_blocks_match_differences(self, rng):
        Z, X = rng.standard_normal((4, 2)), rng.standard_normal((5, 2))
        dims = [0, 1, 1, 0]
        ls, var = np.array([0.8, 1.4]), 1.3
        k = RBF(2, var, ls)
        ind = DerivativeFeatures(Z, dims)
        Kfu, Kuu = kfu(X, ind, k).detach().numpy(), kuu(ind, k).detach().numpy()
        for n in range(5):
            for m in range(4):
                e = np.eye(2)[dims[m]] * H
                fd = (rbf_np(X[n], Z[m] + e, var, ls) - rbf_np(X[n], Z[m] - e, var, ls)) / (2 * H)
                assert Kfu[n, m] == pytest.approx(fd, abs=1e-5)
        for i in range(4):
            for j in range(4):
                ei, ej = np.eye(2)[dims[i]] * H, np.eye(2)[dims[j]] * H
                fd = (rbf_np(Z[i] + ei, Z[j] + ej, var, ls) - rbf_np(Z[i] + ei, Z[j] - ej, var, ls)
                      - rbf_np(Z[i] - ei, Z[j] + ej, var, ls) + rbf_np(Z[i] - ei, Z[j] - ej, var, ls)) / (4 * H * H)
                assert Kuu[i, j] == pytest.approx(fd, abs=1e-5)

    def test_prior_means(self):
        assert not prior_mu_u(InducingPoints([[1.0], [2.0]]), Zero(1)).any()
        assert prior_mu_u(InducingPoints([[3.0]]), Identity(1)).item() == 3.0
        lin = Linear(1, 1, A=torch.tensor([[2.0]], dtype=torch.float64))
        assert prior_mu_u(DerivativeFeatures([[5.0]], [0]), lin).item() == 2.0

    def test_derivative_needs_differentiable_mean(self):
        class Odd(Zero):
            def jacobian(self):
                raise UnsupportedMean("no jacobian")

        with pytest.raises(UnsupportedMean):
            prior_mu_u(DerivativeFeatures([[0.0]], [0]), Odd(1))

    def test_dims_must_be_valid(self):
        with pytest.raises(ShapeError):
            DerivativeFeatures([[0.0, 1.0]], [2])

    def test_init_subset_and_overflow(self, rng):
        X = rng.standard_normal((5, 2))
        Z = init_inducing_points(X, 3, np.random.default_rng(0)).numpy()
        assert all(any(np.array_equal(z, x) for x in X) for z in Z)
        assert init_inducing_points(X, 8, np.random.default_rng(0)).shape == (8, 2)
