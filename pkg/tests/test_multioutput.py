import math

import numpy as np
import pytest
import torch

from svgp.gauss import Gaussian, kl
from svgp.inducing import InducingPoints
from svgp.kernels import RBF, Constant, Zero
from svgp.multioutput import LMC, SeparateIndependent, derivative_gp_predict, mo_predict, mo_prior_kl
from svgp.svgp import SVGPLayer


def T(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def random_layer(rng, M=3, D=2, d=1, prior=False):
    Z = rng.uniform(-2, 2, (M, d))
    if prior:
        return SVGPLayer(RBF(d, 1.0, 0.9), InducingPoints(Z), None, D, "full")
    A = np.tril(rng.standard_normal((D, M, M)) * 0.3)
    A[:, np.arange(M), np.arange(M)] = rng.uniform(0.3, 1.0, (D, M))
    return SVGPLayer(RBF(d, rng.uniform(0.5, 2), rng.uniform(0.5, 2)), InducingPoints(Z), None, D, "full",
                     rng.standard_normal((M, D)), A)


class TestLMC:
    def test_identity_mixing_equals_separate(self, rng):
        parts = [random_layer(rng, D=1) for _ in range(3)]
        sep = SeparateIndependent(parts)
        lmc = LMC(SeparateIndependent(parts), torch.eye(3, dtype=torch.float64))
        X = T(rng.standard_normal((10, 1)))
        m1, v1 = mo_predict(sep, X)
        m2, v2 = mo_predict(lmc, X)
        np.testing.assert_allclose(m1.detach().numpy(), m2.detach().numpy(), atol=1e-10)
        np.testing.assert_allclose(v1.detach().numpy(), v2.detach().numpy(), atol=1e-10)
        _, c1 = mo_predict(sep, X, full_output_cov=True)
        _, c2 = mo_predict(lmc, X, full_output_cov=True)
        np.testing.assert_allclose(c1.detach().numpy(), c2.detach().numpy(), atol=1e-10)

    def test_rank_one_mixing(self, rng):
        g = random_layer(rng, D=1)
        lmc = LMC(g, T([[1.0], [1.0]]))
        X = T([[0.3]])
        _, v = g.predict_f(X)
        _, cov = mo_predict(lmc, X, full_output_cov=True)
        np.testing.assert_allclose(cov[0].detach().numpy(), v.item() * np.ones((2, 2)), atol=1e-14)

    def test_output_cov_dense(self, rng):
        g = random_layer(rng, D=3)
        W = rng.standard_normal((2, 3))
        lmc = LMC(g, W)
        X = T(rng.standard_normal((4, 1)))
        gm, gv = g.predict_f(X)
        m, cov = lmc.predict_output_cov(X)
        for n in range(4):
            expected = W @ np.diag(gv[n].detach().numpy()) @ W.T
            np.testing.assert_allclose(cov[n].detach().numpy(), expected, atol=1e-12)
        np.testing.assert_allclose(m.detach().numpy(), gm.detach().numpy() @ W.T, atol=1e-12)

    def test_kl_ignores_mixing(self, rng):
        g = random_layer(rng, D=2)
        assert mo_prior_kl(LMC(g, rng.standard_normal((4, 2)))).item() == pytest.approx(g.prior_kl().item())

    def test_bad_mixing_shape(self, rng):
        with pytest.raises(ValueError):
            LMC(random_layer(rng, D=2), np.ones((3, 3)))


class TestSeparate:
    def test_zero_cross_output_cov(self, rng):
        sep = SeparateIndependent([random_layer(rng, D=1), random_layer(rng, D=2)])
        _, cov = mo_predict(sep, T(rng.standard_normal((5, 1))), full_output_cov=True)
        off = cov.detach().numpy() * (1 - np.eye(3))
        assert not off.any()

    def test_prior_kl_zero(self, rng):
        sep = SeparateIndependent([random_layer(rng, prior=True), random_layer(rng, prior=True)])
        assert mo_prior_kl(sep).item() == pytest.approx(0.0, abs=1e-12)

    def test_kl_matches_block_diagonal_assembly(self, rng):
        parts = [random_layer(rng, M=m, D=1) for m in (2, 3, 5)]
        sep = SeparateIndependent(parts)
        means, qcovs, pcovs = [], [], []
        for p in parts:
            means.append(p.vstate.q_mean[:, 0].detach().numpy())
            qcovs.append(p.vstate.cov[0].detach().numpy())
            pcovs.append(np.eye(p.vstate.M))  # whitened prior
        n = sum(len(m) for m in means)
        Q, P = np.zeros((n, n)), np.zeros((n, n))
        i = 0
        for q, p in zip(qcovs, pcovs):
            k = q.shape[0]
            Q[i : i + k, i : i + k], P[i : i + k, i : i + k] = q, p
            i += k
        expected = kl(Gaussian(np.concatenate(means), Q), Gaussian(np.zeros(n), P)).item()
        assert mo_prior_kl(sep).item() == pytest.approx(expected, rel=1e-10)

    def test_doubling_outputs_doubles_kl(self, rng):
        layer = random_layer(rng, D=1)
        q_mean = layer.vstate.q_mean.detach()
        q_sqrt = layer.vstate.sqrt.detach()
        twice = SVGPLayer(layer.kernel, layer.inducing, None, 2, "full", q_mean.repeat(1, 2), q_sqrt.repeat(2, 1, 1))
        assert twice.prior_kl().item() == pytest.approx(2 * layer.prior_kl().item(), rel=1e-12)


class TestDerivativeGP:
    def test_zero_mean(self):
        g = derivative_gp_predict(RBF(2), Zero(2), [[0.0, 1.0], [2.0, 3.0]])
        assert not g.mean.any()

    def test_constant_mean_has_zero_gradient(self):
        g = derivative_gp_predict(RBF(1), Constant(1, 1, 4.0), [[0.0]])
        assert g.mean.item() == 0.0

    @pytest.mark.parametrize("ls", [0.5, 0.7, 2.0])
    def test_zero_lag_variance(self, ls):
        g = derivative_gp_predict(RBF(1, 1.0, ls), Zero(1), [[0.0], [1.3]])
        np.testing.assert_allclose(torch.diagonal(g.cov).detach().numpy(), 1 / ls**2, rtol=1e-12)

    def test_matches_sampled_increments(self):
        ls, h, n = 0.8, 1e-2, 100_000
        pts = np.array([0.0, 0.5])
        grid = np.array([pts[0] - h, pts[0] + h, pts[1] - h, pts[1] + h])
        K = np.exp(-0.5 * (grid[:, None] - grid[None, :]) ** 2 / ls**2)
        w, V = np.linalg.eigh(K)
        root = V * np.sqrt(np.clip(w, 0, None))
        f = np.random.default_rng(5).standard_normal((n, 4)) @ root.T
        d = np.stack([(f[:, 1] - f[:, 0]) / (2 * h), (f[:, 3] - f[:, 2]) / (2 * h)], 1)
        emp = np.cov(d.T)
        g = derivative_gp_predict(RBF(1, 1.0, ls), Zero(1), pts[:, None]).cov.detach().numpy()
        for i in range(2):
            for j in range(2):
                prod = d[:, i] * d[:, j]
                se = prod.std() / math.sqrt(n)
                assert emp[i, j] == pytest.approx(g[i, j], abs=3 * se)
