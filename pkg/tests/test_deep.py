import math

import numpy as np
import pytest
import torch

from svgp.deep import (
    DeepGP,
    _latent_weights,
    IWConfig,
    LatentPosteriorTable,
    deep_elbo,
    iw_lv_elbo,
    iw_lv_estimates,
    iw_lv_terms,
    lv_elbo,
    predict_deep,
    propagate,
)
from svgp.errors import MissingLatentRow
from svgp.inducing import InducingPoints
from svgp.kernels import RBF, Identity, Linear, Zero
from svgp.likelihoods import Gaussian as GaussianLik
from svgp.likelihoods import DEFAULT_QUADRATURE, hermite_rule
from svgp.rng import CounterRNG
from svgp.svgp import SVGPLayer, elbo, predict_f


def T(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def layer(rng, d_in, d_out, M=3, var=1.0, ls=1.0, mean=None, q_scale=0.5, random_q=True):
    Z = rng.uniform(-2, 2, (M, d_in))
    q_mean = rng.standard_normal((M, d_out)) if random_q else None
    q_sqrt = q_scale if random_q else None
    return SVGPLayer(RBF(d_in, var, ls), InducingPoints(Z), mean, d_out, "full", q_mean, q_sqrt)


def two_layer(rng, latent_dim=0, N=4, var2=1.0):
    l1 = layer(rng, 1 + latent_dim, 1, mean=Linear(1 + latent_dim, 1, A=T(np.eye(1, 1 + latent_dim))))
    l2 = layer(rng, 1, 1, var=var2)
    table = None
    if latent_dim:
        table = LatentPosteriorTable(N, latent_dim, rng.standard_normal((N, latent_dim)) * 0.5,
                                     T(rng.uniform(0.3, 0.9, (N, latent_dim))))
    return DeepGP([l1, l2], GaussianLik(0.2), latent_dim, 1, table)


def stream(seed=0, step=0):
    return CounterRNG(seed).stream(step)


class TestPropagation:
    def test_single_layer_is_predict_f(self, rng):
        m = DeepGP([layer(rng, 1, 1)], GaussianLik(0.2), 0, 1)
        X = T(rng.standard_normal((5, 1)))
        prop = propagate(m, X, stream())
        mean, var = predict_f(m.layers[0], X)
        # batched and unbatched matmuls may round differently in the last bit
        np.testing.assert_allclose(prop.mean[:, 0, 0].detach().numpy(), mean.detach().numpy(), rtol=1e-14)
        np.testing.assert_allclose(prop.var[:, 0, 0].detach().numpy(), var.detach().numpy(), rtol=1e-14)

    def test_deterministic_second_layer(self, rng):
        l1 = layer(rng, 1, 1)
        l2 = SVGPLayer(RBF(1, 2e-6, 1.0), InducingPoints(rng.uniform(-2, 2, (3, 1))), Identity(1), 1, "full")
        m = DeepGP([l1, l2], GaussianLik(0.2), 0, 1)
        prop = propagate(m, T(rng.standard_normal((5, 1))), stream(), n_mc=3)
        np.testing.assert_array_equal(prop.mean.detach().numpy(), prop.samples[0].detach().numpy())

    def test_rows_independent_of_batch_composition(self, rng):
        m = two_layer(rng)
        X = T(rng.standard_normal((6, 1)))
        full = propagate(m, X, stream(3), np.arange(6), n_mc=2)
        part = propagate(m, X[[4, 1]], stream(3), np.array([4, 1]), n_mc=2)
        np.testing.assert_array_equal(part.mean.detach().numpy(), full.mean[[4, 1]].detach().numpy())


class TestDeepElbo:
    def test_one_layer_equals_shallow(self, rng):
        m = DeepGP([layer(rng, 1, 1)], GaussianLik(0.2), 0, 1)
        X, y = T(rng.standard_normal((6, 1))), T(rng.standard_normal((6, 1)))
        a = deep_elbo(m, X, y, stream=stream())
        b = elbo(m.layers[0], m.likelihood, X, y)
        assert abs(a.item() - b.item()) <= 1e-12

    def test_same_seed_bitwise(self, rng):
        m = two_layer(rng)
        X, y = T(rng.standard_normal((6, 1))), T(rng.standard_normal((6, 1)))
        a = deep_elbo(m, X, y, stream=stream(7), n_mc=3).item()
        b = deep_elbo(m, X, y, stream=stream(7), n_mc=3).item()
        assert a == b
        assert deep_elbo(m, X, y, stream=stream(8), n_mc=3).item() != a

    def test_mc_vs_quadrature_over_hidden_layer(self, rng):
        m = two_layer(rng)
        X, y = rng.standard_normal((4, 1)), rng.standard_normal((4, 1))
        with torch.no_grad():
            prop = propagate(m, T(X), stream(1), n_mc=100_000)
            ve = m.likelihood.variational_expectation(T(y)[:, None, None, :], prop.mean, prop.var)[..., 0]
            per_point = ve.mean(1).numpy()
            se = (ve.std(1) / math.sqrt(ve.shape[1])).numpy()
            m1, v1 = m.layers[0].predict_f(T(X))
            z, w = hermite_rule(40)
            h = m1 + torch.sqrt(v1) * z  # (4, 40)
            m2, v2 = m.layers[1].predict_f(h[..., None])
            quad = (m.likelihood.variational_expectation(T(y)[:, None, :], m2, v2) * w).sum(-1).numpy()
        np.testing.assert_array_less(np.abs(per_point - quad), 3 * se + 1e-9)

    def test_latent_model_rejected(self, rng):
        with pytest.raises(ValueError):
            deep_elbo(two_layer(rng, latent_dim=1), T(np.zeros((4, 1))), T(np.zeros((4, 1))))


def shallow_lv(rng, N=5, ls_h=1.0, prior_table=False):
    l1 = SVGPLayer(RBF(2, 1.0, [0.9, ls_h]), InducingPoints(rng.uniform(-2, 2, (4, 2))), None, 1, "full",
                   rng.standard_normal((4, 1)), 0.5)
    table = LatentPosteriorTable(N, 1) if prior_table else LatentPosteriorTable(
        N, 1, rng.standard_normal((N, 1)), T(rng.uniform(0.3, 0.9, (N, 1))))
    return DeepGP([l1], GaussianLik(0.3), 1, 1, table)


class TestLatentElbo:
    def test_prior_table_has_zero_kl(self):
        assert LatentPosteriorTable(4, 2).kl(np.arange(4)).sum().item() == 0.0

    def test_decoupled_latent(self, rng):
        m = shallow_lv(rng, ls_h=1e6)
        X, y = T(rng.standard_normal((5, 1))), T(rng.standard_normal((5, 1)))
        l1 = m.layers[0]
        plain = SVGPLayer(RBF(1, 1.0, 0.9), InducingPoints(l1.inducing.Z[:, :1].detach()), None, 1, "full",
                          l1.vstate.q_mean.detach(), l1.vstate.sqrt.detach())
        expected = elbo(plain, m.likelihood, X, y) - m.latent.kl(np.arange(5)).sum()
        assert lv_elbo(m, X, y, stream=stream(), n_mc=4).item() == pytest.approx(expected.item(), abs=1e-3)

    def test_single_point_vs_tensor_quadrature(self, rng):
        m = two_layer(rng, latent_dim=1, N=1)
        X, y = rng.standard_normal((1, 1)), rng.standard_normal((1, 1))
        with torch.no_grad():
            R = 100_000
            idx = np.zeros(1, dtype=int)
            ve, _ = _latent_weights(m, m.latent, T(X), T(y), idx, stream(2), R, 1, DEFAULT_QUADRATURE)
            ve = ve[0, :, 0]
            est, se = ve.mean().item(), ve.std().item() / math.sqrt(R)
            hm, hs = m.latent.rows(idx)
            z, w = hermite_rule(30)
            h = hm[0, 0] + hs[0, 0] * z
            inp = torch.stack([T(X[0, 0]).expand(30), h], -1)
            m1, v1 = m.layers[0].predict_f(inp)  # (30, 1)
            f1 = m1 + torch.sqrt(v1) * z  # (30 h-nodes, 30 f-nodes)
            m2, v2 = m.layers[1].predict_f(f1[..., None])
            ve_grid = m.likelihood.variational_expectation(T(y).expand(30, 30, 1), m2, v2)
            quad = (w[:, None] * w[None, :] * ve_grid).sum().item()
        assert est == pytest.approx(quad, abs=3 * se)

    def test_missing_row(self, rng):
        m = shallow_lv(rng, N=3)
        with pytest.raises(MissingLatentRow):
            lv_elbo(m, T(np.zeros((1, 1))), T(np.zeros((1, 1))), idx=[5], total_N=3)


class TestImportanceWeighted:
    def test_s1_equals_lv_exactly(self, rng):
        for m in (shallow_lv(rng), two_layer(rng, latent_dim=1, N=5)):
            X, y = T(rng.standard_normal((5, 1))), T(rng.standard_normal((5, 1)))
            a = iw_lv_elbo(m, X, y, stream=stream(4), iw=IWConfig(S=1)).item()
            b = lv_elbo(m, X, y, stream=stream(4), kl_estimator="sample").item()
            assert a == b

    def test_s1_equals_analytic_lv_in_expectation(self, rng):
        m = shallow_lv(rng)
        X, y = T(rng.standard_normal((5, 1))), T(rng.standard_normal((5, 1)))
        with torch.no_grad():
            est = iw_lv_estimates(m, X, y, stream=stream(), iw=IWConfig(S=1, outer_mc=20_000)).numpy()
            exact = lv_elbo(m, X, y, stream=stream(), n_mc=20_000).item()
        assert est.mean() == pytest.approx(exact, abs=3 * est.std() / math.sqrt(len(est)) + 0.05)

    def test_unit_weights_at_prior(self, rng):
        m = shallow_lv(rng, prior_table=True)
        X, y = T(rng.standard_normal((5, 1))), T(rng.standard_normal((5, 1)))
        with torch.no_grad():
            ve, log_ratio = _latent_weights(m, m.latent, X, y, np.arange(5), stream(), 2, 5, DEFAULT_QUADRATURE)
            assert not log_ratio.any()
            terms = iw_lv_terms(m, X, y, stream=stream(), iw=IWConfig(S=5, outer_mc=2))
        expected = torch.logsumexp(ve, -1) - math.log(5)
        np.testing.assert_array_equal(terms.numpy(), expected.numpy())

    def test_bound_increases_with_S(self, rng):
        m = shallow_lv(rng)
        X, y = T(rng.standard_normal((5, 1))), T(rng.standard_normal((5, 1)))
        with torch.no_grad():
            means = [iw_lv_estimates(m, X, y, stream=stream(), iw=IWConfig(S=S, outer_mc=4000)).mean().item()
                     for S in (1, 4, 16)]
        assert means[0] < means[1] < means[2]


class TestPredictDeep:
    def test_single_layer_collapses(self, rng):
        m = DeepGP([layer(rng, 1, 1)], GaussianLik(0.2), 0, 1)
        X = T(rng.standard_normal((5, 1)))
        p = predict_deep(m, X, n_paths=1)
        mean, var = predict_f(m.layers[0], X)
        np.testing.assert_array_equal(p.mean.numpy(), mean.detach().numpy())
        np.testing.assert_allclose(p.var.numpy(), (var + m.likelihood.noise).detach().numpy(), rtol=0, atol=0)

    def test_pooled_mean_is_path_average(self, rng):
        m = two_layer(rng)
        p = predict_deep(m, T(rng.standard_normal((4, 1))), n_paths=50)
        np.testing.assert_allclose(p.mean.numpy(), p.path_mean.mean(0).numpy(), atol=1e-14)

    def test_same_seed_same_paths(self, rng):
        m = two_layer(rng)
        X = T(rng.standard_normal((4, 1)))
        a = predict_deep(m, X, n_paths=3, rng=CounterRNG(9))
        b = predict_deep(m, X, n_paths=3, rng=CounterRNG(9))
        np.testing.assert_array_equal(a.mean.numpy(), b.mean.numpy())

    def test_log_density_vs_mc(self, rng):
        m = two_layer(rng)
        X, y = T([[0.4]]), T([[0.1]])
        P = 4000
        p = predict_deep(m, X, n_paths=P, rng=CounterRNG(1))
        got = p.log_density(y).item()
        with torch.no_grad():
            m1, v1 = m.layers[0].predict_f(X)
            f1 = m1 + torch.sqrt(v1) * T(np.random.default_rng(11).standard_normal(100_000))[:, None]
            m2, v2 = m.layers[1].predict_f(f1[:, None, :])
            v = v2 + m.likelihood.noise
            dens = torch.exp(-0.5 * (math.log(2 * math.pi) + torch.log(v) + (y - m2) ** 2 / v))[:, 0, 0].numpy()
        oracle = math.log(dens.mean())
        se = dens.std() / (dens.mean() * math.sqrt(P))
        assert got == pytest.approx(oracle, abs=3 * se)
