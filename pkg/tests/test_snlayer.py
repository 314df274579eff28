import numpy as np
import pytest

from lipbayes.numkit import RngStream, gaussian_sample, svd_max_singular
from lipbayes.snlayer import (
    PowerIterationError,
    VariationalLinear,
    backward,
    forward_fixed,
    kl_to_prior,
    sample_forward,
)


def make_layer(seed=0, m=6, n=8, sn_iters=1, **kw):
    return VariationalLinear.create(m, n, RngStream(seed, purpose="layer"), sn_iters=sn_iters, **kw)


def randomized_layer(seed, m=6, n=8, sn_iters=1):
    layer = make_layer(seed, m, n, sn_iters)
    gen = RngStream(seed, purpose="params").generator()
    layer.mu = gen.normal(0, 0.5, (m, n))
    layer.rho = np.log(0.01) + gen.normal(0, 0.3, (m, n))
    return layer


class TestSampleForward:
    def test_identity_weights_pass_input_through(self):
        layer = make_layer(m=4, n=4, sn_iters=50)
        layer.mu = np.eye(4)
        layer.rho = np.full((4, 4), -40.0)  # sigma ~ 4e-18, the sigma->0 limit
        Z = gaussian_sample(RngStream(1, purpose="Z"), 5, 4)
        A, cache = sample_forward(layer, Z, RngStream(2, purpose="eps"))
        assert cache.sigma_hat == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(A, Z, atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2, 4])
    def test_unit_spectral_norm_of_effective_weight(self, seed):
        layer = randomized_layer(seed, sn_iters=50)
        Z = gaussian_sample(RngStream(4, purpose="Z"), 3, 8)
        for s in range(5):
            _, cache = sample_forward(layer, Z, RngStream(5, purpose="eps", step=s))
            assert svd_max_singular(cache.W_tilde) <= 1.0 + 1e-3

    def test_joint_rescaling_is_shape_invariant(self):
        # scaling mu and sigma by c scales the sample and its spectral norm
        # alike, so the normalized weight is unchanged (up to the eps guard)
        layer = randomized_layer(6)
        eps = gaussian_sample(RngStream(7, purpose="eps"), 6, 8)
        Z = gaussian_sample(RngStream(8, purpose="Z"), 4, 8)
        _, cache = forward_fixed(layer, Z, eps)
        scaled = layer.clone()
        c = 3.7
        scaled.mu = layer.mu * c
        scaled.rho = layer.rho + np.log(c)
        _, cache_scaled = forward_fixed(scaled, Z, eps)
        np.testing.assert_allclose(cache_scaled.W_tilde, cache.W_tilde, rtol=1e-9)

    def test_exact_scalar_factorization(self):
        layer = randomized_layer(9)
        Z = gaussian_sample(RngStream(10, purpose="Z"), 4, 8)
        _, cache = sample_forward(layer, Z, RngStream(11, purpose="eps"))
        np.testing.assert_allclose(
            cache.W_tilde * cache.scale, cache.W, rtol=1e-15, atol=0
        )

    def test_signal_to_noise_ratio_preserved(self):
        layer = randomized_layer(12)
        Z = np.zeros((1, 8))
        _, cache = sample_forward(layer, Z, RngStream(13, purpose="eps"))
        sigma = np.exp(layer.rho)
        mu_tilde = layer.mu / cache.scale
        sigma_tilde = sigma / cache.scale
        np.testing.assert_allclose(
            sigma_tilde / np.abs(mu_tilde), sigma / np.abs(layer.mu), rtol=1e-14
        )

    def test_spectral_norm_estimate_collapse_raises(self):
        layer = make_layer(m=2, n=2, sn_iters=1)
        layer.stochastic = False
        layer.mu = np.array([[0.0, 0.0], [1.0, 0.0]])
        layer.u_buffer = np.array([1.0, 0.0])  # orthogonal to range(W)
        with pytest.raises(PowerIterationError):
            sample_forward(layer, np.ones((1, 2)), RngStream(0))

    def test_spectral_bound_invariant_up_to_64x64(self):
        # the persistent buffer is the operating regime: a few forwards warm
        # it up even when the top of the spectrum is nearly degenerate
        # (common for large square Gaussian matrices)
        for seed, (m, n) in enumerate([(64, 64), (64, 16), (16, 64)]):
            layer = randomized_layer(20 + seed, m=m, n=n, sn_iters=50)
            stream = RngStream(30 + seed, purpose="eps")
            for s in range(5):
                sample_forward(layer, np.zeros((1, n)), stream.child("warm", step=s))
            for s in range(3):
                _, cache = sample_forward(
                    layer, np.zeros((1, n)), stream.child("check", step=s)
                )
                smax = svd_max_singular(cache.W_tilde)
                assert 1.0 - 1e-3 <= smax <= 1.0 + 1e-3


class TestKlToPrior:
    def test_zero_at_prior(self):
        layer = make_layer()
        layer.mu = np.zeros_like(layer.mu)
        layer.rho = np.full_like(layer.rho, np.log(layer.prior_std))
        assert kl_to_prior(layer) == pytest.approx(0.0, abs=1e-12)

    def test_single_weight_hand_value(self):
        layer = VariationalLinear(
            mu=np.array([[0.01]]),
            rho=np.array([[np.log(0.01)]]),
            u_buffer=np.array([1.0]),
            prior_std=0.01,
        )
        assert kl_to_prior(layer) == pytest.approx(0.5, rel=1e-12)

    def test_matches_quadrature_oracle(self):
        from scipy.integrate import quad

        gen = RngStream(40, purpose="kl").generator()
        total = 0.0
        params = []
        for _ in range(3):
            mu = gen.normal(0, 0.05)
            sigma = float(np.exp(np.log(0.01) + gen.normal(0, 0.5)))
            params.append((mu, sigma))
        s0 = 0.01

        def kl_integrand(w, mu, sigma):
            q = np.exp(-0.5 * ((w - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
            log_q = -0.5 * ((w - mu) / sigma) ** 2 - np.log(sigma * np.sqrt(2 * np.pi))
            log_p = -0.5 * (w / s0) ** 2 - np.log(s0 * np.sqrt(2 * np.pi))
            return q * (log_q - log_p)

        for mu, sigma in params:
            lo, hi = mu - 40 * sigma, mu + 40 * sigma
            val, _ = quad(kl_integrand, lo, hi, args=(mu, sigma), limit=200)
            total += val
        layer = VariationalLinear(
            mu=np.array([[p[0] for p in params]]),
            rho=np.array([[np.log(p[1]) for p in params]]),
            u_buffer=np.array([1.0]),
            prior_std=s0,
        )
        assert kl_to_prior(layer) == pytest.approx(total, abs=1e-6)

    def test_nonnegative_for_random_parameters(self):
        gen = RngStream(41, purpose="klpos").generator()
        for _ in range(100):
            layer = VariationalLinear(
                mu=gen.normal(0, 1, (3, 4)),
                rho=gen.normal(-4, 2, (3, 4)),
                u_buffer=np.ones(3),
            )
            assert kl_to_prior(layer) >= 0.0


def max_rel_err(a, b, floor=1e-4):
    return float(np.max(np.abs(a - b) / (np.maximum(np.abs(a), np.abs(b)) + floor)))


class TestBackward:
    def test_zero_upstream_gradient(self):
        layer = randomized_layer(50)
        Z = gaussian_sample(RngStream(51, purpose="Z"), 4, 8)
        _, cache = sample_forward(layer, Z, RngStream(52, purpose="eps"))
        gZ, gmu, grho = backward(layer, cache, np.zeros((4, 6)))
        assert not gZ.any() and not gmu.any() and not grho.any()

    def test_zero_noise_reduces_to_linear_layer(self):
        layer = randomized_layer(53)
        Z = gaussian_sample(RngStream(54, purpose="Z"), 4, 8)
        eps = np.zeros((6, 8))
        _, cache = forward_fixed(layer, Z, eps)
        grad_A = gaussian_sample(RngStream(55, purpose="gA"), 4, 6)
        _, gmu, grho = backward(layer, cache, grad_A)
        np.testing.assert_allclose(gmu, (grad_A.T @ Z) / cache.scale, rtol=1e-12)
        assert not grho.any()

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        layer = randomized_layer(seed, m=6, n=8)
        stream = RngStream(seed, purpose="fd")
        Z = gaussian_sample(stream.child("Z"), 4, 8)
        grad_A = gaussian_sample(stream.child("gA"), 4, 6)
        _, cache = sample_forward(layer, Z, stream.child("eps"))
        eps, scale = cache.eps, cache.scale
        gZ, gmu, grho = backward(layer, cache, grad_A)

        def loss(layer_, Z_):
            A, _ = forward_fixed(layer_, Z_, eps, scale=scale)
            return float((grad_A * A).sum())

        h = 1e-5
        for arr, analytic in ((layer.mu, gmu), (layer.rho, grho)):
            fd = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = arr[ix]
                arr[ix] = orig + h
                fp = loss(layer, Z)
                arr[ix] = orig - h
                fm = loss(layer, Z)
                arr[ix] = orig
                fd[ix] = (fp - fm) / (2 * h)
            assert max_rel_err(analytic, fd) < 1e-5
        fdZ = np.zeros_like(Z)
        it = np.nditer(Z, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = Z[ix]
            Z[ix] = orig + h
            fp = loss(layer, Z)
            Z[ix] = orig - h
            fm = loss(layer, Z)
            Z[ix] = orig
            fdZ[ix] = (fp - fm) / (2 * h)
        assert max_rel_err(gZ, fdZ) < 1e-5

    def test_shape_mismatch_rejected(self):
        layer = randomized_layer(60)
        Z = gaussian_sample(RngStream(61, purpose="Z"), 4, 8)
        _, cache = sample_forward(layer, Z, RngStream(62, purpose="eps"))
        with pytest.raises(ValueError):
            backward(layer, cache, np.zeros((4, 5)))
