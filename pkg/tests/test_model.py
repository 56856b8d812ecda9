"""Core model contracts: activations, latent ops, FT layers, encode/decode."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchret.errors import ContractViolation, NonFiniteLossError
from sketchret.model import (
    DisentangledVAE,
    FeatureTransform,
    ImageTensor,
    Modality,
    fuse,
    init_parameters,
    kl_divergence,
    reparameterize,
    softplus,
)
from sketchret.seeding import torch_generator


class TestSoftplus:
    def test_at_zero(self):
        assert softplus(0.0) == pytest.approx(0.693147, abs=1e-6)

    def test_large_negative_underflows_to_zero(self):
        assert 0 < softplus(-40.0) < 1e-15

    def test_large_positive_nearly_identity(self):
        assert softplus(10.0) == pytest.approx(10.0000454, abs=1e-6)

    def test_no_overflow_far_out(self):
        assert softplus(1000.0) == pytest.approx(1000.0)
        assert softplus(-1000.0) == 0.0

    def test_tensor_matches_scalar(self):
        xs = torch.tensor([-3.0, 0.0, 2.5, 10.0], dtype=torch.float64)
        got = softplus(xs)
        for x, g in zip(xs.tolist(), got.tolist()):
            assert g == pytest.approx(softplus(x), rel=1e-12)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_monotone_and_positive(self, a, b):
        lo, hi = sorted((a, b))
        assert softplus(lo) <= softplus(hi)
        assert softplus(lo) > 0


class TestReparameterize:
    def test_unit_sigma_substitution(self):
        z = reparameterize(
            torch.tensor([1.0, 2.0]),
            torch.zeros(2),
            torch.tensor([0.5, -1.0]),
        )
        assert torch.allclose(z, torch.tensor([1.5, 1.0]))

    def test_zero_noise_returns_mu(self):
        mu = torch.randn(8, generator=torch_generator(1))
        lv = torch.randn(8, generator=torch_generator(2))
        assert torch.equal(reparameterize(mu, lv, torch.zeros(8)), mu)

    def test_sigma_two_substitution(self):
        z = reparameterize(
            torch.zeros(1), torch.tensor([2.0 * math.log(2.0)]), torch.ones(1)
        )
        assert z.item() == pytest.approx(2.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            reparameterize(torch.zeros(3), torch.zeros(2), torch.zeros(3))

    def test_moments_match_distribution(self):
        # empirical mean/var of draws vs (mu, exp(log_var)), 4 standard errors
        g = torch_generator(5)
        mu = torch.tensor([0.3, -1.2, 2.0])
        lv = torch.tensor([0.0, 1.0, -1.0])
        n = 100_000
        eps = torch.randn(n, 3, generator=g)
        draws = reparameterize(mu.expand(n, 3), lv.expand(n, 3), eps)
        var = lv.exp()
        se_mean = (var / n).sqrt()
        assert ((draws.mean(0) - mu).abs() <= 4 * se_mean).all()
        se_var = var * math.sqrt(2.0 / (n - 1))
        assert ((draws.var(0) - var).abs() <= 4 * se_var).all()


class TestFuse:
    def test_direct_sum(self):
        assert torch.equal(
            fuse(torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0])),
            torch.tensor([4.0, 6.0]),
        )

    def test_additive_identity(self):
        z = torch.randn(6, generator=torch_generator(3))
        assert torch.equal(fuse(z, torch.zeros(6)), z)

    def test_cancellation(self):
        assert torch.equal(
            fuse(torch.tensor([-1.0, 1.0]), torch.tensor([1.0, -1.0])),
            torch.zeros(2),
        )

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            fuse(torch.zeros(3), torch.zeros(4))

    @given(st.integers(1, 16), st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_exactly_elementwise_addition(self, d, seed):
        g = torch_generator("fuse", seed)
        a = torch.randn(d, generator=g)
        b = torch.randn(d, generator=g)
        assert torch.equal(fuse(a, b), a + b)


class TestKLDivergence:
    def test_zero_at_prior(self):
        assert float(kl_divergence(torch.zeros(4), torch.zeros(4))) == 0.0

    def test_unit_mean_shift(self):
        assert float(kl_divergence(torch.ones(1), torch.zeros(1))) == pytest.approx(0.5)

    def test_closed_form_e_minus_two(self):
        got = float(kl_divergence(torch.zeros(2), torch.ones(2)))
        assert got == pytest.approx(math.e - 2.0, abs=1e-6)

    def test_monte_carlo_agreement(self):
        # KL = E_q[log q - log p] estimated from samples of q = N(0, e*I), d=2
        mu, lv = torch.zeros(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64)
        g = torch_generator(9)
        n = 100_000
        eps = torch.randn(n, 2, generator=g, dtype=torch.float64)
        x = reparameterize(mu.expand(n, 2), lv.expand(n, 2), eps)
        var = lv.exp()
        log_q = -0.5 * (((x - mu) ** 2) / var + lv + math.log(2 * math.pi)).sum(1)
        log_p = -0.5 * (x ** 2 + math.log(2 * math.pi)).sum(1)
        mc = float((log_q - log_p).mean())
        assert mc == pytest.approx(math.e - 2.0, rel=0.02)

    def test_non_negative_over_random_draws(self):
        g = torch_generator(13)
        mu = torch.randn(10_000, 4, generator=g)
        lv = torch.randn(10_000, 4, generator=g).clamp(-6, 6)
        assert (kl_divergence(mu, lv) >= 0).all()

    def test_non_finite_raises_numerical_error(self):
        with pytest.raises(NonFiniteLossError):
            kl_divergence(torch.tensor([float("nan")]), torch.zeros(1))


class TestFeatureTransform:
    def test_limiting_identity(self):
        ft = FeatureTransform(4)
        with torch.no_grad():
            ft.bias_spread.fill_(-40.0)
            ft.scale_spread.fill_(-40.0)
        g = torch_generator(2)
        feat = torch.randn(2, 4, 5, 5, generator=g)
        eb, es = ft.sample_noise(g, feat.dtype, feat.device)
        assert (ft(feat, eb, es) - feat).abs().max() < 1e-6

    def test_pure_bias_substitution(self):
        ft = FeatureTransform(3)
        with torch.no_grad():
            ft.bias_spread.fill_(0.5)
        feat = torch.zeros(1, 3, 2, 2)
        out = ft(feat, torch.ones(3), torch.zeros(3))
        expected = softplus(torch.tensor(0.5)).item()
        assert torch.allclose(out, torch.full_like(out, expected))

    def test_scale_mean_is_one(self):
        # eta = 1 + softplus(phi) * eps has mean 1 over many draws
        ft = FeatureTransform(1)
        with torch.no_grad():
            ft.scale_spread.fill_(0.8)
        g = torch_generator(21)
        n = 10_000
        eps = torch.randn(n, generator=g)
        etas = 1.0 + softplus(ft.scale_spread.detach()) * eps
        sd = float(softplus(ft.scale_spread.detach()))
        assert abs(etas.mean().item() - 1.0) <= 4 * sd / math.sqrt(n)

    def test_channel_mismatch_rejected(self):
        ft = FeatureTransform(4)
        with pytest.raises(ContractViolation):
            ft(torch.zeros(1, 3, 2, 2), torch.zeros(4), torch.zeros(4))


@pytest.fixture(scope="module")
def small_model():
    model = DisentangledVAE(image_size=16, channels=(4, 8), d=6)
    init_parameters(model, torch_generator("small-model"))
    model.eval()
    return model


class TestEncodeDecode:
    def test_output_dimensions(self, small_model):
        code = small_model.encode(torch.zeros(2, 1, 16, 16))
        assert code.z_inv.shape == code.mu.shape == code.log_var.shape == (2, 6)

    def test_deterministic_without_ft(self, small_model):
        x = torch.rand(1, 1, 16, 16, generator=torch_generator(4)) * 2 - 1
        a = small_model.encode(x)
        b = small_model.encode(x)
        assert torch.equal(a.z_inv, b.z_inv)
        assert torch.equal(a.mu, b.mu)
        assert torch.equal(a.log_var, b.log_var)

    def test_ft_limit_matches_inactive(self, small_model):
        x = torch.rand(1, 1, 16, 16, generator=torch_generator(6)) * 2 - 1
        for ft in small_model.encoder.fts:
            with torch.no_grad():
                ft.bias_spread.fill_(-40.0)
                ft.scale_spread.fill_(-40.0)
        on = small_model.encode(x, ft_active=True, generator=torch_generator(8))
        off = small_model.encode(x, ft_active=False)
        assert (on.z_inv - off.z_inv).abs().max() < 1e-5
        init_parameters(small_model, torch_generator("small-model"))  # restore

    def test_wrong_size_rejected(self, small_model):
        with pytest.raises(ContractViolation):
            small_model.encode(torch.zeros(1, 1, 8, 8))

    def test_decode_range_and_shape(self, small_model):
        g = torch_generator(10)
        z = torch.randn(3, 6, generator=g) * 5
        for modality in (Modality.SKETCH, "photo"):
            img = small_model.decode(z, modality)
            assert img.shape == (3, 1, 16, 16)
            assert img.abs().max() < 1.0

    def test_decode_deterministic(self, small_model):
        z = torch.randn(6, generator=torch_generator(11))
        a = small_model.decode(z, Modality.PHOTO)
        assert torch.equal(a, small_model.decode(z, Modality.PHOTO))

    def test_invalid_modality_rejected(self, small_model):
        with pytest.raises(ContractViolation):
            small_model.decode(torch.zeros(6), "painting")

    def test_init_is_seeded(self):
        a = DisentangledVAE(image_size=16, channels=(4, 8), d=6)
        b = DisentangledVAE(image_size=16, channels=(4, 8), d=6)
        init_parameters(a, torch_generator("same"))
        init_parameters(b, torch_generator("same"))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)


class TestImageTensor:
    def test_range_validation(self):
        ok = ImageTensor(torch.zeros(1, 8, 8), Modality.SKETCH)
        ok.validate(image_size=8)
        with pytest.raises(ContractViolation):
            ImageTensor(torch.full((1, 8, 8), 2.0), Modality.SKETCH).validate()

    def test_size_validation(self):
        with pytest.raises(ContractViolation):
            ImageTensor(torch.zeros(1, 8, 4), Modality.PHOTO).validate()
