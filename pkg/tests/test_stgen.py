import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stwa import tensor as T
from stwa.stgen import (
    ConfigError,
    ParamDecoder,
    SpatialLatent,
    TemporalEncoder,
    combine_latent,
    decode_params,
    encode_temporal,
    kl_to_standard_normal,
    reparameterize,
    sample_spatial,
    sample_temporal,
    sum_gaussian,
)
from stwa.tensor import ShapeError, Tensor, grad_check


def _zero_out(module):
    for p in module.parameters():
        p.data[...] = 0.0


def test_zero_noise_returns_mean():
    lat = SpatialLatent(np.random.default_rng(0), 3, 4)
    lat.logvar.data[...] = 1.3
    assert np.array_equal(sample_spatial(lat, np.zeros((3, 4))).data, lat.mu.data)
    assert sample_spatial(lat, None) is lat.mu


def test_unit_gaussian_passes_noise_through():
    eps = np.random.default_rng(1).standard_normal((2, 5))
    z = reparameterize(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 5))), eps)
    assert np.array_equal(z.data, eps)


def test_reparameterize_shape_mismatch():
    with pytest.raises(ShapeError):
        reparameterize(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), np.zeros((3, 2)))


def test_encoder_zero_weights_gives_zeros():
    enc = TemporalEncoder(np.random.default_rng(0), 12, 4)
    _zero_out(enc)
    x = Tensor(np.random.default_rng(1).standard_normal((3, 12)))
    mu, lv = encode_temporal(enc, x)
    assert not mu.data.any() and not lv.data.any()


def test_encoder_output_shapes():
    enc = TemporalEncoder(np.random.default_rng(0), 12, 4)
    mu, lv = enc(Tensor(np.ones((3, 12))))
    assert mu.shape == (3, 4) and lv.shape == (3, 4)


def test_temporal_sampling_limits():
    mu = Tensor([[0.3, -1.2]])
    assert np.array_equal(sample_temporal(mu, Tensor([[0.0, 0.0]]), np.zeros((1, 2))).data, mu.data)
    tiny = sample_temporal(mu, Tensor([[-40.0, -40.0]]), np.array([[1.0, -1.0]]))
    np.testing.assert_allclose(tiny.data, mu.data, atol=1e-8)


def test_combine_latent():
    assert combine_latent(Tensor([1.0, 2.0]), Tensor([0.0, 0.0])).data.tolist() == [1.0, 2.0]
    v = Tensor([[0.5, -2.0]])
    assert np.array_equal(combine_latent(Tensor(np.zeros((1, 2))), v).data, v.data)


def test_combine_latent_broadcasts_over_batch():
    z = Tensor(np.ones((3, 4)))
    zt = Tensor(np.zeros((5, 3, 4)))
    assert combine_latent(z, zt).shape == (5, 3, 4)
    with pytest.raises(ShapeError):
        combine_latent(z, Tensor(np.zeros((3, 5))))


def test_decoder_zero_weights_give_zero_projections():
    dec = ParamDecoder(np.random.default_rng(0), 4, 1, 4)
    _zero_out(dec)
    gen = decode_params(dec, Tensor(np.random.default_rng(1).standard_normal((3, 4))))
    assert not gen.K.data.any() and not gen.V.data.any()


def test_decoder_differs_across_sensors():
    dec = ParamDecoder(np.random.default_rng(0), 4, 4, 4)
    gen = dec(Tensor(np.random.default_rng(1).standard_normal((2, 4))))
    assert np.max(np.abs(gen.K.data[0] - gen.K.data[1])) > 0


def test_decoder_block_size():
    dec = ParamDecoder(np.random.default_rng(0), 4, 1, 4, with_correlation=False)
    gen = dec(Tensor(np.zeros((3, 4))))
    assert dec.block_size == 8
    assert gen.K.size + gen.V.size == 24
    assert gen.K.shape == (3, 1, 4)


def test_decoder_block_mismatch_is_config_error():
    dec = ParamDecoder(np.random.default_rng(0), 4, 2, 4)
    dec.net.layers[-1].weight.data = np.zeros((32, 5))
    dec.net.layers[-1].bias.data = np.zeros(5)
    with pytest.raises(ConfigError):
        dec(Tensor(np.zeros((3, 4))))


def test_kl_of_standard_normal_is_zero():
    assert kl_to_standard_normal(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4)))).item() == 0.0


def test_kl_closed_form_spot():
    assert kl_to_standard_normal(Tensor([[1.0]]), Tensor([[0.0]])).item() == 0.5


def test_kl_is_mean_over_rows():
    one = kl_to_standard_normal(Tensor([[1.0, 0.0]]), Tensor([[0.0, 0.0]])).item()
    two = kl_to_standard_normal(Tensor([[1.0, 0.0], [1.0, 0.0]]), Tensor(np.zeros((2, 2)))).item()
    assert one == two == 0.5


@given(st.integers(0, 10_000))
@settings(max_examples=50)
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    mu = Tensor(rng.normal(0, 3, (3, 4)))
    lv = Tensor(rng.normal(0, 3, (3, 4)))
    assert kl_to_standard_normal(mu, lv).item() >= 0.0


def test_kl_gradient():
    rng = np.random.default_rng(5)
    mu, lv = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)))
    assert grad_check(lambda: kl_to_standard_normal(mu, lv), [mu, lv]) < 1e-6


def test_sum_gaussian_adds_variances():
    mu, lv = sum_gaussian(Tensor([[1.0]]), Tensor([[np.log(2.0)]]), Tensor([[2.0]]), Tensor([[np.log(3.0)]]))
    assert mu.item() == 3.0
    assert np.isclose(np.exp(lv.item()), 5.0, rtol=1e-15)


def test_sum_gaussian_empirical_variance():
    rng = np.random.default_rng(0)
    a = rng.normal(1.0, np.sqrt(0.5), 200_000)
    b = rng.normal(-2.0, np.sqrt(1.5), 200_000)
    mu, lv = sum_gaussian(Tensor([[1.0]]), Tensor([[np.log(0.5)]]), Tensor([[-2.0]]), Tensor([[np.log(1.5)]]))
    assert abs((a + b).mean() - mu.item()) < 0.02
    assert abs((a + b).var() - np.exp(lv.item())) < 0.03


def test_deterministic_latent_has_no_logvar():
    lat = SpatialLatent(np.random.default_rng(0), 2, 3, stochastic=False)
    assert lat.logvar is None and not lat.stochastic
    assert len(lat.parameters()) == 1
    assert kl_to_standard_normal(Tensor(np.zeros((2, 3))), None).item() == 0.0


def test_temporal_sampling_gradient_through_noise():
    rng = np.random.default_rng(7)
    mu, lv = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)) * 0.1)
    eps = rng.standard_normal((2, 3))
    assert grad_check(lambda: T.tsum(T.tanh(sample_temporal(mu, lv, eps))), [mu, lv]) < 1e-6
