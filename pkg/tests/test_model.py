import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stwa import tensor as T
from stwa.attention import ScoreCounter, canonical_attention
from stwa.model import (
    VARIANTS,
    ModelConfig,
    STWAModel,
    WindowLayer,
    count_scores,
    layer_tokens,
    variant_scores,
)
from stwa.stgen import ConfigError, GeneratedParams
from stwa.tensor import Tensor


def small(variant="ST-WA", **kw):
    base = dict(N=3, H=12, U=12, F=1, d=4, k=4, L=3, S=[3, 2, 2], p=1, variant=variant,
                encoder_hidden=[8], decoder_hidden=[8], predictor_hidden=8)
    base.update(kw)
    return ModelConfig(**base)


def test_layer_tokens_worked_example():
    assert layer_tokens(12, [3, 2, 2]) == [4, 2, 1]


def test_layer_tokens_indivisible():
    with pytest.raises(ConfigError, match="S\\[1\\]=5"):
        layer_tokens(12, [3, 5])


def test_config_rejects_unknown_variant():
    with pytest.raises(ConfigError, match="ST-WA-det"):
        small("XL")


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="'bogus'"):
        ModelConfig.from_dict({"bogus": 1})


def test_config_roundtrip():
    cfg = small(p=2, alpha=0.5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_analytic_counts_spot():
    assert count_scores(small(N=1)) == (18, 432)
    assert count_scores(small(N=1, L=1, S=[12], p=12))[0] == 144


@given(st.sampled_from([12, 24, 48, 96]))
def test_window_count_linear_canonical_quadratic(H):
    w, c = count_scores(small(N=1, H=H))
    w12, c12 = count_scores(small(N=1, H=12))
    assert w * 12 == w12 * H
    assert c * 144 == c12 * H * H


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shapes_and_counts(variant):
    cfg = small(variant)
    model = STWAModel(cfg)
    x = np.random.default_rng(0).standard_normal((2, 3, 12, 1))
    res = model(x)
    assert res.prediction.shape == (2, 3, 12, 1)
    assert res.scores.total == variant_scores(cfg)
    if variant != "SA":
        assert [h.shape[-2] for h in res.layer_outputs] == layer_tokens(12, cfg.windows())


def test_unbatched_input():
    model = STWAModel(small())
    assert model(np.zeros((3, 12, 1))).prediction.shape == (3, 12, 1)


def test_input_shape_checked():
    with pytest.raises(T.ShapeError):
        STWAModel(small())(np.zeros((2, 3, 11, 1)))


def test_eval_is_deterministic():
    model = STWAModel(small())
    x = np.random.default_rng(1).standard_normal((4, 3, 12, 1))
    a, b = model(x).prediction.data, model(x).prediction.data
    assert np.array_equal(a, b)


def test_train_mode_samples_noise():
    model = STWAModel(small())
    x = np.random.default_rng(1).standard_normal((4, 3, 12, 1))
    a = model(x, mode="train", rng=np.random.default_rng(0)).prediction.data
    b = model(x, mode="train", rng=np.random.default_rng(1)).prediction.data
    c = model(x, mode="train", rng=np.random.default_rng(0)).prediction.data
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_det_variant_ignores_noise_and_has_zero_kl():
    model = STWAModel(small("ST-WA-det"))
    x = np.random.default_rng(1).standard_normal((2, 3, 12, 1))
    a = model(x, mode="train", rng=np.random.default_rng(0))
    assert np.array_equal(a.prediction.data, model(x).prediction.data)
    assert a.kl.item() == 0.0


def test_zero_predictor_gives_zero_predictions():
    model = STWAModel(small())
    for p in model.predictor.parameters():
        p.data[...] = 0
    assert not model(np.ones((2, 3, 12, 1))).prediction.data.any()


def test_single_layer_skip_is_just_projection():
    cfg = small("WA-1")
    model = STWAModel(cfg)
    x = np.random.default_rng(2).standard_normal((2, 3, 12, 1))
    res = model(x)
    h = res.layer_outputs[0].data
    flat = h.reshape(2, 3, -1)
    O = flat @ model.skips[0].weight.data + model.skips[0].bias.data
    hidden = np.maximum(O @ model.predictor.layers[0].weight.data + model.predictor.layers[0].bias.data, 0)
    out = hidden @ model.predictor.layers[1].weight.data + model.predictor.layers[1].bias.data
    np.testing.assert_allclose(res.prediction.data.reshape(2, 3, -1), out, atol=1e-14)


def test_parameter_sources_per_variant():
    names = {v: {n for n, _ in STWAModel(small(v)).named_parameters()} for v in VARIANTS}
    assert not any("decoder" in n for n in names["WA"])
    assert any("latent.mu" in n for n in names["S-WA"])
    assert not any("encoder" in n for n in names["S-WA"])
    assert any("encoder" in n for n in names["ST-WA"])
    assert "latent.logvar" not in names["ST-WA-det"]
    assert len([n for n in names["WA-1"] if n.startswith("layers.")]) < len(
        [n for n in names["WA"] if n.startswith("layers.")])


def test_generated_projections_differ_per_sensor():
    model = STWAModel(small("S-WA"))
    theta, _ = model._latents(Tensor(np.zeros((3, 12, 1))), None)
    gen = model.layers[0].params_from(theta)
    assert gen.K.shape == (3, 4, 4)
    assert np.max(np.abs(gen.K.data[0] - gen.K.data[1])) > 0


def test_temporal_latent_changes_with_input():
    model = STWAModel(small("ST-WA"))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 12, 1))
    theta, _ = model._latents(Tensor(x), None)
    assert theta.shape == (2, 3, 4)
    assert not np.array_equal(theta.data[0], theta.data[1])


def degenerate_pair(seed, N=2, H=6, d=4):
    """Window layer with W=1, S=H, p=H, proxies = x Q, no fusion or aggregation."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(N=N, H=H, d=d, k=2, L=1, S=[H], p=H, variant="WA", recurrent=False)
    layer = WindowLayer(rng, cfg, H, H, generated=False)
    x = rng.standard_normal((N, H, d))
    Q = rng.standard_normal((d, d))
    layer.proxies.data = (x @ Q)[None]
    params = GeneratedParams(K=layer.K, V=layer.V)
    out = layer(Tensor(x), params, ScoreCounter(), recurrent=False, aggregate=False).data
    ref = canonical_attention(Tensor(x), Tensor(Q), layer.K, layer.V).data
    return out, ref


@pytest.mark.parametrize("seed", range(3))
def test_degenerate_window_layer_matches_canonical(seed):
    out, ref = degenerate_pair(seed)
    assert np.max(np.abs(out - ref)) < 1e-10


def test_degenerate_cost_equals_canonical():
    w, c = count_scores(ModelConfig(N=1, H=12, L=1, S=[12], p=12, variant="WA"))
    assert w == c == 144


def test_multi_head_and_multi_proxy_forward():
    cfg = small("ST-WA", d=4, heads=2, p=2)
    res = STWAModel(cfg)(np.ones((2, 3, 12, 1)))
    assert res.prediction.shape == (2, 3, 12, 1)
    assert res.scores.total == 3 * 2 * (12 + 4 + 2)


def test_small_model_gradient_complex_step():
    cfg = small("ST-WA", L=2, S=[3, 2], encoder_hidden=[4], decoder_hidden=[4], predictor_hidden=4)
    model = STWAModel(cfg)
    x = np.random.default_rng(0).standard_normal((1, 3, 12, 1))
    y = np.random.default_rng(1).standard_normal((1, 3, 12, 1))
    from stwa.training import total_loss

    def f():
        res = model(x)
        return total_loss(res.prediction, y, res.kl, 0.1)

    assert T.complex_step_check(f, model.parameters()) < 1e-8
