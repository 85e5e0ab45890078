"""Stacked spatio-temporal aware window attention forecaster and its ablations."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .attention import (
    FusionNetwork,
    ScoreCounter,
    WeightingNetwork,
    aggregate_proxies,
    canonical_attention,
    fuse_recurrent,
    mean_aggregate,
    project,
    proxy_attention,
    proxy_weights,
    sensor_correlation,
)
from .nn import MLP, Linear, Module
from .stgen import (
    ConfigError,
    GeneratedParams,
    ParamDecoder,
    SpatialLatent,
    TemporalEncoder,
    decode_params,
    kl_to_standard_normal,
    sample_spatial,
    sample_temporal,
    combine_latent,
    sum_gaussian,
)
from .tensor import Tensor

VARIANTS = ("SA", "WA-1", "WA", "S-WA", "ST-WA", "ST-WA-det")
GENERATED = ("S-WA", "ST-WA", "ST-WA-det")
AGGREGATORS = ("weighted", "mean")


@dataclass
class ModelConfig:
    N: int = 8
    F: int = 1
    H: int = 12
    U: int = 12
    d: int = 32
    k: int = 16
    L: int = 3
    S: list = field(default_factory=lambda: [3, 2, 2])
    p: int = 1
    heads: int = 1
    alpha: float = 0.1
    delta: float = 1.0
    lr: float = 0.001
    batch: int = 64
    patience: int = 15
    max_epochs: int = 50
    variant: str = "ST-WA"
    seed: int = 0
    encoder_hidden: list = field(default_factory=lambda: [32, 32])
    decoder_hidden: list = field(default_factory=lambda: [16, 32])
    predictor_hidden: int = 64
    skip_dim: int | None = None
    logvar_init: float = 0.0
    recurrent: bool = True
    aggregator: str = "weighted"
    generate_correlation: bool = True
    clip_norm: float | None = None

    def __post_init__(self):
        self.S = [int(s) for s in self.S]
        self.encoder_hidden = [int(h) for h in self.encoder_hidden]
        self.decoder_hidden = [int(h) for h in self.decoder_hidden]
        self.validate()

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def d_skip(self) -> int:
        return self.skip_dim or 4 * self.d

    def windows(self) -> list[int]:
        """Window sizes of the layers the variant actually stacks."""
        if self.variant == "WA-1":
            return self.S[:1]
        return self.S[: self.L]

    @property
    def depth(self) -> int:
        return 1 if self.variant == "WA-1" else self.L

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}; valid: {', '.join(AGGREGATORS)}")
        for name in ("N", "F", "H", "U", "d", "k", "L", "p", "heads", "batch", "patience", "max_epochs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")
        if self.variant != "SA":
            if len(self.S) < self.depth:
                raise ConfigError(f"need {self.depth} window sizes, got S={self.S}")
            layer_tokens(self.H, self.windows())


def layer_tokens(H: int, windows: list[int]) -> list[int]:
    """Tokens leaving each window-attention layer; raises if a size does not divide."""
    out, n = [], H
    for i, s in enumerate(windows):
        if s < 1 or n % s:
            raise ConfigError(f"window size S[{i}]={s} does not divide layer input length {n}")
        n //= s
        out.append(n)
    return out


def count_scores(config: ModelConfig) -> tuple[int, int]:
    """Analytic per-sample score counts ``(window_total, canonical_total)``.

    Window attention at a layer with input length ``n`` costs ``N * p * n``;
    canonical attention costs ``N * H**2`` at every layer.
    """
    n_layers = config.depth
    canonical = n_layers * config.N * config.H ** 2
    if config.variant == "SA":
        return 0, canonical
    window, n = 0, config.H
    for s in config.windows():
        window += config.N * config.p * n
        n //= s
    return window, canonical


def variant_scores(config: ModelConfig) -> int:
    window, canonical = count_scores(config)
    return canonical if config.variant == "SA" else window


@dataclass
class ForwardResult:
    prediction: Tensor
    kl: Tensor
    scores: ScoreCounter
    layer_outputs: list


class WindowLayer(Module):
    """One window-attention layer with its own proxies and parameter source."""

    def __init__(self, rng, cfg: ModelConfig, n_in: int, window: int, generated: bool):
        d = cfg.d
        self.window = window
        self.n_windows = n_in // window
        self.proxies = T.uniform_init(rng, (self.n_windows, cfg.N, cfg.p, d), d)
        self.weighting = WeightingNetwork(rng, cfg.p, d)
        self.fusion = FusionNetwork(rng, d)
        if generated:
            self.decoder = ParamDecoder(rng, cfg.k, d, d, tuple(cfg.decoder_hidden),
                                        with_correlation=cfg.generate_correlation)
        else:
            self.K = T.uniform_init(rng, (d, d), d)
            self.V = T.uniform_init(rng, (d, d), d)
        if not (generated and cfg.generate_correlation):
            self.theta1 = T.uniform_init(rng, (d, d), d)
            self.theta2 = T.uniform_init(rng, (d, d), d)
        self._cfg = cfg

    def params_from(self, theta: Tensor | None) -> GeneratedParams:
        if theta is None:
            return GeneratedParams(K=self.K, V=self.V, theta1=self.theta1, theta2=self.theta2)
        gen = decode_params(self.decoder, theta)
        if gen.theta1 is None:
            gen.theta1, gen.theta2 = self.theta1, self.theta2
        return gen

    def __call__(self, x: Tensor, params: GeneratedParams, counter: ScoreCounter,
                 recurrent: bool | None = None, aggregate: bool = True) -> Tensor:
        cfg = self._cfg
        recurrent = cfg.recurrent if recurrent is None else recurrent
        S = self.window
        lead = x.shape[:-2]  # (..., N)
        keys = project(x, params.K)
        values = project(x, params.V)
        h_prev = T.zeros((*lead, cfg.d))
        outputs = []
        for w in range(self.n_windows):
            P_w = T.take(self.proxies, (w,))
            if recurrent:
                P_w = fuse_recurrent(self.fusion, h_prev, P_w)
            sl = (Ellipsis, slice(w * S, (w + 1) * S), slice(None))
            h_w = proxy_attention(P_w, T.take(keys, sl), T.take(values, sl), cfg.heads, counter)
            if not aggregate:
                outputs.append(h_w)
                continue
            if cfg.aggregator == "mean":
                h_hat = mean_aggregate(h_w)
            else:
                h_hat = aggregate_proxies(proxy_weights(self.weighting, h_w), h_w)
            h_prev = h_hat
            outputs.append(sensor_correlation(params.theta1, params.theta2, h_hat))
        if not aggregate:
            return T.concat(outputs, axis=-2)
        return T.stack(outputs, axis=-2)  # (..., N, W, d)


class CanonicalLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        d = cfg.d
        self.Q = T.uniform_init(rng, (d, d), d)
        self.K = T.uniform_init(rng, (d, d), d)
        self.V = T.uniform_init(rng, (d, d), d)
        self.theta1 = T.uniform_init(rng, (d, d), d)
        self.theta2 = T.uniform_init(rng, (d, d), d)
        self._heads = cfg.heads

    def __call__(self, x: Tensor, counter: ScoreCounter) -> Tensor:
        h = canonical_attention(x, self.Q, self.K, self.V, self._heads, counter)
        # sensor correlation per timestamp: move time ahead of sensors
        nd = h.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        ht = T.permute(h, axes)
        return T.permute(sensor_correlation(self.theta1, self.theta2, ht), axes)


class STWAModel(Module):
    """Forecaster mapping ``(B, N, H, F)`` inputs to ``(B, N, U, F)`` predictions."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.config = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        d = cfg.d
        v = cfg.variant
        self.embed = Linear(rng, cfg.F, d)
        self.latent = None
        self.encoder = None
        if v in GENERATED:
            stochastic = v != "ST-WA-det"
            self.latent = SpatialLatent(rng, cfg.N, cfg.k, stochastic, cfg.logvar_init)
            if v in ("ST-WA", "ST-WA-det"):
                self.encoder = TemporalEncoder(rng, cfg.H * cfg.F, cfg.k,
                                               tuple(cfg.encoder_hidden), stochastic)
        if v == "SA":
            self.layers = [CanonicalLayer(rng, cfg) for _ in range(cfg.L)]
            self.skips = [Linear(rng, d, cfg.d_skip)]
        else:
            self.layers, self.skips = [], []
            n = cfg.H
            for s, n_out in zip(cfg.windows(), layer_tokens(cfg.H, cfg.windows())):
                self.layers.append(WindowLayer(rng, cfg, n, s, v in GENERATED))
                self.skips.append(Linear(rng, n_out * d, cfg.d_skip))
                n = n_out
        self.predictor = MLP(rng, (cfg.d_skip, cfg.predictor_hidden, cfg.U * cfg.F))

    # -- latent machinery -------------------------------------------------
    def _latents(self, x: Tensor, rng: np.random.Generator | None):
        """Return (theta, kl) with theta ``(N, k)`` or ``(B, N, k)``."""
        cfg = self.config
        lat = self.latent
        noisy = rng is not None and lat.stochastic
        eps_s = rng.standard_normal(lat.mu.shape) if noisy else None
        z = sample_spatial(lat, eps_s)
        if self.encoder is None:
            kl = kl_to_standard_normal(lat.mu, lat.logvar)
            return z, kl
        lead = x.shape[:-2]
        x_recent = T.reshape(x, (*lead, cfg.H * cfg.F))
        mu_t, logvar_t = self.encoder(x_recent)
        eps_t = rng.standard_normal(mu_t.shape) if noisy else None
        z_t = sample_temporal(mu_t, logvar_t, eps_t)
        theta = combine_latent(z, z_t)
        if not lat.stochastic:
            return theta, Tensor(0.0)
        mu_sum, logvar_sum = sum_gaussian(lat.mu, lat.logvar, mu_t, logvar_t)
        return theta, kl_to_standard_normal(mu_sum, logvar_sum)

    # -- forward -----------------------------------------------------------
    def forward(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> ForwardResult:
        """Run the model. ``mode="train"`` draws latent noise from ``rng``."""
        cfg = self.config
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-3:] != (cfg.N, cfg.H, cfg.F):
            raise T.ShapeError(f"input trailing shape {x.shape[-3:]} != (N, H, F)=({cfg.N}, {cfg.H}, {cfg.F})")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        sample_rng = rng if mode == "train" else None
        counter = ScoreCounter()
        lead = x.shape[:-2]  # (..., N)
        kl = Tensor(0.0)
        theta = None
        if self.latent is not None:
            theta, kl = self._latents(x, sample_rng)
            if cfg.variant == "ST-WA-det":
                kl = Tensor(0.0)
        h = self.embed(x)
        outputs = []
        if cfg.variant == "SA":
            for layer in self.layers:
                counter.start_layer()
                h = layer(h, counter)
            outputs.append(h)
            O = self.skips[0](T.mean(h, axis=-2))
        else:
            O = None
            for layer, skip in zip(self.layers, self.skips):
                counter.start_layer()
                h = layer(h, layer.params_from(theta), counter)
                outputs.append(h)
                flat = T.reshape(h, (*lead, h.shape[-2] * h.shape[-1]))
                term = skip(flat)
                O = term if O is None else O + term
        pred = self.predictor(O)
        pred = T.reshape(pred, (*lead, cfg.U, cfg.F))
        return ForwardResult(pred, kl, counter, outputs)

    __call__ = forward
