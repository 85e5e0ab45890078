"""Spatio-temporal aware parameter generation.

A per-sensor Gaussian latent (learned directly) plus a per-window Gaussian
latent (produced by an encoder from the recent history) are summed and decoded
into projection matrices for one attention layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import MLP, Module
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


class SpatialLatent(Module):
    """Per-sensor diagonal Gaussian in ``k`` dimensions.

    ``logvar`` is ``None`` for the deterministic variant, where the latent is
    pinned to its mean.
    """

    def __init__(self, rng: np.random.Generator, n_sensors: int, k: int,
                 stochastic: bool = True, logvar_init: float = 0.0):
        self.mu = Tensor(rng.standard_normal((n_sensors, k)), name="mu")
        self.logvar = Tensor(np.full((n_sensors, k), logvar_init), name="logvar") if stochastic else None

    @property
    def stochastic(self) -> bool:
        return self.logvar is not None


class TemporalEncoder(Module):
    """Maps each sensor's flattened recent window to ``(mu_t, logvar_t)``."""

    def __init__(self, rng: np.random.Generator, d_in: int, k: int,
                 hidden: tuple[int, ...] = (32, 32), stochastic: bool = True):
        self.k = k
        self._stochastic = stochastic
        out = 2 * k if stochastic else k
        self.net = MLP(rng, (d_in, *hidden, out))

    def __call__(self, x_recent: Tensor) -> tuple[Tensor, Tensor | None]:
        out = self.net(x_recent)
        if not self._stochastic:
            return out, None
        mu_t, logvar_t = T.split(out, [self.k, self.k], axis=-1)
        return mu_t, logvar_t


@dataclass
class GeneratedParams:
    K: Tensor
    V: Tensor
    Q: Tensor | None = None
    theta1: Tensor | None = None
    theta2: Tensor | None = None


class ParamDecoder(Module):
    """Decodes a latent into per-sensor projection matrices for one layer.

    Output block layout (flattened, in order): optional Q, K, V each
    ``d_in x d``, then optional theta1, theta2 each ``d x d``.
    """

    def __init__(self, rng: np.random.Generator, k: int, d_in: int, d: int,
                 hidden: tuple[int, ...] = (16, 32), with_query: bool = False,
                 with_correlation: bool = True):
        self.d_in, self.d = d_in, d
        self._names = (["Q"] if with_query else []) + ["K", "V"]
        self._shapes = [(d_in, d)] * len(self._names)
        if with_correlation:
            self._names += ["theta1", "theta2"]
            self._shapes += [(d, d), (d, d)]
        self.net = MLP(rng, (k, *hidden, self.block_size))

    @property
    def block_size(self) -> int:
        return sum(a * b for a, b in self._shapes)

    def __call__(self, theta: Tensor) -> GeneratedParams:
        return decode_params(self, theta)


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match mean shape {mu.shape}")
    return mu + T.exp(logvar * 0.5) * Tensor(eps)


def sample_spatial(latent: SpatialLatent, eps: np.ndarray | None) -> Tensor:
    """``mu + exp(logvar / 2) * eps``; ``eps=None`` returns the mean."""
    if eps is None or not latent.stochastic:
        return latent.mu
    return reparameterize(latent.mu, latent.logvar, eps)


def encode_temporal(enc: TemporalEncoder, x_recent: Tensor) -> tuple[Tensor, Tensor | None]:
    return enc(x_recent)


def sample_temporal(mu_t: Tensor, logvar_t: Tensor | None, eps: np.ndarray | None) -> Tensor:
    if eps is None or logvar_t is None:
        return mu_t
    return reparameterize(mu_t, logvar_t, eps)


def combine_latent(z_spatial: Tensor, z_temporal: Tensor) -> Tensor:
    # spatial latent is (N, k); temporal may carry a leading batch axis
    T._check_suffix(z_spatial.shape, z_temporal.shape, "combine_latent")
    return z_spatial + z_temporal


def decode_params(dec: ParamDecoder, theta: Tensor) -> GeneratedParams:
    flat = dec.net(theta)
    if flat.shape[-1] != dec.block_size:
        raise ConfigError(f"decoder emits {flat.shape[-1]} values, block needs {dec.block_size}")
    lead = flat.shape[:-1]
    pieces = T.split(flat, [a * b for a, b in dec._shapes], axis=-1)
    mats = {
        name: T.reshape(piece, lead + shape)
        for name, shape, piece in zip(dec._names, dec._shapes, pieces)
    }
    return GeneratedParams(**mats)


def kl_to_standard_normal(mu: Tensor, logvar: Tensor | None) -> Tensor:
    """Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I)), averaged over sensor rows.

    Every axis but the last counts as a row (sensors, and batch when present).
    """
    rows = int(np.prod(mu.shape[:-1])) if mu.ndim > 1 else 1
    if logvar is None:
        logvar = T.zeros(mu.shape)
    _check_same(mu, logvar, "kl_to_standard_normal")
    terms = T.exp(logvar) + T.mul(mu, mu) - 1.0 - logvar
    return T.tsum(terms) * (0.5 / rows)


def sum_gaussian(mu_a: Tensor, logvar_a: Tensor, mu_b: Tensor, logvar_b: Tensor) -> tuple[Tensor, Tensor]:
    """Mean and log-variance of the sum of two independent diagonal Gaussians."""
    mu = combine_latent(mu_a, mu_b)
    logvar = T.log(T.exp(logvar_a) + T.exp(logvar_b))
    return mu, logvar
