"""Attention kernels: canonical self-attention, proxy window attention,
proxy aggregation, recurrent proxy fusion and sensor-correlation attention.

Shapes use a trailing ``(N, T, d)`` convention; any leading axes (a batch)
pass through. Projection matrices are either shared ``(d_in, d)`` or
per-sensor ``(..., N, d_in, d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import ShapeError, Tensor


@dataclass
class ScoreCounter:
    """Attention scores computed per input sample (batch axes excluded)."""

    total: int = 0
    per_layer: list = field(default_factory=list)

    def add(self, n: int) -> None:
        self.total += n
        if self.per_layer:
            self.per_layer[-1] += n

    def start_layer(self) -> None:
        self.per_layer.append(0)


def project(x: Tensor, W: Tensor) -> Tensor:
    """``x @ W`` for shared or per-sensor projection matrices.

    ``x`` is ``(..., N, T, d_in)``; a per-sensor ``W`` is ``(..., N, d_in, d)``
    and applies to every timestamp of its sensor.
    """
    return T.matmul(x, W)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    if heads == 1:
        return x
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, heads, d // heads))
    nd = len(lead) + 3
    axes = list(range(len(lead))) + [nd - 2, nd - 3, nd - 1]
    return T.permute(x, axes)


def _merge_heads(x: Tensor, heads: int) -> Tensor:
    if heads == 1:
        return x
    *lead, h, n, dh = x.shape
    nd = len(lead) + 3
    axes = list(range(len(lead))) + [nd - 2, nd - 3, nd - 1]
    x = T.permute(x, axes)
    return T.reshape(x, (*lead, n, h * dh))


def scaled_attention(queries: Tensor, keys: Tensor, values: Tensor, heads: int = 1) -> Tensor:
    """softmax(q k^T / sqrt(d_head)) v over the last two axes."""
    d = queries.shape[-1]
    if d % heads:
        raise ShapeError(f"model width {d} is not divisible by {heads} heads")
    if keys.shape[-1] != d or values.shape[-2] != keys.shape[-2]:
        raise ShapeError(f"attention shapes q={queries.shape} k={keys.shape} v={values.shape}")
    q, k, v = (_split_heads(t, heads) for t in (queries, keys, values))
    scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(d // heads))
    return _merge_heads(T.matmul(T.softmax_lastdim(scores), v), heads)


def canonical_attention(x: Tensor, Q: Tensor, K: Tensor, V: Tensor, heads: int = 1,
                        counter: ScoreCounter | None = None) -> Tensor:
    """Full self-attention over the ``H`` timestamps of every sensor."""
    n_sensors, h = x.shape[-3], x.shape[-2]
    out = scaled_attention(project(x, Q), project(x, K), project(x, V), heads)
    if counter is not None:
        counter.add(n_sensors * h * h)
    return out


def window_attention(x_w: Tensor, P_w: Tensor, K: Tensor, V: Tensor, heads: int = 1,
                     counter: ScoreCounter | None = None) -> Tensor:
    """Proxies ``(..., N, p, d)`` attend over the ``S`` timestamps of one window."""
    return proxy_attention(P_w, project(x_w, K), project(x_w, V), heads, counter)


def proxy_attention(P_w: Tensor, keys: Tensor, values: Tensor, heads: int = 1,
                    counter: ScoreCounter | None = None) -> Tensor:
    out = scaled_attention(P_w, keys, values, heads)
    if counter is not None:
        counter.add(keys.shape[-3] * P_w.shape[-2] * keys.shape[-2])
    return out


class WeightingNetwork(Module):
    """Two bias-free layers over all ``p`` proxies of a window jointly."""

    def __init__(self, rng: np.random.Generator, p: int, d: int, hidden: int | None = None):
        hidden = hidden or d
        self.p, self.d = p, d
        self.W1 = T.uniform_init(rng, (p * d, hidden), p * d)
        self.W2 = T.uniform_init(rng, (hidden, p * d), hidden)


def proxy_weights(net: WeightingNetwork, h_w: Tensor) -> Tensor:
    lead = h_w.shape[:-2]
    flat = T.reshape(h_w, (*lead, net.p * net.d))
    a = T.sigmoid(T.matmul(T.tanh(T.matmul(flat, net.W1)), net.W2))
    return T.reshape(a, h_w.shape)


def aggregate_proxies(A: Tensor, h_w: Tensor) -> Tensor:
    """Gate each proxy output pointwise and sum over the proxy axis."""
    if A.shape != h_w.shape:
        raise ShapeError(f"aggregate_proxies: weights {A.shape} vs outputs {h_w.shape}")
    return T.tsum(T.mul(A, h_w), axis=-2)


def mean_aggregate(h_w: Tensor) -> Tensor:
    return T.mean(h_w, axis=-2)


class FusionNetwork(Module):
    def __init__(self, rng: np.random.Generator, d: int):
        self.linear = Linear(rng, 2 * d, d)


def fuse_recurrent(fusion: FusionNetwork, h_prev: Tensor, P_w: Tensor) -> Tensor:
    """Replace each proxy by ``fusion([h_prev, proxy])``.

    ``h_prev`` is ``(..., N, d)`` and ``P_w`` is ``(N, p, d)`` or batched like
    ``h_prev``.
    """
    p = P_w.shape[-2]
    target = (*h_prev.shape[:-1], p, h_prev.shape[-1])
    if P_w.shape != target:
        P_w = T.expand(P_w, target)
    # (p, 1) ones times (..., N, 1, d) repeats h_prev for every proxy
    rep = T.matmul(Tensor(np.ones((p, 1))), T.reshape(h_prev, (*h_prev.shape[:-1], 1, h_prev.shape[-1])))
    return fusion.linear(T.concat([rep, P_w], axis=-1))


def sensor_correlation(theta1: Tensor, theta2: Tensor, h_hat: Tensor,
                       return_weights: bool = False):
    """Embedded-Gaussian attention across sensors.

    ``h_hat`` is ``(..., N, d)``. ``theta1``/``theta2`` are a shared ``(d, d)``
    pair or per-sensor ``(..., N, d, d)``.
    """
    u = _embed(h_hat, theta1)
    v = _embed(h_hat, theta2)
    B = T.softmax_lastdim(T.matmul(u, T.swap_last(v)))
    out = T.matmul(B, h_hat)
    return (out, B) if return_weights else out


def _embed(h: Tensor, theta: Tensor) -> Tensor:
    if theta.ndim == 2:
        return T.matmul(h, theta)
    # per-sensor: row vector times that sensor's matrix
    lead = h.shape[:-1]
    row = T.reshape(h, (*lead, 1, h.shape[-1]))
    return T.reshape(T.matmul(row, theta), (*lead, theta.shape[-1]))
