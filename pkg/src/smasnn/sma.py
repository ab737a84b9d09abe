"""Spiking multiscale attention.

Pipeline for an input sequence X of shape (T, C, H, W):

* encoder: per scale n, ``M[n, t] = act(BN_n(conv(X_t, K_n)))`` with a
  same-padded C->C kernel of size ``k_n``; ``Y = mean_n M[n]``.
* temporal weights: pool Y over (C, H, W) to length T, squeeze T -> T/TR,
  ReLU, excite back to T once per scale, softmax over scales -> (N, T, 1).
* channel weights: pool each Y_t over (H, W) to length C, squeeze
  C -> C/CR, ReLU, excite per scale, softmax over scales -> (T, N, C, 1).
* aggregation: ``Z[t, c] = sum_n M[n, t, c] * W_alpha[n, t] * W_beta[t, n, c]``.

All functions accept a batched (B, T, C, H, W) input or a single sequence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ShapeError
from .layers import Module, kaiming_uniform
from .neuron import NeuronConfig, run_sequence
from .tensor import Value


@dataclass(frozen=True)
class SmaConfig:
    kernel_sizes: tuple[int, ...] = (1, 3, 5, 7)
    channel_reduction: int = 4
    time_reduction: int = 4
    activation: str = "relu"  # "relu" or "lif"
    neuron: NeuronConfig = field(default_factory=NeuronConfig)

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        object.__setattr__(self, "kernel_sizes", ks)
        if len(ks) < 2:
            raise ConfigError(f"SMA needs at least 2 scales, got {len(ks)}")
        if any(k % 2 == 0 or k < 1 for k in ks):
            raise ConfigError(f"SMA kernel sizes must be odd and positive: {ks}")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError(f"SMA kernel sizes must be strictly increasing: {ks}")
        if self.channel_reduction < 1 or self.time_reduction < 1:
            raise ConfigError("reduction ratios must be >= 1")
        if self.activation not in ("relu", "lif"):
            raise ConfigError(f"encoder activation must be 'relu' or 'lif', got {self.activation!r}")

    @property
    def scales(self) -> int:
        return len(self.kernel_sizes)

    @classmethod
    def with_scales(cls, n: int, **kw) -> SmaConfig:
        """Kernel sizes 1, 3, 5, ... for ``n`` scales."""
        return cls(kernel_sizes=tuple(range(1, 2 * n, 2)), **kw)


def decoder_param_count(t: int, c: int, tr: int, cr: int, n: int, bias: bool = True) -> int:
    """Closed-form parameter count of both scale-excitation decoders."""
    tw = t * (t // tr) * (n + 1)
    cw = c * (c // cr) * (n + 1)
    if not bias:
        return tw + cw
    return tw + cw + (t // tr) + n * t + (c // cr) + n * c


def encoder_param_count(c: int, kernel_sizes) -> int:
    return sum(c * c * k * k for k in kernel_sizes) + 2 * c * len(kernel_sizes)


def sma_param_count(t: int, c: int, config: SmaConfig) -> int:
    return encoder_param_count(c, config.kernel_sizes) + decoder_param_count(
        t, c, config.time_reduction, config.channel_reduction, config.scales
    )


@dataclass
class SmaTrace:
    """Attention weights of one sample."""

    w_alpha: np.ndarray  # (N, T, 1)
    w_beta: np.ndarray  # (T, N, C, 1)

    @property
    def importance(self) -> np.ndarray:
        return scale_importance(self.w_alpha, self.w_beta)


def scale_importance(w_alpha: np.ndarray, w_beta: np.ndarray) -> np.ndarray:
    """Share of total aggregation mass ``sum_{t,c} W_alpha * W_beta`` held by each scale.

    Accepts one sample or a leading batch axis; the result has shape (..., N).
    """
    mass = np.einsum("...nt,...tnc->...n", w_alpha[..., 0], w_beta[..., 0])
    return mass / mass.sum(axis=-1, keepdims=True)


class SMA(Module):
    """Parameters and forward pass of one attention module for fixed (T, C)."""

    def __init__(self, channels: int, timesteps: int, config: SmaConfig, rng: np.random.Generator):
        super().__init__()
        if channels % config.channel_reduction:
            raise ConfigError(f"channels {channels} not divisible by CR={config.channel_reduction}")
        if timesteps % config.time_reduction:
            raise ConfigError(f"timesteps {timesteps} not divisible by TR={config.time_reduction}")
        self.channels, self.timesteps, self.config = channels, timesteps, config
        c, t, n = channels, timesteps, config.scales
        cs, ts = c // config.channel_reduction, t // config.time_reduction
        self.enc_w, self.enc_gamma, self.enc_beta, self.enc_mean, self.enc_var = [], [], [], [], []
        for i, k in enumerate(config.kernel_sizes):
            self.enc_w.append(self.add_param(f"encoder.{i}.weight", kaiming_uniform(rng, (c, c, k, k), c * k * k)))
            self.enc_gamma.append(self.add_param(f"encoder.{i}.gamma", np.ones(c)))
            self.enc_beta.append(self.add_param(f"encoder.{i}.beta", np.zeros(c)))
            self.enc_mean.append(self.add_buffer(f"encoder.{i}.running_mean", np.zeros(c)))
            self.enc_var.append(self.add_buffer(f"encoder.{i}.running_var", np.ones(c)))
        self.t_squeeze_w = self.add_param("t_mse.squeeze.weight", kaiming_uniform(rng, (ts, t), t))
        self.t_squeeze_b = self.add_param("t_mse.squeeze.bias", np.zeros(ts))
        self.t_excite_w = [self.add_param(f"t_mse.excite.{i}.weight", kaiming_uniform(rng, (t, ts), ts)) for i in range(n)]
        self.t_excite_b = [self.add_param(f"t_mse.excite.{i}.bias", np.zeros(t)) for i in range(n)]
        self.c_squeeze_w = self.add_param("c_mse.squeeze.weight", kaiming_uniform(rng, (cs, c), c))
        self.c_squeeze_b = self.add_param("c_mse.squeeze.bias", np.zeros(cs))
        self.c_excite_w = [self.add_param(f"c_mse.excite.{i}.weight", kaiming_uniform(rng, (c, cs), cs)) for i in range(n)]
        self.c_excite_b = [self.add_param(f"c_mse.excite.{i}.bias", np.zeros(c)) for i in range(n)]
        self.trace = False
        self.last_weights: tuple[np.ndarray, np.ndarray] | None = None

    def decoder_parameters(self) -> list[Value]:
        return [
            self.t_squeeze_w, self.t_squeeze_b, *self.t_excite_w, *self.t_excite_b,
            self.c_squeeze_w, self.c_squeeze_b, *self.c_excite_w, *self.c_excite_b,
        ]

    def forward(self, x: Value) -> Value:
        z, w_alpha, w_beta = sma_forward(x, self)
        if self.trace:
            self.last_weights = (w_alpha.data.copy(), w_beta.data.copy())
        return z

    def traces(self) -> list[SmaTrace]:
        if self.last_weights is None:
            return []
        wa, wb = self.last_weights
        return [SmaTrace(wa[i], wb[i]) for i in range(wa.shape[0])]


def _batched(x: Value) -> tuple[Value, bool]:
    if x.ndim == 4:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 5:
        raise ShapeError(f"expected (T, C, H, W) or (B, T, C, H, W), got {x.shape}")
    return x, False


def _strip(v: Value, single: bool) -> Value:
    return v.reshape(v.shape[1:]) if single else v


def encode(x: Value, sma: SMA) -> tuple[Value, Value]:
    """Multiscale encoding -> (M, Y) with M (B, N, T, C, H, W) and Y (B, T, C, H, W)."""
    x, single = _batched(x)
    b, t, c, h, w = x.shape
    if c != sma.channels:
        raise ShapeError(f"SMA built for {sma.channels} channels, got input {x.shape}")
    cfg = sma.config
    frames = x.reshape((b * t, c, h, w))
    scales = []
    for i, k in enumerate(cfg.kernel_sizes):
        y = tn.conv2d(frames, sma.enc_w[i], padding=tn.same_padding(k)).reshape((b, t, c, h, w))
        y = tn.batch_norm(
            y, sma.enc_gamma[i], sma.enc_beta[i], sma.enc_mean[i], sma.enc_var[i],
            sma.training, channel_axis=2,
        )
        y = tn.relu(y) if cfg.activation == "relu" else run_sequence(y, cfg.neuron, time_axis=1)
        scales.append(y)
    m = tn.stack(scales, axis=1)
    y = m.mean(axis=1)
    return _strip(m, single), _strip(y, single)


def t_mse(y: Value, sma: SMA) -> Value:
    """Temporal scale weights (B, N, T, 1), softmaxed over the scale axis."""
    y, single = _batched(y)
    if y.shape[1] != sma.timesteps:
        raise ShapeError(f"SMA built for T={sma.timesteps}, got {y.shape}")
    pooled = y.mean(axis=(2, 3, 4))  # (B, T)
    s = tn.relu(tn.affine(pooled, sma.t_squeeze_w, sma.t_squeeze_b))
    e = tn.stack([tn.affine(s, w, bb) for w, bb in zip(sma.t_excite_w, sma.t_excite_b)], axis=1)  # (B, N, T)
    wa = tn.softmax(e, axis=1)
    wa = wa.reshape(wa.shape + (1,))
    return _strip(wa, single)


def c_mse(y: Value, sma: SMA) -> Value:
    """Per-timestep channel scale weights (B, T, N, C, 1), softmaxed over scales."""
    y, single = _batched(y)
    pooled = y.mean(axis=(3, 4))  # (B, T, C)
    s = tn.relu(tn.affine(pooled, sma.c_squeeze_w, sma.c_squeeze_b))
    e = tn.stack([tn.affine(s, w, bb) for w, bb in zip(sma.c_excite_w, sma.c_excite_b)], axis=2)  # (B, T, N, C)
    wb = tn.softmax(e, axis=2)
    wb = wb.reshape(wb.shape + (1,))
    return _strip(wb, single)


def apply(m: Value, w_alpha: Value, w_beta: Value) -> Value:
    """Weighted sum over scales -> (B, T, C, H, W)."""
    single = m.ndim == 5
    if single:
        m = m.reshape((1,) + m.shape)
        w_alpha = w_alpha.reshape((1,) + w_alpha.shape)
        w_beta = w_beta.reshape((1,) + w_beta.shape)
    b, n, t, c, h, w = m.shape
    if w_alpha.shape != (b, n, t, 1) or w_beta.shape != (b, t, n, c, 1):
        raise ShapeError(f"apply: M {m.shape}, W_alpha {w_alpha.shape}, W_beta {w_beta.shape} are inconsistent")
    wa = w_alpha.reshape((b, n, t, 1, 1, 1))
    wb = w_beta.reshape((b, t, n, c)).transpose(0, 2, 1, 3).reshape((b, n, t, c, 1, 1))
    z = (m * (wa * wb)).sum(axis=1)
    return _strip(z, single)


def sma_forward(x: Value, sma: SMA) -> tuple[Value, Value, Value]:
    """encode -> t_mse -> c_mse -> apply; returns (Z, W_alpha, W_beta)."""
    m, y = encode(x, sma)
    wa = t_mse(y, sma)
    wb = c_mse(y, sma)
    return apply(m, wa, wb), wa, wb


def write_trace_csv(traces: list[tuple[str, SmaTrace]], alpha_path: str | Path, beta_path: str | Path) -> None:
    with open(alpha_path, "w", newline="") as fa:
        w = csv.writer(fa, lineterminator="\n")
        w.writerow(["sample_id", "t", "n", "w_alpha"])
        for sid, tr in traces:
            n_scales, steps, _ = tr.w_alpha.shape
            for t in range(steps):
                for n in range(n_scales):
                    w.writerow([sid, t, n, repr(float(tr.w_alpha[n, t, 0]))])
    with open(beta_path, "w", newline="") as fb:
        w = csv.writer(fb, lineterminator="\n")
        w.writerow(["sample_id", "t", "n", "c", "w_beta"])
        for sid, tr in traces:
            steps, n_scales, chans, _ = tr.w_beta.shape
            for t in range(steps):
                for n in range(n_scales):
                    for c in range(chans):
                        w.writerow([sid, t, n, c, repr(float(tr.w_beta[t, n, c, 0]))])
