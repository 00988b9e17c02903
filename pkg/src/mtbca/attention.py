"""Frequency soft-mask attention with Gaussian smoothing, and pooled channel attention."""

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError


def he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def squared_distance_matrix(size):
    """K[m, j] = (j - m)^2."""
    idx = np.arange(size)
    return (idx[None, :] - idx[:, None]).astype(np.float64) ** 2


def gaussian_smoothing_matrix(size, omega):
    """G[m, j] = exp(-(j - m)^2 / (2 omega^2)) / (omega sqrt(2 pi))."""
    if size < 1:
        raise ConfigError(f"smoothing size must be >= 1, got {size}")
    if omega <= 0:
        raise ConfigError(f"omega must be positive, got {omega}")
    return np.exp(-squared_distance_matrix(size) / (2.0 * omega**2)) / (omega * math.sqrt(2.0 * math.pi))


@dataclass
class FrequencyAttentionParams:
    score_weight: Tensor  # [f, f]
    score_bias: Tensor  # [f]
    omega: Tensor  # scalar; learned only if requires_grad

    @classmethod
    def create(cls, size, rng, dtype=np.float32, omega=1.0, train_omega=False):
        if omega <= 0:
            raise ConfigError(f"omega must be positive, got {omega}")
        return cls(
            he_uniform(rng, (size, size), size, dtype),
            zeros((size,), dtype),
            Tensor(np.array(omega, dtype=dtype), requires_grad=train_omega),
        )

    @property
    def kernel_size(self):
        return self.score_bias.shape[0]

    def tensors(self):
        out = {"score_weight": self.score_weight, "score_bias": self.score_bias}
        if self.omega.requires_grad:
            out["omega"] = self.omega
        return out

    def smoothing(self):
        """Smoothing matrix as a Tensor (differentiable in omega when it is trainable)."""
        size = self.kernel_size
        if not self.omega.requires_grad:
            return Tensor(gaussian_smoothing_matrix(size, float(self.omega.data)).astype(self.omega.dtype))
        k = Tensor(squared_distance_matrix(size).astype(self.omega.dtype))
        w = self.omega
        return ag.exp(k * (-0.5) / (w * w)) / (w * math.sqrt(2.0 * math.pi))


def frequency_weights(x, params):
    """Return (beta, g): softmax scores and their Gaussian-smoothed version, both [B, f]."""
    if x.ndim != 4:
        raise DimensionError(f"frequency attention expects [B,C,t,f], got {x.shape}")
    if x.shape[3] != params.kernel_size:
        raise DimensionError(f"frequency attention built for f={params.kernel_size}, input has f={x.shape[3]}")
    profile = x.mean(axis=(1, 2))
    beta = ag.softmax(ag.linear(profile, params.score_weight, params.score_bias), axis=-1)
    # the smoothing matrix is symmetric, so G @ beta per row is beta @ G
    g = beta @ params.smoothing()
    return beta, g


def frequency_attention(x, params):
    """Scale each frequency column of ``x`` by the smoothed attention profile."""
    _, g = frequency_weights(x, params)
    return x * g.reshape(x.shape[0], 1, 1, x.shape[3])


@dataclass
class ChannelAttentionParams:
    fc1_weight: Tensor  # [hidden, C]
    fc1_bias: Tensor
    fc2_weight: Tensor  # [C, hidden]
    fc2_bias: Tensor

    @staticmethod
    def hidden_size(channels, reduction):
        if reduction < 1:
            raise ConfigError(f"reduction must be positive, got {reduction}")
        if channels < reduction:
            return 1
        if channels % reduction:
            raise ConfigError(f"{channels} channels not divisible by reduction {reduction}")
        return channels // reduction

    @classmethod
    def create(cls, channels, rng, reduction=4, dtype=np.float32):
        hidden = cls.hidden_size(channels, reduction)
        # zero output layer: every gate starts at sigmoid(0) = 1/2 instead of saturating
        # when the bottleneck is a single unit fed by large max-pooled inputs
        return cls(
            he_uniform(rng, (hidden, channels), channels, dtype),
            zeros((hidden,), dtype),
            zeros((channels, hidden), dtype),
            zeros((channels,), dtype),
        )

    @property
    def channels(self):
        return self.fc1_weight.shape[1]

    def tensors(self):
        return {
            "fc1_weight": self.fc1_weight,
            "fc1_bias": self.fc1_bias,
            "fc2_weight": self.fc2_weight,
            "fc2_bias": self.fc2_bias,
        }


def channel_weights(x, params):
    """sigmoid(fc2(relu(fc1(avg_pool x) + fc1(max_pool x)))) -> [B, C] in (0, 1)."""
    if x.ndim != 4 or x.shape[1] != params.channels:
        raise DimensionError(f"channel attention built for C={params.channels}, got input {x.shape}")
    avg = ag.global_avg_pool(x)
    mx = ag.global_max_pool(x)
    hidden = ag.relu(
        ag.linear(avg, params.fc1_weight, params.fc1_bias) + ag.linear(mx, params.fc1_weight, params.fc1_bias)
    )
    return ag.sigmoid(ag.linear(hidden, params.fc2_weight, params.fc2_bias))


def channel_attention(x, params):
    aw = channel_weights(x, params)
    return x * aw.reshape(x.shape[0], x.shape[1], 1, 1)
