"""Heterogeneous kernel cross fusion (HKCF) block.

The block squeezes the input with a 1x1 convolution, recalibrates the
channels with a pooled two-layer gate, and applies a cross convolution made
of a ``1 x k`` and a ``k x 1`` branch summed together, with a residual
connection around it.  A final 1x1 convolution over the squeezed features
and the fused features restores the input channel count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor
from .weights import assign, load_weights, save_weights

__all__ = [
    "KERNEL_SCHEDULE", "HkcfConfig", "cab", "hxconv", "hkcf_inner", "hkcf_block",
    "HKCF", "build_pyramid",
]

# Larger cross kernels for coarser pyramid levels.
KERNEL_SCHEDULE = {"P3": 3, "P4": 5, "P5": 7}


@dataclass(frozen=True)
class HkcfConfig:
    in_channels: int
    k: int = 3
    reduction: float = 0.5
    cab_ratio: float = 0.25

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"cross kernel size must be odd and positive, got {self.k}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if not 0 < self.reduction <= 1:
            raise ConfigError(f"reduction must lie in (0, 1], got {self.reduction}")
        if not 0 < self.cab_ratio <= 1:
            raise ConfigError(f"cab_ratio must lie in (0, 1], got {self.cab_ratio}")
        if self.reduced_channels < 1:
            raise ConfigError(f"{self.in_channels} channels at reduction {self.reduction} leaves no channels")

    @property
    def reduced_channels(self) -> int:
        return int(self.in_channels * self.reduction)

    @property
    def hidden_channels(self) -> int:
        return max(1, int(self.reduced_channels * self.cab_ratio))


def cab(x, w1, b1, w2, b2) -> Tensor:
    """Scale each channel of ``x`` by ``sigmoid(w2 @ relu(w1 @ gap(x) + b1) + b2)``."""
    x = T.as_tensor(x)
    n, c = x.shape[:2]
    pooled = T.reshape(T.global_avg_pool(x), (n, c))
    hidden = T.relu(T.linear(pooled, w1, b1))
    gate = T.sigmoid(T.linear(hidden, w2, b2))
    if gate.shape != (n, c):
        raise ShapeError(f"channel gate has shape {gate.shape}, expected {(n, c)}")
    return T.hadamard(x, T.reshape(gate, (n, c, 1, 1)))


def hxconv(x, w_h, w_v, k: int | None = None) -> Tensor:
    """Sum of a ``1 x k`` and a ``k x 1`` same-size convolution (no bias)."""
    w_h, w_v = T.as_tensor(w_h), T.as_tensor(w_v)
    if k is None:
        k = w_h.shape[-1]
    if k % 2 == 0:
        raise ConfigError(f"cross kernel size must be odd, got {k}")
    if w_h.shape[2:] != (1, k) or w_v.shape[2:] != (k, 1):
        raise ShapeError(f"cross kernels must be (.., 1, {k}) and (.., {k}, 1), got {w_h.shape} and {w_v.shape}")
    return T.conv2d(x, w_h, padding=(0, k // 2)) + T.conv2d(x, w_v, padding=(k // 2, 0))


def hkcf_inner(x, params: dict, k: int) -> Tensor:
    x = T.as_tensor(x)
    gated = cab(x, params["cab_w1"], params["cab_b1"], params["cab_w2"], params["cab_b2"])
    return hxconv(gated, params["cross_h"], params["cross_v"], k) + x


def hkcf_block(x, params: dict, k: int) -> Tensor:
    squeezed = T.conv2d(x, params["reduce_w"], params["reduce_b"])
    fused = hkcf_inner(squeezed, params, k)
    return T.conv2d(T.concat_channels([squeezed, fused]), params["expand_w"], params["expand_b"])


def init_params(config: HkcfConfig, seed: int = 0, dtype=None) -> dict[str, Tensor]:
    """He-style random weights, zero biases."""
    rng = np.random.default_rng(seed)
    c, r, h, k = config.in_channels, config.reduced_channels, config.hidden_channels, config.k

    def he(*shape):
        fan_in = int(np.prod(shape[1:]))
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    arrays = {
        "reduce_w": he(r, c, 1, 1), "reduce_b": np.zeros(r),
        "cab_w1": he(h, r), "cab_b1": np.zeros(h),
        "cab_w2": he(r, h), "cab_b2": np.zeros(r),
        "cross_h": he(r, r, 1, k), "cross_v": he(r, r, k, 1),
        "expand_w": he(c, 2 * r, 1, 1), "expand_b": np.zeros(c),
    }
    dtype = dtype or T.get_default_dtype()
    return {name: Tensor(a, requires_grad=True, dtype=dtype) for name, a in arrays.items()}


class HKCF:
    def __init__(self, config: HkcfConfig, seed: int = 0, dtype=None):
        self.config = config
        self.params = init_params(config, seed, dtype)

    @property
    def k(self) -> int:
        return self.config.k

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def inner(self, x) -> Tensor:
        return hkcf_inner(x, self.params, self.k)

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"block expects {self.config.in_channels} input channels, got shape {x.shape}")
        return hkcf_block(x, self.params, self.k)

    def save(self, path) -> None:
        save_weights(path, self.params)

    def load(self, path) -> None:
        assign(self.params, load_weights(path))


def build_pyramid(channels: dict[str, int], seed: int = 0, **overrides) -> dict[str, HKCF]:
    """One block per pyramid level, with the cross kernel size taken from :data:`KERNEL_SCHEDULE`."""
    blocks = {}
    for i, level in enumerate(sorted(channels)):
        if level not in KERNEL_SCHEDULE:
            raise ConfigError(f"no kernel size scheduled for level {level!r}")
        cfg = HkcfConfig(in_channels=channels[level], k=KERNEL_SCHEDULE[level], **overrides)
        blocks[level] = HKCF(cfg, seed=seed + i)
    return blocks
