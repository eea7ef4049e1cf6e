"""Gradient orientation-aware extractor (GOE).

A feature map is reduced to one horizontal and one vertical gradient map
by a shared, learnable 3x3 kernel pair applied depthwise and averaged over
channels.  The pair drives two branches: the gradient magnitude, and a
1x1 orientation attention that projects the gradient onto ``n`` evenly
spaced directions in ``[0, pi)``.  The softmax of the projections weights
the magnitude, and instance normalization yields ``n`` output channels,
which callers concatenate with the original features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor
from .weights import assign, load_weights, save_weights

__all__ = [
    "SOBEL_X", "SOBEL_Y", "GoeConfig", "orientation_basis", "decouple_gradients",
    "gradient_magnitude", "orientation_attention", "goe_forward", "GOE",
]

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class GoeConfig:
    n: int = 8
    eps: float = 1e-5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"orientation bin count must be an integer >= 2, got {self.n}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")


def orientation_basis(n: int) -> np.ndarray:
    """Rows ``(cos(i*pi/n), sin(i*pi/n))`` for ``i = 0..n-1``."""
    theta = np.arange(n) * np.pi / n
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def _depthwise(x: Tensor, kernel) -> Tensor:
    kernel = T.as_tensor(kernel)
    if kernel.shape != (3, 3):
        raise ShapeError(f"decoupling kernel must be 3x3, got {kernel.shape}")
    c = x.shape[1]
    weight = T.broadcast_to(T.reshape(kernel, (1, 1, 3, 3)), (c, 1, 3, 3))
    # replicated borders keep flat regions gradient-free up to the image edge
    return T.conv2d(T.pad_edge(x, 1), weight, groups=c)


def decouple_gradients(x, kernel_x=SOBEL_X, kernel_y=SOBEL_Y):
    """Single-channel ``(G_x, G_y)`` maps of ``x`` (shape ``N x 1 x H x W`` each)."""
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[1] == 0:
        raise ShapeError(f"expected a non-empty N x C x H x W feature map, got {x.shape}")
    gx = T.mean(_depthwise(x, kernel_x), axis=1, keepdims=True)
    gy = T.mean(_depthwise(x, kernel_y), axis=1, keepdims=True)
    return gx, gy


def gradient_magnitude(gx, gy) -> Tensor:
    gx, gy = T.as_tensor(gx), T.as_tensor(gy)
    if gx.shape != gy.shape:
        raise ShapeError(f"gradient maps differ in shape: {gx.shape} vs {gy.shape}")
    return T.sqrt(T.square(gx) + T.square(gy))


def orientation_attention(directional, weight) -> Tensor:
    """Project the 2-channel ``(G_x, G_y)`` stack onto ``n`` directions.

    ``weight`` is either ``(n, 2)`` or the equivalent ``(n, 2, 1, 1)`` kernel.
    """
    directional, weight = T.as_tensor(directional), T.as_tensor(weight)
    if directional.ndim != 4 or directional.shape[1] != 2:
        raise ShapeError(f"orientation attention needs exactly 2 input channels, got shape {directional.shape}")
    if weight.ndim == 2:
        weight = T.reshape(weight, weight.shape + (1, 1))
    if weight.shape[1:] != (2, 1, 1):
        raise ShapeError(f"orientation weights must be (n, 2, 1, 1), got {weight.shape}")
    return T.conv2d(directional, weight)


def goe_forward(x, kernel_x=SOBEL_X, kernel_y=SOBEL_Y, weight=None, eps: float = 1e-5) -> Tensor:
    """Fused GOE output with ``n`` channels and the spatial size of ``x``."""
    if weight is None:
        weight = orientation_basis(GoeConfig().n)
    gx, gy = decouple_gradients(x, kernel_x, kernel_y)
    magnitude = gradient_magnitude(gx, gy)
    scores = orientation_attention(T.concat_channels([gx, gy]), weight)
    attention = T.softmax_channels(scores)
    fused = T.hadamard(attention, T.broadcast_to(magnitude, attention.shape))
    return T.instance_norm(fused, eps=eps)


class GOE:
    """GOE with its own learnable parameters, initialized to the Sobel pair and the even direction basis."""

    def __init__(self, config: GoeConfig | None = None, dtype=None):
        self.config = config or GoeConfig()
        dtype = dtype or T.get_default_dtype()
        self.kernel_x = Tensor(SOBEL_X, requires_grad=True, dtype=dtype)
        self.kernel_y = Tensor(SOBEL_Y, requires_grad=True, dtype=dtype)
        self.weight = Tensor(orientation_basis(self.config.n).reshape(self.config.n, 2, 1, 1),
                             requires_grad=True, dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        return {"kernel_x": self.kernel_x, "kernel_y": self.kernel_y, "weight": self.weight}

    def __call__(self, x) -> Tensor:
        return goe_forward(x, self.kernel_x, self.kernel_y, self.weight, eps=self.config.eps)

    def augment(self, x) -> Tensor:
        """``x`` with the GOE channels appended."""
        x = T.as_tensor(x)
        return T.concat_channels([x, self(x)])

    def save(self, path) -> None:
        save_weights(path, self.parameters())

    def load(self, path) -> None:
        assign(self.parameters(), load_weights(path))
