"""Seeded sampling of deformation parameters.

Random streams come from numpy's Philox, a 64-bit counter-based generator.
Every image gets its own stream keyed by ``(master seed, image index,
attempt)`` through :class:`numpy.random.SeedSequence`, so images can be
produced in any order or in parallel and still come out identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .imaging import ShadowParams
from .warp import CylinderParams, WaveParams

__all__ = [
    "SamplerConfig",
    "DeformationParams",
    "derive_seed",
    "make_rng",
    "truncated_normal",
    "factor_min",
    "sample_params",
    "check_params",
]

# Outer bounds any configuration has to stay within.
LIMITS = {
    "amplitude": (10.0, 50.0),
    "wavelength_scale": (1.0, 5.0),
    "axis_range": (1.0, 5.0),
    "center_brightness": (0.6, 0.9),
    "edge_brightness": (0.1, 0.3),
}
WAVELENGTH_MAX = 800.0
FACTOR_MAX = 0.85


@dataclass(frozen=True)
class SamplerConfig:
    amplitude: tuple[float, float] = (10.0, 50.0)
    wavelength_scale: tuple[float, float] = (1.0, 5.0)
    wavelength_max: float = 800.0
    axis_mean: float = 2.0
    axis_std: float = 0.7
    axis_range: tuple[float, float] = (1.0, 5.0)
    factor_max: float = 0.85
    factor_min_base: float = 0.7
    factor_min_slope: float = 0.05
    center_brightness: tuple[float, float] = (0.6, 0.9)
    edge_brightness: tuple[float, float] = (0.1, 0.3)
    luminance_threshold: float = 120.0
    wave_probability: float = 0.5
    cylinder_probability: float = 0.5
    shadow_corner_radius: float = 0.15

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                object.__setattr__(self, f.name, tuple(float(v) for v in value))
        self.validate()

    def validate(self):
        for name, (lo, hi) in LIMITS.items():
            value = getattr(self, name)
            if len(value) != 2 or not (lo <= value[0] <= value[1] <= hi):
                raise ConfigError(f"{name}={list(value)} must be an ordered sub-range of [{lo}, {hi}]")
        smax = self.wavelength_scale[1] * self.amplitude[1]
        if not (smax <= self.wavelength_max <= WAVELENGTH_MAX):
            raise ConfigError(f"wavelength_max={self.wavelength_max} must lie in [{smax}, {WAVELENGTH_MAX}]")
        if self.axis_std <= 0:
            raise ConfigError(f"axis_std must be positive, got {self.axis_std}")
        if not (0.0 < self.factor_max <= FACTOR_MAX):
            raise ConfigError(f"factor_max={self.factor_max} must lie in (0, {FACTOR_MAX}]")
        if self.factor_min_slope < 0:
            raise ConfigError("factor_min_slope must be >= 0 so that F_min does not grow with c")
        lo_c, hi_c = self.axis_range
        f_lo, f_hi = factor_min(hi_c, self), factor_min(lo_c, self)
        if not (0.0 <= f_lo and f_hi <= self.factor_max):
            raise ConfigError(f"F_min over the axis range spans [{f_lo}, {f_hi}], outside [0, factor_max]")
        if not 0.0 <= self.luminance_threshold <= 255.0:
            raise ConfigError(f"luminance_threshold must lie in [0, 255], got {self.luminance_threshold}")
        for name in ("wave_probability", "cylinder_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.shadow_corner_radius <= 1.0:
            raise ConfigError("shadow_corner_radius must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown sampler config keys: {', '.join(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "SamplerConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class DeformationParams:
    seed: int
    wave: WaveParams | None = None
    cylinder: CylinderParams | None = None
    shadow: ShadowParams | None = None
    s: float = 1.0

    def to_dict(self) -> dict:
        out = {"seed": int(self.seed), "s": self.s}
        out["wave"] = None if self.wave is None else asdict(self.wave)
        out["cylinder"] = None if self.cylinder is None else asdict(self.cylinder)
        if self.shadow is None:
            out["shadow"] = None
        else:
            out["shadow"] = {"center": list(self.shadow.center), "cb": self.shadow.cb, "eb": self.shadow.eb}
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "DeformationParams":
        shadow = doc.get("shadow")
        return cls(
            seed=int(doc.get("seed", 0)),
            wave=WaveParams(**doc["wave"]) if doc.get("wave") else None,
            cylinder=CylinderParams(**doc["cylinder"]) if doc.get("cylinder") else None,
            shadow=ShadowParams(tuple(shadow["center"]), shadow["cb"], shadow["eb"]) if shadow else None,
            s=float(doc.get("s", 1.0)),
        )


def derive_seed(master: int, *path: int) -> int:
    """64-bit seed of the substream named by ``path``, e.g. ``(image, attempt)``."""
    ss = np.random.SeedSequence([int(master) & (2**64 - 1), *(int(k) for k in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def truncated_normal(mean, stddev, lo, hi, rng: np.random.Generator) -> float:
    """Rejection sample from N(mean, stddev^2) restricted to ``[lo, hi]``."""
    if not lo < hi:
        raise ConfigError(f"truncation bounds must satisfy lo < hi, got [{lo}, {hi}]")
    if stddev <= 0:
        raise ConfigError(f"stddev must be positive, got {stddev}")
    accept = _normal_cdf((hi - mean) / stddev) - _normal_cdf((lo - mean) / stddev)
    if accept < 1e-6:
        raise ConfigError(f"degenerate truncation: acceptance probability {accept:.3g} < 1e-6")
    while True:
        value = float(rng.normal(mean, stddev))
        if lo <= value <= hi:
            return value


def factor_min(c: float, config: SamplerConfig | None = None) -> float:
    """Lower end of the cylinder distortion range, decreasing linearly in ``c``."""
    cfg = config or SamplerConfig()
    return cfg.factor_min_base - cfg.factor_min_slope * (c - 1.0)


def sample_params(seed: int, image_luminance: float, size, config: SamplerConfig | None = None
                  ) -> DeformationParams:
    """Draw one deformation for an image of ``size = (width, height)``.

    Every draw happens whether or not its distortion ends up enabled, so
    the stream layout is fixed and each value depends only on ``seed``.
    """
    cfg = config or SamplerConfig()
    width, height = size
    rng = make_rng(seed)

    use_wave = rng.random() < cfg.wave_probability
    use_cylinder = rng.random() < cfg.cylinder_probability

    amplitude = float(rng.uniform(*cfg.amplitude))
    s = float(rng.uniform(*cfg.wavelength_scale))
    wavelength = float(rng.uniform(s * amplitude, cfg.wavelength_max))

    c = truncated_normal(cfg.axis_mean, cfg.axis_std, *cfg.axis_range, rng)
    factor = float(rng.uniform(factor_min(c, cfg), cfg.factor_max))

    corner = int(rng.integers(4))
    radius = cfg.shadow_corner_radius * math.hypot(width, height) * math.sqrt(rng.random())
    angle = 2.0 * math.pi * rng.random()
    cb = float(rng.uniform(*cfg.center_brightness))
    eb = float(rng.uniform(*cfg.edge_brightness))

    corners = [(0.0, 0.0), (width - 1.0, 0.0), (0.0, height - 1.0), (width - 1.0, height - 1.0)]
    cx, cy = corners[corner]
    shadow = None
    if image_luminance > cfg.luminance_threshold:
        shadow = ShadowParams((cx + radius * math.cos(angle), cy + radius * math.sin(angle)), cb, eb)

    return DeformationParams(
        seed=int(seed),
        wave=WaveParams(amplitude, wavelength) if use_wave else None,
        cylinder=CylinderParams(factor, c, float(width)) if use_cylinder else None,
        shadow=shadow,
        s=s,
    )


def check_params(params: DeformationParams, config: SamplerConfig | None = None) -> list[str]:
    """Return the list of violated parameter invariants (empty when valid)."""
    cfg = config or SamplerConfig()
    problems = []
    if not cfg.wavelength_scale[0] <= params.s <= cfg.wavelength_scale[1]:
        problems.append(f"s={params.s} outside {cfg.wavelength_scale}")
    if params.wave is not None:
        a, w = params.wave.amplitude, params.wave.wavelength
        if not cfg.amplitude[0] <= a <= cfg.amplitude[1]:
            problems.append(f"A={a} outside {cfg.amplitude}")
        if not params.s * a <= w <= cfg.wavelength_max:
            problems.append(f"wavelength={w} outside [{params.s * a}, {cfg.wavelength_max}]")
    if params.cylinder is not None:
        c, f = params.cylinder.axis, params.cylinder.factor
        if not cfg.axis_range[0] <= c <= cfg.axis_range[1]:
            problems.append(f"c={c} outside {cfg.axis_range}")
        if not factor_min(c, cfg) <= f <= cfg.factor_max:
            problems.append(f"F={f} outside [{factor_min(c, cfg)}, {cfg.factor_max}]")
    if params.shadow is not None:
        if not cfg.center_brightness[0] <= params.shadow.cb <= cfg.center_brightness[1]:
            problems.append(f"cb={params.shadow.cb} outside {cfg.center_brightness}")
        if not cfg.edge_brightness[0] <= params.shadow.eb <= cfg.edge_brightness[1]:
            problems.append(f"eb={params.shadow.eb} outside {cfg.edge_brightness}")
    return problems
