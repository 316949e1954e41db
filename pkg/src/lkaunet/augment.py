"""Seeded on-the-fly augmentation for volumes and their label maps.

Each method fires independently with its configured probability and draws
its parameter uniformly from its range.  Spatial transforms (scaling,
rotation, elastic) are fused into one resampling pass: trilinear for
images, nearest-neighbour for labels, zero / background outside the
volume.  Flips follow, then the intensity transforms in their configured order.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import ndimage

from . import tensor_core as tc

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MethodConfig:
    probability: float
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if not self.low < self.high:
            raise ValueError(f"range ({self.low}, {self.high}) must have low < high")


@dataclass(frozen=True)
class AugmentConfig:
    brightness: MethodConfig = MethodConfig(0.30, 0.7, 1.3)
    contrast: MethodConfig = MethodConfig(0.15, 0.6, 1.4)
    gaussian_noise: MethodConfig = MethodConfig(0.15, 0.0, 1.0)  # variance
    gaussian_blur: MethodConfig = MethodConfig(0.20, 0.5, 1.5)  # kernel sigma
    gamma: MethodConfig = MethodConfig(0.15, 0.7, 1.5)
    scaling: MethodConfig = MethodConfig(0.30, 0.65, 1.6)
    rotation: MethodConfig = MethodConfig(0.30, -30.0, 30.0)  # degrees, per axis
    elastic: MethodConfig = MethodConfig(0.30, 5.0, 10.0)  # alpha; sigma = 3 alpha
    flipping: MethodConfig = MethodConfig(0.50)  # per axis

    def with_probability(self, p: float) -> "AugmentConfig":
        return AugmentConfig(**{f.name: replace(getattr(self, f.name), probability=p) for f in fields(self)})

    def to_dict(self) -> dict:
        out = {"schema_version": CONFIG_SCHEMA_VERSION}
        for f in fields(self):
            m = getattr(self, f.name)
            out[f.name] = {"probability": m.probability, "range": [m.low, m.high]}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = dict(d)
        d.pop("schema_version", None)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown augmentation methods: {sorted(unknown)}")
        kw = {}
        for name, spec in d.items():
            default = getattr(cls(), name)
            lo, hi = spec.get("range", [default.low, default.high])
            kw[name] = MethodConfig(float(spec.get("probability", default.probability)), float(lo), float(hi))
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "AugmentConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class AugPlan:
    """Concrete draws for one sample; ``None`` means the method is off."""

    brightness: float | None = None
    contrast: float | None = None
    noise_variance: float | None = None
    blur_sigma: float | None = None
    gamma: float | None = None
    scale: float | None = None
    rotation: tuple[float, float, float] | None = None  # degrees about axes 0, 1, 2
    elastic_alpha: float | None = None
    flips: tuple[bool, bool, bool] = (False, False, False)
    noise_seed: int = 0
    elastic_seed: int = 0

    @property
    def empty(self) -> bool:
        active = [self.brightness, self.contrast, self.noise_variance, self.blur_sigma, self.gamma,
                  self.scale, self.rotation, self.elastic_alpha]
        return all(v is None for v in active) and not any(self.flips)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_plan(config: AugmentConfig, rng: tc.Rng):
    """Draw an ``AugPlan``; returns ``(plan, next_rng)``."""
    draws = {}

    def maybe(method: MethodConfig, n: int = 1):
        nonlocal rng
        hit, rng = tc.bernoulli(rng, method.probability)
        if not hit:
            return None
        v, rng = tc.uniform(rng, method.low, method.high, n)
        return tuple(float(a) for a in v) if n > 1 else float(v[0])

    draws["brightness"] = maybe(config.brightness)
    draws["contrast"] = maybe(config.contrast)
    draws["noise_variance"] = maybe(config.gaussian_noise)
    draws["blur_sigma"] = maybe(config.gaussian_blur)
    draws["gamma"] = maybe(config.gamma)
    draws["scale"] = maybe(config.scaling)
    draws["rotation"] = maybe(config.rotation, 3)
    draws["elastic_alpha"] = maybe(config.elastic)
    flips, rng = tc.bernoulli(rng, config.flipping.probability, 3)
    seeds, rng = tc.uniform(rng, 0.0, 1.0, 2)
    noise_seed, elastic_seed = (int(s * 2**63) for s in seeds)
    plan = AugPlan(**draws, flips=tuple(bool(f) for f in flips), noise_seed=noise_seed, elastic_seed=elastic_seed)
    return plan, rng


# --------------------------------------------------------------------------
# intensity

def _channels(x: np.ndarray) -> np.ndarray:
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ValueError(f"expected [H, W, D] or [C, H, W, D] image, got {x.shape}")


def gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian over the three spatial axes, truncated at 4 sigma."""
    xc = _channels(x)
    out = np.stack([ndimage.gaussian_filter(c, sigma, truncate=4.0, mode="constant") for c in xc])
    return out.reshape(x.shape).astype(x.dtype)


def apply_intensity(x: np.ndarray, plan: AugPlan) -> np.ndarray:
    if not (isinstance(x, np.ndarray) and x.dtype.kind == "f"):
        raise TypeError("intensity augmentation needs a floating-point image")
    dtype = x.dtype
    xc = _channels(x).astype(np.float64)
    if plan.brightness is not None:
        xc = xc * plan.brightness
    if plan.contrast is not None:
        lo = xc.min(axis=(1, 2, 3), keepdims=True)
        hi = xc.max(axis=(1, 2, 3), keepdims=True)
        mu = xc.mean(axis=(1, 2, 3), keepdims=True)
        xc = np.clip(mu + (xc - mu) * plan.contrast, lo, hi)
    if plan.noise_variance is not None:
        noise, _ = tc.normal(tc.Rng(plan.noise_seed), 0.0, float(np.sqrt(plan.noise_variance)), xc.shape)
        xc = xc + noise
    if plan.blur_sigma is not None:
        xc = gaussian_blur(xc, plan.blur_sigma)
    if plan.gamma is not None:
        lo = xc.min(axis=(1, 2, 3), keepdims=True)
        span = xc.max(axis=(1, 2, 3), keepdims=True) - lo
        safe = np.where(span > 0, span, 1.0)
        xc = np.where(span > 0, ((xc - lo) / safe) ** plan.gamma * span + lo, xc)
    return tc.check_finite(xc.reshape(x.shape).astype(dtype), "augmented image")


# --------------------------------------------------------------------------
# spatial

def rotation_matrix(angles_deg) -> np.ndarray:
    """Rotation about array axis 2, then axis 1, then axis 0."""
    a0, a1, a2 = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))

    def rot(i, j, a):
        r = np.eye(3)
        r[i, i] = r[j, j] = np.cos(a)
        r[i, j], r[j, i] = -np.sin(a), np.sin(a)
        return r

    return rot(1, 2, a0) @ rot(0, 2, a1) @ rot(0, 1, a2)


def elastic_displacement(shape, alpha: float, seed: int) -> np.ndarray:
    """Smoothed white noise per axis, scaled so the largest magnitude is ``alpha`` voxels."""
    sigma = 3.0 * alpha
    noise, _ = tc.normal(tc.Rng(seed), 0.0, 1.0, (3,) + tuple(shape))
    field_ = np.stack([ndimage.gaussian_filter(n, sigma, mode="reflect") for n in noise])
    peak = np.abs(field_).max()
    return field_ * (alpha / peak) if peak > 0 else field_


def _sample_coords(shape, plan: AugPlan) -> np.ndarray | None:
    if plan.scale is None and plan.rotation is None and plan.elastic_alpha is None:
        return None
    centre = (np.asarray(shape, dtype=np.float64) - 1) / 2
    grid = np.indices(shape, dtype=np.float64).reshape(3, -1) - centre[:, None]
    fwd = np.eye(3)
    if plan.rotation is not None:
        fwd = rotation_matrix(plan.rotation) @ fwd
    if plan.scale is not None:
        fwd = plan.scale * fwd
    coords = np.linalg.inv(fwd) @ grid + centre[:, None]
    coords = coords.reshape((3,) + tuple(shape))
    if plan.elastic_alpha is not None:
        coords = coords + elastic_displacement(shape, plan.elastic_alpha, plan.elastic_seed)
    return coords


def apply_spatial(x: np.ndarray, labels: np.ndarray | None, plan: AugPlan):
    """Returns ``(image, labels)`` warped by the same geometric transform."""
    xc = _channels(x)
    spatial = xc.shape[1:]
    if labels is not None and tuple(labels.shape) != tuple(spatial):
        raise ValueError(f"label shape {labels.shape} does not match image {spatial}")
    coords = _sample_coords(spatial, plan)
    if coords is not None:
        xc = np.stack([ndimage.map_coordinates(c.astype(np.float64), coords, order=1, mode="grid-constant", cval=0.0)
                       for c in xc]).astype(x.dtype)
        if labels is not None:
            labels = ndimage.map_coordinates(labels, coords, order=0, mode="grid-constant", cval=0).astype(labels.dtype)
    axes = tuple(i for i, f in enumerate(plan.flips) if f)
    if axes:
        xc = np.flip(xc, axis=tuple(a + 1 for a in axes))
        if labels is not None:
            labels = np.flip(labels, axis=axes)
    out = np.ascontiguousarray(xc).reshape(x.shape)
    return out, (None if labels is None else np.ascontiguousarray(labels))


def augment(x: np.ndarray, labels: np.ndarray | None, config: AugmentConfig, rng: tc.Rng):
    """Sample a plan and apply it. Returns ``(image, labels, plan, next_rng)``."""
    plan, rng = sample_plan(config, rng)
    x2, l2 = apply_spatial(x, labels, plan)
    return apply_intensity(x2, plan), l2, plan, rng
