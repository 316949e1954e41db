"""Dense tensor helpers, activations, group normalization and a seeded PRNG.

Tensors are plain ``numpy.ndarray`` objects laid out row-major; the
convention for volumetric feature maps is ``[N, C, H, W, D]``.  Every
floating-point op in this module refuses to return NaN or Inf.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DTYPES = {
    "float32": np.dtype(np.float32),
    "float64": np.dtype(np.float64),
    "uint8": np.dtype(np.uint8),
}


class NonFiniteError(FloatingPointError):
    """Raised when an op would produce NaN or Inf."""


def as_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt not in DTYPES.values():
        raise TypeError(f"unsupported dtype {dt}; expected one of {sorted(DTYPES)}")
    return dt


def make_tensor(shape: Sequence[int], dtype="float32", fill=None, data=None) -> np.ndarray:
    """Create a tensor of ``shape`` filled with a constant or taken from ``data``."""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValueError("shape must be non-empty")
    if any(s < 1 for s in shape):
        raise ValueError(f"all dims must be >= 1, got {shape}")
    dt = as_dtype(dtype)
    if data is not None:
        flat = np.asarray(data, dtype=dt).ravel()
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"data has {flat.size} elements, shape {shape} needs {int(np.prod(shape))}")
        out = flat.reshape(shape).copy()
    else:
        out = np.full(shape, 0 if fill is None else fill, dtype=dt)
    if dt.kind == "f":
        check_finite(out)
    return out


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def _require_float(x: np.ndarray) -> None:
    if not (isinstance(x, np.ndarray) and x.dtype.kind == "f"):
        raise TypeError(f"expected a floating-point tensor, got {getattr(x, 'dtype', type(x))}")


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    _require_float(x)
    return check_finite(np.where(x >= 0, x, x * x.dtype.type(slope)), "leaky_relu")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form never overflows exp()
    _require_float(x)
    e = np.exp(-np.abs(x))
    one = x.dtype.type(1)
    return check_finite(np.where(x >= 0, one / (one + e), e / (one + e)), "sigmoid")


def softplus(x: np.ndarray) -> np.ndarray:
    _require_float(x)
    return check_finite(np.logaddexp(x.dtype.type(0), x), "softplus")


def softmax(x: np.ndarray, axis: int = 1) -> np.ndarray:
    _require_float(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for {x.ndim}-d tensor")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return check_finite(z / z.sum(axis=axis, keepdims=True), "softmax")


def default_groups(channels: int) -> int:
    """Group count used when none is configured: ``min(8, C)``, reduced until it divides C."""
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


def group_norm_parts(x: np.ndarray, groups: int, eps: float = 1e-5):
    """Return ``(xhat, inv_std)``; ``inv_std`` has shape ``[N, groups, 1]``."""
    _require_float(x)
    if eps <= 0:
        raise ValueError("eps must be positive")
    n, c = x.shape[:2]
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    return (xc * inv_std).reshape(x.shape), inv_std


def _channel_view(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def group_norm(x, groups: int, eps: float = 1e-5, gamma=None, beta=None) -> np.ndarray:
    xhat, _ = group_norm_parts(x, groups, eps)
    y = xhat
    if gamma is not None:
        y = y * _channel_view(np.asarray(gamma, dtype=x.dtype), x.ndim)
    if beta is not None:
        y = y + _channel_view(np.asarray(beta, dtype=x.dtype), x.ndim)
    return check_finite(y, "group_norm")


# --------------------------------------------------------------------------
# PRNG

def _counter_to_int(words) -> int:
    return sum(int(w) << (64 * i) for i, w in enumerate(words))


@dataclass(frozen=True)
class Rng:
    """Immutable Philox-4x64 stream position: ``(seed, counter)``.

    Each draw builds ``numpy.random.Philox(key=seed, counter=counter)``,
    consumes what it needs and returns a new ``Rng`` whose counter sits past
    every block used.  Leftover buffered words are discarded, so a stream
    is a pure function of the seed and the sequence of draw calls.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def _generator(self):
        bg = np.random.Philox(key=self.seed, counter=self.counter)
        return np.random.Generator(bg), bg

    def _advance(self, bg) -> "Rng":
        return Rng(self.seed, _counter_to_int(bg.state["state"]["counter"]))

    def split(self, n: int) -> list["Rng"]:
        """Independent child streams (seed-splitting for per-sample work)."""
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, self.counter & 0xFFFFFFFF])
        return [Rng(int(child.generate_state(1, np.uint64)[0])) for child in ss.spawn(n)]


def _shape(shape) -> tuple[int, ...]:
    return (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)


def uniform(rng: Rng, lo: float, hi: float, shape, dtype="float64"):
    """I.i.d. samples in ``[lo, hi)``. Returns ``(tensor, next_rng)``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo}, {hi}")
    dt = as_dtype(dtype)
    gen, bg = rng._generator()
    u = lo + (hi - lo) * gen.random(_shape(shape))
    out = u.astype(dt)
    # rounding to a narrower dtype can land exactly on hi
    out = np.minimum(out, np.nextafter(dt.type(hi), dt.type(lo)))
    return out, rng._advance(bg)


def normal(rng: Rng, mean: float, std: float, shape, dtype="float64"):
    if std < 0:
        raise ValueError("std must be non-negative")
    gen, bg = rng._generator()
    out = (mean + std * gen.standard_normal(_shape(shape))).astype(as_dtype(dtype))
    return out, rng._advance(bg)


def bernoulli(rng: Rng, p: float, shape=()):
    """Boolean draws with success probability ``p`` (``u < p``)."""
    u, rng = uniform(rng, 0.0, 1.0, shape if shape != () else 1)
    out = u < p
    return (bool(out[0]) if shape == () else out), rng


def permutation(rng: Rng, n: int):
    gen, bg = rng._generator()
    return gen.permutation(n), rng._advance(bg)
