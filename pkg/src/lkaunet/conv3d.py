"""Direct 3D convolution: grouped, dilated, strided and transposed.

Cross-correlation convention (no kernel flip) and symmetric zero padding.
Weights of a forward convolution are ``[out, in/groups, k1, k2, k3]``.  A
transposed convolution reuses the weight of the forward convolution it is
the adjoint of, i.e. ``[in, out/groups, k1, k2, k3]``.

Two execution strategies are used internally: a per-tap multiply-add for
depth-wise kernels and an im2col matrix product otherwise.  The naive
``conv3d_oracle`` exists only to check them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _triple(v, name: str) -> tuple[int, int, int]:
    if np.isscalar(v):
        v = (v, v, v)
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ValueError(f"{name} must have 3 entries, got {v}")
    return v


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    dilation: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    groups: int = 1
    has_bias: bool = True
    transposed: bool = False

    def __post_init__(self):
        for name in ("kernel", "stride", "dilation", "padding"):
            object.__setattr__(self, name, _triple(getattr(self, name), name))
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.dilation) < 1:
            raise ValueError(f"kernel, stride and dilation must be >= 1: {self}")
        if min(self.padding) < 0:
            raise ValueError("padding must be >= 0")
        if self.groups < 1 or self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must be divisible by groups={self.groups}")

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.transposed:
            return (self.in_channels, self.out_channels // self.groups) + self.kernel
        return (self.out_channels, self.in_channels // self.groups) + self.kernel

    def parameter_count(self) -> int:
        return int(np.prod(self.weight_shape)) + (self.out_channels if self.has_bias else 0)

    def output_spatial(self, spatial) -> tuple[int, int, int]:
        spatial = _triple(spatial, "spatial")
        out = []
        for n, k, s, d, p in zip(spatial, self.kernel, self.stride, self.dilation, self.padding):
            if self.transposed:
                o = (n - 1) * s - 2 * p + d * (k - 1) + 1
            else:
                o = (n + 2 * p - d * (k - 1) - 1) // s + 1
            if o < 1:
                raise ValueError(f"output size {o} < 1 for input {spatial} and {self}")
            out.append(o)
        return tuple(out)


@dataclass
class ConvWeights:
    kernel: np.ndarray
    bias: np.ndarray | None = None

    def check(self, spec: ConvSpec) -> None:
        if tuple(self.kernel.shape) != spec.weight_shape:
            raise ValueError(f"kernel shape {self.kernel.shape} != {spec.weight_shape}")
        if spec.has_bias != (self.bias is not None):
            raise ValueError("bias presence does not match spec.has_bias")
        if self.bias is not None and tuple(self.bias.shape) != (spec.out_channels,):
            raise ValueError(f"bias shape {self.bias.shape} != ({spec.out_channels},)")

    @property
    def size(self) -> int:
        return self.kernel.size + (0 if self.bias is None else self.bias.size)


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding that keeps the spatial size at stride 1."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"same padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


# --------------------------------------------------------------------------
# strided kernels shared by forward, transposed and gradient paths

def _check_input(x: np.ndarray, channels: int) -> None:
    if x.ndim != 5:
        raise ValueError(f"expected [N, C, H, W, D] input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ValueError(f"input has {x.shape[1]} channels, expected {channels}")


def _pad(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))


def _tap_slices(tap, out, stride, dilation):
    return (slice(None), slice(None)) + tuple(
        slice(t * d, t * d + s * (o - 1) + 1, s) for t, o, s, d in zip(tap, out, stride, dilation))


def _columns(xp, kernel, out, stride, dilation, groups):
    """im2col matrix ``[N, G, Cg*k^3, P]`` of a padded input."""
    n, c = xp.shape[:2]
    s = xp.strides
    view = as_strided(
        xp,
        shape=(n, c) + tuple(kernel) + tuple(out),
        strides=(s[0], s[1]) + tuple(d * st for d, st in zip(dilation, s[2:]))
        + tuple(k * st for k, st in zip(stride, s[2:])),
        writeable=False,
    )
    return view.reshape(n, groups, (c // groups) * int(np.prod(kernel)), int(np.prod(out)))


def _is_depthwise(w: np.ndarray, groups: int) -> bool:
    return w.shape[1] == 1 and w.shape[0] == groups


def _correlate(x, w, stride, dilation, padding, groups):
    """Gather direction: ``y[n, o] = sum_c,tap w[o, c, tap] * xpad[n, c, s*i + d*tap]``."""
    n = x.shape[0]
    o_ch = w.shape[0]
    kernel = w.shape[2:]
    xp = _pad(x, padding)
    out = tuple((xp.shape[2 + i] - dilation[i] * (kernel[i] - 1) - 1) // stride[i] + 1 for i in range(3))
    if _is_depthwise(w, groups):
        y = np.zeros((n, o_ch) + out, dtype=x.dtype)
        for tap in itertools.product(*map(range, kernel)):
            y += w[(slice(None), 0) + tap].reshape(1, -1, 1, 1, 1) * xp[_tap_slices(tap, out, stride, dilation)]
        return y
    cols = _columns(xp, kernel, out, stride, dilation, groups)
    wm = w.reshape(groups, o_ch // groups, -1)
    return np.matmul(wm, cols).reshape((n, o_ch) + out)


def _scatter(g, w, in_spatial, stride, dilation, padding, groups):
    """Adjoint of ``_correlate`` w.r.t. its input; also the transposed-conv forward."""
    n = g.shape[0]
    in_ch = w.shape[1] * groups
    kernel = w.shape[2:]
    out = g.shape[2:]
    padded = tuple(s + 2 * p for s, p in zip(in_spatial, padding))
    gxp = np.zeros((n, in_ch) + padded, dtype=g.dtype)
    taps = list(itertools.product(*map(range, kernel)))
    if _is_depthwise(w, groups):
        for tap in taps:
            gxp[_tap_slices(tap, out, stride, dilation)] += w[(slice(None), 0) + tap].reshape(1, -1, 1, 1, 1) * g
    else:
        wm = w.reshape(groups, w.shape[0] // groups, -1)
        gcols = np.matmul(wm.transpose(0, 2, 1), g.reshape(n, groups, w.shape[0] // groups, -1))
        gcols = gcols.reshape((n, in_ch) + tuple(kernel) + tuple(out))
        for tap in taps:
            gxp[_tap_slices(tap, out, stride, dilation)] += gcols[(slice(None), slice(None)) + tap]
    crop = (slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(padding, in_spatial))
    return np.ascontiguousarray(gxp[crop])


def _kernel_grad(x, g, w_shape, stride, dilation, padding, groups):
    """Gradient of ``<_correlate(x, w), g>`` w.r.t. ``w``."""
    o_ch = w_shape[0]
    kernel = w_shape[2:]
    out = g.shape[2:]
    xp = _pad(x, padding)
    if w_shape[1] == 1 and o_ch == groups:
        gw = np.zeros(w_shape, dtype=x.dtype)
        for tap in itertools.product(*map(range, kernel)):
            xs = xp[_tap_slices(tap, out, stride, dilation)]
            gw[(slice(None), 0) + tap] = np.einsum("ncijk,ncijk->c", g, xs)
        return gw
    n = x.shape[0]
    cols = _columns(xp, kernel, out, stride, dilation, groups)
    gm = g.reshape(n, groups, o_ch // groups, -1)
    gw = np.matmul(gm, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    return gw.reshape(w_shape)


def _add_bias(y, bias):
    if bias is None:
        return y
    return y + np.asarray(bias, dtype=y.dtype).reshape(1, -1, 1, 1, 1)


# --------------------------------------------------------------------------
# public API

def conv3d(x: np.ndarray, spec: ConvSpec, w: ConvWeights) -> np.ndarray:
    if spec.transposed:
        raise ValueError("spec is transposed; use conv3d_transposed")
    _check_input(x, spec.in_channels)
    w.check(spec)
    spec.output_spatial(x.shape[2:])
    y = _correlate(x, w.kernel.astype(x.dtype, copy=False), spec.stride, spec.dilation, spec.padding, spec.groups)
    return _add_bias(y, w.bias)


def conv3d_transposed(x: np.ndarray, spec: ConvSpec, w: ConvWeights) -> np.ndarray:
    if not spec.transposed:
        raise ValueError("spec is not transposed; use conv3d")
    _check_input(x, spec.in_channels)
    w.check(spec)
    out = spec.output_spatial(x.shape[2:])
    y = _scatter(x, w.kernel.astype(x.dtype, copy=False), out, spec.stride, spec.dilation, spec.padding, spec.groups)
    return _add_bias(y, w.bias)


def conv3d_oracle(x: np.ndarray, spec: ConvSpec, w: ConvWeights) -> np.ndarray:
    """Literal nested-loop definition of ``conv3d``; only for small inputs."""
    if spec.transposed:
        raise ValueError("oracle covers forward convolution only")
    _check_input(x, spec.in_channels)
    w.check(spec)
    n_b, _, *size = x.shape
    out = spec.output_spatial(size)
    k1, k2, k3 = spec.kernel
    s1, s2, s3 = spec.stride
    d1, d2, d3 = spec.dilation
    p1, p2, p3 = spec.padding
    cg = spec.in_channels // spec.groups
    og = spec.out_channels // spec.groups
    xs = x.astype(np.float64).tolist()
    ks = w.kernel.astype(np.float64).tolist()
    bs = [0.0] * spec.out_channels if w.bias is None else w.bias.astype(np.float64).tolist()
    y = np.zeros((n_b, spec.out_channels) + out, dtype=np.float64)
    for n in range(n_b):
        for o in range(spec.out_channels):
            g = o // og
            for i in range(out[0]):
                for j in range(out[1]):
                    for l in range(out[2]):
                        acc = bs[o]
                        for ci in range(cg):
                            c = g * cg + ci
                            for a in range(k1):
                                u = i * s1 - p1 + a * d1
                                if u < 0 or u >= size[0]:
                                    continue
                                for b in range(k2):
                                    v = j * s2 - p2 + b * d2
                                    if v < 0 or v >= size[1]:
                                        continue
                                    for e in range(k3):
                                        t = l * s3 - p3 + e * d3
                                        if 0 <= t < size[2]:
                                            acc += xs[n][c][u][v][t] * ks[o][ci][a][b][e]
                        y[n, o, i, j, l] = acc
    return y.astype(x.dtype)


def conv3d_transposed_oracle(x: np.ndarray, spec: ConvSpec, w: ConvWeights) -> np.ndarray:
    """Literal scatter-loop definition of ``conv3d_transposed``."""
    if not spec.transposed:
        raise ValueError("spec is not transposed")
    _check_input(x, spec.in_channels)
    w.check(spec)
    n_b, _, *size = x.shape
    out = spec.output_spatial(size)
    og = spec.out_channels // spec.groups
    cg = spec.in_channels // spec.groups
    y = np.zeros((n_b, spec.out_channels) + out, dtype=np.float64)
    for n, c, i, j, l in itertools.product(range(n_b), range(spec.in_channels), *map(range, size)):
        g = c // cg
        val = float(x[n, c, i, j, l])
        for oi in range(og):
            o = g * og + oi
            for a, b, e in itertools.product(*map(range, spec.kernel)):
                u = i * spec.stride[0] - spec.padding[0] + a * spec.dilation[0]
                v = j * spec.stride[1] - spec.padding[1] + b * spec.dilation[1]
                t = l * spec.stride[2] - spec.padding[2] + e * spec.dilation[2]
                if 0 <= u < out[0] and 0 <= v < out[1] and 0 <= t < out[2]:
                    y[n, o, u, v, t] += val * float(w.kernel[c, oi, a, b, e])
    if w.bias is not None:
        y += w.bias.astype(np.float64).reshape(1, -1, 1, 1, 1)
    return y.astype(x.dtype)
