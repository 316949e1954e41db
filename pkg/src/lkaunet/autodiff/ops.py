"""Registered primitives and their adjoint rules."""
from __future__ import annotations

import numpy as np

from .. import tensor_core as tc
from ..conv3d import ConvSpec, ConvWeights, _correlate, _kernel_grad, _scatter, conv3d as _conv3d
from ..conv3d import conv3d_transposed as _conv3d_t
from .tape import primitive


def _unbroadcast(g, shape):
    shape = tuple(np.shape(shape) if not isinstance(shape, tuple) else shape)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _shape(a):
    return np.shape(a)


@primitive("add")
def add(a, b):
    sa, sb = _shape(a), _shape(b)
    return np.add(a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


@primitive("sub")
def sub(a, b):
    sa, sb = _shape(a), _shape(b)
    return np.subtract(a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))


@primitive("mul")
def mul(a, b):
    sa, sb = _shape(a), _shape(b)
    return np.multiply(a, b), lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb))


@primitive("div")
def div(a, b):
    sa, sb = _shape(a), _shape(b)
    out = np.divide(a, b)
    tc.check_finite(np.asarray(out), "div")
    return out, lambda g: (_unbroadcast(g / b, sa), _unbroadcast(-g * out / b, sb))


@primitive("neg")
def neg(a):
    return np.negative(a), lambda g: (-g,)


@primitive("square")
def square(a):
    return a * a, lambda g: (2 * g * a,)


@primitive("exp")
def exp(a):
    out = tc.check_finite(np.exp(a), "exp")
    return out, lambda g: (g * out,)


@primitive("log")
def log(a):
    if np.any(np.asarray(a) <= 0):
        raise tc.NonFiniteError("log of non-positive value")
    return np.log(a), lambda g: (g / a,)


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


@primitive("sum")
def sum(a, axis=None, keepdims=False):
    shape = np.shape(a)
    return np.sum(a, axis=axis, keepdims=keepdims), lambda g: (_expand(g, shape, axis, keepdims).copy(),)


@primitive("mean")
def mean(a, axis=None, keepdims=False):
    shape = np.shape(a)
    out = np.mean(a, axis=axis, keepdims=keepdims)
    n = np.size(a) // max(np.size(out), 1)
    return out, lambda g: (_expand(g / n, shape, axis, keepdims).copy(),)


@primitive("leaky_relu")
def leaky_relu(x, slope=0.01):
    """Derivative at exactly 0 is ``slope``."""
    out = tc.leaky_relu(x, slope)
    return out, lambda g: (np.where(x > 0, g, g * x.dtype.type(slope)),)


@primitive("sigmoid")
def sigmoid(x):
    out = tc.sigmoid(x)
    return out, lambda g: (g * out * (1 - out),)


@primitive("softplus")
def softplus(x):
    return tc.softplus(x), lambda g: (g * tc.sigmoid(x),)


@primitive("softmax")
def softmax(x, axis=1):
    out = tc.softmax(x, axis)
    return out, lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


@primitive("group_norm")
def group_norm(x, gamma=None, beta=None, groups=1, eps=1e-5):
    xhat, inv_std = tc.group_norm_parts(x, groups, eps)
    view = (1, -1) + (1,) * (x.ndim - 2)
    out = xhat
    if gamma is not None:
        out = out * gamma.reshape(view)
    if beta is not None:
        out = out + beta.reshape(view)
    tc.check_finite(out, "group_norm")
    red = (0,) + tuple(range(2, x.ndim))

    def vjp(g):
        dgamma = None if gamma is None else np.sum(g * xhat, axis=red)
        dbeta = None if beta is None else np.sum(g, axis=red)
        dxhat = g if gamma is None else g * gamma.reshape(view)
        n = x.shape[0]
        dh = dxhat.reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        dx = inv_std * (dh - dh.mean(axis=2, keepdims=True) - xh * (dh * xh).mean(axis=2, keepdims=True))
        return dx.reshape(x.shape), dgamma, dbeta

    return out, vjp


@primitive("conv3d")
def conv3d(x, weight, bias=None, spec: ConvSpec = None):
    out = _conv3d(x, spec, ConvWeights(weight, bias))
    st, dl, pd, gr = spec.stride, spec.dilation, spec.padding, spec.groups

    def vjp(g):
        w = weight.astype(g.dtype, copy=False)
        gx = _scatter(g, w, x.shape[2:], st, dl, pd, gr)
        gw = _kernel_grad(x, g, weight.shape, st, dl, pd, gr)
        gb = None if bias is None else g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return out, vjp


@primitive("conv3d_transposed")
def conv3d_transposed(x, weight, bias=None, spec: ConvSpec = None):
    out = _conv3d_t(x, spec, ConvWeights(weight, bias))
    st, dl, pd, gr = spec.stride, spec.dilation, spec.padding, spec.groups

    def vjp(g):
        w = weight.astype(g.dtype, copy=False)
        gx = _correlate(g, w, st, dl, pd, gr)
        gw = _kernel_grad(g, x, weight.shape, st, dl, pd, gr)
        gb = None if bias is None else g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return out, vjp


@primitive("concat")
def concat(*xs, axis=1):
    sizes = [np.shape(x)[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return np.concatenate(xs, axis=axis), lambda g: tuple(np.split(g, cuts, axis=axis))


@primitive("reshape")
def reshape(x, shape=None):
    orig = np.shape(x)
    return np.reshape(x, shape), lambda g: (np.reshape(g, orig),)
