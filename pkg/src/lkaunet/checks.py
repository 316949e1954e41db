"""Named gradient-check targets shared by the CLI and the test-suite.

Every target builds a small float64 problem and reduces its output to a
scalar through a fixed random weighting, so that the finite differences
are not dominated by cancellation in a plain sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import tensor_core as tc
from .autodiff import Parameter
from .conv3d import ConvSpec
from .lk_attention import LKAModule, LKAPlan

TOLERANCE = 1e-4


@dataclass
class Problem:
    fn: Callable
    point: list
    params: list = field(default_factory=list)
    exclude_near: float | None = None
    subset_threshold: int = 4096
    n_subset: int = 64
    skip_kink_crossings: bool = False
    eps: float = 1e-5


def _weighted(fn, shape, gen):
    r = gen.standard_normal(shape)
    return lambda *a: ad.sum(fn(*a) * r)


def _elementwise(op, positive: bool = False, kink: bool = False):
    def build(channels, size, gen):
        shape = (2, channels) + size
        x = gen.standard_normal(shape)
        if positive:
            x = np.abs(x) + 0.5
        return Problem(_weighted(op, shape, gen), [x], exclude_near=1e-3 if kink else None)
    return build


def _binary(op, positive_b: bool = False):
    def build(channels, size, gen):
        shape = (2, channels) + size
        a = gen.standard_normal(shape)
        b = gen.standard_normal((1, channels, 1, 1, 1))  # broadcast path
        if positive_b:
            b = np.abs(b) + 0.5
        return Problem(_weighted(op, shape, gen), [a, b])
    return build


def _reduction(op):
    def build(channels, size, gen):
        x = gen.standard_normal((2, channels) + size)
        r = gen.standard_normal((2,) + size)
        return Problem(lambda v: ad.sum(op(v) * r), [x])
    return build


def _group_norm(channels, size, gen):
    shape = (2, channels) + size
    groups = tc.default_groups(channels)
    gamma = Parameter(gen.standard_normal(channels), "gamma")
    beta = Parameter(gen.standard_normal(channels), "beta")
    fn = _weighted(lambda v: ad.group_norm(v, gamma, beta, groups=groups), shape, gen)
    return Problem(fn, [gen.standard_normal(shape)], [gamma, beta])


def _conv(transposed: bool):
    def build(channels, size, gen):
        cout = channels + 1
        if transposed:
            spec = ConvSpec(channels, cout, 4, 2, 1, 1, transposed=True)
        else:
            spec = ConvSpec(channels, cout, 3, 2, 2, 1)
        w = Parameter(gen.standard_normal(spec.weight_shape), "w")
        b = Parameter(gen.standard_normal(cout), "b")
        op = ad.conv3d_transposed if transposed else ad.conv3d
        x = gen.standard_normal((1, channels) + size)
        out_shape = (1, cout) + spec.output_spatial(size)
        return Problem(_weighted(lambda v: op(v, w, b, spec=spec), out_shape, gen), [x], [w, b])
    return build


def _depthwise(channels, size, gen):
    spec = ConvSpec(channels, channels, 3, 1, 2, 2, groups=channels)
    w = Parameter(gen.standard_normal(spec.weight_shape), "w")
    b = Parameter(gen.standard_normal(channels), "b")
    shape = (1, channels) + size
    return Problem(_weighted(lambda v: ad.conv3d(v, w, b, spec=spec), shape, gen),
                   [gen.standard_normal(shape)], [w, b])


def _concat(channels, size, gen):
    a = gen.standard_normal((1, channels) + size)
    b = gen.standard_normal((1, 2) + size)
    out = (1, channels + 2) + size
    return Problem(_weighted(lambda u, v: ad.concat(u, v, axis=1), out, gen), [a, b])


def _reshape(channels, size, gen):
    x = gen.standard_normal((1, channels) + size)
    n = x.size
    return Problem(_weighted(lambda v: ad.reshape(v, shape=(n,)), (n,), gen), [x])


def _lka(channels, size, gen, plan=LKAPlan(6, 2)):
    m = LKAModule(plan, channels, tc.Rng(int(gen.integers(2**31))), dtype="float64")
    # non-trivial affine so gamma/beta gradients are exercised
    m.gamma.value = 1.0 + 0.1 * gen.standard_normal(channels)
    m.beta.value = 0.1 * gen.standard_normal(channels)
    shape = (1, channels) + size
    x = gen.standard_normal(shape)
    fn = _weighted(lambda v: m(v)[0], shape, gen)
    return Problem(fn, [x], m.parameters())


def _unet_toy(channels, size, gen):
    from .unet3d.losses import class_weights, one_hot, soft_dice_loss
    from .unet3d.model import UNetConfig, build_unet, probabilities, unet_forward

    # no single-channel GN groups: there a conv bias feeding the norm has an
    # identically zero gradient and the relative error measures pure roundoff.
    # eps=1e-4 keeps roundoff below the smallest gradients; kink crossings are skipped.
    cfg = UNetConfig(in_channels=1, out_classes=2, num_scales=3, base_width=channels,
                     attention="mid", mid_kernel=6, mid_dilation=2, gn_groups=max(1, channels // 2),
                     dtype="float64")
    net = build_unet(cfg, tc.Rng(int(gen.integers(2**31))))
    x = gen.standard_normal((1, 1) + size)
    labels = (gen.random(size) < 0.3).astype(np.uint8)
    target = one_hot(labels, 2, "float64")
    w = class_weights(labels, 2)

    def loss(v):
        logits = unet_forward(net, v)[0]
        return soft_dice_loss(probabilities(cfg, logits), target, w)

    return Problem(loss, [x], net.parameters(), subset_threshold=64, n_subset=4,
                   skip_kink_crossings=True, eps=1e-4)


TARGETS: dict[str, Callable] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b, positive_b=True),
    "neg": _elementwise(lambda a: -a),
    "square": _elementwise(ad.square),
    "exp": _elementwise(ad.exp),
    "log": _elementwise(ad.log, positive=True),
    "sum": _reduction(lambda v: ad.sum(v, axis=1)),
    "mean": _reduction(lambda v: ad.mean(v, axis=1)),
    "leaky_relu": _elementwise(lambda v: ad.leaky_relu(v, slope=0.01), kink=True),
    "sigmoid": _elementwise(ad.sigmoid),
    "softplus": _elementwise(ad.softplus),
    "softmax": _elementwise(lambda v: ad.softmax(v, axis=1)),
    "group_norm": _group_norm,
    "conv3d": _conv(False),
    "conv3d_depthwise": _depthwise,
    "conv3d_transposed": _conv(True),
    "concat": _concat,
    "reshape": _reshape,
    "lka": _lka,
    "unet-toy": _unet_toy,
}

DEFAULT_SIZES = {"unet-toy": (8, 8, 8), "lka": (6, 6, 6)}


def build_problem(target: str, channels: int = 4, size=None, seed: int = 0) -> Problem:
    if target not in TARGETS:
        raise KeyError(f"unknown gradcheck target {target!r}")
    size = tuple(size or DEFAULT_SIZES.get(target, (3, 3, 3)))
    if len(size) != 3:
        raise ValueError("size needs three spatial extents")
    gen = np.random.default_rng(seed)
    return TARGETS[target](channels, size, gen)


def run_gradcheck(target: str, channels: int = 4, size=None, seed: int = 0, eps: float | None = None):
    """``GradcheckResult`` for ``target``; ``eps`` defaults to the target's own step."""
    prob = build_problem(target, channels, size, seed)
    return ad.gradcheck_report(prob.fn, prob.point, eps=prob.eps if eps is None else eps, params=prob.params, seed=seed,
                               subset_threshold=prob.subset_threshold, n_subset=prob.n_subset,
                               exclude_near=prob.exclude_near, skip_kink_crossings=prob.skip_kink_crossings)
