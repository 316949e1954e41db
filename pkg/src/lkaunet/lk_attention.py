"""Large-kernel attention for volumetric feature maps.

A ``K^3`` kernel is emulated by a depth-wise dilated conv (kernel ``K/d``,
dilation ``d``), then a depth-wise conv (kernel ``2d-1``), then a 1x1x1
conv.  The attention map is the sigmoid of that stack applied to
``x' = lReLU(GN(x))`` and the module returns ``A * x' + x'``.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from . import tensor_core as tc
from .autodiff import Parameter
from .complexity import nprm_decomposed
from .conv3d import ConvSpec, same_padding
from .init import Initializer


@dataclass(frozen=True)
class LKAPlan:
    K: int
    d: int

    def __post_init__(self):
        if self.K < 1 or self.d < 1:
            raise ValueError("K and d must be >= 1")
        if self.K % self.d:
            raise ValueError(f"dilation {self.d} does not divide K={self.K}")
        if (self.K // self.d) % 2 == 0:
            raise ValueError(f"K/d = {self.K // self.d} is even; the dilated kernel needs a centre tap")

    @property
    def dw_kernel(self) -> int:
        return 2 * self.d - 1

    @property
    def dwd_kernel(self) -> int:
        return self.K // self.d

    @property
    def dwd_dilation(self) -> int:
        return self.d

    @property
    def dw_padding(self) -> int:
        return same_padding(self.dw_kernel, 1)

    @property
    def dwd_padding(self) -> int:
        return same_padding(self.dwd_kernel, self.d)

    def as_dict(self) -> dict:
        k, p = self.dw_kernel, self.dw_padding
        kd, dd, pd = self.dwd_kernel, self.dwd_dilation, self.dwd_padding
        return {
            "equal_kernel": [self.K] * 3,
            "dilation": self.d,
            "dw": {"kernel": [k] * 3, "padding": [p] * 3},
            "dwd": {"kernel": [kd] * 3, "dilation": [dd] * 3, "padding": [pd] * 3},
            "effective_receptive_field": effective_receptive_field(self),
        }


def plan_decomposition(K: int, d: int) -> LKAPlan:
    return LKAPlan(K, d)


def effective_receptive_field(plan: LKAPlan) -> int:
    """Side of the impulse-response support of the two depth-wise convs."""
    return plan.dw_kernel + plan.d * (plan.dwd_kernel - 1)


# Plans attached to each decoder scale of the Full network, listed
# from full resolution downwards.
FULL_PLANS = (LKAPlan(21, 3), LKAPlan(15, 3), LKAPlan(10, 2), LKAPlan(6, 2), LKAPlan(6, 2))


class LKAModule:
    """GN -> lReLU -> (DWD, DW, 1x1x1) -> sigmoid attention with residual."""

    def __init__(self, plan: LKAPlan, channels: int, rng: tc.Rng | None = None, *,
                 gn_groups: int | None = None, lrelu_slope: float = 0.01, dtype="float32",
                 prefix: str = "lka", init: Initializer | None = None):
        self.plan = plan
        self.channels = channels
        self.gn_groups = gn_groups or tc.default_groups(channels)
        self.lrelu_slope = lrelu_slope
        C = channels
        self.dwd_spec = ConvSpec(C, C, plan.dwd_kernel, 1, plan.dwd_dilation, plan.dwd_padding, groups=C)
        self.dw_spec = ConvSpec(C, C, plan.dw_kernel, 1, 1, plan.dw_padding, groups=C)
        self.pw_spec = ConvSpec(C, C, 1)
        init = init or Initializer(rng, dtype)
        self.gamma = init.const((C,), 1.0, f"{prefix}.gn.gamma")
        self.beta = init.const((C,), 0.0, f"{prefix}.gn.beta")
        self.dwd_w, self.dwd_b = init.conv(self.dwd_spec, f"{prefix}.dwd")
        self.dw_w, self.dw_b = init.conv(self.dw_spec, f"{prefix}.dw")
        self.pw_w, self.pw_b = init.conv(self.pw_spec, f"{prefix}.pw")

    def conv_parameters(self) -> list[Parameter]:
        return [self.dwd_w, self.dwd_b, self.dw_w, self.dw_b, self.pw_w, self.pw_b]

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta] + self.conv_parameters()

    def parameter_count(self, include_norm: bool = False) -> int:
        ps = self.parameters() if include_norm else self.conv_parameters()
        return sum(p.size for p in ps)

    def __call__(self, x):
        return lka_forward(self, x)


def lka_forward(m: LKAModule, x):
    """Returns ``(output, attention)`` with the shape of ``x``."""
    if x.ndim != 5 or x.shape[1] != m.channels:
        raise ValueError(f"expected [N, {m.channels}, H, W, D] input, got {tuple(x.shape)}")
    xn = ad.leaky_relu(ad.group_norm(x, m.gamma, m.beta, groups=m.gn_groups), slope=m.lrelu_slope)
    h = ad.conv3d(xn, m.dwd_w, m.dwd_b, spec=m.dwd_spec)
    h = ad.conv3d(h, m.dw_w, m.dw_b, spec=m.dw_spec)
    h = ad.conv3d(h, m.pw_w, m.pw_b, spec=m.pw_spec)
    attn = ad.sigmoid(h)
    return attn * xn + xn, attn


def lka_parameter_count(plan: LKAPlan, channels: int) -> int:
    """Closed-form count of the module's conv weights and biases."""
    return nprm_decomposed(channels, plan.K, plan.d)
