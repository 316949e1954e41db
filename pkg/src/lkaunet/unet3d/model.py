"""3D U-Net with optional large-kernel attention on the upsampled decoder maps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .. import autodiff as ad
from .. import tensor_core as tc
from ..autodiff import Parameter
from ..conv3d import ConvSpec
from ..init import Initializer
from ..lk_attention import FULL_PLANS, LKAModule, LKAPlan

VARIANTS = ("base", "full", "mid")
CONFIG_SCHEMA_VERSION = 1


@dataclass
class UNetConfig:
    in_channels: int = 1
    out_classes: int = 2
    num_scales: int = 6
    base_width: int = 32
    max_width: int = 512
    attention: str = "base"
    mid_kernel: int = 21
    mid_dilation: int = 3
    mid_width: int = 128
    deep_supervision: bool = True
    output_nonlinearity: str = "softmax"
    gn_groups: int | None = None
    lrelu_slope: float = 0.01
    dtype: str = "float32"

    def __post_init__(self):
        self.attention = self.attention.lower()
        if self.attention not in VARIANTS:
            raise ValueError(f"attention must be one of {VARIANTS}, got {self.attention!r}")
        if self.output_nonlinearity not in ("softmax", "sigmoid"):
            raise ValueError("output_nonlinearity must be 'softmax' or 'sigmoid'")
        if self.num_scales < 2:
            raise ValueError("num_scales must be >= 2")
        if min(self.in_channels, self.out_classes, self.base_width) < 1:
            raise ValueError("channel counts must be positive")
        tc.as_dtype(self.dtype)

    @property
    def widths(self) -> list[int]:
        return [min(self.base_width * 2**s, self.max_width) for s in range(self.num_scales)]

    @property
    def decoder_scales(self) -> list[int]:
        return list(range(self.num_scales - 1))

    @property
    def head_scales(self) -> list[int]:
        """Decoder scales carrying an output head, full resolution first."""
        if not self.deep_supervision:
            return [0]
        return [s for s in self.decoder_scales if s <= self.num_scales - 4] or [0]

    @property
    def mid_scale(self) -> int:
        """Decoder scale of the single Mid module.

        The scale whose width equals ``mid_width``; narrower networks fall back
        to the widest decoder scale not exceeding it.
        """
        widths = self.widths
        candidates = [s for s in self.decoder_scales if widths[s] <= self.mid_width]
        exact = [s for s in candidates if widths[s] == self.mid_width]
        if exact:
            return exact[0]
        if not candidates:
            return 0
        return max(candidates, key=lambda s: (widths[s], -s))

    def attention_plans(self) -> dict[int, LKAPlan]:
        if self.attention == "base":
            return {}
        if self.attention == "mid":
            return {self.mid_scale: LKAPlan(self.mid_kernel, self.mid_dilation)}
        return {s: FULL_PLANS[min(s, len(FULL_PLANS) - 1)] for s in self.decoder_scales}

    def groups_for(self, channels: int) -> int:
        if self.gn_groups is None:
            return tc.default_groups(channels)
        if channels % self.gn_groups:
            raise ValueError(f"gn_groups={self.gn_groups} does not divide {channels}")
        return self.gn_groups

    def to_dict(self) -> dict:
        return {"schema_version": CONFIG_SCHEMA_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "UNetConfig":
        return cls.from_dict(json.loads(text))

    def check_input_shape(self, shape) -> None:
        if len(shape) != 5:
            raise ValueError(f"expected [N, I, H, W, D] input, got {tuple(shape)}")
        if shape[1] != self.in_channels:
            raise ValueError(f"input has {shape[1]} channels, config expects {self.in_channels}")
        f = 2 ** (self.num_scales - 1)
        if any(s % f for s in shape[2:]):
            raise ValueError(f"spatial dims {tuple(shape[2:])} must be divisible by {f}")


def output_shapes(config: UNetConfig, input_shape) -> list[tuple[int, ...]]:
    """Shapes ``unet_forward`` returns for ``input_shape``, without running it."""
    config.check_input_shape(input_shape)
    n, _, *spatial = input_shape
    return [(n, config.out_classes) + tuple(s // 2**k for s in spatial) for k in config.head_scales]


class ConvNormAct:
    """conv -> GN -> lReLU."""

    def __init__(self, spec: ConvSpec, init: Initializer, groups: int, slope: float, name: str):
        self.spec = spec
        self.groups = groups
        self.slope = slope
        self.weight, self.bias = init.conv(spec, f"{name}.conv")
        self.gamma = init.const((spec.out_channels,), 1.0, f"{name}.gn.gamma")
        self.beta = init.const((spec.out_channels,), 0.0, f"{name}.gn.beta")

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias, self.gamma, self.beta]

    def __call__(self, x):
        h = ad.conv3d(x, self.weight, self.bias, spec=self.spec)
        return ad.leaky_relu(ad.group_norm(h, self.gamma, self.beta, groups=self.groups), slope=self.slope)


class UNet3D:
    def __init__(self, config: UNetConfig, init: Initializer):
        self.config = config
        cfg = config
        w = cfg.widths
        slope = cfg.lrelu_slope

        def unit(cin, cout, name, stride=1):
            spec = ConvSpec(cin, cout, 3, stride, 1, 1)
            return ConvNormAct(spec, init, cfg.groups_for(cout), slope, name)

        self.encoder: list[list[ConvNormAct]] = []
        for s in range(cfg.num_scales):
            if s == 0:
                units = [unit(cfg.in_channels, w[0], "enc0.0"), unit(w[0], w[0], "enc0.1")]
            else:
                units = [unit(w[s - 1], w[s], f"enc{s}.down", stride=2),
                         unit(w[s], w[s], f"enc{s}.0"), unit(w[s], w[s], f"enc{s}.1")]
            self.encoder.append(units)

        plans = cfg.attention_plans()
        self.up_specs: dict[int, ConvSpec] = {}
        self.up: dict[int, tuple[Parameter, Parameter]] = {}
        self.attention: dict[int, LKAModule] = {}
        self.decoder: dict[int, list[ConvNormAct]] = {}
        for s in reversed(cfg.decoder_scales):
            spec = ConvSpec(w[s + 1], w[s], 4, 2, 1, 1, transposed=True)
            self.up_specs[s] = spec
            self.up[s] = init.conv(spec, f"up{s}")
            if s in plans:
                self.attention[s] = LKAModule(plans[s], w[s], gn_groups=cfg.groups_for(w[s]),
                                              lrelu_slope=slope, prefix=f"lka{s}", init=init)
            self.decoder[s] = [unit(2 * w[s], w[s], f"dec{s}.0"), unit(w[s], w[s], f"dec{s}.1")]

        self.head_specs: dict[int, ConvSpec] = {}
        self.heads: dict[int, tuple[Parameter, Parameter]] = {}
        for s in cfg.head_scales:
            spec = ConvSpec(w[s], cfg.out_classes, 1)
            self.head_specs[s] = spec
            self.heads[s] = init.conv(spec, f"head{s}")

    # ------------------------------------------------------------------
    def named_parameters(self) -> dict[str, Parameter]:
        out: list[Parameter] = []
        for units in self.encoder:
            for u in units:
                out += u.parameters()
        for s in reversed(self.config.decoder_scales):
            out += list(self.up[s])
            if s in self.attention:
                out += self.attention[s].parameters()
            for u in self.decoder[s]:
                out += u.parameters()
        for s in self.config.head_scales:
            out += list(self.heads[s])
        return {p.name: p for p in out}

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def attention_parameter_count(self, include_norm: bool = False) -> int:
        return sum(m.parameter_count(include_norm) for m in self.attention.values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, x, return_attention: bool = False):
        return unet_forward(self, x, return_attention=return_attention)


def build_unet(config: UNetConfig, rng: tc.Rng | None = None, materialize: bool = True) -> UNet3D:
    """Construct a network with seeded weights.

    ``materialize=False`` builds shape-only parameters (zero-stride views)
    for parameter counting at sizes that would not fit in memory.
    """
    return UNet3D(config, Initializer(rng, config.dtype, materialize))


def unet_forward(net: UNet3D, x, return_attention: bool = False):
    """Logits per output head, full resolution first."""
    cfg = net.config
    cfg.check_input_shape(tuple(x.shape))
    skips = []
    h = x
    for units in net.encoder:
        for u in units:
            h = u(h)
        skips.append(h)
    attention_maps = {}
    outputs = {}
    for s in reversed(cfg.decoder_scales):
        w, b = net.up[s]
        h = ad.conv3d_transposed(h, w, b, spec=net.up_specs[s])
        if s in net.attention:
            h, attention_maps[s] = net.attention[s](h)
        h = ad.concat(skips[s], h, axis=1)
        for u in net.decoder[s]:
            h = u(h)
        if s in net.heads:
            hw, hb = net.heads[s]
            outputs[s] = ad.conv3d(h, hw, hb, spec=net.head_specs[s])
    logits = [outputs[s] for s in cfg.head_scales]
    if return_attention:
        return logits, attention_maps
    return logits


def probabilities(config: UNetConfig, logits):
    if config.output_nonlinearity == "softmax":
        return ad.softmax(logits, axis=1)
    return ad.sigmoid(logits)
