"""Seeded weight initialisation."""
from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .autodiff import Parameter
from .conv3d import ConvSpec


class Initializer:
    """Fan-in scaled uniform init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, drawn in creation order."""

    def __init__(self, rng: tc.Rng | None, dtype, materialize: bool = True):
        if materialize and rng is None:
            raise ValueError("an Rng is required to initialise weights")
        self.rng = rng
        self.dtype = tc.as_dtype(dtype)
        self.materialize = materialize

    def _placeholder(self, shape):
        # zero-stride view: shape-only parameters for counting at full scale
        return np.broadcast_to(np.zeros((), dtype=self.dtype), shape)

    def uniform(self, shape, bound: float, name: str) -> Parameter:
        if not self.materialize:
            return Parameter(self._placeholder(shape), name)
        v, self.rng = tc.uniform(self.rng, -bound, bound, shape, dtype=self.dtype)
        return Parameter(v, name)

    def const(self, shape, value: float, name: str) -> Parameter:
        if not self.materialize:
            return Parameter(self._placeholder(shape), name)
        return Parameter(np.full(shape, value, dtype=self.dtype), name)

    def conv(self, spec: ConvSpec, name: str):
        shape = spec.weight_shape
        fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        w = self.uniform(shape, bound, f"{name}.weight")
        b = self.uniform((spec.out_channels,), bound, f"{name}.bias") if spec.has_bias else None
        return w, b
