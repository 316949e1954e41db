"""Tape-based reverse-mode differentiation.

A primitive is a function ``fwd(*values, **static) -> (out, vjp)`` where
``vjp(g)`` returns one gradient (or ``None``) per positional input.  The
``primitive`` decorator turns it into an op that runs eagerly on arrays and
records itself when any argument is a ``Var``, or a ``Parameter`` while a
tape is active.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

PRIMITIVES: dict[str, Callable] = {}

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)


class UnregisteredPrimitiveError(TypeError):
    """A traced value reached an operation that has no adjoint rule."""


class Parameter:
    """Trainable tensor; ``grad`` is allocated lazily and accumulated by ``backward``."""

    __slots__ = ("value", "name", "_grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = value
        self.name = name
        self._grad = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros(self.value.shape, dtype=self.value.dtype)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    def zero_grad(self) -> None:
        self._grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    shape = property(lambda self: self.value.shape)
    dtype = property(lambda self: self.value.dtype)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

    # numpy entry points: map the few arithmetic ufuncs, reject anything else
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method == "__call__" and not kwargs and ufunc.__name__ in _UFUNC_MAP:
            return PRIMITIVES[_UFUNC_MAP[ufunc.__name__]](*inputs)
        raise UnregisteredPrimitiveError(f"numpy.{ufunc.__name__} is not a registered primitive")

    def __array_function__(self, func, types, args, kwargs):
        raise UnregisteredPrimitiveError(f"numpy.{func.__name__} is not a registered primitive")

    def __array__(self, *args, **kwargs):
        raise UnregisteredPrimitiveError("a traced Var cannot be converted to a plain array")

    def __add__(self, o): return PRIMITIVES["add"](self, o)
    def __radd__(self, o): return PRIMITIVES["add"](o, self)
    def __sub__(self, o): return PRIMITIVES["sub"](self, o)
    def __rsub__(self, o): return PRIMITIVES["sub"](o, self)
    def __mul__(self, o): return PRIMITIVES["mul"](self, o)
    def __rmul__(self, o): return PRIMITIVES["mul"](o, self)
    def __truediv__(self, o): return PRIMITIVES["div"](self, o)
    def __rtruediv__(self, o): return PRIMITIVES["div"](o, self)
    def __neg__(self): return PRIMITIVES["neg"](self)


_UFUNC_MAP = {"add": "add", "subtract": "sub", "multiply": "mul", "true_divide": "div", "negative": "neg"}


class Node(NamedTuple):
    op: str
    inputs: tuple  # tape index per positional input, None for constants
    output: int
    vjp: Callable


@dataclass
class Tape:
    values: list = field(default_factory=list)
    nodes: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    params: dict = field(default_factory=dict)  # id(param) -> (param, index)

    def _new(self, value) -> Var:
        self.values.append(value)
        return Var(value, self, len(self.values) - 1)

    def leaf(self, value) -> Var:
        return self._new(np.asarray(value))

    def lift(self, p: Parameter) -> Var:
        hit = self.params.get(id(p))
        if hit is not None:
            return Var(p.value, self, hit[1])
        v = self._new(p.value)
        self.params[id(p)] = (p, v.index)
        return v

    def index_of(self, a):
        if isinstance(a, Var):
            if a.tape is not self:
                raise ValueError("Var belongs to a different tape")
            return a.index
        if isinstance(a, Parameter):
            return self.lift(a).index
        return None

    def record(self, op: str, inputs: tuple, out, vjp) -> Var:
        v = self._new(out)
        self.nodes.append(Node(op, inputs, v.index, vjp))
        return v


def _value(a):
    if isinstance(a, (Var, Parameter)):
        return a.value
    return a


def _tape_for(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise ValueError("arguments come from different tapes")
            tape = a.tape
    if tape is None and any(isinstance(a, Parameter) for a in args):
        tape = _active_tape.get()
    return tape


def primitive(name: str):
    """Register ``fwd(*values, **static) -> (out, vjp)`` under ``name``."""

    def deco(fwd):
        def op(*args, **static):
            tape = _tape_for(args)
            out, vjp = fwd(*[_value(a) for a in args], **static)
            if tape is None:
                return out
            return tape.record(name, tuple(tape.index_of(a) for a in args), out, vjp)

        op.__name__ = name
        op.__doc__ = fwd.__doc__
        op.fwd = fwd
        PRIMITIVES[name] = op
        return op

    return deco


def forward_traced(fn: Callable, inputs, params=()):
    """Run ``fn(*inputs)`` while recording; returns ``(outputs, tape)``.

    Parameters passed to primitives inside ``fn`` are lifted onto the tape
    automatically; ``params`` only pre-registers them.
    """
    tape = Tape()
    token = _active_tape.set(tape)
    try:
        in_vars = [tape.leaf(x) for x in inputs]
        tape.inputs = [v.index for v in in_vars]
        for p in params:
            tape.lift(p)
        result = fn(*in_vars)
    finally:
        _active_tape.reset(token)
    single = not isinstance(result, (list, tuple))
    outs = [result] if single else list(result)
    for i, o in enumerate(outs):
        if not isinstance(o, Var):
            outs[i] = tape.leaf(o)
    tape.outputs = [o.index for o in outs]
    values = [tape.values[i] for i in tape.outputs]
    return (values[0] if single else values), tape


def backward(tape: Tape, seed=None):
    """Propagate ``seed`` from the outputs; returns per-input gradients.

    Parameter gradients are accumulated into ``Parameter.grad``.  The tape
    itself is not modified, so it may be replayed.
    """
    if seed is None:
        seeds = [np.ones_like(tape.values[i]) for i in tape.outputs]
    elif len(tape.outputs) == 1 and not isinstance(seed, (list, tuple)):
        seeds = [seed]
    else:
        seeds = list(seed)
    if len(seeds) != len(tape.outputs):
        raise ValueError(f"{len(seeds)} seeds for {len(tape.outputs)} outputs")
    grads: list = [None] * len(tape.values)
    for idx, s in zip(tape.outputs, seeds):
        out = tape.values[idx]
        s = np.asarray(s, dtype=out.dtype)
        if s.shape != np.shape(out):
            raise ValueError(f"seed shape {s.shape} does not match output shape {np.shape(out)}")
        grads[idx] = s if grads[idx] is None else grads[idx] + s
    for node in reversed(tape.nodes):
        g = grads[node.output]
        if g is None:
            continue
        for i, gi in zip(node.inputs, node.vjp(g)):
            if i is None or gi is None:
                continue
            grads[i] = gi if grads[i] is None else grads[i] + gi
    for p, idx in tape.params.values():
        if grads[idx] is not None:
            p.grad = p.grad + grads[idx]
    return [np.zeros_like(tape.values[i]) if grads[i] is None else grads[i] for i in tape.inputs]
