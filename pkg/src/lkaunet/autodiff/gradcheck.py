from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tape import Parameter, backward, forward_traced

KINK_OPS = ("leaky_relu",)


def _scalar(out) -> float:
    out = np.asarray(out)
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued fn, got shape {out.shape}")
    return float(out.reshape(()))


def _coords(size: int, rng, subset_threshold: int, n_subset: int):
    if size > subset_threshold:
        return rng.choice(size, size=min(n_subset, size), replace=False)
    return np.arange(size)


def _kink_pattern(tape) -> np.ndarray:
    """Which side of zero every piecewise-linear unit's input sits on."""
    parts = [np.ravel(tape.values[n.inputs[0]] >= 0) for n in tape.nodes if n.op in KINK_OPS]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


@dataclass(frozen=True)
class GradcheckResult:
    max_rel_err: float
    checked: int
    skipped: int
    worst: tuple | None = None  # (tensor label, flat index, analytic, numeric)


def gradcheck_report(
    fn: Callable,
    point: Sequence[np.ndarray] | np.ndarray,
    eps: float = 1e-5,
    params: Sequence[Parameter] = (),
    seed: int = 0,
    subset_threshold: int = 4096,
    n_subset: int = 64,
    exclude_near: float | None = None,
    skip_kink_crossings: bool = False,
) -> GradcheckResult:
    """Compare reverse-mode gradients with central differences.

    ``fn`` maps the arrays in ``point`` to a scalar.  Tensors larger than
    ``subset_threshold`` elements are sampled at ``n_subset`` coordinates
    drawn with ``seed``.  Input coordinates with ``|x| < exclude_near`` are
    skipped (use ``2 * eps`` around activation kinks of the input itself).
    With ``skip_kink_crossings`` a coordinate is skipped when either
    perturbed evaluation moves any interior ``leaky_relu`` input across
    zero, since the central difference then straddles a kink.  Parameter
    ``grad`` buffers are left as they were.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ValueError("eps must lie in [1e-6, 1e-2]")
    single = isinstance(point, np.ndarray)
    point = [point] if single else [np.asarray(p) for p in point]
    for arr in point + [p.value for p in params]:
        if arr.dtype != np.float64:
            raise TypeError(f"gradcheck requires float64 tensors, got {arr.dtype}")

    saved = [p._grad for p in params]
    try:
        for p in params:
            p.zero_grad()
        _, tape = forward_traced(fn, point, params)
        in_grads = backward(tape, np.ones_like(tape.values[tape.outputs[0]]))
        p_grads = [p.grad.copy() for p in params]
    finally:
        for p, g in zip(params, saved):
            p._grad = g
    base_pattern = _kink_pattern(tape) if skip_kink_crossings else None
    del tape

    def evaluate(args):
        if not skip_kink_crossings:
            return _scalar(fn(*args)), True
        out, t = forward_traced(fn, args, params)
        return _scalar(out), np.array_equal(_kink_pattern(t), base_pattern)

    rng = np.random.default_rng(seed)
    worst, worst_at, checked, skipped = 0.0, None, 0, 0

    def compare(label, c, g_ad, f_plus, f_minus):
        nonlocal worst, worst_at, checked
        g_fd = (f_plus - f_minus) / (2 * eps)
        err = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
        checked += 1
        if err > worst or worst_at is None:
            worst, worst_at = max(worst, err), (label, int(c), float(g_ad), float(g_fd))

    for k, x in enumerate(point):
        for c in _coords(x.size, rng, subset_threshold, n_subset):
            x0 = x.flat[c]
            if exclude_near is not None and abs(x0) < exclude_near:
                skipped += 1
                continue
            args = [a.copy() for a in point]
            args[k].flat[c] = x0 + eps
            f_plus, ok_p = evaluate(args)
            args[k].flat[c] = x0 - eps
            f_minus, ok_m = evaluate(args)
            if not (ok_p and ok_m):
                skipped += 1
                continue
            compare(f"input{k}", c, in_grads[k].flat[c], f_plus, f_minus)

    for p, g in zip(params, p_grads):
        for c in _coords(p.size, rng, subset_threshold, n_subset):
            v0 = p.value.flat[c]
            try:
                p.value.flat[c] = v0 + eps
                f_plus, ok_p = evaluate(point)
                p.value.flat[c] = v0 - eps
                f_minus, ok_m = evaluate(point)
            finally:
                p.value.flat[c] = v0
            if not (ok_p and ok_m):
                skipped += 1
                continue
            compare(p.name or "param", c, g.flat[c], f_plus, f_minus)
    return GradcheckResult(worst, checked, skipped, worst_at)


def gradcheck(fn: Callable, point, eps: float = 1e-5, params: Sequence[Parameter] = (), **kw) -> float:
    """Max over tested coordinates of ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)``."""
    return gradcheck_report(fn, point, eps, params, **kw).max_rel_err
