"""Segmentation losses built from differentiable primitives."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad


def _check_shapes(a, b) -> None:
    if tuple(np.shape(getattr(a, "value", a))) != tuple(np.shape(getattr(b, "value", b))):
        raise ValueError(f"shape mismatch: {np.shape(getattr(a, 'value', a))} vs {np.shape(getattr(b, 'value', b))}")


def one_hot(labels: np.ndarray, num_classes: int, dtype="float32") -> np.ndarray:
    """``[H, W, D]`` or ``[N, H, W, D]`` integer labels -> ``[N, O, H, W, D]``."""
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[None]
    classes = np.arange(num_classes).reshape(1, -1, 1, 1, 1)
    return (labels[:, None] == classes).astype(dtype)


def class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """``w_c = max(0, 1 - N_fg(c) / N_bg(c))`` with ``N_bg(c)`` the voxels not of class ``c``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label volume")
    total = labels.size
    w = np.empty(num_classes, dtype=np.float64)
    for c in range(num_classes):
        fg = int(np.count_nonzero(labels == c))
        bg = total - fg
        w[c] = 0.0 if bg == 0 else max(0.0, 1.0 - fg / bg)
    return w


def soft_dice_loss(probs, target, class_weights=None, smooth: float = 1e-5):
    """Class-weighted ``1 - soft Dice`` over ``[N, O, ...]`` maps.

    Sums run over batch and spatial axes, so each class gets one Dice term.
    If every weight is zero the unweighted mean is used.
    """
    _check_shapes(probs, target)
    target = np.asarray(target)
    ndim = target.ndim
    axes = (0,) + tuple(range(2, ndim))
    inter = ad.sum(probs * target, axis=axes)
    psum = ad.sum(probs, axis=axes)
    gsum = target.sum(axis=axes)
    dice = (2.0 * inter + smooth) / (psum + (gsum + smooth))
    per_class = 1.0 - dice
    if class_weights is None or not np.any(class_weights):
        return ad.mean(per_class)
    w = np.asarray(class_weights, dtype=target.dtype)
    return ad.sum(per_class * w) / float(w.sum())


def bce_dice_loss(logits, target, smooth: float = 1e-5):
    """Mean binary cross-entropy plus unweighted soft Dice of ``sigmoid(logits)``."""
    _check_shapes(logits, target)
    target = np.asarray(target)
    bce = ad.mean(ad.softplus(logits) - logits * target)
    return bce + soft_dice_loss(ad.sigmoid(logits), target, smooth=smooth)
