"""Dice, HD95, per-case reports with the BraTS false-positive penalty, paired t-tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

BRATS_PENALTY = {"dice": 0.0, "hd95": 373.13}


def _binary_pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def dice_score(pred_mask, gt_mask) -> float:
    """``2|X ∩ Y| / (|X| + |Y|)``; 1.0 when both masks are empty."""
    p, g = _binary_pair(pred_mask, gt_mask)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one face-neighbour outside the mask."""
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(mask.ndim, 1),
                                    border_value=0)
    return mask & ~eroded


def _directed(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    # exact Euclidean distance transform of the complement gives distance to nearest dst voxel
    dist = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return dist[src]


def hd95(pred_mask, gt_mask, spacing=(1.0, 1.0, 1.0), surface: bool = False) -> float:
    """95th percentile of the pooled directed distances between two masks.

    Both directed sets (pred -> gt and gt -> pred) are concatenated and the
    percentile uses linear interpolation between closest ranks.  With
    ``surface=True`` only boundary voxels of each mask take part.
    """
    p, g = _binary_pair(pred_mask, gt_mask)
    if not p.any() or not g.any():
        raise ValueError("hd95 needs two non-empty masks")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != p.ndim or min(spacing) <= 0:
        raise ValueError("spacing must be positive, one entry per axis")
    if surface:
        p, g = boundary(p), boundary(g)
    d = np.concatenate([_directed(p, g, spacing), _directed(g, p, spacing)])
    return float(np.percentile(d, 95, method="linear"))


@dataclass
class ClassReport:
    label: int
    dice: float
    hd95: float | None
    empty_gt: bool = False
    empty_pred: bool = False
    penalty_applied: bool = False


@dataclass
class CaseReport:
    classes: list[ClassReport] = field(default_factory=list)

    def __getitem__(self, label: int) -> ClassReport:
        for c in self.classes:
            if c.label == label:
                return c
        raise KeyError(label)

    def as_dict(self) -> dict:
        return {str(c.label): {"dice": c.dice, "hd95": c.hd95,
                               "flags": {"empty_gt": c.empty_gt, "empty_pred": c.empty_pred,
                                         "penalty_applied": c.penalty_applied}}
                for c in self.classes}


def evaluate_case(pred_labels, gt_labels, classes, penalty: dict | None = None,
                  spacing=(1.0, 1.0, 1.0), known_labels=None) -> CaseReport:
    """Per-class Dice/HD95 for one volume pair.

    ``penalty`` (e.g. ``BRATS_PENALTY``) is substituted when the ground truth
    of a class is empty but the prediction is not; without it HD95 is
    reported as ``None``.  A prediction that misses a non-empty ground truth
    gets Dice 0 and, if a penalty is given, the penalty HD95.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if known_labels is not None:
        for c in classes:
            if c not in known_labels:
                raise ValueError(f"unknown class id {c}")
    report = CaseReport()
    for c in classes:
        p, g = pred == c, gt == c
        ep, eg = not p.any(), not g.any()
        rep = ClassReport(int(c), 0.0, None, empty_gt=eg, empty_pred=ep)
        if ep and eg:
            rep.dice, rep.hd95 = 1.0, 0.0
        elif eg or ep:
            rep.dice = 0.0
            if penalty is not None:
                rep.dice, rep.hd95 = float(penalty["dice"]), float(penalty["hd95"])
                rep.penalty_applied = True
        else:
            rep.dice = dice_score(p, g)
            rep.hd95 = hd95(p, g, spacing)
        report.classes.append(rep)
    return report


# --------------------------------------------------------------------------
# paired t-test

def _betacf(a: float, b: float, x: float, max_iter: int = 300, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``dof`` degrees of freedom."""
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float | None
    p: float | None
    n: int
    zero_variance: bool = False


def paired_t_test(a, b) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("samples must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs n >= 2")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return TTestResult(None, None, n, zero_variance=True)
    t = float(d.mean()) / (sd / math.sqrt(n))
    return TTestResult(t, student_t_two_sided_p(t, n - 1), n)
