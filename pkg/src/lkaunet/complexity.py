"""Parameter and FLOP accounting for plain vs decomposed large-kernel convolutions.

All counts are exact Python integers.  The decomposed form replaces a
``K^3`` convolution by a ``(2d-1)^3`` depth-wise conv, a ``(K/d)^3``
depth-wise dilated conv and a point-wise conv, each with a per-channel bias.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction


def _check_divides(K: int, d: int) -> None:
    if d < 1 or K < 1 or K % d:
        raise ValueError(f"dilation {d} must divide kernel size {K}")


def nprm_original(C: int, K: int) -> int:
    return C * (C * K**3 + 1)


def decomposed_bracket(K: int, d: int) -> int:
    """The part of the decomposed count that depends on ``d``: ``(2d-1)^3 + (K/d)^3``."""
    _check_divides(K, d)
    return (2 * d - 1) ** 3 + (K // d) ** 3


def nprm_decomposed(C: int, K: int, d: int) -> int:
    return C * (decomposed_bracket(K, d) + C + 3)


def flops_original(C: int, K: int, H: int, W: int, D: int) -> int:
    return nprm_original(C, K) * H * W * D


def flops_decomposed(C: int, K: int, d: int, H: int, W: int, D: int) -> int:
    return nprm_decomposed(C, K, d) * H * W * D


def dilation_residual(K: int, d: float) -> float:
    """Stationarity condition of the decomposed count in a continuous ``d``."""
    if d <= 0:
        raise ValueError("dilation must be positive")
    return 24 * d * d - 24 * d - 3 * K**3 / d**4 + 6


@dataclass(frozen=True)
class DilationSolution:
    continuous: float
    integer: int
    clamped: bool  # True when the stationary point lies below d = 1


def solve_optimal_dilation(K: int, tol: float = 1e-10) -> DilationSolution:
    """Bisection root of ``dilation_residual`` on ``[1, K]`` plus the best divisor of K.

    The integer optimum minimises ``decomposed_bracket`` over divisors of K,
    ties going to the smaller dilation.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    lo, hi = 1.0, float(max(K, 1))
    clamped = dilation_residual(K, lo) >= 0
    if clamped:
        root = 1.0
    else:
        # residual is increasing in d on [1, K] and positive at d = K
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if dilation_residual(K, mid) < 0:
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
    divisors = [d for d in range(1, K + 1) if K % d == 0]
    best = min(divisors, key=lambda d: (decomposed_bracket(K, d), d))
    return DilationSolution(root, best, clamped)


@dataclass(frozen=True)
class ComplexityReport:
    C: int
    K: int
    d: int
    nprm_original: int
    nprm_decomposed: int
    flops_original: int
    flops_decomposed: int
    H: int = 1
    W: int = 1
    D: int = 1

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.nprm_decomposed, self.nprm_original)

    @property
    def beneficial(self) -> bool:
        return self.ratio < 1

    @property
    def ratio_percent(self) -> str:
        return f"{float(self.ratio) * 100:.2f}%"

    def as_dict(self) -> dict:
        out = asdict(self)
        out["ratio"] = float(self.ratio)
        out["ratio_percent"] = self.ratio_percent
        out["beneficial"] = self.beneficial
        return out


def complexity_report(C: int, K: int, d: int, H: int = 1, W: int = 1, D: int = 1) -> ComplexityReport:
    return ComplexityReport(
        C=C, K=K, d=d, H=H, W=W, D=D,
        nprm_original=nprm_original(C, K),
        nprm_decomposed=nprm_decomposed(C, K, d),
        flops_original=flops_original(C, K, H, W, D),
        flops_decomposed=flops_decomposed(C, K, d, H, W, D),
    )


def table_report(channels, K: int, d: int, H: int = 1, W: int = 1, D: int = 1) -> list[ComplexityReport]:
    return [complexity_report(C, K, d, H, W, D) for C in channels]


def format_count(n: int) -> str:
    """Human-readable count in the ``16.10 k`` / ``9.48 M`` style."""
    if n >= 10**6:
        return f"{n / 1e6:.2f} M"
    if n >= 10**3:
        return f"{n / 1e3:.2f} k"
    return str(n)
