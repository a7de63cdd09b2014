"""Multiplexed on-off click-counting detectors.

N uniformly illuminated on-off bins with overall efficiency eta.  The POVM for
k joint clicks is

    Pi_k = C(N, k) sum_j C(k, j) (-1)**(k-j) E(1 - eta + eta j / N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .expop import attenuate_dual, lift

NEG_CLIP = 1e-12
NORM_TOL = 1e-10
STIRLING_MAX_N = 64


@dataclass(frozen=True)
class DetectorConfig:
    bins: int
    efficiency: float = 1.0

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 1:
            raise InvalidArgument(f"detector needs at least one bin, got {self.bins!r}")
        if not 0 <= self.efficiency <= 1:
            raise InvalidArgument(f"efficiency must lie in [0, 1], got {self.efficiency!r}")


def clean_probs(probs, tol=NEG_CLIP) -> np.ndarray:
    """Clip rounding-level negatives; anything below ``-tol`` is a bug, not noise."""
    p = np.asarray(probs, dtype=float).copy()
    if np.any(p < -np.asarray(tol)):
        raise NumericalFailure(f"negative probability {p.min():.3e} beyond rounding level")
    p[p < 0] = 0.0
    return p


@dataclass(frozen=True, eq=False)
class ClickDistribution:
    """Probabilities of 0..N joint clicks.

    ``sigmas`` are standard errors when the distribution was estimated from
    data; ``total`` is the number of events behind the estimate.
    """

    probs: np.ndarray
    sigmas: np.ndarray | None = None
    total: int | None = None

    def __post_init__(self):
        p = clean_probs(self.probs)
        if p.ndim != 1 or p.size < 2:
            raise InvalidArgument("click distribution needs entries for k = 0..N with N >= 1")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise NumericalFailure(f"click distribution sums to {p.sum()!r}")
        object.__setattr__(self, "probs", p)
        if self.sigmas is not None:
            s = np.asarray(self.sigmas, dtype=float)
            if s.shape != p.shape:
                raise InvalidArgument("sigmas must match probs in shape")
            object.__setattr__(self, "sigmas", s)

    @property
    def bins(self) -> int:
        return self.probs.size - 1

    def mean_clicks(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def __len__(self):
        return self.probs.size


@lru_cache(maxsize=None)
def _stirling_row(n: int) -> tuple[int, ...]:
    if n == 0:
        return (1,)
    prev = _stirling_row(n - 1) + (0,)
    return tuple((k * prev[k] if k else 0) + (prev[k - 1] if k else 0) for k in range(n + 1))


def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind S(n, k), exact."""
    if n < 0 or k < 0:
        raise InvalidArgument("stirling2 needs n, k >= 0")
    if n > STIRLING_MAX_N:
        raise OverflowError(f"stirling2 supports n <= {STIRLING_MAX_N}")
    if k > n:
        return 0
    return _stirling_row(n)[k]


def povm_terms(k: int, det: DetectorConfig, exact: bool = False) -> list[tuple[int, object]]:
    """Expansion of Pi_k as ``[(coef, x), ...]`` meaning sum coef * E(x)."""
    N = det.bins
    if not 0 <= k <= N:
        raise InvalidArgument(f"click number {k} outside 0..{N}")
    eta = lift(det.efficiency, exact)
    out = []
    for j in range(k + 1):
        coef = math.comb(N, k) * math.comb(k, j) * (-1) ** (k - j)
        x = attenuate_dual(lift(j, exact) / N, eta)
        out.append((coef, x))
    return out


def fock_click_distribution(n: int, det: DetectorConfig) -> ClickDistribution:
    """Click statistics of the number state |n>, evaluated in exact rationals."""
    if n < 0:
        raise InvalidArgument("photon number must be >= 0")
    N = det.bins
    probs = []
    if det.efficiency == 1:
        for k in range(N + 1):
            if k > n:
                probs.append(0.0)
                continue
            val = Fraction(math.comb(N, k) * math.factorial(k) * stirling2(n, k), N**n)
            probs.append(float(val))
    else:
        eta = Fraction(det.efficiency)
        for k in range(N + 1):
            acc = Fraction(0)
            for j in range(k + 1):
                x = 1 - eta + eta * Fraction(j, N)
                acc += math.comb(N, k) * math.comb(k, j) * (-1) ** (k - j) * x**n
            probs.append(float(acc))
    return ClickDistribution(np.array(probs))


def bhattacharyya(c: ClickDistribution, d: ClickDistribution) -> float:
    """Overlap sum_k sqrt(c_k) sqrt(d_k) of two click distributions."""
    if len(c) != len(d):
        raise InvalidArgument(f"distributions over {c.bins} and {d.bins} bins cannot be compared")
    return math.fsum(math.sqrt(a) * math.sqrt(b) for a, b in zip(c.probs, d.probs))
