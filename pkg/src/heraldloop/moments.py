"""Normally ordered click moments and the matrix-of-moments criterion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import ClickDistribution
from .errors import InvalidArgument, NumericalFailure

EIG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MomentVector:
    values: np.ndarray
    sigmas: np.ndarray

    @property
    def order(self) -> int:
        return self.values.size - 1


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    values: np.ndarray
    sigmas: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class NegativityResult:
    value: float
    sigma: float
    eigvec: np.ndarray

    @property
    def significance(self) -> float:
        """|N| / sigma(N); infinite for exact (noise-free) input."""
        if self.sigma > 0:
            return abs(self.value) / self.sigma
        return math.inf if self.value != 0 else 0.0

    @property
    def nonclassical(self) -> bool:
        return self.value < 0


def moment_weights(N: int) -> np.ndarray:
    """``f[m, k] = C(k, m) / C(N, m)``, the estimator weights of the m-th moment."""
    f = np.zeros((N + 1, N + 1))
    for m in range(N + 1):
        for k in range(m, N + 1):
            f[m, k] = math.comb(k, m) / math.comb(N, m)
    return f


def linear_statistic(f_k: np.ndarray, probs: np.ndarray, total: int) -> tuple[float, float]:
    """Sample mean of f over a histogram and its random error sqrt(var / (C - 1))."""
    mean = float(np.dot(f_k, probs))
    second = float(np.dot(f_k**2, probs))
    return mean, math.sqrt(max(second - mean**2, 0.0) / (total - 1))


def click_moments(c: ClickDistribution) -> MomentVector:
    N = c.bins
    f = moment_weights(N)
    # Row by row so every moment is the same dot product a direct evaluation gives.
    values = np.array([f[m] @ c.probs for m in range(N + 1)])
    if c.total is not None and c.total >= 2:
        sigmas = np.array([linear_statistic(f[m], c.probs, c.total)[1] for m in range(N + 1)])
    elif c.sigmas is not None:
        sigmas = np.sqrt((f**2) @ (c.sigmas**2))
    else:
        sigmas = np.zeros(N + 1)
    return MomentVector(values, sigmas)


def moment_matrix(mv: MomentVector, N: int, size: int | None = None) -> MomentMatrix:
    """Hankel matrix ``M[i, j] = mu_{i+j}``, by default of size floor(N/2) + 1."""
    q = N // 2 if size is None else size - 1
    if q < 0 or 2 * q > mv.order:
        raise InvalidArgument(f"a {q + 1}x{q + 1} moment matrix needs moments up to order {2 * q}")
    idx = np.add.outer(np.arange(q + 1), np.arange(q + 1))
    return MomentMatrix(mv.values[idx], mv.sigmas[idx])


def negativity_error(M: MomentMatrix, v: np.ndarray) -> float:
    """sqrt((v**2)^T sigma(M)**2 (v**2)) with entrywise squares."""
    v2 = np.asarray(v) ** 2
    return float(math.sqrt(max(v2 @ (M.sigmas**2) @ v2, 0.0)))


def _canonical(vec: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(vec) > EIG_TOL)
    if nz.size and vec[nz[0]] < 0:
        vec = -vec
    return vec


def _tie_key(vec: np.ndarray):
    nz = np.flatnonzero(np.abs(vec) > EIG_TOL)
    return tuple(np.abs(vec[nz[0]:])) if nz.size else ()


def negativity(M: MomentMatrix) -> NegativityResult:
    """Minimal eigenvalue of the mean moment matrix with its propagated error.

    Degenerate minima are resolved deterministically: the eigenvector whose
    absolute entries, read from the first nonzero one, are lexicographically
    largest wins, and its first nonzero entry is made positive.
    """
    A = np.asarray(M.values, dtype=float)
    if not np.allclose(A, A.T, atol=0, rtol=0):
        raise InvalidArgument("moment matrix must be symmetric")
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("symmetric eigensolver failed") from exc
    ties = np.flatnonzero(w <= w[0] + EIG_TOL)
    cands = [_canonical(V[:, i]) for i in ties]
    v = max(cands, key=_tie_key)
    v = v / np.linalg.norm(v)
    value = float(v @ A @ v)
    return NegativityResult(value, negativity_error(M, v), v)


def distribution_negativity(c: ClickDistribution, size: int | None = None) -> NegativityResult:
    return negativity(moment_matrix(click_moments(c), c.bins, size))
