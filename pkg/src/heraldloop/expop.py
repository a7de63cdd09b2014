"""Signed mixtures of diagonal exponential operators E(x) = x**n.

Every state and every click-detector POVM element in the heralding model is a
finite signed sum of E(x) terms, so the whole protocol reduces to bookkeeping
of (weight, x) pairs.  The closed forms involve alternating binomial sums that
cancel catastrophically for weak pumping, so mixtures can be held either in
float64 (fast) or in 50-digit mpmath floats (``exact=True``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from mpmath.ctx_mp import MPContext

from .errors import DivergentTrace, InvalidArgument, NonPhysicalMixture

# Private context: mpmath.mp is process-global, this one is never mutated.
MP = MPContext()
MP.dps = 50

MERGE_TOL = 1e-14
MERGE_TOL_EXACT = 1e-40
ZERO_WEIGHT = 1e-300


def lift(value, exact: bool):
    """Convert ``value`` to the working number type."""
    if exact:
        return value if isinstance(value, MP.mpf) else MP.mpf(value)
    return float(value)


def _fsum(values, exact: bool):
    return MP.fsum(values) if exact else math.fsum(values)


@dataclass(frozen=True)
class SqueezeParams:
    """Two-mode squeezer setting: amplitude ``zeta`` and gain ``gamma = cosh(zeta)**2``."""

    zeta: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.zeta) and self.zeta >= 0):
            raise InvalidArgument(f"zeta must be finite and >= 0, got {self.zeta!r}")
        if abs(self.gamma - math.cosh(self.zeta) ** 2) > 1e-12 * self.gamma:
            raise InvalidArgument("gamma must equal cosh(zeta)**2")

    @property
    def lam(self) -> float:
        """Per-pass pair parameter (gamma - 1) / gamma = tanh(zeta)**2."""
        return math.tanh(self.zeta) ** 2


def gain_from_zeta(zeta: float) -> SqueezeParams:
    zeta = float(zeta)
    if not (math.isfinite(zeta) and zeta >= 0):
        raise InvalidArgument(f"zeta must be finite and >= 0, got {zeta!r}")
    return SqueezeParams(zeta, math.cosh(zeta) ** 2)


def squeezing_db(zeta: float) -> float:
    """Squeezing in dB, -10 log10 exp(-2 zeta); documentation helper only."""
    return -10.0 * math.log10(math.exp(-2.0 * zeta))


@dataclass(frozen=True)
class ExpTerm:
    weight: float
    x: float


@dataclass(frozen=True, eq=False)
class ExpOpMixture:
    """Sum of ``weights[i] * E(args[i])``.

    Arrays have dtype float64 or, in exact mode, object holding mpmath floats.
    Treat instances as immutable.
    """

    weights: np.ndarray
    args: np.ndarray

    def __post_init__(self):
        if self.weights.shape != self.args.shape or self.weights.ndim != 1:
            raise InvalidArgument("weights and args must be 1-D arrays of equal length")

    @classmethod
    def from_terms(cls, terms: Iterable, exact: bool = False) -> "ExpOpMixture":
        pairs = [(t.weight, t.x) if isinstance(t, ExpTerm) else tuple(t) for t in terms]
        dtype = object if exact else float
        w = np.array([lift(p[0], exact) for p in pairs], dtype=dtype)
        x = np.array([lift(p[1], exact) for p in pairs], dtype=dtype)
        return cls(w, x)

    @classmethod
    def vacuum(cls, exact: bool = False) -> "ExpOpMixture":
        return cls.from_terms([(1, 0)], exact=exact)

    @property
    def exact(self) -> bool:
        return self.weights.dtype == object

    @property
    def terms(self) -> tuple[ExpTerm, ...]:
        return tuple(ExpTerm(float(w), float(x)) for w, x in zip(self.weights, self.args))

    def __len__(self):
        return len(self.weights)

    def __add__(self, other: "ExpOpMixture") -> "ExpOpMixture":
        exact = self.exact or other.exact
        a, b = self.astype(exact), other.astype(exact)
        return ExpOpMixture(np.concatenate([a.weights, b.weights]), np.concatenate([a.args, b.args]))

    def astype(self, exact: bool) -> "ExpOpMixture":
        if exact == self.exact:
            return self
        if exact:
            conv = np.frompyfunc(MP.mpf, 1, 1)
            return ExpOpMixture(conv(self.weights).astype(object), conv(self.args).astype(object))
        return ExpOpMixture(self.weights.astype(float), self.args.astype(float))

    def scaled(self, factor) -> "ExpOpMixture":
        return ExpOpMixture(self.weights * lift(factor, self.exact), self.args.copy())


def trace(m: ExpOpMixture):
    """Sum of w / (1 - x); returns a float for float mixtures, mpf otherwise."""
    if len(m) and max(m.args) >= 1:
        raise DivergentTrace(f"trace diverges for x = {float(max(m.args))!r}")
    return _fsum(m.weights / (1 - m.args), m.exact)


def kernel(m: ExpOpMixture, y):
    """Sum of w / (1 - x*y), i.e. tr[m E(y)]."""
    y = lift(y, m.exact)
    prod = m.args * y
    if len(m) and max(prod) >= 1:
        raise DivergentTrace("x*y >= 1 in trace kernel")
    return _fsum(m.weights / (1 - prod), m.exact)


def product_arg(a, b):
    """E(a) E(b) = E(a b)."""
    return a * b


def _check_eta(eta):
    if not 0 <= eta <= 1:
        raise InvalidArgument(f"efficiency must lie in [0, 1], got {float(eta)!r}")


def attenuate_state(m: ExpOpMixture, eta) -> ExpOpMixture:
    """Pure-loss channel with transmission ``eta`` acting on the state.

    Binomial thinning of x**n resums to E(x) -> E(eta x / d) / d with
    d = 1 - (1 - eta) x, so the trace is preserved term by term.
    """
    _check_eta(eta)
    if len(m) and max(m.args) >= 1:
        raise DivergentTrace("cannot attenuate a term with x >= 1")
    eta = lift(eta, m.exact)
    d = 1 - (1 - eta) * m.args
    return ExpOpMixture(m.weights / d, eta * m.args / d)


def attenuate_dual(x, eta):
    """Detector-side loss: a POVM argument x becomes 1 - eta + eta x."""
    _check_eta(eta)
    return 1 - eta + eta * x


def squeezer_output_arg(x, z, gamma):
    """Signal output of a squeezer fed with E(x), idler projected onto E(z).

    Returns ``(1/gamma, (x + (gamma-1) z) / gamma)``: the output is
    ``E(arg) / gamma``.
    """
    if gamma < 1:
        raise InvalidArgument(f"gain must be >= 1, got {float(gamma)!r}")
    return 1 / gamma, (x + (gamma - 1) * z) / gamma


def merge(m: ExpOpMixture, tol: float | None = None) -> ExpOpMixture:
    """Combine terms with (nearly) equal arguments and drop vanishing weights."""
    if tol is None:
        tol = MERGE_TOL_EXACT if m.exact else MERGE_TOL
    if len(m) == 0:
        return m
    order = sorted(range(len(m)), key=lambda i: m.args[i])
    weights, args = [], []
    for i in order:
        w, x = m.weights[i], m.args[i]
        if args and abs(x - args[-1]) < tol:
            weights[-1] = weights[-1] + w
        else:
            weights.append(w)
            args.append(x)
    keep = [i for i, w in enumerate(weights) if abs(w) >= ZERO_WEIGHT]
    dtype = object if m.exact else float
    return ExpOpMixture(
        np.array([weights[i] for i in keep], dtype=dtype),
        np.array([args[i] for i in keep], dtype=dtype),
    )


def normalize(m: ExpOpMixture) -> ExpOpMixture:
    tr = trace(m)
    if not tr > 0:
        raise NonPhysicalMixture(f"mixture trace {float(tr)!r} is not positive")
    return ExpOpMixture(m.weights / tr, m.args.copy())
