"""Direct and feedback heralding on top of the exponential-operator algebra.

A run starts from vacuum.  Each pass squeezes the circulating signal against a
fresh vacuum idler, projects the idler onto the herald POVM for the requested
click count, and (between passes) sends the signal once around the lossy
loop.  The unnormalised trace of the final mixture is the probability of the
click pattern.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .detector import (
    NEG_CLIP,
    ClickDistribution,
    DetectorConfig,
    bhattacharyya,
    clean_probs,
    fock_click_distribution,
    povm_terms,
)
from .errors import DivergentTrace, InvalidArgument, NonPhysicalMixture
from .expop import (
    MP,
    ExpOpMixture,
    SqueezeParams,
    attenuate_dual,
    attenuate_state,
    gain_from_zeta,
    lift,
    merge,
    normalize,
    squeezer_output_arg,
    trace,
)

LAB_HERALD = DetectorConfig(4, 0.36)
LAB_SIGNAL = DetectorConfig(8, 0.38)
# Fitted per-round-trip loop efficiency by number of passes.
LAB_LOOP_EFF = {2: 0.60, 3: 0.55, 4: 0.52}


@dataclass(frozen=True)
class HeraldPattern:
    clicks_per_pass: tuple[int, ...]

    def __post_init__(self):
        clicks = tuple(int(k) for k in self.clicks_per_pass)
        if not clicks:
            raise InvalidArgument("a herald pattern needs at least one pass")
        if any(k < 0 for k in clicks):
            raise InvalidArgument(f"negative click count in pattern {clicks}")
        object.__setattr__(self, "clicks_per_pass", clicks)

    @classmethod
    def parse(cls, text: str) -> "HeraldPattern":
        """Accept ``"1,1"``, ``"(1,1)"`` or ``"2"``."""
        body = text.strip().strip("()")
        try:
            return cls(tuple(int(tok) for tok in body.split(",") if tok.strip()))
        except ValueError as exc:
            raise InvalidArgument(f"cannot parse herald pattern {text!r}") from exc

    @classmethod
    def dh(cls, n: int) -> "HeraldPattern":
        return cls((n,))

    @classmethod
    def fh(cls, n: int) -> "HeraldPattern":
        return cls((1,) * n)

    @property
    def n(self) -> int:
        return sum(self.clicks_per_pass)

    @property
    def t(self) -> int:
        return len(self.clicks_per_pass)

    def __str__(self):
        return "(" + ",".join(map(str, self.clicks_per_pass)) + ")"

    def check(self, herald: DetectorConfig):
        if max(self.clicks_per_pass) > herald.bins:
            raise InvalidArgument(f"pattern {self} needs more than {herald.bins} herald clicks in one pass")


@dataclass(frozen=True)
class LoopConfig:
    """Source, detectors and loop.

    ``squeeze`` is one setting shared by all passes or a per-pass tuple;
    ``loop_eff`` is a per-round-trip scalar, a tuple of length t-1, or None
    for the fitted default that goes with the number of passes.
    """

    squeeze: SqueezeParams | tuple[SqueezeParams, ...]
    herald_det: DetectorConfig = field(default_factory=lambda: DetectorConfig(4))
    signal_det: DetectorConfig = field(default_factory=lambda: DetectorConfig(8))
    loop_eff: float | tuple[float, ...] | None = 1.0

    def __post_init__(self):
        effs = self.loop_eff
        if effs is not None:
            vals = (effs,) if np.isscalar(effs) else tuple(effs)
            if any(not 0 <= e <= 1 for e in vals):
                raise InvalidArgument(f"loop efficiencies must lie in [0, 1], got {effs!r}")
            if not np.isscalar(effs):
                object.__setattr__(self, "loop_eff", tuple(float(e) for e in effs))
        if not isinstance(self.squeeze, SqueezeParams):
            object.__setattr__(self, "squeeze", tuple(self.squeeze))

    @classmethod
    def lossless(cls, zeta: float, herald_bins: int = 4, signal_bins: int = 8) -> "LoopConfig":
        return cls(gain_from_zeta(zeta), DetectorConfig(herald_bins), DetectorConfig(signal_bins), 1.0)

    @classmethod
    def lab(cls, zeta: float, loop_eff=None, herald=LAB_HERALD, signal=LAB_SIGNAL) -> "LoopConfig":
        return cls(gain_from_zeta(zeta), herald, signal, loop_eff)

    def with_zeta(self, zeta: float) -> "LoopConfig":
        return replace(self, squeeze=gain_from_zeta(zeta))

    def squeeze_at(self, j: int) -> SqueezeParams:
        if isinstance(self.squeeze, SqueezeParams):
            return self.squeeze
        if j >= len(self.squeeze):
            raise InvalidArgument(f"no squeezing given for pass {j + 1}")
        return self.squeeze[j]

    def loop_effs(self, t: int) -> tuple[float, ...]:
        if self.loop_eff is None:
            eff = LAB_LOOP_EFF.get(t, LAB_LOOP_EFF[max(LAB_LOOP_EFF)])
            return (eff,) * (t - 1)
        if np.isscalar(self.loop_eff):
            return (float(self.loop_eff),) * (t - 1)
        if len(self.loop_eff) != t - 1:
            raise InvalidArgument(f"{t} passes need {t - 1} loop efficiencies, got {len(self.loop_eff)}")
        return self.loop_eff

    def to_dict(self) -> dict:
        sq = self.squeeze
        zeta = sq.zeta if isinstance(sq, SqueezeParams) else [s.zeta for s in sq]
        return {
            "zeta": zeta,
            "herald_bins": self.herald_det.bins,
            "eta_prime": self.herald_det.efficiency,
            "signal_bins": self.signal_det.bins,
            "eta": self.signal_det.efficiency,
            "eta_loop": list(self.loop_eff) if isinstance(self.loop_eff, tuple) else self.loop_eff,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        zeta = d["zeta"]
        sq = gain_from_zeta(zeta) if np.isscalar(zeta) else tuple(gain_from_zeta(z) for z in zeta)
        eff = d.get("eta_loop", 1.0)
        return cls(
            sq,
            DetectorConfig(d.get("herald_bins", 4), d.get("eta_prime", 1.0)),
            DetectorConfig(d.get("signal_bins", 8), d.get("eta", 1.0)),
            tuple(eff) if isinstance(eff, list) else eff,
        )


def herald_step(m: ExpOpMixture, sq: SqueezeParams, k: int | None, herald: DetectorConfig) -> ExpOpMixture:
    """One pass through the squeezer with the idler projected on ``Pi_k``.

    ``k=None`` leaves the idler unmeasured (identity POVM, a single E(1)).
    The output is unnormalised: its trace is the joint probability of the
    input history and ``k`` herald clicks.
    """
    exact = m.exact
    gamma = lift(sq.gamma, exact)
    if k is None:
        coefs, zs = [1], [lift(1, exact)]
    else:
        coefs, zs = zip(*povm_terms(k, herald, exact=exact))
    dtype = object if exact else float
    c = np.array(coefs, dtype=dtype)
    z = np.array(zs, dtype=dtype)
    factor, x = squeezer_output_arg(m.args[:, None], z[None, :], gamma)
    w = np.outer(m.weights, c) * factor
    return merge(ExpOpMixture(w.ravel(), x.ravel()))


def _structurally_zero(cfg: LoopConfig, pat: HeraldPattern) -> bool:
    for j, k in enumerate(pat.clicks_per_pass):
        if k and (cfg.squeeze_at(j).gamma == 1 or cfg.herald_det.efficiency == 0):
            return True
    return False


def run_pattern(cfg: LoopConfig, pat: HeraldPattern, passes: int | None = None, exact: bool = True):
    """Success probability and normalised signal state for a herald pattern.

    ``passes`` may exceed the pattern length; the trailing passes are then
    left unconditioned (their herald outcomes are summed over).  Returns
    ``(P, state)``; ``state`` is None when the pattern cannot occur at all
    (no gain in a pass that must click).
    """
    t = pat.t if passes is None else passes
    if t < pat.t:
        raise InvalidArgument(f"pattern {pat} is longer than {t} passes")
    pat.check(cfg.herald_det)
    effs = cfg.loop_effs(t)
    if _structurally_zero(cfg, pat):
        return 0.0, None
    m = ExpOpMixture.vacuum(exact=exact)
    for j in range(t):
        k = pat.clicks_per_pass[j] if j < pat.t else None
        m = herald_step(m, cfg.squeeze_at(j), k, cfg.herald_det)
        if j < t - 1 and effs[j] != 1:
            m = attenuate_state(m, effs[j])
    p = trace(m)
    if not p > 0:
        raise NonPhysicalMixture(f"pattern {pat} has non-positive probability {float(p)!r}")
    return float(p), normalize(m)


def _signal_povm_matrix(det: DetectorConfig, exact: bool):
    N = det.bins
    A = np.zeros((N + 1, N + 1), dtype=object)
    for k in range(N + 1):
        for j in range(k + 1):
            A[k, j] = math.comb(N, k) * math.comb(k, j) * (-1) ** (k - j)
    eta = lift(det.efficiency, exact)
    z = [attenuate_dual(lift(j, exact) / N, eta) for j in range(N + 1)]
    return A, z


def signal_click_probs(state: ExpOpMixture, det: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw click probabilities of ``state`` and a rounding bound for each entry.

    Values are not clipped or checked; in float mode the alternating sums can
    be off by the returned bound.
    """
    exact = state.exact
    A, z = _signal_povm_matrix(det, exact)
    dtype = object if exact else float
    zarr = np.array(z, dtype=dtype)
    prod = state.args[:, None] * zarr[None, :]
    if len(state) and max(prod.ravel()) >= 1:
        raise DivergentTrace("x*z >= 1 while evaluating signal clicks")
    kern_terms = state.weights[:, None] / (1 - prod)
    K = det.bins + 1
    if exact:
        kern = [MP.fsum(kern_terms[:, j]) for j in range(K)]
        probs = np.array([float(MP.fsum(A[k, j] * kern[j] for j in range(k + 1))) for k in range(K)])
        return probs, np.full(K, NEG_CLIP)
    kern = [math.fsum(kern_terms[:, j]) for j in range(K)]
    scale = [math.fsum(np.abs(kern_terms[:, j])) for j in range(K)]
    probs, tol = np.empty(K), np.empty(K)
    for k in range(K):
        probs[k] = math.fsum(float(A[k, j]) * kern[j] for j in range(k + 1))
        tol[k] = NEG_CLIP + 64 * np.finfo(float).eps * math.fsum(abs(float(A[k, j])) * scale[j] for j in range(k + 1))
    return probs, tol


def signal_distribution(state: ExpOpMixture, det: DetectorConfig) -> ClickDistribution:
    """Click statistics of ``state`` on the signal detector."""
    probs, tol = signal_click_probs(state, det)
    return ClickDistribution(clean_probs(probs, tol))


# ---------------------------------------------------------------------------
# closed forms for the lossless protocols


def _mp_gamma(gamma):
    if gamma < 1:
        raise InvalidArgument(f"gain must be >= 1, got {float(gamma)!r}")
    return MP.mpf(gamma)


def dh_success_closed(gamma, n: int, herald_bins: int) -> float:
    if n > herald_bins:
        raise InvalidArgument(f"{n} clicks cannot be resolved by {herald_bins} herald bins")
    if n >= 1 and gamma == 1:
        return 0.0
    g, Np = _mp_gamma(gamma), herald_bins
    s = MP.fsum(math.comb(n, j) * (-1) ** (n - j) * g * Np / (g * Np - (g - 1) * j) for j in range(n + 1))
    return float(math.comb(Np, n) * s / g)


def dh_click_closed(gamma, n: int, herald_bins: int, signal_bins: int) -> ClickDistribution:
    if n > herald_bins:
        raise InvalidArgument(f"{n} clicks cannot be resolved by {herald_bins} herald bins")
    if n >= 1 and gamma == 1:
        raise NonPhysicalMixture("no heralded state without gain")
    g, Np, N = _mp_gamma(gamma), herald_bins, signal_bins
    P = math.comb(Np, n) / g * MP.fsum(
        math.comb(n, j) * (-1) ** (n - j) * g * Np / (g * Np - (g - 1) * j) for j in range(n + 1)
    )
    probs = []
    for k in range(N + 1):
        s = MP.fsum(
            math.comb(n, j) * math.comb(k, jj) * (-1) ** (n - j + k - jj) * N * Np * g / (N * Np * g - (g - 1) * j * jj)
            for j in range(n + 1)
            for jj in range(k + 1)
        )
        probs.append(float(math.comb(Np, n) * math.comb(N, k) * s / (P * g)))
    return ClickDistribution(clean_probs(probs))


def _fh_branches(g, n: int, herald_bins: int):
    """Yield (sign, x) for the 2**n herald branches of n single-click passes.

    Pass i (1-based) either adds the click shift (gamma-1)/N' or not, and every
    later pass rescales by 1/gamma, so a branch S lands at
    x = (gamma-1)/N' * sum_{i in S} gamma**(i-n-1).
    """
    c = (g - 1) / herald_bins
    for picks in itertools.product((0, 1), repeat=n):
        x = c * MP.fsum(g ** (i - n) for i, p in enumerate(picks) if p) if any(picks) else MP.mpf(0)
        yield (-1) ** (n - sum(picks)), x


def fh_success_closed(gamma, n: int, herald_bins: int) -> float:
    """Exact success probability of n single-click passes (lossless)."""
    if n >= 1 and gamma == 1:
        return 0.0
    g = _mp_gamma(gamma)
    s = MP.fsum(sign / (1 - x) for sign, x in _fh_branches(g, n, herald_bins))
    return float((herald_bins / g) ** n * s)


def fh_click_closed(gamma, n: int, herald_bins: int, signal_bins: int) -> ClickDistribution:
    if n >= 1 and gamma == 1:
        raise NonPhysicalMixture("no heralded state without gain")
    g, N = _mp_gamma(gamma), signal_bins
    branches = list(_fh_branches(g, n, herald_bins))
    pref = (herald_bins / g) ** n
    P = pref * MP.fsum(sign / (1 - x) for sign, x in branches)
    probs = []
    for k in range(N + 1):
        s = MP.fsum(
            sign * math.comb(k, jj) * (-1) ** (k - jj) / (1 - x * jj / N) for sign, x in branches for jj in range(k + 1)
        )
        probs.append(float(pref * math.comb(N, k) * s / P))
    return ClickDistribution(clean_probs(probs))


def fh_success_approx(gamma, n: int, herald_bins: int) -> float:
    """Feedback success probability with all branch arguments set to j(gamma-1)/(N' gamma**n).

    This moves the per-pass 1/gamma rescaling outside the click shifts.  It is
    exact for n = 1 and agrees with ``fh_success_closed`` to first order in
    gamma - 1; beyond that it underestimates.
    """
    if n >= 1 and gamma == 1:
        return 0.0
    g, Np = _mp_gamma(gamma), herald_bins
    s = MP.fsum(
        math.comb(n, j) * (-1) ** (n - j) * Np * g**n / (Np * g**n - (g - 1) * j) for j in range(n + 1)
    )
    return float((Np / g) ** n * s)


def fh_click_approx(gamma, n: int, herald_bins: int, signal_bins: int) -> ClickDistribution:
    if n >= 1 and gamma == 1:
        raise NonPhysicalMixture("no heralded state without gain")
    g, Np, N = _mp_gamma(gamma), herald_bins, signal_bins
    pref = (Np / g) ** n
    P = pref * MP.fsum(
        math.comb(n, j) * (-1) ** (n - j) * Np * g**n / (Np * g**n - (g - 1) * j) for j in range(n + 1)
    )
    probs = []
    for k in range(N + 1):
        s = MP.fsum(
            math.comb(n, j) * math.comb(k, jj) * (-1) ** (n - j + k - jj) * N * Np * g**n
            / (N * Np * g**n - (g - 1) * j * jj)
            for j in range(n + 1)
            for jj in range(k + 1)
        )
        probs.append(float(pref * math.comb(N, k) * s / P))
    return ClickDistribution(clean_probs(probs))


# ---------------------------------------------------------------------------
# fidelity and sweeps

CONVENTIONS = ("a", "b", "c")


def fidelity_target(n: int, det: DetectorConfig, convention: str = "b", custom: ClickDistribution | None = None):
    """Reference click statistics for the fidelity.

    ``"a"``: ideal |n> on a lossless detector; ``"b"``: |n> seen through the
    signal detector's efficiency; ``"c"``: the user-supplied ``custom``.
    """
    if convention == "a":
        return fock_click_distribution(n, DetectorConfig(det.bins, 1.0))
    if convention == "b":
        return fock_click_distribution(n, det)
    if convention == "c":
        if custom is None or custom.bins != det.bins:
            raise InvalidArgument("convention 'c' needs a custom distribution over the signal bins")
        return custom
    raise InvalidArgument(f"unknown fidelity convention {convention!r}")


@dataclass(frozen=True)
class SweepRow:
    zeta: float
    gamma: float
    P: float
    F: float


def evaluate_pattern(cfg: LoopConfig, pat: HeraldPattern, convention="b", custom=None, exact=True):
    """(P, F, click distribution) for one configuration and pattern."""
    P, state = run_pattern(cfg, pat, exact=exact)
    target = fidelity_target(pat.n, cfg.signal_det, convention, custom)
    if state is None:
        return P, float("nan"), None
    dist = signal_distribution(state, cfg.signal_det)
    return P, bhattacharyya(dist, target), dist


def zeta_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive grid; ``stop`` is kept if within half a step of the last point."""
    if step <= 0 or stop < start:
        raise InvalidArgument("zeta grid needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 0.5)) + 1
    # Rounded so that printed grids read 0.3 rather than 0.30000000000000004.
    return np.round(start + step * np.arange(count), 12)


def sweep_fp(
    cfg: LoopConfig,
    pattern: HeraldPattern | Callable[[float], HeraldPattern],
    zetas: Sequence[float],
    convention: str = "b",
    custom: ClickDistribution | None = None,
    workers: int = 1,
    exact: bool = True,
) -> list[SweepRow]:
    """Success probability and fidelity along a pump-strength grid."""
    zetas = [float(z) for z in zetas]
    if any(not math.isfinite(z) for z in zetas) or zetas != sorted(zetas):
        raise InvalidArgument("zeta grid must be finite and ascending")

    def row(zeta):
        pat = pattern(zeta) if callable(pattern) else pattern
        c = cfg.with_zeta(zeta)
        P, F, _ = evaluate_pattern(c, pat, convention, custom, exact)
        return SweepRow(zeta, c.squeeze.gamma, P, F)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(row, zetas))
    return [row(z) for z in zetas]
