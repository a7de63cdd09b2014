"""Fock-basis reference model and shot-by-shot Monte Carlo of the loop.

Everything here works with photon-number distributions and explicit
sampling, sharing no code with the exponential-operator path in
``protocol``.  It serves as the oracle for that path and as the source of
synthetic click records.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
import scipy.linalg
from scipy import stats

from .detector import ClickDistribution, DetectorConfig, clean_probs
from .errors import CutoffExceeded, InvalidArgument
from .protocol import HeraldPattern, LoopConfig

BLOCK_SIZE = 10_000
TAIL_TOL = 1e-12
START_CUTOFF = 20
MAX_CUTOFF = 320

# Relative perturbation of the pair parameter; only the verification harness sets it.
_GAIN_FAULT = 0.0


@dataclass(frozen=True)
class PhotonDist:
    probs: np.ndarray

    @property
    def cutoff(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs) / self.probs.sum())


@dataclass(frozen=True)
class ClickRecord:
    herald: tuple[int, ...]
    signal: int


def gain_kernel(m: int, lam: float, jmax: int) -> np.ndarray:
    """P(j pairs added | m seed photons) = C(m+j, j) lam**j (1-lam)**(m+1), j = 0..jmax."""
    if not 0 <= lam < 1:
        raise InvalidArgument(f"pair parameter must lie in [0, 1), got {lam!r}")
    lam = lam * (1.0 + _GAIN_FAULT)
    return stats.nbinom.pmf(np.arange(jmax + 1), m + 1, 1.0 - lam)


def loss_kernel(n: int, eta: float) -> np.ndarray:
    """Binomial survival of n photons through transmission eta."""
    if not 0 <= eta <= 1:
        raise InvalidArgument(f"efficiency must lie in [0, 1], got {eta!r}")
    return stats.binom.pmf(np.arange(n + 1), n, eta)


def loss_matrix(nmax: int, eta: float) -> np.ndarray:
    """``L[n, s] = P(s survive | n)`` for n, s in 0..nmax."""
    L = np.zeros((nmax + 1, nmax + 1))
    for n in range(nmax + 1):
        L[n, : n + 1] = loss_kernel(n, eta)
    return L


@lru_cache(maxsize=None)
def _occupancy(nmax: int, bins: int) -> np.ndarray:
    """``O[s, k]``: probability that s photons spread uniformly over ``bins`` fill exactly k of them."""
    O = np.zeros((nmax + 1, bins + 1))
    O[0, 0] = 1.0
    k = np.arange(bins + 1)
    for s in range(nmax):
        O[s + 1] = O[s] * k / bins
        O[s + 1, 1:] += O[s, :-1] * (bins - k[:-1]) / bins
    O.setflags(write=False)
    return O


def click_matrix(nmax: int, det: DetectorConfig) -> np.ndarray:
    """``C[n, k] = P(k clicks | n photons)`` via binomial loss then bin occupancy."""
    O = _occupancy(nmax, det.bins)
    if det.efficiency == 1:
        return O.copy()
    return loss_matrix(nmax, det.efficiency) @ O


def click_kernel(n: int, det: DetectorConfig) -> np.ndarray:
    return click_matrix(n, det)[n]


@lru_cache(maxsize=16)
def _squeezer_unitary(zeta: float, cutoff: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, cutoff)), 1)
    eye = np.eye(cutoff)
    A = np.kron(a, eye)
    B = np.kron(eye, a)
    U = scipy.linalg.expm(zeta * (A.T @ B.T - A @ B))
    U.setflags(write=False)
    return U


def squeezer_matrix_probs(zeta: float, m: int, cutoff: int = 30) -> np.ndarray:
    """|<m+j, j| S(zeta) |m, 0>|**2 from the matrix exponential of the truncated generator.

    S = exp(zeta (a^dag b^dag - a b)) on a ``cutoff`` x ``cutoff`` two-mode Fock
    space.  Returns the probabilities for j = 0..cutoff-1-m.
    """
    if not 0 <= m < cutoff:
        raise InvalidArgument(f"seed photon number {m} outside the {cutoff}-level space")
    psi = _squeezer_unitary(float(zeta), cutoff)[:, m * cutoff]
    js = np.arange(cutoff - m)
    return np.abs(psi[(m + js) * cutoff + js]) ** 2


def _transition(lam: float, nmax: int, herald_weight: np.ndarray):
    """Matrix T[m, m+j] = gain(j|m) * herald_weight[j] and the per-row leaked mass."""
    T = np.zeros((nmax + 1, nmax + 1))
    leak = np.zeros(nmax + 1)
    for m in range(nmax + 1):
        g = gain_kernel(m, lam, nmax - m)
        T[m, m:] = g * herald_weight[: nmax - m + 1]
        leak[m] = max(1.0 - g.sum(), 0.0)
    return T, leak


def _chain(cfg: LoopConfig, pat: HeraldPattern, t: int, cutoff: int):
    effs = cfg.loop_effs(t)
    H = click_matrix(cutoff, cfg.herald_det)
    p = np.zeros(cutoff + 1)
    p[0] = 1.0
    leaked = 0.0
    for j in range(t):
        k = pat.clicks_per_pass[j] if j < pat.t else None
        weight = np.ones(cutoff + 1) if k is None else H[:, k]
        T, leak = _transition(cfg.squeeze_at(j).lam, cutoff, weight)
        leaked += float(p @ leak)
        p = p @ T
        if j < t - 1 and effs[j] != 1:
            p = p @ loss_matrix(cutoff, effs[j])
    return p, leaked


def exact_chain(
    cfg: LoopConfig,
    pat: HeraldPattern,
    passes: int | None = None,
    tail_tol: float = TAIL_TOL,
    cutoff: int = START_CUTOFF,
    max_cutoff: int = MAX_CUTOFF,
):
    """Deterministic propagation of the photon-number distribution.

    Returns ``(P, PhotonDist, ClickDistribution)``.  The Fock cutoff doubles
    until the probability mass pushed beyond it is below ``tail_tol``.
    """
    t = pat.t if passes is None else passes
    if t < pat.t:
        raise InvalidArgument(f"pattern {pat} is longer than {t} passes")
    pat.check(cfg.herald_det)
    while True:
        p, leaked = _chain(cfg, pat, t, cutoff)
        if leaked < tail_tol:
            break
        if cutoff * 2 > max_cutoff:
            raise CutoffExceeded(f"tail mass {leaked:.2e} still above {tail_tol:.0e} at cutoff {cutoff}")
        cutoff *= 2
    P = float(p.sum())
    if P <= 0:
        return 0.0, PhotonDist(p), None
    signal = p / P
    clicks = signal @ click_matrix(cutoff, cfg.signal_det)
    return P, PhotonDist(signal), ClickDistribution(clean_probs(clicks))


# ---------------------------------------------------------------------------
# sampling


def _occupied(balls: np.ndarray, bins: int, rng: np.random.Generator) -> np.ndarray:
    """Number of distinct bins hit when each entry's balls land uniformly at random."""
    occ = np.zeros(balls.shape, dtype=np.int64)
    for b in range(int(balls.max(initial=0))):
        u = rng.random(balls.shape)
        hit_new = (b < balls) & (u * bins >= occ)
        occ += hit_new
    return occ


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _simulate_block(cfg: LoopConfig, t: int, seed: int, block: int) -> np.ndarray:
    rng = block_rng(seed, block)
    effs = cfg.loop_effs(t)
    out = np.empty((BLOCK_SIZE, t + 1), dtype=np.int16)
    photons = np.zeros(BLOCK_SIZE, dtype=np.int64)
    herald = cfg.herald_det
    for j in range(t):
        lam = cfg.squeeze_at(j).lam * (1.0 + _GAIN_FAULT)
        pairs = rng.negative_binomial(photons + 1, 1.0 - lam)
        idler = rng.binomial(pairs, herald.efficiency)
        out[:, j] = _occupied(idler, herald.bins, rng)
        photons = photons + pairs
        if j < t - 1:
            photons = rng.binomial(photons, effs[j])
    detected = rng.binomial(photons, cfg.signal_det.efficiency)
    out[:, t] = _occupied(detected, cfg.signal_det.bins, rng)
    return out


def sample_blocks(cfg: LoopConfig, t: int, shots: int, seed: int, workers: int = 1) -> Iterator[np.ndarray]:
    """Yield click records in shot order as int arrays of shape (rows, t + 1).

    Columns are the herald clicks of passes 1..t followed by the signal clicks.
    Shot i is generated from (seed, i // BLOCK_SIZE) alone, so the stream does
    not depend on ``workers``.
    """
    if shots < 1:
        raise InvalidArgument("need at least one shot")
    if t < 1:
        raise InvalidArgument("need at least one pass")
    nblocks = -(-shots // BLOCK_SIZE)

    def block(b):
        arr = _simulate_block(cfg, t, seed, b)
        return arr[: min(BLOCK_SIZE, shots - b * BLOCK_SIZE)]

    if workers <= 1:
        for b in range(nblocks):
            yield block(b)
        return
    with ThreadPoolExecutor(workers) as pool:
        for start in range(0, nblocks, 4 * workers):
            yield from pool.map(block, range(start, min(start + 4 * workers, nblocks)))


def sample_array(cfg: LoopConfig, t: int, shots: int, seed: int, workers: int = 1) -> np.ndarray:
    return np.concatenate(list(sample_blocks(cfg, t, shots, seed, workers)))


def sample_records(cfg: LoopConfig, t: int, shots: int, seed: int, workers: int = 1) -> Iterator[ClickRecord]:
    for arr in sample_blocks(cfg, t, shots, seed, workers):
        for row in arr.tolist():
            yield ClickRecord(tuple(row[:-1]), row[-1])


def record_header(t: int) -> str:
    return ",".join([f"pass{j + 1}" for j in range(t)] + ["signal"])


def preamble(cfg: LoopConfig, t: int, shots: int, seed: int) -> str:
    meta = {"config": cfg.to_dict(), "passes": t, "shots": shots, "seed": seed, "block_size": BLOCK_SIZE}
    return "#" + json.dumps(meta, sort_keys=True)


def write_records(path, cfg: LoopConfig, t: int, shots: int, seed: int, workers: int = 1) -> int:
    """Write the CSV record file; returns the number of records."""
    n = 0
    with open(path, "w", newline="\n") as fh:
        fh.write(preamble(cfg, t, shots, seed) + "\n")
        fh.write(record_header(t) + "\n")
        for arr in sample_blocks(cfg, t, shots, seed, workers):
            np.savetxt(fh, arr, fmt="%d", delimiter=",")
            n += len(arr)
    return n
