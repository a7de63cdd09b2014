"""Acceptance checks shared by ``heraldloop verify`` and the test-suite.

Each check returns a ``CheckResult``; ``run_checks`` executes them in order.
"""

from __future__ import annotations

import itertools
import math
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import mcsim
from .analysis import (
    ClickHistogram,
    bootstrap_sigma,
    chi2_pvalue,
    estimate_fidelity,
    estimate_negativity,
    estimate_statistics,
    fit_parameters,
    fixed_vector_negativity,
    tally_records,
)
from .detector import ClickDistribution, DetectorConfig, fock_click_distribution
from .expop import gain_from_zeta
from .moments import distribution_negativity
from .protocol import (
    HeraldPattern,
    LoopConfig,
    dh_click_closed,
    dh_success_closed,
    fh_click_closed,
    fh_success_closed,
    fidelity_target,
    run_pattern,
    signal_distribution,
    sweep_fp,
)

ZETAS = (0.1, 0.2, 0.3)
ORACLE_PATTERNS = ("1", "2", "3", "4", "2,0", "1,1", "1,1,1", "2,2", "1,1,1,1")
HEAVY = (8, 9, 10)
# Wall-clock limits in seconds; exceeding one fails the check.
BUDGETS = {1: 1.0, 2: 10.0, 3: 30.0, 5: 5.0, 8: 300.0}


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


@contextmanager
def gain_fault(delta: float):
    """Temporarily perturb the pair parameter used by the Fock-basis code."""
    old = mcsim._GAIN_FAULT
    mcsim._GAIN_FAULT = delta
    try:
        yield
    finally:
        mcsim._GAIN_FAULT = old


def check_closed_forms(tol: float = 1e-12) -> tuple[bool, str]:
    worst_p = worst_c = 0.0
    for zeta in ZETAS:
        cfg = LoopConfig.lossless(zeta)
        g = cfg.squeeze.gamma
        for n in (1, 2, 3, 4):
            cases = (
                (HeraldPattern.dh(n), dh_success_closed, dh_click_closed),
                (HeraldPattern.fh(n), fh_success_closed, fh_click_closed),
            )
            for pat, succ, click in cases:
                P, state = run_pattern(cfg, pat)
                dist = signal_distribution(state, cfg.signal_det)
                worst_p = max(worst_p, _rel(P, succ(g, n, 4)))
                worst_c = max(worst_c, float(np.max(np.abs(dist.probs - click(g, n, 4, 8).probs))))
    ok = worst_p <= tol and worst_c <= tol
    return ok, f"max rel dP={worst_p:.1e}, max |dc_k|={worst_c:.1e}, tol {tol:g}"


def check_oracle(tol: float = 1e-9) -> tuple[bool, str]:
    worst_p = worst_c = 0.0
    where = ""
    for zeta in ZETAS:
        for eff in (0.5, 0.6):
            cfg = LoopConfig.lab(zeta, loop_eff=eff)
            for text in ORACLE_PATTERNS:
                pat = HeraldPattern.parse(text)
                P, state = run_pattern(cfg, pat)
                P_ref, _, clicks_ref = mcsim.exact_chain(cfg, pat)
                dp = _rel(P, P_ref)
                dc = float(np.max(np.abs(signal_distribution(state, cfg.signal_det).probs - clicks_ref.probs)))
                if max(dp, dc) > max(worst_p, worst_c):
                    where = f"zeta={zeta}, eta_loop={eff}, {pat}"
                worst_p, worst_c = max(worst_p, dp), max(worst_c, dc)
    ok = worst_p <= tol and worst_c <= tol
    return ok, f"max rel dP={worst_p:.1e}, max |dc_k|={worst_c:.1e} at {where}, tol {tol:g}"


def check_gain_kernel(tol: float = 1e-8, cutoff: int = 30) -> tuple[bool, str]:
    worst = 0.0
    # Entries near the truncation edge are distorted by the finite space itself.
    jmax = cutoff // 2
    for zeta in (0.1, 0.2, 0.3, 0.35):
        lam = gain_from_zeta(zeta).lam
        for m in range(6):
            ref = mcsim.squeezer_matrix_probs(zeta, m, cutoff)[: jmax - m + 1]
            worst = max(worst, float(np.max(np.abs(mcsim.gain_kernel(m, lam, jmax - m) - ref))))
    return worst <= tol, f"max |d| = {worst:.1e} for m <= 5, zeta <= 0.35, cutoff {cutoff}, tol {tol:g}"


def _enumerated_clicks(n: int, N: int) -> list[Fraction]:
    counts = [0] * (N + 1)
    for assignment in itertools.product(range(N), repeat=n):
        counts[len(set(assignment))] += 1
    return [Fraction(c, N**n) for c in counts]


def check_fock_clicks() -> tuple[bool, str]:
    c = fock_click_distribution(2, DetectorConfig(8))
    ok = c.probs[1] == 0.125 and c.probs[2] == 0.875
    worst = 0.0
    for N in (4, 8):
        for n in range(6):
            ref = np.array([float(f) for f in _enumerated_clicks(n, N)])
            d = fock_click_distribution(n, DetectorConfig(N)).probs
            worst = max(worst, float(np.max(np.abs(d - ref))), float(np.max(np.abs(mcsim.click_kernel(n, DetectorConfig(N)) - ref))))
    ok = ok and worst <= 1e-15
    return ok, f"(c1, c2) = ({c.probs[1]}, {c.probs[2]}); max |d| vs enumeration {worst:.1e}"


def check_lossless_sweep() -> tuple[bool, str]:
    zetas = np.round(np.arange(0.10, 0.3501, 0.01), 10)
    ratios = {}
    worst_gap = math.inf
    for n in (2, 3, 4):
        cfg = LoopConfig.lossless(0.1)
        dh = sweep_fp(cfg, HeraldPattern.dh(n), zetas, convention="a")
        fh = sweep_fp(cfg, HeraldPattern.fh(n), zetas, convention="a")
        worst_gap = min(worst_gap, min(f.P / d.P for f, d in zip(fh, dh)))
        i = int(np.argmin(np.abs(zetas - 0.3)))
        ratios[n] = fh[i].P / dh[i].P
    increasing = ratios[2] < ratios[3] < ratios[4]
    ok = worst_gap > 1 and increasing
    shown = ", ".join(f"n={n}: {r:.3g}" for n, r in ratios.items())
    return ok, f"min P_FH/P_DH on grid {worst_gap:.3g}; ratio at zeta=0.3 {shown}"


def _matched(rows_a, rows_b, targets):
    """log P of both curves interpolated at common fidelity targets."""
    out = []
    for rows in (rows_a, rows_b):
        F = np.array([r.F for r in rows])
        logP = np.log([r.P for r in rows])
        if np.any(np.diff(F) <= 0):
            raise ValueError("fidelity is not monotonic along the sweep")
        out.append(np.interp(targets, F, logP))
    return out


def check_matched_fidelity(points: int = 30) -> tuple[bool, str]:
    zetas = np.linspace(0.02, 0.60, points)
    cfg = LoopConfig.lab(0.1, loop_eff=0.6)
    parts, ok = [], True
    for n in (2, 3, 4):
        dh = sweep_fp(cfg, HeraldPattern.dh(n), zetas, convention="a")
        fh = sweep_fp(cfg, HeraldPattern.fh(n), zetas, convention="a")
        lo = max(dh[0].F, fh[0].F)
        hi = min(dh[-1].F, fh[-1].F)
        if hi <= lo:
            return False, f"n={n}: fidelity ranges do not overlap"
        targets = np.linspace(lo, hi, points)
        try:
            log_dh, log_fh = _matched(dh, fh, targets)
        except ValueError as exc:
            return False, f"n={n}: {exc}"
        gap = float(np.min(log_fh - log_dh))
        ok = ok and gap > 0
        parts.append(f"n={n} min P_FH/P_DH {math.exp(gap):.3g}")
    return ok, "; ".join(parts) + f" over {points} matched F targets"


def check_negativity() -> tuple[bool, str]:
    det = DetectorConfig(8)
    fock1 = distribution_negativity(fock_click_distribution(1, det)).value
    ok = abs(fock1 + 0.0153882) <= 1e-6
    from scipy import stats

    classical = min(
        distribution_negativity(ClickDistribution(stats.binom.pmf(np.arange(9), 8, q))).value
        for q in np.linspace(0, 1, 21)
    )
    ok = ok and classical >= -1e-10
    focks = [distribution_negativity(fock_click_distribution(n, det)).value for n in range(1, 7)]
    ok = ok and all(v < 0 for v in focks)
    return ok, f"fock1 N={fock1:.7f}; min binomial N={classical:.1e}; max fock1..6 N={max(focks):.2e}"


def check_closure(shots: int = 10_000_000, seed: int = 2024, workers: int = 1) -> tuple[bool, str]:
    cfg = LoopConfig.lab(0.3, loop_eff=0.6)
    tally = tally_records(mcsim.sample_blocks(cfg, 2, shots, seed, workers))
    first = next(mcsim.sample_blocks(cfg, 2, mcsim.BLOCK_SIZE, seed))
    again = next(mcsim.sample_blocks(cfg, 2, mcsim.BLOCK_SIZE, seed))
    ok = bool(np.array_equal(first, again))
    parts = []
    for text in ("1,1", "2,0", "2"):
        pat = HeraldPattern.parse(text)
        cond = tally.condition(pat)
        P_ref, _, clicks = mcsim.exact_chain(cfg, pat, passes=2)
        dev = (cond.P - P_ref) / cond.sigma_P
        p = chi2_pvalue(cond.hist, clicks.probs)
        ok = ok and abs(dev) < 5 and p > 1e-3
        parts.append(f"{pat} dP={dev:+.2f}sig p={p:.3f}")
    neg = estimate_negativity(tally.condition(HeraldPattern.parse("1,1")).hist)
    ok = ok and neg.value < 0
    parts.append(f"N(1,1)={neg.value:.2e}")
    return ok, "; ".join(parts)


def check_error_bars(seed: int = 7) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    cfg = LoopConfig.lab(0.3, loop_eff=0.6)
    ck = []
    fid = {"a": [], "b": []}
    neg = []
    for text in ("2", "1,1"):
        pat = HeraldPattern.parse(text)
        _, state = run_pattern(cfg, pat)
        probs = signal_distribution(state, cfg.signal_det).probs
        hist = ClickHistogram(rng.multinomial(100_000, probs))
        est = estimate_statistics(hist)
        for k in range(hist.bins + 1):
            if hist.counts[k] < 100:
                continue
            boot = bootstrap_sigma(hist, lambda h, k=k: h.counts[k] / h.total, seed=seed)
            ck.append(est.sigmas[k] / boot)
        for conv in ("a", "b"):
            target = fidelity_target(pat.n, cfg.signal_det, conv)
            boot = bootstrap_sigma(hist, lambda h: estimate_fidelity(h, target)[0], seed=seed)
            fid[conv].append(estimate_fidelity(hist, target)[1] / boot)
        big = ClickHistogram(rng.multinomial(1_000_000, probs))
        res = estimate_negativity(big)
        boot = bootstrap_sigma(big, fixed_vector_negativity(res.eigvec), seed=seed)
        neg.append(res.sigma / boot)

    def span(r):
        return f"[{min(r):.3f}, {max(r):.3f}]"

    def within(r, tol):
        return all(abs(x - 1) <= tol for x in r)

    ok = within(ck, 0.15) and within(fid["a"] + fid["b"], 0.15) and within(neg, 0.25)
    return ok, (
        f"analytic/bootstrap c_k {span(ck)}, F(ideal target) {span(fid['a'])}, "
        f"F(lossy target) {span(fid['b'])}, N {span(neg)}"
    )


def check_fit(shots: int = 10_000_000, workers: int = 1) -> tuple[bool, str]:
    truth_z = (0.167, 0.2326, 0.3038)
    truth = {"eta": 0.38, "eta_prime": 0.36, "eta_loop": 0.6}
    data = []
    for i, z in enumerate(truth_z):
        cfg = LoopConfig.lab(z, loop_eff=truth["eta_loop"])
        data.append(tally_records(mcsim.sample_blocks(cfg, 2, shots, 100 + i, workers)))
    res = fit_parameters(data)
    dz = max(_rel(a, b) for a, b in zip(res.zetas, truth_z))
    de = {k: _rel(getattr(res, k), v) for k, v in truth.items()}
    ok = dz <= 0.02 and all(v <= 0.05 for v in de.values())
    effs = ", ".join(f"{k} {getattr(res, k):.4f}" for k in truth)
    return ok, f"max rel zeta error {dz:.2%}; {effs}; identifiable={res.identifiable}"


def check_determinism(shots: int = 300_000) -> tuple[bool, str]:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
            path = os.path.join(tmp, f"run_{tag}.csv")
            args = ["simulate", "--zeta", "0.3", "--t", "2", "--shots", str(shots), "--seed", "42", "--threads", str(threads), "-o", path]
            if main(args) != 0:
                return False, f"simulate exited nonzero for {tag}"
            paths.append(path)
        blobs = [open(p, "rb").read() for p in paths]
    ok = blobs[0] == blobs[1] == blobs[2]
    return ok, f"{shots} records, 1/1/4 threads, files identical={ok}"


CHECKS: list[tuple[int, str, Callable[[], tuple[bool, str]]]] = [
    (1, "closed forms vs pipeline", check_closed_forms),
    (2, "pipeline vs Fock oracle with losses", check_oracle),
    (3, "gain kernel vs matrix exponential", check_gain_kernel),
    (4, "Fock click distribution", check_fock_clicks),
    (5, "lossless F-P sweep, FH over DH", check_lossless_sweep),
    (6, "lossy matched-fidelity dominance", check_matched_fidelity),
    (7, "negativity of Fock and binomial statistics", check_negativity),
    (8, "sampler/estimator closure at 1e7 shots", check_closure),
    (9, "analytic vs bootstrap error bars", check_error_bars),
    (10, "fit recovery on synthetic data", check_fit),
    (11, "simulate determinism", check_determinism),
]


def run_one(number: int) -> CheckResult:
    _, name, fn = next(c for c in CHECKS if c[0] == number)
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - t0
    budget = BUDGETS.get(number)
    if budget is not None and seconds > budget:
        passed, detail = False, f"{detail}; over the {budget:g} s budget"
    return CheckResult(number, name, bool(passed), detail, seconds)


def run_checks(quick: bool = False, only=None, fault: float = 0.0, report: Callable[[str], None] | None = None) -> list[CheckResult]:
    """Run the acceptance checks; ``quick`` skips the 1e7-shot ones."""
    numbers = [c[0] for c in CHECKS if (only is None or c[0] in only) and not (quick and c[0] in HEAVY)]
    results = []
    with gain_fault(fault):
        for num in numbers:
            res = run_one(num)
            if report:
                report(res.line())
            results.append(res)
    return results
