"""Estimators on click-record data.

Records are tallied once into joint counts per (herald pattern, signal
clicks); every per-pattern estimate is then a lookup.  Random errors follow
the sample-variance recipe sigma(f) = sqrt((<f^2> - <f>^2) / (C - 1)) for
linear statistics and first-order propagation for nonlinear ones.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, stats

from .detector import ClickDistribution, DetectorConfig
from .errors import FitFailure, InsufficientData, InvalidArgument
from .expop import gain_from_zeta
from .moments import (
    MomentMatrix,
    MomentVector,
    NegativityResult,
    linear_statistic,
    moment_matrix,
    moment_weights,
    negativity,
)
from .protocol import HeraldPattern, LoopConfig, run_pattern, signal_click_probs

RESULT_COLUMNS = ("pattern", "n", "t", "P", "sigma_P", "F", "sigma_F", "negativity", "sigma_N", "significance")
_BASE = 64


@dataclass(frozen=True, eq=False)
class ClickHistogram:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or np.any(c < 0):
            raise InvalidArgument("histogram counts must be a 1-D array of non-negative integers")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def bins(self) -> int:
        return self.counts.size - 1

    def __add__(self, other: "ClickHistogram") -> "ClickHistogram":
        return ClickHistogram(self.counts + other.counts)


@dataclass(frozen=True)
class PatternQuery:
    pattern: HeraldPattern


@dataclass(frozen=True)
class Conditioned:
    hist: ClickHistogram
    P: float
    sigma_P: float
    matches: int
    total: int


class RecordTally:
    """Joint counts of (herald clicks per pass, signal clicks) over a record stream."""

    def __init__(self, passes: int, signal_bins: int):
        self.passes = passes
        self.signal_bins = signal_bins
        self._counts: dict[tuple[int, ...], np.ndarray] = {}
        self.total = 0

    def add(self, block: np.ndarray) -> "RecordTally":
        block = np.asarray(block)
        if block.ndim != 2 or block.shape[1] != self.passes + 1:
            raise InvalidArgument(f"expected records with {self.passes} passes plus signal")
        if block.size == 0:
            return self
        if block.max() >= _BASE or block.min() < 0 or block[:, -1].max() > self.signal_bins:
            raise InvalidArgument("click counts out of range")
        code = np.zeros(len(block), dtype=np.int64)
        for j in range(self.passes):
            code = code * _BASE + block[:, j]
        code = code * (self.signal_bins + 1) + block[:, -1]
        keys, counts = np.unique(code, return_counts=True)
        for key, cnt in zip(keys.tolist(), counts.tolist()):
            key, k = divmod(key, self.signal_bins + 1)
            pattern = []
            for _ in range(self.passes):
                key, c = divmod(key, _BASE)
                pattern.append(c)
            pat = tuple(reversed(pattern))
            hist = self._counts.setdefault(pat, np.zeros(self.signal_bins + 1, dtype=np.int64))
            hist[k] += cnt
        self.total += len(block)
        return self

    def patterns(self) -> list[tuple[int, ...]]:
        return sorted(self._counts)

    def histogram(self, pattern: HeraldPattern | Sequence[int] | None) -> ClickHistogram:
        """Signal histogram of records whose first passes match ``pattern``; None means all."""
        clicks = () if pattern is None else tuple(getattr(pattern, "clicks_per_pass", pattern))
        if len(clicks) > self.passes:
            raise InvalidArgument(f"pattern with {len(clicks)} passes on records with {self.passes}")
        out = np.zeros(self.signal_bins + 1, dtype=np.int64)
        for pat, hist in self._counts.items():
            if pat[: len(clicks)] == clicks:
                out += hist
        return ClickHistogram(out)

    def condition(self, pattern) -> Conditioned:
        if self.total < 1:
            raise InsufficientData("no records")
        hist = self.histogram(pattern)
        matches = hist.total
        P = matches / self.total
        sigma = math.sqrt(P * (1 - P) / (self.total - 1)) if self.total > 1 else math.inf
        return Conditioned(hist, P, sigma, matches, self.total)


def tally_records(records, passes: int | None = None, signal_bins: int = 8) -> RecordTally:
    """Single pass over an array, an iterable of record blocks, or ClickRecord objects."""
    if isinstance(records, RecordTally):
        return records
    if isinstance(records, np.ndarray):
        records = [records]
    tally = None
    batch = []
    for item in records:
        if hasattr(item, "herald"):
            batch.append(list(item.herald) + [item.signal])
            if len(batch) >= 10_000:
                item, batch = np.array(batch), []
            else:
                continue
        arr = np.asarray(item)
        if tally is None:
            tally = RecordTally(arr.shape[1] - 1 if passes is None else passes, signal_bins)
        tally.add(arr)
    if batch:
        arr = np.array(batch)
        if tally is None:
            tally = RecordTally(arr.shape[1] - 1 if passes is None else passes, signal_bins)
        tally.add(arr)
    if tally is None:
        raise InsufficientData("empty record stream")
    return tally


def condition(records, q: PatternQuery | HeraldPattern, signal_bins: int = 8) -> Conditioned:
    pattern = q.pattern if isinstance(q, PatternQuery) else q
    return tally_records(records, signal_bins=signal_bins).condition(pattern)


def read_records(path, chunk: int = 100_000):
    """Return ``(meta, blocks)`` for a record CSV; blocks are read lazily."""
    fh = open(path)
    first = fh.readline()
    if not first.startswith("#"):
        fh.close()
        raise InvalidArgument(f"{path} lacks the JSON preamble line")
    meta = json.loads(first[1:])
    header = fh.readline().strip().split(",")
    if header[-1] != "signal" or len(header) != meta["passes"] + 1:
        fh.close()
        raise InvalidArgument(f"{path} has an unexpected header {header}")

    def blocks():
        with fh:
            while True:
                lines = list(itertools.islice(fh, chunk))
                if not lines:
                    return
                yield np.loadtxt(lines, delimiter=",", dtype=np.int64, ndmin=2)

    return meta, blocks()


# ---------------------------------------------------------------------------
# estimators


def _require(hist: ClickHistogram, what: str):
    if hist.total < 2:
        raise InsufficientData(f"{what} needs at least two events, got {hist.total}")


def estimate_statistics(hist: ClickHistogram) -> ClickDistribution:
    _require(hist, "click statistics")
    C = hist.total
    c = hist.counts / C
    sig = np.sqrt(c * (1 - c) / (C - 1))
    return ClickDistribution(c, sig, C)


def estimate_fidelity(hist: ClickHistogram, target: ClickDistribution, covariance: bool = False) -> tuple[float, float]:
    """Bhattacharyya fidelity of the measured statistics with ``target``.

    The default error treats the c_k as independent,
    sigma = sqrt(sum_k F_k^2 (1 - c_k)) / (2 sqrt(C - 1)) with F_k = sqrt(target_k).
    ``covariance=True`` keeps the multinomial covariance instead, which gives
    sqrt((sum_{c_k > 0} F_k^2 - F^2) / (4 (C - 1))).
    """
    _require(hist, "fidelity")
    if target.bins != hist.bins:
        raise InvalidArgument("target and histogram have different bin counts")
    C = hist.total
    c = hist.counts / C
    Fk = np.sqrt(target.probs)
    F = math.fsum(Fk * np.sqrt(c))
    if covariance:
        var = math.fsum(Fk[c > 0] ** 2) - F**2
        return F, math.sqrt(max(var, 0.0) / (4 * (C - 1)))
    sigma = math.sqrt(math.fsum(Fk**2 * (1 - c))) / (2 * math.sqrt(C - 1))
    return F, sigma


def histogram_moments(hist: ClickHistogram) -> MomentVector:
    _require(hist, "moments")
    N = hist.bins
    f = moment_weights(N)
    c = hist.counts / hist.total
    pairs = [linear_statistic(f[m], c, hist.total) for m in range(N + 1)]
    return MomentVector(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def estimate_moment_matrix(hist: ClickHistogram, size: int | None = None) -> MomentMatrix:
    return moment_matrix(histogram_moments(hist), hist.bins, size)


def estimate_negativity(hist: ClickHistogram, size: int | None = None, covariance: bool = False) -> NegativityResult:
    """Matrix-of-moments negativity of a signal histogram.

    By default the error is the entrywise propagation of the moment errors.
    With ``covariance=True`` it is the exact random error of v^T M v for the
    fixed eigenvector v, which is itself a linear statistic of the clicks.
    """
    res = negativity(estimate_moment_matrix(hist, size))
    if not covariance:
        return res
    g = negativity_weights(res.eigvec, hist.bins)
    _, sigma = linear_statistic(g, hist.counts / hist.total, hist.total)
    return NegativityResult(res.value, sigma, res.eigvec)


def negativity_weights(v: np.ndarray, N: int) -> np.ndarray:
    """Per-click weights g_k with v^T M v = sum_k g_k c_k."""
    q = v.size - 1
    a = np.zeros(2 * q + 1)
    for i in range(q + 1):
        for j in range(q + 1):
            a[i + j] += v[i] * v[j]
    return a @ moment_weights(N)[: 2 * q + 1]


def fixed_vector_negativity(v: np.ndarray, size: int | None = None) -> Callable[[ClickHistogram], float]:
    """Statistic v^T M v with the eigenvector held fixed, for resampling."""

    def stat(h: ClickHistogram) -> float:
        M = estimate_moment_matrix(h, size)
        return float(v @ M.values @ v)

    return stat


def bootstrap_sigma(hist: ClickHistogram, statistic: Callable[[ClickHistogram], float], resamples: int = 200, seed: int = 0) -> float:
    """Standard deviation of ``statistic`` over multinomial resamples of ``hist``."""
    if resamples < 100:
        raise InvalidArgument("bootstrap needs at least 100 resamples")
    _require(hist, "bootstrap")
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(hist.total, hist.counts / hist.total, size=resamples)
    values = np.array([statistic(ClickHistogram(d)) for d in draws])
    return float(values.std(ddof=1))


def chi2_pvalue(hist: ClickHistogram, probs: np.ndarray, min_expected: float = 5.0) -> float:
    """Pearson chi-square p-value, pooling sparse bins until each expects >= min_expected."""
    expected = hist.total * np.asarray(probs, dtype=float)
    obs_groups, exp_groups = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(hist.counts, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_groups.append(o_acc)
            exp_groups.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_groups:
            obs_groups[-1] += o_acc
            exp_groups[-1] += e_acc
        else:
            obs_groups.append(o_acc)
            exp_groups.append(e_acc)
    if len(exp_groups) < 2:
        return 1.0
    exp_arr = np.array(exp_groups)
    exp_arr *= sum(obs_groups) / exp_arr.sum()
    return float(stats.chisquare(obs_groups, exp_arr).pvalue)


def blockwise_sigma_P(blocks: Iterable[np.ndarray], pattern: HeraldPattern) -> float:
    """Spread of per-block success fractions divided by sqrt(number of blocks)."""
    k = np.array(pattern.clicks_per_pass)
    fractions = [np.mean(np.all(b[:, : len(k)] == k, axis=1)) for b in blocks]
    if len(fractions) < 2:
        raise InsufficientData("need at least two blocks")
    return float(np.std(fractions, ddof=1) / math.sqrt(len(fractions)))


# ---------------------------------------------------------------------------
# parameter fit

FIT_PARAMS = ("zeta", "eta", "eta_prime", "eta_loop")


@dataclass
class FitResult:
    zetas: list[float]
    eta: float
    eta_prime: float
    eta_loop: float
    stderr: dict[str, float | list[float]]
    residual_norm: float
    chi2: float
    dof: int
    identifiable: bool
    nfev: int
    configs: list[LoopConfig] = field(default_factory=list)


def _logit(p):
    return math.log(p / (1 - p))


def _expit(u):
    return 1 / (1 + math.exp(-u))


class _FitProblem:
    def __init__(self, tallies, free, start, herald_bins, signal_bins, min_count):
        self.tallies = tallies
        self.free = set(free)
        self.start = dict(start)
        self.herald_bins = herald_bins
        self.signal_bins = signal_bins
        self.observed = []
        for tally in tallies:
            rows = []
            for pat in tally.patterns():
                cond = tally.condition(pat)
                if cond.matches < min_count:
                    continue
                dist = estimate_statistics(cond.hist)
                floor = 1.0 / cond.matches
                rows.append((HeraldPattern(pat), cond.P, max(cond.sigma_P, 1.0 / tally.total), dist.probs, np.maximum(dist.sigmas, floor)))
            self.observed.append(rows)
        zetas = start["zeta"]
        self.zeta0 = list(zetas) if isinstance(zetas, (list, tuple)) else [zetas] * len(tallies)

    def pack(self, zetas, eta, eta_prime, eta_loop):
        u = []
        if "zeta" in self.free:
            u += [math.log(z) for z in zetas]
        for name, val in (("eta", eta), ("eta_prime", eta_prime), ("eta_loop", eta_loop)):
            if name in self.free:
                u.append(_logit(val))
        return np.array(u)

    def unpack(self, u):
        u = list(u)
        zetas = [math.exp(u.pop(0)) for _ in self.zeta0] if "zeta" in self.free else list(self.zeta0)
        vals = {}
        for name in ("eta", "eta_prime", "eta_loop"):
            vals[name] = _expit(u.pop(0)) if name in self.free else self.start[name]
        return zetas, vals["eta"], vals["eta_prime"], vals["eta_loop"]

    def configs(self, u):
        zetas, eta, eta_prime, eta_loop = self.unpack(u)
        return [
            LoopConfig(
                gain_from_zeta(z),
                DetectorConfig(self.herald_bins, eta_prime),
                DetectorConfig(self.signal_bins, eta),
                eta_loop,
            )
            for z in zetas
        ]

    def residuals(self, u):
        res = []
        for cfg, tally, rows in zip(self.configs(u), self.tallies, self.observed):
            for pat, P_obs, sP, c_obs, sc in rows:
                P, state = run_pattern(cfg, pat, passes=tally.passes, exact=False)
                res.append((P_obs - P) / sP)
                c = signal_click_probs(state, cfg.signal_det)[0] if state is not None else np.zeros_like(c_obs)
                res.extend((c_obs - c) / sc)
        return np.array(res)


def fit_parameters(
    datasets: Sequence,
    free: Sequence[str] = FIT_PARAMS,
    start: dict | None = None,
    herald_bins: int = 4,
    signal_bins: int = 8,
    min_count: int = 100,
    max_iter: int = 4000,
) -> FitResult:
    """Least-squares fit of squeezing and efficiencies to heralded click data.

    Each dataset is a ``RecordTally`` (or anything ``tally_records`` accepts)
    taken at its own squeezing; the three efficiencies are shared.  The
    objective stacks inverse-sigma weighted residuals of every sufficiently
    populated pattern probability and its signal click distribution.  A
    Nelder-Mead simplex gets close, Levenberg-Marquardt with a finite
    difference Jacobian finishes.
    """
    unknown = set(free) - set(FIT_PARAMS)
    if unknown:
        raise InvalidArgument(f"unknown fit parameters {sorted(unknown)}")
    start = {"zeta": 0.2, "eta": 0.5, "eta_prime": 0.5, "eta_loop": 0.7, **(start or {})}
    tallies = [tally_records(d, signal_bins=signal_bins) for d in datasets]
    prob = _FitProblem(tallies, free, start, herald_bins, signal_bins, min_count)
    u0 = prob.pack(prob.zeta0, start["eta"], start["eta_prime"], start["eta_loop"])
    nres = sum(len(rows) * (signal_bins + 2) for rows in prob.observed)
    if nres < len(u0):
        raise InsufficientData(f"{nres} observables for {len(u0)} free parameters")
    if len(u0) == 0:
        raise InvalidArgument("nothing to fit")

    def cost(u):
        try:
            r = prob.residuals(u)
        except (ArithmeticError, ValueError):
            return 1e300
        return float(r @ r)

    simplex = optimize.minimize(cost, u0, method="Nelder-Mead", options={"maxiter": max_iter, "xatol": 1e-4, "fatol": 1e-3})
    try:
        lsq = optimize.least_squares(prob.residuals, simplex.x, method="lm", max_nfev=200 * (len(u0) + 1))
    except (ArithmeticError, ValueError) as exc:
        raise FitFailure(f"refinement failed: {exc}", {"simplex": simplex.x.tolist()}) from exc
    if lsq.status <= 0:
        raise FitFailure(f"fit did not converge: {lsq.message}", {"x": lsq.x.tolist(), "cost": float(lsq.cost)})

    J = lsq.jac
    JTJ = J.T @ J
    cond = np.linalg.cond(JTJ)
    zetas, eta, eta_prime, eta_loop = prob.unpack(lsq.x)
    # Delta method from the transformed coordinates back to physical ones.
    deriv = []
    if "zeta" in prob.free:
        deriv += list(zetas)
    for name, val in (("eta", eta), ("eta_prime", eta_prime), ("eta_loop", eta_loop)):
        if name in prob.free:
            deriv.append(val * (1 - val))
    deriv = np.array(deriv)
    chi2 = float(lsq.fun @ lsq.fun)
    dof = max(len(lsq.fun) - len(u0), 1)
    if np.isfinite(cond) and cond < 1e14:
        cov = np.linalg.inv(JTJ) * max(chi2 / dof, 1.0)
        se = np.sqrt(np.abs(np.diag(cov))) * np.abs(deriv)
    else:
        se = np.full(len(u0), np.inf)
    stderr: dict = {}
    i = 0
    if "zeta" in prob.free:
        stderr["zeta"] = se[: len(zetas)].tolist()
        i = len(zetas)
    values = []
    for name, val in (("eta", eta), ("eta_prime", eta_prime), ("eta_loop", eta_loop)):
        if name in prob.free:
            stderr[name] = float(se[i])
            values.append((se[i], val))
            i += 1
    if "zeta" in prob.free:
        values += list(zip(se[: len(zetas)], zetas))
    identifiable = bool(cond < 1e10 and all(s < 0.5 * abs(v) for s, v in values))
    return FitResult(
        zetas, eta, eta_prime, eta_loop, stderr, float(np.linalg.norm(lsq.fun)), chi2, dof,
        identifiable, int(simplex.nfev + lsq.nfev), prob.configs(lsq.x),
    )


# ---------------------------------------------------------------------------
# tables


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _round12(value):
    if isinstance(value, (float, np.floating)):
        return float(f"{float(value):.12g}")
    if isinstance(value, np.integer):
        return int(value)
    return value


def emit_table(rows: Sequence[dict], path, fmt: str = "csv", columns: Sequence[str] = RESULT_COLUMNS, meta: dict | None = None):
    """Write result rows with a fixed column order and 12 significant digits.

    CSV files start with a ``#``-prefixed JSON line holding ``meta``; JSON
    files carry it under the ``"meta"`` key.  ``path`` may be an open text
    stream.
    """
    if not rows:
        raise InvalidArgument("no results to write")
    if fmt not in ("csv", "json"):
        raise InvalidArgument(f"unknown table format {fmt!r}")
    meta = meta or {}
    buf = io.StringIO()
    if fmt == "csv":
        buf.write("#" + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    else:
        doc = {"meta": meta, "columns": list(columns), "rows": [{c: _round12(row.get(c)) for c in columns} for row in rows]}
        buf.write(json.dumps(doc, indent=1, allow_nan=True) + "\n")
    text = buf.getvalue()
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return text


def _parse(cell: str):
    for conv in (int, float):
        try:
            return conv(cell)
        except ValueError:
            pass
    return cell


def read_table(path) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        text = fh.read()
    if text.startswith("#"):
        first, rest = text.split("\n", 1)
        meta = json.loads(first[1:])
        reader = csv.DictReader(io.StringIO(rest))
        return meta, [{k: _parse(v) for k, v in row.items()} for row in reader]
    doc = json.loads(text)
    return doc["meta"], doc["rows"]


def pattern_row(pattern: HeraldPattern, cond: Conditioned, target: ClickDistribution, size: int | None = None) -> dict:
    """One summary row per pattern; estimator fields are NaN when the pattern is too rare."""
    row = {"pattern": str(pattern), "n": pattern.n, "t": pattern.t, "P": cond.P, "sigma_P": cond.sigma_P}
    try:
        F, sF = estimate_fidelity(cond.hist, target)
        neg = estimate_negativity(cond.hist, size)
        row.update(F=F, sigma_F=sF, negativity=neg.value, sigma_N=neg.sigma, significance=neg.significance)
        row["status"] = "ok"
    except InsufficientData:
        row.update({c: float("nan") for c in ("F", "sigma_F", "negativity", "sigma_N", "significance")})
        row["status"] = "insufficient-data"
    return row
