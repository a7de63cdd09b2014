import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heraldloop.detector import (
    ClickDistribution,
    DetectorConfig,
    bhattacharyya,
    fock_click_distribution,
    povm_terms,
    stirling2,
)
from heraldloop.errors import InvalidArgument, NumericalFailure
from heraldloop.expop import ExpOpMixture, kernel, trace
from heraldloop.mcsim import click_kernel
from heraldloop.protocol import dh_click_closed


def enumerate_clicks(n, N):
    counts = [0] * (N + 1)
    for cells in itertools.product(range(N), repeat=n):
        counts[len(set(cells))] += 1
    return [Fraction(c, N**n) for c in counts]


def brute_stirling(n, k):
    count = 0
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) == k:
            count += 1
    # Surjections onto k labelled blocks, divided by k! for unlabelled blocks.
    return count // math.factorial(k)


def test_stirling_values():
    assert stirling2(0, 0) == 1
    assert stirling2(3, 2) == 3
    assert stirling2(2, 5) == 0


@pytest.mark.parametrize("n,k", [(4, 2), (5, 3), (6, 4), (7, 1)])
def test_stirling_brute(n, k):
    assert stirling2(n, k) == brute_stirling(n, k)


def test_stirling_overflow():
    with pytest.raises(OverflowError):
        stirling2(65, 3)


def test_povm_no_click():
    assert povm_terms(0, DetectorConfig(4)) == [(1, 0.0)]


def test_povm_one_click():
    assert sorted(povm_terms(1, DetectorConfig(4))) == [(-4, 0.0), (4, 0.25)]


def test_povm_rejects():
    with pytest.raises(InvalidArgument):
        povm_terms(5, DetectorConfig(4))


def test_detector_config_rejects():
    with pytest.raises(InvalidArgument):
        DetectorConfig(0)
    with pytest.raises(InvalidArgument):
        DetectorConfig(4, 1.2)


def test_fock_vacuum():
    assert fock_click_distribution(0, DetectorConfig(8)).probs[0] == 1.0


def test_fock_two_photons():
    p = fock_click_distribution(2, DetectorConfig(8)).probs
    assert (p[1], p[2]) == (0.125, 0.875)


def test_fock_three_photons():
    p = fock_click_distribution(3, DetectorConfig(8)).probs
    ref = enumerate_clicks(3, 8)
    assert (p[1], p[2], p[3]) == (0.015625, 0.328125, 0.65625)
    assert [Fraction(x) for x in p] == ref


@pytest.mark.parametrize("n", range(13))
@pytest.mark.parametrize("N", [2, 4, 8])
@pytest.mark.parametrize("eta", [0.38, 0.75, 1.0])
def test_fock_normalized(n, N, eta):
    assert fock_click_distribution(n, DetectorConfig(N, eta)).probs.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n", range(1, 7))
def test_fock_mean_increases_with_efficiency(n):
    means = [fock_click_distribution(n, DetectorConfig(8, eta)).mean_clicks() for eta in np.linspace(0.05, 1, 12)]
    assert all(b > a for a, b in zip(means, means[1:]))


@pytest.mark.parametrize("n", range(9))
@pytest.mark.parametrize("N", [2, 4, 8])
@pytest.mark.parametrize("eta", [0.38, 1.0])
def test_fock_matches_chain_kernel(n, N, eta):
    det = DetectorConfig(N, eta)
    np.testing.assert_allclose(fock_click_distribution(n, det).probs, click_kernel(n, det), atol=1e-12, rtol=0)


@pytest.mark.parametrize("n,N,eta", [(3, 8, 1.0), (5, 4, 0.38), (6, 8, 0.75)])
def test_fock_matches_sampling(n, N, eta):
    rng = np.random.default_rng(1234)
    shots = 1_000_000
    survivors = rng.binomial(n, eta, size=shots)
    cells = rng.integers(0, N, size=(shots, n))
    mask = np.arange(n)[None, :] < survivors[:, None]
    hit = np.zeros((shots, N), dtype=bool)
    rows = np.repeat(np.arange(shots), n).reshape(shots, n)
    hit[rows[mask], cells[mask]] = True
    counts = np.bincount(hit.sum(axis=1), minlength=N + 1)
    p = fock_click_distribution(n, DetectorConfig(N, eta)).probs
    sigma = np.sqrt(p * (1 - p) / shots)
    emp = counts / shots
    assert np.all(np.abs(emp - p) <= 4 * sigma + 1e-12)


def test_bhattacharyya_identical():
    c = fock_click_distribution(3, DetectorConfig(8, 0.5))
    assert bhattacharyya(c, c) == pytest.approx(1.0, abs=1e-15)


def test_bhattacharyya_disjoint():
    c = ClickDistribution(np.array([1.0, 0, 0]))
    d = ClickDistribution(np.array([0.0, 1, 0]))
    assert bhattacharyya(c, d) == 0.0


def test_bhattacharyya_mismatch():
    with pytest.raises(InvalidArgument):
        bhattacharyya(ClickDistribution(np.array([1.0, 0])), ClickDistribution(np.array([1.0, 0, 0])))


def test_bhattacharyya_unit_gain_limit():
    target = fock_click_distribution(2, DetectorConfig(8))
    gaps = [1 - bhattacharyya(target, dh_click_closed(1 + eps, 2, 4, 8)) for eps in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    # The gap closes linearly in gamma - 1.
    assert gaps[-1] < 1e-4
    assert gaps[-1] / gaps[-2] == pytest.approx(0.1, rel=0.05)


def test_distribution_rejects_negative():
    with pytest.raises(NumericalFailure):
        ClickDistribution(np.array([1.1, -0.1]))


def test_distribution_clips_rounding():
    c = ClickDistribution(np.array([1.0, -1e-14]))
    assert c.probs[1] == 0.0


dist_st = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=10).filter(lambda v: sum(v) > 0.1)
mixture_st = st.lists(st.tuples(st.floats(0.01, 5.0), st.floats(0.0, 0.95)), min_size=1, max_size=6)


@given(dist_st, dist_st)
def test_bhattacharyya_symmetric(a, b):
    n = min(len(a), len(b))
    c = ClickDistribution(np.array(a[:n]) / sum(a[:n])) if sum(a[:n]) > 0 else None
    d = ClickDistribution(np.array(b[:n]) / sum(b[:n])) if sum(b[:n]) > 0 else None
    if c is None or d is None:
        return
    assert bhattacharyya(c, d) == bhattacharyya(d, c)


@given(mixture_st, st.integers(1, 8), st.floats(0.0, 1.0))
def test_povm_complete(terms, N, eta):
    m = ExpOpMixture.from_terms(terms)
    det = DetectorConfig(N, eta)
    total = sum(coef * kernel(m, x) for k in range(N + 1) for coef, x in povm_terms(k, det))
    assert total == pytest.approx(trace(m), rel=1e-12, abs=1e-12)
