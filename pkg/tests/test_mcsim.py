import itertools
import math

import numpy as np
import pytest

from heraldloop import mcsim
from heraldloop.analysis import chi2_pvalue, tally_records
from heraldloop.detector import DetectorConfig, fock_click_distribution
from heraldloop.errors import CutoffExceeded, InvalidArgument
from heraldloop.expop import gain_from_zeta
from heraldloop.protocol import HeraldPattern, LoopConfig, dh_success_closed, fh_success_closed


def test_gain_no_pump():
    g = mcsim.gain_kernel(3, 0.0, 10)
    assert g[0] == 1.0 and g[1:].sum() == 0.0


def test_gain_vacuum_seed_is_geometric():
    lam = 0.07
    j = np.arange(30)
    np.testing.assert_allclose(mcsim.gain_kernel(0, lam, 29), (1 - lam) * lam**j, rtol=1e-12)


def test_gain_one_seed_mean():
    lam = gain_from_zeta(0.3).lam
    assert lam == pytest.approx(0.0848, abs=1e-4)
    g = mcsim.gain_kernel(1, lam, 200)
    assert np.arange(201) @ g == pytest.approx(2 * lam / (1 - lam), rel=1e-12)


def test_gain_one_seed_chain_reproduces_closed_form():
    cfg = LoopConfig.lossless(0.3)
    P, _, _ = mcsim.exact_chain(cfg, HeraldPattern((1, 1)))
    assert P == pytest.approx(fh_success_closed(cfg.squeeze.gamma, 2, 4), rel=1e-9)


def test_gain_rejects():
    with pytest.raises(InvalidArgument):
        mcsim.gain_kernel(0, 1.0, 5)


@pytest.mark.parametrize("m", [0, 5, 20])
@pytest.mark.parametrize("lam", [0.01, 0.1, 0.2])
def test_gain_rows_normalized(m, lam):
    assert mcsim.gain_kernel(m, lam, 400).sum() == pytest.approx(1.0, abs=mcsim.TAIL_TOL)


def test_loss_identity():
    np.testing.assert_array_equal(mcsim.loss_kernel(4, 1.0), [0, 0, 0, 0, 1])


def test_loss_single_photon():
    np.testing.assert_allclose(mcsim.loss_kernel(1, 0.6), [0.4, 0.6])


@pytest.mark.parametrize("a,b", [(0.6, 0.5), (0.38, 0.9), (1.0, 0.2)])
def test_loss_composes(a, b):
    L = mcsim.loss_matrix(25, a) @ mcsim.loss_matrix(25, b)
    np.testing.assert_allclose(L, mcsim.loss_matrix(25, a * b), atol=1e-12)


def test_click_vacuum():
    assert mcsim.click_kernel(0, DetectorConfig(8))[0] == 1.0


def test_click_two_photons():
    np.testing.assert_allclose(mcsim.click_kernel(2, DetectorConfig(8)), [0, 0.125, 0.875, 0, 0, 0, 0, 0, 0], atol=1e-15)


def test_click_sampled():
    rng = np.random.default_rng(5)
    shots = 1_000_000
    cells = rng.integers(0, 4, size=(shots, 5))
    clicks = np.array([len(set(r)) for r in map(tuple, cells[:200_000])])
    # The vectorised count below is checked against the set-based count on a slice.
    sorted_cells = np.sort(cells, axis=1)
    fast = 1 + np.count_nonzero(np.diff(sorted_cells, axis=1), axis=1)
    np.testing.assert_array_equal(fast[:200_000], clicks)
    emp = np.bincount(fast, minlength=5) / shots
    p = mcsim.click_kernel(5, DetectorConfig(4))
    assert np.all(np.abs(emp - p) <= 4 * np.sqrt(p * (1 - p) / shots) + 1e-15)


@pytest.mark.parametrize("n", range(10))
def test_click_equals_detector_formula(n):
    for det in (DetectorConfig(4, 0.36), DetectorConfig(8, 0.38), DetectorConfig(8)):
        np.testing.assert_allclose(mcsim.click_kernel(n, det), fock_click_distribution(n, det).probs, atol=1e-12)


def test_chain_no_pump():
    P, photons, clicks = mcsim.exact_chain(LoopConfig.lossless(0.0), HeraldPattern((0,)))
    assert P == 1.0 and photons.probs[0] == 1.0 and clicks.probs[0] == 1.0


def test_chain_dh_matches_closed_form():
    cfg = LoopConfig.lossless(0.3)
    P, _, _ = mcsim.exact_chain(cfg, HeraldPattern.dh(2))
    assert P == pytest.approx(dh_success_closed(cfg.squeeze.gamma, 2, 4), rel=1e-9)


def test_chain_fh_matches_pipeline_with_losses():
    from heraldloop.protocol import run_pattern, signal_distribution

    cfg = LoopConfig.lab(0.3, loop_eff=0.6)
    _, _, ref = mcsim.exact_chain(cfg, HeraldPattern.fh(2))
    _, state = run_pattern(cfg, HeraldPattern.fh(2))
    np.testing.assert_allclose(signal_distribution(state, cfg.signal_det).probs, ref.probs, atol=1e-9)


def test_chain_cutoff_ceiling():
    with pytest.raises(CutoffExceeded):
        mcsim.exact_chain(LoopConfig.lossless(1.5), HeraldPattern.dh(1), max_cutoff=40)


@pytest.mark.parametrize("t", [1, 2, 3])
def test_chain_conserves_probability(t):
    cfg = LoopConfig.lab(0.3, loop_eff=0.5)
    total = math.fsum(mcsim.exact_chain(cfg, HeraldPattern(p))[0] for p in itertools.product(range(5), repeat=t))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_squeezer_matrix_matches_gain():
    lam = gain_from_zeta(0.2).lam
    ref = mcsim.squeezer_matrix_probs(0.2, 2, 30)[:12]
    np.testing.assert_allclose(mcsim.gain_kernel(2, lam, 11), ref, atol=1e-12)


def test_sampler_no_pump():
    arr = mcsim.sample_array(LoopConfig.lossless(0.0), 3, 1000, seed=1)
    assert arr.shape == (1000, 4) and not arr.any()


def test_sampler_rejects_no_shots():
    with pytest.raises(InvalidArgument):
        next(mcsim.sample_blocks(LoopConfig.lossless(0.3), 1, 0, seed=1))


def test_sampler_records():
    recs = list(mcsim.sample_records(LoopConfig.lab(0.3, loop_eff=0.6), 2, 25, seed=3))
    arr = mcsim.sample_array(LoopConfig.lab(0.3, loop_eff=0.6), 2, 25, seed=3)
    assert [list(r.herald) + [r.signal] for r in recs] == arr.tolist()


def test_sampler_deterministic_across_workers():
    cfg = LoopConfig.lab(0.3, loop_eff=0.6)
    a = mcsim.sample_array(cfg, 2, 123_457, seed=9, workers=1)
    b = mcsim.sample_array(cfg, 2, 123_457, seed=9, workers=4)
    c = mcsim.sample_array(cfg, 2, 123_457, seed=9, workers=3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    assert not np.array_equal(a, mcsim.sample_array(cfg, 2, 123_457, seed=10))


def test_sampler_prefix_stable():
    cfg = LoopConfig.lab(0.2, loop_eff=0.6)
    long = mcsim.sample_array(cfg, 2, 25_000, seed=4)
    short = mcsim.sample_array(cfg, 2, 12_345, seed=4)
    np.testing.assert_array_equal(long[:12_345], short)


def test_sampler_single_click_rate():
    cfg = LoopConfig.lossless(0.3)
    shots = 10_000_000
    tally = tally_records(mcsim.sample_blocks(cfg, 1, shots, seed=21))
    P = fh_success_closed(cfg.squeeze.gamma, 1, 4)
    emp = tally.condition(HeraldPattern.dh(1)).P
    assert abs(emp - P) <= 4 * math.sqrt(P * (1 - P) / shots)


def test_sampler_signal_histogram(lab_cfg, lab_tally):
    pat = HeraldPattern.fh(2)
    _, _, clicks = mcsim.exact_chain(lab_cfg, pat)
    assert chi2_pvalue(lab_tally.histogram(pat), clicks.probs) > 1e-3


@pytest.mark.parametrize("zeta", [0.1, 0.2, 0.3])
@pytest.mark.parametrize("eta_loop", [0.5, 0.6])
def test_sampler_matches_chain_on_grid(zeta, eta_loop):
    cfg = LoopConfig.lab(zeta, loop_eff=eta_loop)
    shots = 10_000_000
    tally = tally_records(mcsim.sample_blocks(cfg, 4, shots, seed=int(100 * zeta + 10 * eta_loop)))
    checked = 0
    for pat in tally.patterns():
        P = mcsim.exact_chain(cfg, HeraldPattern(pat))[0]
        # Normal approximation needs a reasonably populated pattern.
        if P * shots < 25:
            continue
        emp = tally.histogram(pat).total / shots
        assert abs(emp - P) <= 5 * math.sqrt(P * (1 - P) / shots), pat
        checked += 1
    assert checked >= 5


def test_write_records(tmp_path):
    cfg = LoopConfig.lab(0.3, loop_eff=0.6)
    path = tmp_path / "r.csv"
    assert mcsim.write_records(path, cfg, 2, 15_000, seed=5) == 15_000
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "pass1,pass2,signal"
    assert len(lines) == 15_002
    body = np.loadtxt(lines[2:], delimiter=",", dtype=int)
    np.testing.assert_array_equal(body, mcsim.sample_array(cfg, 2, 15_000, seed=5))
