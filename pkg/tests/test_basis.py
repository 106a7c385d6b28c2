"""Beamspace/temporal expansions and SSI-set arithmetic."""

import math

import numpy as np
import pytest

from stbem.basis import (
    BemConfig,
    SsiSet,
    asymptotic_ssi_size,
    basis_matrix,
    block_support_size,
    cebem_fit,
    contiguous_support_size,
    dft_beamspace,
    fit_block,
    inverse_beamspace,
    power_support_size,
    ssi_from_angles,
    ssi_interval,
    stbem_reconstruct,
)
from stbem.channel import SpatialState, generate_block, steering_vector
from stbem.config import SystemConfig


def _fig3_block(seed=0):
    cfg = SystemConfig(K=1, G=1)
    rng = np.random.default_rng(seed)
    sp = SpatialState(math.radians(28.0), math.radians(2.0))
    return cfg, generate_block(cfg, [sp], 0, rng)


def test_dft_unitary_and_roundtrip():
    rng = np.random.default_rng(0)
    h = rng.standard_normal((64, 5)) + 1j * rng.standard_normal((64, 5))
    ht = dft_beamspace(h)
    assert np.linalg.norm(ht) == pytest.approx(np.linalg.norm(h), rel=1e-12)
    assert np.allclose(inverse_beamspace(ht), h, atol=1e-12)


def test_dft_on_grid_steering_hits_single_bin():
    cfg = SystemConfig()
    theta = math.asin(30 / 64)
    ht = dft_beamspace(steering_vector(cfg, theta))
    assert abs(ht[30]) == pytest.approx(math.sqrt(cfg.M), rel=1e-12)
    assert np.delete(np.abs(ht), 30).max() < 1e-9


def test_dft_single_antenna_impulse_is_flat():
    e0 = np.zeros(128)
    e0[0] = 1.0
    ht = dft_beamspace(e0)
    assert np.allclose(np.abs(ht), 1 / math.sqrt(128), atol=1e-12)


def test_ssi_from_angles_examples():
    cfg = SystemConfig()
    s = ssi_from_angles(cfg, 0.0, 0.0)
    assert (s.center, s.size) == (0, 1)
    s28 = ssi_from_angles(cfg, math.radians(28.0), 0.0)
    assert s28.center == 30
    spread = ssi_from_angles(cfg, math.radians(28.0), math.radians(1.0))
    assert (spread.lo, spread.hi) == (29, 32)
    assert asymptotic_ssi_size(cfg, math.radians(28.0), math.radians(1.0)) == 2


def test_ssi_from_angles_rejects_endfire():
    cfg = SystemConfig()
    with pytest.raises(ValueError):
        ssi_from_angles(cfg, math.radians(89.0), math.radians(2.0))


def test_ssi_wrapping_and_membership():
    s = SsiSet(lo=-3, hi=2, center=0, m=128)
    assert s.wraps
    assert set(s.bins().tolist()) == {125, 126, 127, 0, 1, 2}
    assert s.contains(126) and s.contains(1) and not s.contains(5)
    t = ssi_interval(127, 4, 128)
    assert t.size == 4 and t.contains(127)


def test_ssi_padded_reaches_exact_size():
    s = SsiSet(lo=10, hi=12, center=11, m=64)
    p = s.padded(7)
    assert p.size == 7 and p.lo <= 10 and p.hi >= 12
    q = s.padded(1)
    assert q.size == 1 and q.center == 11


def test_bem_config_rounds_odd_order_up():
    assert BemConfig(mu=3, N=50).mu == 4
    assert BemConfig.for_system(SystemConfig()).mu == 4


def test_basis_matrix_patterns():
    bem = BemConfig(mu=4, N=100)
    c0 = basis_matrix(bem, 0)
    assert np.allclose(c0, 1.0)
    flat = basis_matrix(BemConfig(mu=0, N=100), [0, 10, 99])
    assert np.allclose(flat, 1.0)
    c25 = basis_matrix(bem, 25)[:, 0]
    assert c25[2] == pytest.approx(1.0)
    assert c25[3] == pytest.approx(np.conj(c25[1]), abs=1e-12)
    assert c25[4] == pytest.approx(np.conj(c25[0]), abs=1e-12)


def test_cebem_fit_recovers_pure_tone():
    bem = BemConfig(mu=4, N=100)
    n = np.arange(100)
    for r in range(5):
        series = np.exp(2j * np.pi * (r - 2) * n / 100)
        gamma = cebem_fit(series, bem)
        expected = np.zeros(5)
        expected[r] = 1.0
        assert np.allclose(gamma, expected, atol=1e-10)


def test_cebem_fit_constant_series():
    bem = BemConfig(mu=4, N=100)
    gamma = cebem_fit(np.full(100, 2.5 + 1j), bem)
    assert gamma[2] == pytest.approx(2.5 + 1j, abs=1e-10)
    assert np.abs(np.delete(gamma, 2)).max() < 1e-10


def test_cebem_fit_needs_enough_samples():
    with pytest.raises(ValueError):
        cebem_fit(np.ones(3), BemConfig(mu=4, N=100))


def test_cebem_order_comparison_fig3_config():
    # tracked-bin fit error: mu=4 well below 5e-2 and at least 10x under mu=2
    errs = {2: [], 4: []}
    for seed in range(20):
        _, block = _fig3_block(seed)
        ht = dft_beamspace(block.h[0])
        qc = int(np.argmax(np.mean(np.abs(ht) ** 2, axis=1)))
        series = ht[qc]
        for mu in (2, 4):
            bem = BemConfig(mu=mu, N=100)
            gamma = cebem_fit(series, bem)
            fit = gamma @ basis_matrix(bem, np.arange(100))
            errs[mu].append(np.sum(np.abs(series - fit) ** 2) / np.sum(np.abs(series) ** 2))
        assert errs[4][-1] < errs[2][-1]  # strictly better on every seed
    assert np.mean(errs[4]) <= 5e-2
    assert np.mean(errs[2]) >= 10 * np.mean(errs[4])


def test_cebem_error_nonincreasing_in_mu():
    _, block = _fig3_block(3)
    series = dft_beamspace(block.h[0])[30]
    errs = []
    for mu in (2, 4, 6, 8):
        bem = BemConfig(mu=mu, N=100)
        fit = cebem_fit(series, bem) @ basis_matrix(bem, np.arange(100))
        errs.append(float(np.sum(np.abs(series - fit) ** 2)))
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


def test_stbem_reconstruct_zero_and_single_bin():
    bem = BemConfig(mu=4, N=100)
    ssi = ssi_interval(30, 5, 128)
    zeros = stbem_reconstruct(np.zeros((128, 5), complex), ssi, bem, np.arange(10))
    assert np.allclose(zeros, 0.0)
    gamma = np.zeros((128, 5), complex)
    gamma[30, 2] = 1.0  # gamma^T c_n == 1 for every n
    out = stbem_reconstruct(gamma, ssi_interval(30, 1, 128), bem, 7)
    f30 = np.exp(2j * np.pi * np.arange(128) * 30 / 128) / math.sqrt(128)
    assert np.allclose(out, f30, atol=1e-12)


def test_fit_then_reconstruct_tracks_its_bins():
    # temporal fit quality on the supported subspace, Fig. 3 configuration
    from stbem.astrack import implied_support

    cfg = SystemConfig(K=1, G=1)
    bem = BemConfig(mu=4, N=100)
    vals = []
    for seed in range(10):
        _, block = _fig3_block(seed)
        ht = dft_beamspace(block.h[0])
        ssi = implied_support(cfg, math.radians(28.0), math.radians(2.0), 0.98)
        coeff = fit_block(ht, ssi, bem)
        rec = stbem_reconstruct(coeff, ssi, bem, np.arange(100))
        qc = int(np.argmax(np.mean(np.abs(ht) ** 2, axis=1)))
        rec_bin = dft_beamspace(rec)[qc]
        vals.append(np.sum(np.abs(ht[qc] - rec_bin) ** 2) / np.sum(np.abs(ht[qc]) ** 2))
    assert np.mean(vals) <= 5e-2


def test_monotone_coverage_in_spread():
    cfg = SystemConfig(K=1, G=1)
    rng = np.random.default_rng(9)
    sp = SpatialState(math.radians(28.0), math.radians(2.0))
    block = generate_block(cfg, [sp], 0, rng)
    pw = np.mean(np.abs(dft_beamspace(block.h[0])) ** 2, axis=1)
    fracs = []
    for dth in (0.5, 1.0, 2.0, 4.0, 8.0):
        ssi = ssi_from_angles(cfg, sp.central_doa, math.radians(dth))
        fracs.append(pw[ssi.bins()].sum() / pw.sum())
    assert all(a <= b + 1e-12 for a, b in zip(fracs, fracs[1:]))


def test_support_size_helpers():
    pw = np.array([0.5, 0.25, 0.15, 0.05, 0.05])
    assert power_support_size(pw, 0.5) == 1
    assert power_support_size(pw, 0.75) == 2
    assert power_support_size(pw, 0.9) == 3
    assert contiguous_support_size(np.array([1.0, 8.0, 1.0, 0.0]), 0.79) == 1
    assert contiguous_support_size(np.array([1.0, 8.0, 1.0, 0.0]), 0.9) == 2
    # wraparound window: bins 3 and 0 together hold 6 of 8
    assert contiguous_support_size(np.array([2.0, 1.0, 1.0, 4.0]), 0.75) == 2
    ht = np.stack([np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])], axis=1)
    assert block_support_size(ht, 0.9) == 2
