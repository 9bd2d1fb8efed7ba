"""Large-scale models, shadowing, LOS behavior, and small-scale draws.

Monte-Carlo checks use fixed seeds and tolerances sized to the sample
counts; closed-form anchors are frozen from independent computations.
"""

import math

import numpy as np
import pytest

from cfurllc.channel import (
    GuChannelConfig,
    UavChannelConfig,
    build_channel_state,
    correlated_shadowing,
    draw_channel,
    gu_large_scale_db,
    steering_vector,
    uav_link_params,
    uav_los_probability,
)
from cfurllc.channel import LinkParams
from cfurllc.scenario import AreaConfig, generate_scenario


def test_gu_large_scale_anchor():
    # Frozen: -36.7*log10(100) - 22.7*log10(1.9) computed independently.
    assert gu_large_scale_db(100.0, 1.9) == pytest.approx(-79.72770674162922, abs=1e-9)


def test_gu_large_scale_slope():
    # 36.7 dB per decade of distance.
    d1 = gu_large_scale_db(10.0, 1.9)
    d2 = gu_large_scale_db(100.0, 1.9)
    assert d1 - d2 == pytest.approx(36.7, abs=1e-12)
    # Shadowing enters additively.
    assert gu_large_scale_db(50.0, 1.9, shadow_db=3.5) == pytest.approx(
        gu_large_scale_db(50.0, 1.9) + 3.5, abs=1e-12
    )


def test_gu_large_scale_rejects_nonpositive():
    with pytest.raises(ValueError):
        gu_large_scale_db(0.0, 1.9)
    with pytest.raises(ValueError):
        gu_large_scale_db(10.0, 0.0)


def test_shadowing_marginal_and_correlation():
    # Two users corr_dist apart share correlation 2^-1 = 0.5; far users ~0.
    pos = np.array([[0.0, 0.0, 1.65], [9.0, 0.0, 1.65], [500.0, 500.0, 1.65]])
    n_draws = 20000
    rng_seed = np.random.SeedSequence(21)
    samples = np.empty((n_draws, 3))
    seeds = rng_seed.spawn(n_draws)
    for i in range(n_draws):
        samples[i] = correlated_shadowing(
            pos, n_aps=1, sigma_db=4.0, corr_dist_m=9.0, seed=seeds[i]
        )[:, 0]
    std = samples.std(axis=0)
    assert np.all(np.abs(std - 4.0) < 0.15)
    corr = np.corrcoef(samples.T)
    assert corr[0, 1] == pytest.approx(0.5, abs=0.05)
    assert abs(corr[0, 2]) < 0.05


def test_shadowing_independent_across_aps():
    pos = np.array([[0.0, 0.0, 1.65], [3.0, 0.0, 1.65]])
    draws = np.array(
        [
            correlated_shadowing(pos, n_aps=2, sigma_db=4.0, corr_dist_m=9.0, seed=s)
            for s in np.random.SeedSequence(22).spawn(8000)
        ]
    )
    corr = np.corrcoef(draws[:, 0, 0], draws[:, 0, 1])[0, 1]
    assert abs(corr) < 0.05


def test_shadowing_covariance_matches_kernel():
    # Empirical covariance of user pairs approaches sigma^2 * 2^(-r/corr).
    pos = np.array([[0.0, 0.0, 1.65], [4.5, 0.0, 1.65], [18.0, 0.0, 1.65]])
    draws = np.array(
        [
            correlated_shadowing(pos, n_aps=1, sigma_db=4.0, corr_dist_m=9.0, seed=s)[:, 0]
            for s in np.random.SeedSequence(23).spawn(20000)
        ]
    )
    cov = np.cov(draws.T)
    expect_01 = 16.0 * 2.0 ** (-4.5 / 9.0)
    expect_02 = 16.0 * 2.0 ** (-18.0 / 9.0)
    assert cov[0, 1] == pytest.approx(expect_01, rel=0.05)
    assert cov[0, 2] == pytest.approx(expect_02, rel=0.12)


def test_uav_los_probability_regimes():
    cfg = UavChannelConfig()
    # At or above the LOS ceiling height the link is always line-of-sight.
    assert uav_los_probability(5000.0, 100.0, cfg) == 1.0
    assert uav_los_probability(5000.0, 250.0, cfg) == 1.0
    # Below: 1 inside the close-in radius, decreasing with distance.
    h = 60.0
    p_close = uav_los_probability(1.0, h, cfg)
    assert p_close == 1.0
    d = np.linspace(50, 2000, 40)
    p = np.array([uav_los_probability(x, h, cfg) for x in d])
    assert np.all(np.diff(p) <= 1e-12)
    assert np.all((p >= 0) & (p <= 1))
    # Higher platforms see more LOS at the same ground distance.
    p_low = uav_los_probability(800.0, 30.0, cfg)
    p_high = uav_los_probability(800.0, 90.0, cfg)
    assert p_high > p_low


def test_uav_los_frequency_matches_probability():
    cfg = UavChannelConfig()
    uav = np.array([300.0, 0.0, 60.0])
    ap = np.array([0.0, 0.0, 10.0])
    p_expect = uav_los_probability(300.0, 60.0, cfg)
    draws = [
        uav_link_params(uav, ap, 1.9, 1000.0, cfg, seed=s).is_los
        for s in np.random.SeedSequence(31).spawn(10000)
    ]
    assert np.mean(draws) == pytest.approx(p_expect, abs=0.02)


def test_uav_link_params_branches():
    cfg = UavChannelConfig(shadow_sigma_db=0.0)
    uav = np.array([200.0, 0.0, 50.0])
    ap = np.array([0.0, 0.0, 10.0])
    d3d = math.sqrt(200.0**2 + 40.0**2)
    los_db = -22.0 * math.log10(d3d) - 22.7 * math.log10(1.9)
    nlos_db = -35.0 * math.log10(d3d) - 22.7 * math.log10(1.9)
    seen = set()
    for s in np.random.SeedSequence(33).spawn(400):
        lp = uav_link_params(uav, ap, 1.9, 1000.0, cfg, seed=s)
        if lp.is_los:
            assert lp.large_scale_db == pytest.approx(los_db, abs=1e-9)
            assert lp.rician_k == pytest.approx(10.0, abs=1e-12)
        else:
            assert lp.large_scale_db == pytest.approx(nlos_db, abs=1e-9)
            assert lp.rician_k == 0.0
        seen.add(lp.is_los)
    assert seen == {True, False}
    # Elevation angle of this geometry.
    lp = uav_link_params(uav, ap, 1.9, 1000.0, cfg, seed=0)
    assert lp.aoa == pytest.approx(math.atan2(40.0, 200.0), abs=1e-12)


def test_uav_link_rejects_out_of_range_height():
    cfg = UavChannelConfig()
    with pytest.raises(ValueError):
        uav_link_params(
            np.array([0.0, 0.0, 5.0]), np.array([0.0, 0.0, 10.0]), 1.9, 1000.0, cfg
        )


def test_steering_vector_anchors():
    # Broadside (theta = 0): all ones.
    assert np.allclose(steering_vector(0.0, 4), np.ones(4))
    # End-fire (theta = pi/2), 2 elements: (1, e^{j pi}) = (1, -1).
    v = steering_vector(math.pi / 2, 2)
    assert v[0] == pytest.approx(1.0)
    assert v[1].real == pytest.approx(-1.0, abs=1e-12)
    assert abs(v[1].imag) < 1e-12
    # Unit-modulus entries, norm sqrt(m).
    v8 = steering_vector(0.7, 8)
    assert np.allclose(np.abs(v8), 1.0)
    assert np.linalg.norm(v8) == pytest.approx(math.sqrt(8.0), rel=1e-15)


def test_draw_channel_mean_power():
    # E||h||^2 = beta*m for Rayleigh and Rician branches alike.
    m = 4
    for k, beta_db in ((0.0, -80.0), (10.0, -70.0)):
        lp = LinkParams(large_scale_db=beta_db, rician_k=k, los_phase=0.3, aoa=0.5, is_los=k > 0)
        beta = 10.0 ** (beta_db / 10.0)
        total = 0.0
        n = 10000
        for s in np.random.SeedSequence(int(k) + 40).spawn(n):
            h = draw_channel(lp, m, seed=s)
            total += float(np.vdot(h, h).real)
        assert total / n == pytest.approx(beta * m, rel=0.03)


def test_draw_channel_rician_mean_component():
    # The deterministic part is sqrt(beta*K/(K+1)) e^{j phase} a(aoa).
    lp = LinkParams(large_scale_db=-60.0, rician_k=10.0, los_phase=1.1, aoa=0.4, is_los=True)
    beta = 10.0 ** (-6.0)
    m = 3
    acc = np.zeros(m, dtype=complex)
    n = 20000
    for s in np.random.SeedSequence(51).spawn(n):
        acc += draw_channel(lp, m, seed=s)
    mean = acc / n
    expect = math.sqrt(beta * 10.0 / 11.0) * np.exp(1j * 1.1) * steering_vector(0.4, m)
    assert np.max(np.abs(mean - expect)) < 0.03 * np.linalg.norm(expect)


def test_build_channel_state_shapes_and_determinism():
    cfg = AreaConfig(ap_count=6, ap_antennas=3, gu_count=4, uav_count=2, serving_ap_count=2)
    scen = generate_scenario(cfg, seed=5)
    s1 = build_channel_state(scen, 1.9, GuChannelConfig(), UavChannelConfig(), seed=5)
    s2 = build_channel_state(scen, 1.9, GuChannelConfig(), UavChannelConfig(), seed=5)
    assert s1.h.shape == (6, 6, 3)
    assert s1.large_scale_db.shape == (6, 6)
    assert np.array_equal(s1.h, s2.h)
    assert np.array_equal(s1.large_scale_db, s2.large_scale_db)
    # Ground users are never line-of-sight in this model; aerial users carry
    # the Rician factor only on LOS links.
    assert np.all(s1.rician_k[:4, :] == 0.0)
    assert np.all(s1.rician_k[4:, :] >= 0.0)
    s3 = build_channel_state(scen, 1.9, GuChannelConfig(), UavChannelConfig(), seed=6)
    assert not np.array_equal(s1.h, s3.h)
