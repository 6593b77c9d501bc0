import math

import numpy as np
import pytest
import scipy.integrate as si
import scipy.special as sc

from panelloc.measurement import (
    ClutterParams,
    NoiseModel,
    amplitude_likelihood,
    aoa_std,
    detection_prob,
    fa_amplitude_density,
    los_tail_mass,
    marcum_q1,
    path_amplitude,
    range_std,
    synthesize_panel,
    synthesize_timestep,
)
from panelloc.rng import Purpose, StreamFactory
from panelloc.scenario import SPEED_OF_LIGHT, RadioConfig, default_scenario
from panelloc.geometry import los_visible


def marcum_quadrature(a, b):
    """Independent oracle: adaptive quadrature of the defining integral."""
    f = lambda t: t * sc.i0e(a * t) * np.exp(-((t - a) ** 2) / 2.0)
    val, err = si.quad(f, b, max(a, b) + 45.0, limit=500, epsabs=1e-13, epsrel=1e-12)
    assert err < 1e-10
    return val


def test_path_amplitude_reference_point():
    radio = RadioConfig(array_side=1, snr_ref_db=20.0)
    assert path_amplitude(1.0, False, radio) == pytest.approx(10.0)


def test_path_amplitude_free_space_decay():
    radio = RadioConfig(array_side=1, snr_ref_db=20.0)
    assert path_amplitude(10.0, False, radio) == pytest.approx(1.0)


def test_path_amplitude_reflection_loss():
    radio = RadioConfig(array_side=1, snr_ref_db=20.0)
    los = path_amplitude(5.0, False, radio, loss_db=6.0)
    refl = path_amplitude(5.0, True, radio, loss_db=6.0)
    assert refl / los == pytest.approx(10 ** (-0.3))


def test_path_amplitude_array_gain():
    r1 = RadioConfig(array_side=1, snr_ref_db=20.0)
    r25 = RadioConfig(array_side=5, snr_ref_db=20.0)
    assert path_amplitude(3.0, False, r25) / path_amplitude(3.0, False, r1) == pytest.approx(5.0)


def test_path_amplitude_zero_distance():
    with pytest.raises(ValueError):
        path_amplitude(0.0, False, RadioConfig())


def test_range_std_formula():
    want = math.sqrt(1.5) * SPEED_OF_LIGHT / (math.pi * 400e6 * 10.0)
    assert range_std(10.0, 400e6) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.029218, abs=1e-5)


def test_range_std_bandwidth_ordering():
    assert range_std(10.0, 40e6) == pytest.approx(10.0 * range_std(10.0, 400e6))


def test_range_std_high_snr_limit():
    assert range_std(1e9, 400e6) < 1e-9


def test_aoa_std_formula_5x5():
    radio = RadioConfig()  # 5x5, quarter-wave spacing at 28 GHz
    lam = radio.wavelength
    delta = lam / 4.0
    aperture = delta * math.sqrt(5 * 24 / 12.0)
    want = lam / (2.0 * math.sqrt(2.0) * math.pi * 10.0 * 1.0 * aperture)
    assert aoa_std(10.0, radio, 0.0) == pytest.approx(want, rel=1e-12)


def test_aoa_std_monotone_in_array_side():
    prev = None
    for side in (2, 5, 7, 10):
        cur = aoa_std(10.0, RadioConfig(array_side=side), 0.0)
        if prev is not None:
            assert cur < prev
        prev = cur


def test_aoa_std_amplitude_scaling():
    radio = RadioConfig()
    assert aoa_std(20.0, radio, 0.0) == pytest.approx(aoa_std(10.0, radio, 0.0) / 2.0)


def test_aoa_std_endfire_floor():
    radio = RadioConfig()
    assert aoa_std(10.0, radio, math.pi / 2, floor=0.1) == pytest.approx(aoa_std(10.0, radio, 0.0) / 0.1)


def test_marcum_central_case():
    for b in np.linspace(0.0, 6.0, 13):
        assert marcum_q1(0.0, b) == pytest.approx(math.exp(-b * b / 2.0), abs=1e-12)


def test_marcum_b_zero():
    for a in (0.0, 1.0, 7.0, 30.0):
        assert marcum_q1(a, 0.0) == 1.0


def test_marcum_q1_1_1_vs_quadrature():
    assert marcum_q1(1.0, 1.0) == pytest.approx(marcum_quadrature(1.0, 1.0), abs=1e-9)


def test_marcum_grid_vs_quadrature():
    for a in np.linspace(0.0, 30.0, 7):
        for b in np.linspace(0.0, 30.0, 7):
            assert marcum_q1(a, b) == pytest.approx(marcum_quadrature(a, b), abs=1e-9)


def test_marcum_domain():
    with pytest.raises(ValueError):
        marcum_q1(-0.1, 1.0)
    with pytest.raises(ValueError):
        marcum_q1(1.0, 51.0)


def test_detection_prob_rayleigh_case():
    u_th = 1.5
    assert los_tail_mass(0.0, u_th) == pytest.approx(math.exp(-u_th * u_th), abs=1e-9)


def test_detection_prob_clamp():
    assert detection_prob(50.0, 1.5) == 0.999


def test_detection_prob_matches_quadrature():
    got = detection_prob(1.0, 1.0)
    want = marcum_quadrature(math.sqrt(2.0), math.sqrt(2.0))
    assert got == pytest.approx(want, abs=1e-7)


def test_detection_prob_monotone():
    us = np.linspace(0, 20, 400)
    pd = detection_prob(us, 1.5)
    assert np.all(np.diff(pd) >= -1e-12)
    assert np.all(pd <= 0.999) and np.all(pd >= 0.0)


def test_detection_table_accuracy():
    gen = np.random.default_rng(0)
    us = gen.uniform(0, 12, 64)
    exact = np.array([marcum_quadrature(math.sqrt(2) * u, math.sqrt(2) * 1.5) for u in us])
    assert np.max(np.abs(los_tail_mass(us, 1.5) - exact)) < 1e-7


@pytest.mark.parametrize("u", [0.3, 1.0, 5.0, 11.0])
def test_amplitude_likelihood_normalization(u):
    u_th = 1.5
    val, err = si.quad(lambda z: amplitude_likelihood(z, u, u_th), u_th, u + 30.0, limit=300)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_amplitude_likelihood_mode_near_u():
    u, u_th = 8.0, 1.5
    zs = np.linspace(u_th, u + 5, 2000)
    dens = amplitude_likelihood(zs, np.full_like(zs, u), u_th)
    assert abs(zs[np.argmax(dens)] - u) < 0.1


def test_amplitude_likelihood_value_vs_quadrature():
    u, u_th, z = 1.0, 0.5, 1.2
    # quadrature-normalized oracle of the same truncated-Rician shape
    raw = lambda t: 2.0 * t * math.exp(-(t * t + u * u)) * sc.i0(2.0 * u * t)
    norm, _ = si.quad(raw, u_th, 40.0, limit=300)
    assert amplitude_likelihood(z, u, u_th) == pytest.approx(raw(z) / norm, rel=1e-6)


def test_amplitude_likelihood_below_threshold():
    with pytest.raises(ValueError):
        amplitude_likelihood(0.4, 1.0, 0.5)


def test_fa_density_normalization():
    val, err = si.quad(lambda z: fa_amplitude_density(z, 1.5), 1.5, 40.0)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_fa_density_at_threshold():
    assert fa_amplitude_density(1.5, 1.5) == pytest.approx(3.0)
    assert fa_amplitude_density(0.7, 0.7) == pytest.approx(1.4)


def test_fa_density_decreasing_tail():
    zs = np.linspace(1.6, 8.0, 100)
    dens = fa_amplitude_density(zs, 1.5)
    assert np.all(np.diff(dens) < 0)


def _noise_clutter(scn):
    return NoiseModel(radio=scn.radio), ClutterParams()


def test_synthesize_noise_free_exact():
    scn = default_scenario(j=4)
    noise, clutter = NoiseModel(radio=scn.radio), ClutterParams()
    streams = StreamFactory(0, 0)
    sets = synthesize_timestep(scn, 0, streams, clutter, noise, noise_free=True)
    assert len(sets) == 4
    agent = scn.positions[0]
    for ms in sets:
        panel = scn.panels[ms.panel_id - 1]
        if los_visible(agent, panel.position, scn.walls):
            i = ms.kinds.index("los")
            d_true = float(np.linalg.norm(agent - panel.position))
            assert abs(ms.items[i].d - d_true) < 1e-9


def test_synthesize_blocked_los_has_no_los_item():
    scn = default_scenario(j=4)
    noise, clutter = _noise_clutter(scn)
    streams = StreamFactory(0, 0)
    # find a step at which panel 1 (top wall) is occluded
    for n in range(scn.n_steps):
        if not los_visible(scn.positions[n], scn.panels[0].position, scn.walls):
            sets = synthesize_timestep(scn, n, streams, clutter, noise, noise_free=True)
            assert "los" not in (sets[0].kinds or [])
            return
    pytest.fail("no occluded step found in the default scenario")


def test_synthesize_determinism():
    scn = default_scenario(j=3)
    noise, clutter = _noise_clutter(scn)
    a = synthesize_timestep(scn, 5, StreamFactory(9, 2), clutter, noise)
    b = synthesize_timestep(scn, 5, StreamFactory(9, 2), clutter, noise)
    for ma, mb in zip(a, b):
        assert len(ma) == len(mb)
        for ia, ib in zip(ma.items, mb.items):
            assert (ia.d, ia.aoa, ia.u) == (ib.d, ib.aoa, ib.u)


def test_synthesize_amplitudes_respect_threshold():
    scn = default_scenario(j=6)
    noise, clutter = _noise_clutter(scn)
    streams = StreamFactory(3, 0)
    for n in range(0, 60, 10):
        for ms in synthesize_timestep(scn, n, streams, clutter, noise):
            for item in ms.items:
                assert item.u >= clutter.u_th
                assert -math.pi < item.aoa <= math.pi
                assert item.d >= 0


def test_synthesize_mean_item_count():
    """Monte-Carlo oracle: mean item count = mu_fa + sum of detection probs."""
    scn = default_scenario(j=2)
    noise, clutter = _noise_clutter(scn)
    from panelloc.measurement import true_paths

    n, panel_id = 100, 1
    paths = true_paths(scn, n, panel_id, noise)
    expect = clutter.mu_fa + sum(detection_prob(p.u, clutter.u_th) for p in paths)
    draws = 10_000
    counts = np.empty(draws)
    for k in range(draws):
        gen = StreamFactory(1000 + k, 0).get(n, panel_id, Purpose.MEASUREMENT)
        counts[k] = len(synthesize_panel(scn, n, panel_id, gen, clutter, noise))
    # 3-sigma bound on the Poisson + binomial mixture mean
    sigma = math.sqrt((clutter.mu_fa + len(paths) * 0.25) / draws)
    assert abs(counts.mean() - expect) < 3 * sigma + 1e-3


def test_synthesized_range_noise_scale():
    """Empirical std of synthesized distances matches the stated CRLB within 2%."""
    scn = default_scenario(j=2)
    noise = NoiseModel(radio=scn.radio)
    clutter = ClutterParams(mu_fa=0.0)
    from panelloc.measurement import true_paths

    n, panel_id = 10, 1  # step with unobstructed line of sight to panel 1
    los = [p for p in true_paths(scn, n, panel_id, noise) if p.kind == "los"][0]
    want = range_std(los.u, scn.radio.bandwidth_hz)
    draws = 100_000
    ds = np.empty(draws)
    got = 0
    for k in range(draws):
        gen = StreamFactory(5_000_000 + k, 0).get(n, panel_id, Purpose.MEASUREMENT)
        ms = synthesize_panel(scn, n, panel_id, gen, clutter, noise)
        if ms.kinds and "los" in ms.kinds:
            ds[got] = ms.items[ms.kinds.index("los")].d
            got += 1
    std = ds[:got].std(ddof=1)
    assert got > 0.9 * draws
    assert abs(std - want) / want < 0.02
