import logging

import numpy as np
import pytest
from numpy import testing as npt

from utils.phantom import GridSpec, make_coil_maps
from utils.trajectory import (
    TINY_GOLDEN_ANGLE_DEG,
    SpokeSet,
    area_weights,
    bin_center_times,
    bin_spokes,
    density_compensation,
    golden_angle_geometry,
    max_angular_gap,
    ramp_weights,
    readout_length,
    simulate_spokes,
)


def _empty_spokes(n, m=8, coils=1, tr=2.3e-3):
    geometry = golden_angle_geometry(n, m, 256.0, tr)
    return SpokeSet(
        angles=np.array([g.angle for g in geometry]),
        times=np.array([g.time for g in geometry]),
        samples=np.zeros((n, coils, m), dtype=np.complex128),
        tr=tr,
        readout_fov=256.0,
        grid=GridSpec(8, 8, 256.0),
    )


# === GEOMETRY ===


def test_golden_angle_base_case():
    g = golden_angle_geometry(10)[0]
    assert g.angle == 0.0
    assert g.time == 0.0


def test_golden_angle_arithmetic_and_wrap():
    geometry = golden_angle_geometry(10)
    npt.assert_allclose(geometry[2].angle, 47.25628, atol=1e-9)
    npt.assert_allclose(geometry[2].time, 4.6e-3, rtol=1e-12)
    npt.assert_allclose(geometry[8].angle, 9.02512, atol=1e-9)


def test_angles_stay_in_half_turn():
    angles = np.array([g.angle for g in golden_angle_geometry(800)])
    assert angles.min() >= 0.0 and angles.max() < 180.0


def test_full_acquisition_has_no_gap_above_one_and_a_half_degrees():
    angles = [g.angle for g in golden_angle_geometry(800)]
    assert max_angular_gap(angles) < 1.5


def test_contiguous_windows_cover_angles_evenly():
    angles = np.array([g.angle for g in golden_angle_geometry(800)])
    # any 20 consecutive spokes leave no gap much larger than the uniform 9 degrees
    for start in (0, 137, 400, 780):
        assert max_angular_gap(angles[start:start + 20]) < 2.5 * 180.0 / 20


@pytest.mark.parametrize("n_spokes, m, psi", [(0, 8, TINY_GOLDEN_ANGLE_DEG), (4, 7, TINY_GOLDEN_ANGLE_DEG),
                                              (4, 8, 0.0)])
def test_geometry_rejects_bad_arguments(n_spokes, m, psi):
    with pytest.raises(ValueError):
        golden_angle_geometry(n_spokes, m, 256.0, 2.3e-3, psi)


def test_k_points_put_dc_at_half():
    g = golden_angle_geometry(3, 16, 256.0)[1]
    k = g.k_points()
    npt.assert_array_equal(k[8], [0.0, 0.0])
    npt.assert_allclose(np.linalg.norm(k[0]), 8 / 256.0)


def test_readout_length_is_even():
    assert readout_length(64) == 64
    assert readout_length(64, 1.6) == 102
    assert readout_length(15) == 16


# === WEIGHTS ===


def test_ramp_weights_definition():
    npt.assert_allclose(ramp_weights(8), [1, 0.75, 0.5, 0.25, 0, 0.25, 0.5, 0.75])
    npt.assert_array_equal(ramp_weights(2), [1.0, 0.0])
    for m in (4, 16, 64):
        assert ramp_weights(m)[m // 2] == 0.0


def test_ramp_weights_need_even_length():
    with pytest.raises(ValueError):
        ramp_weights(5)


def test_density_compensation_definition():
    raw = np.array([2.0, 1.0, 0.5, 1.0])
    npt.assert_allclose(density_compensation(4), raw * 4 / raw.sum())
    for m in (4, 16, 64):
        d = density_compensation(m)
        assert np.all(d > 0)
        npt.assert_allclose(d.sum(), m)


def test_area_weights_cover_the_sampled_disc():
    # the weights of all 2N half-spokes add up to roughly the disc area / pixel area
    m, n, fov, pixel = 64, 200, 256.0, 4.0
    w = area_weights(m, n, fov, pixel)
    k_max = (m / 2) / fov
    npt.assert_allclose(n * w.sum(), np.pi * k_max**2 / pixel**2, rtol=0.05)


def test_dc_weight_is_a_share_of_the_central_disc():
    m, n, fov, pixel = 32, 50, 256.0, 8.0
    w = area_weights(m, n, fov, pixel)
    dk = 1.0 / fov
    npt.assert_allclose(n * w[m // 2], np.pi * (dk / 2) ** 2 / pixel**2, rtol=1e-12)
    npt.assert_allclose(w[m // 2 + 3] / w[m // 2 + 1], 3.0, rtol=1e-12)


# === BINNING ===


@pytest.mark.parametrize("spb, bins", [(20, 40), (40, 20)])
def test_binning_counts(spb, bins):
    binned = bin_spokes(_empty_spokes(800), spb)
    assert binned.n_bins == bins
    assert binned.dropped == 0
    npt.assert_array_equal(binned.flatten(), np.arange(800))


def test_identity_binning():
    spokes = _empty_spokes(30)
    binned = bin_spokes(spokes, 1)
    assert binned.n_bins == 30
    npt.assert_array_equal(binned.center_times, spokes.times)


def test_remainder_is_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        binned = bin_spokes(_empty_spokes(810), 20)
    assert binned.n_bins == 40
    assert binned.dropped == 10
    assert "Dropping 10" in caplog.text


def test_bin_centre_times_match_binning():
    spokes = _empty_spokes(100)
    npt.assert_allclose(bin_spokes(spokes, 20).center_times, bin_center_times(100, spokes.tr, 20))


@pytest.mark.parametrize("spb", [0, 101])
def test_binning_rejects_bad_sizes(spb):
    with pytest.raises(ValueError):
        bin_spokes(_empty_spokes(100), spb)


# === ACQUISITION ===


def test_simulation_is_deterministic(toy_grid, moving_spec, two_coils):
    geometry = golden_angle_geometry(12, 16, 256.0)
    a = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3, noise_snr_db=20.0, seed=5)
    b = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3, noise_snr_db=20.0, seed=5)
    npt.assert_array_equal(a.samples, b.samples)
    assert a.samples.shape == (12, 2, 16)


def test_noise_changes_samples_not_geometry(toy_grid, moving_spec, two_coils):
    geometry = golden_angle_geometry(12, 16, 256.0)
    clean = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3)
    noisy = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3, noise_sigma=0.1, seed=1)
    assert not np.array_equal(clean.samples, noisy.samples)
    npt.assert_array_equal(clean.angles, noisy.angles)
    npt.assert_array_equal(clean.times, noisy.times)


def test_threads_do_not_change_samples(toy_grid, moving_spec, two_coils):
    geometry = golden_angle_geometry(12, 16, 256.0)
    serial = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3)
    threaded = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3, threads=3)
    npt.assert_array_equal(serial.samples, threaded.samples)


def test_noise_level_from_snr(toy_grid, static_spec):
    coils = make_coil_maps(1, toy_grid)
    geometry = golden_angle_geometry(200, 16, 256.0)
    clean = simulate_spokes(static_spec, coils, geometry, toy_grid, 2.3e-3)
    noisy = simulate_spokes(static_spec, coils, geometry, toy_grid, 2.3e-3, noise_snr_db=20.0, seed=2)
    rms = np.sqrt(np.mean(np.abs(clean.samples) ** 2))
    sigma = np.sqrt(np.mean(np.abs(noisy.samples - clean.samples) ** 2))
    npt.assert_allclose(sigma, rms / 10.0, rtol=0.1)
