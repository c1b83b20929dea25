import dataclasses

import numpy as np
import pytest
from numpy import testing as npt

from utils.baselines import grasp_baseline, nufft_baseline, run_baseline
from utils.phantom import GridSpec, make_coil_maps, render_frame
from utils.subspace_init import BinnedProblem, GraspConfig
from utils.trajectory import bin_spokes, golden_angle_geometry, simulate_spokes

FAST_GRASP = GraspConfig(iterations=20, power_iterations=10)


@pytest.fixture
def static_spokes(static_spec):
    grid = GridSpec(32, 32, 256.0)
    coils = make_coil_maps(2, grid, seed=0)
    spokes = simulate_spokes(static_spec, coils, golden_angle_geometry(128, 32, 256.0), grid, 2.3e-3,
                             noise_snr_db=30.0, seed=1)
    return spokes, coils, grid


def _correlation(a, b):
    return np.abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))


def test_zero_data_gives_zero_frames(static_spokes):
    spokes, coils, _ = static_spokes
    silent = dataclasses.replace(spokes, samples=np.zeros_like(spokes.samples))
    assert not np.any(nufft_baseline(silent, coils, 32).frames)
    assert not np.any(grasp_baseline(silent, coils, 32, cfg=FAST_GRASP).frames)


@pytest.mark.parametrize("method", ["nufft", "grasp"])
def test_one_frame_per_bin_at_bin_centres(static_spokes, method):
    spokes, coils, _ = static_spokes
    dyn = run_baseline(method, spokes, coils, 32, cfg=FAST_GRASP)
    assert dyn.n_frames == 4
    assert dyn.frames.shape[1:] == (32, 32)
    npt.assert_allclose(dyn.times, bin_spokes(spokes, 32).center_times)


def test_nufft_frames_resemble_the_phantom(static_spokes, static_spec):
    spokes, coils, grid = static_spokes
    dyn = nufft_baseline(spokes, coils, 64)
    truth = render_frame(static_spec, 0.0, grid).values
    mask = grid.support()
    for frame in dyn.frames:
        assert _correlation(frame[mask], truth[mask]) > 0.9


def test_grasp_fits_the_data_better_than_the_adjoint(static_spokes):
    spokes, coils, grid = static_spokes
    cfg = dataclasses.replace(FAST_GRASP, tv_weight=0.0)
    adjoint = nufft_baseline(spokes, coils, 16)
    grasp = grasp_baseline(spokes, coils, 16, cfg=cfg)
    problem = BinnedProblem(bin_spokes(spokes, 16), coils, grid, cfg)
    assert problem.data_residual_norm(grasp.frames) < problem.data_residual_norm(adjoint.frames)


def test_threads_do_not_change_the_adjoint(static_spokes):
    spokes, coils, _ = static_spokes
    npt.assert_array_equal(nufft_baseline(spokes, coils, 32).frames,
                           nufft_baseline(spokes, coils, 32, threads=3).frames)


def test_unknown_method_is_rejected(static_spokes):
    spokes, coils, _ = static_spokes
    with pytest.raises(ValueError, match="unknown baseline"):
        run_baseline("sense", spokes, coils, 20)
