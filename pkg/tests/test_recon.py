import dataclasses

import numpy as np
import pytest
from numpy import testing as npt

from utils.fourier import CoilWeightedPhantom, fourier_slice_forward
from utils.inr import CoordinateNetwork, HashGridConfig, build_network, finite_difference
from utils.phantom import GridSpec, evaluate_scene
from utils.recon import (
    PHASE_FINETUNE,
    PHASE_FROZEN,
    PHASE_INIT_SPATIAL,
    PHASE_INIT_TEMPORAL,
    ReconConfig,
    TrainLog,
    batch_loss,
    default_frame_times,
    fine_tune,
    fit_to_bases,
    infer,
    spoke_loss,
)
from utils.subspace_init import SubspaceModel
from utils.trajectory import golden_angle_geometry, ramp_weights, simulate_spokes

HASH = HashGridConfig(levels=2, features=2, base_resolution=4, per_level_scale=1.5, log2_table_size=6)
HASH_1D = dataclasses.replace(HASH, dim=1)


@pytest.fixture
def spokes(toy_grid, moving_spec, two_coils):
    geometry = golden_angle_geometry(6, 16, 256.0)
    acquired = simulate_spokes(moving_spec, two_coils, geometry, toy_grid, 2.3e-3)
    return dataclasses.replace(acquired, samples=acquired.samples * 1e-3)


def _networks(spokes, k=2, seed=0):
    spatial = build_network(k, HASH, 8, 1, (-128.0, 128.0), seed=seed)
    temporal = build_network(k, HASH_1D, 8, 1, (0.0, spokes.window), seed=seed + 1)
    return spatial, temporal


class _SceneField:
    """Returns the phantom itself as a single basis; coordinates pass through unchanged."""

    k = 1

    def __init__(self, spec):
        self.spec = spec

    def to_unit(self, coords):
        return np.asarray(coords, dtype=np.float64)

    def forward(self, coords):
        values = evaluate_scene(self.spec, 0.0, coords[:, 0], coords[:, 1])
        return np.stack([values.real, values.imag], axis=1), None

    def backward(self, cache, grad_out):
        return {}


class _UnitField(_SceneField):
    def __init__(self):
        super().__init__(None)

    def forward(self, coords):
        return np.tile([1.0, 0.0], (coords.shape[0], 1)), None


# === SPOKE LOSS ===


def test_zero_networks_give_weighted_data_energy(spokes, two_coils, toy_grid):
    spatial = CoordinateNetwork(2, HASH, 8, 1, (-128.0, 128.0))
    temporal = CoordinateNetwork(2, HASH_1D, 8, 1, (0.0, spokes.window))
    ramp = ramp_weights(16)
    result = spoke_loss(spatial, temporal, spokes.geometry(3), spokes.samples[3], two_coils, ramp, toy_grid)
    expected = np.sum(ramp**2 * np.abs(spokes.samples[3]) ** 2) / (2 * 16)
    npt.assert_allclose(result.loss, expected, rtol=1e-12)


def test_exact_factorisation_has_zero_loss(static_spec, two_coils, toy_grid):
    spoke = golden_angle_geometry(3, 16, 256.0)[2]
    data = np.stack([
        fourier_slice_forward(CoilWeightedPhantom(static_spec, two_coils, c, spoke.time, 256.0), spoke)
        for c in range(2)
    ])
    result = spoke_loss(_SceneField(static_spec), _UnitField(), spoke, data, two_coils,
                        ramp_weights(16), toy_grid)
    assert result.loss <= 1e-20 * np.sum(np.abs(data) ** 2)


def _away_from_kinks(*nets, seed=5):
    # ReLU kinks make central differences meaningless near zero pre-activations
    rng = np.random.default_rng(seed)
    for net in nets:
        net.params["table"] = rng.uniform(-1.0, 1.0, size=net.params["table"].shape)
        for i in range(net.n_layers):
            net.params[f"b{i}"] = rng.uniform(0.2, 0.5, size=net.params[f"b{i}"].shape)
        net.mark_updated()


def test_spoke_loss_gradients_match_finite_differences(spokes, two_coils):
    spatial, temporal = _networks(spokes)
    _away_from_kinks(spatial, temporal)
    ramp = ramp_weights(16)
    indices = [0, 2, 5]

    def loss():
        return batch_loss(spatial, temporal, spokes, indices, two_coils, ramp).loss

    result = batch_loss(spatial, temporal, spokes, indices, two_coils, ramp)
    for net, grads in ((spatial, result.spatial_grads), (temporal, result.temporal_grads)):
        for name, g in grads.items():
            for flat in np.argsort(np.abs(g), axis=None)[-5:]:
                index = np.unravel_index(flat, g.shape)
                numeric = finite_difference(loss, net.params, name, index, h=1e-6)
                npt.assert_allclose(g[index], numeric, rtol=1e-4, atol=1e-10)


def test_batch_loss_does_not_depend_on_threads(spokes, two_coils):
    spatial, temporal = _networks(spokes)
    ramp = ramp_weights(16)
    serial = batch_loss(spatial, temporal, spokes, range(6), two_coils, ramp, chunk=2, threads=1)
    threaded = batch_loss(spatial, temporal, spokes, range(6), two_coils, ramp, chunk=2, threads=3)
    assert serial.loss == threaded.loss
    for name in serial.spatial_grads:
        npt.assert_array_equal(serial.spatial_grads[name], threaded.spatial_grads[name])
    for name in serial.temporal_grads:
        npt.assert_array_equal(serial.temporal_grads[name], threaded.temporal_grads[name])


def test_batch_loss_is_mean_of_spoke_losses(spokes, two_coils):
    spatial, temporal = _networks(spokes)
    result = batch_loss(spatial, temporal, spokes, [1, 4], two_coils, ramp_weights(16), chunk=1)
    assert len(result.spoke_losses) == 2
    npt.assert_allclose(result.loss, np.mean(result.spoke_losses))


def test_frozen_temporal_gradients_are_skipped(spokes, two_coils):
    spatial, temporal = _networks(spokes)
    result = batch_loss(spatial, temporal, spokes, [0], two_coils, ramp_weights(16), need_temporal=False)
    assert result.temporal_grads is None
    assert set(result.spatial_grads) == set(spatial.params)


# === INITIAL FIT ===


def test_fit_to_bases_lowers_both_errors(spokes):
    grid = GridSpec(8, 8, 256.0)
    rng = np.random.default_rng(0)
    x, y = grid.mesh()
    spatial_target = np.stack([np.exp(-(x**2 + y**2) / 5000.0), (x / 128.0) + 0.5j], axis=-1)
    times = np.linspace(0.0, spokes.window, 6)
    temporal_target = np.stack([np.cos(times * 200.0), 0.3 * rng.standard_normal(6)], axis=1)
    targets = SubspaceModel(grid, spatial_target, temporal_target.astype(complex), times)
    spatial, temporal = _networks(spokes)
    cfg = ReconConfig(k=2, init_steps=40, init_lr=0.01, log_every=10)
    log = fit_to_bases(spatial, temporal, targets, cfg, threads=2)
    for phase in (PHASE_INIT_SPATIAL, PHASE_INIT_TEMPORAL):
        losses = log.losses(phase)
        assert len(losses) == 40
        assert losses[-1] < losses[0]


def test_fit_to_bases_checks_rank(spokes):
    grid = GridSpec(8, 8, 256.0)
    targets = SubspaceModel(grid, np.zeros((8, 8, 3)), np.zeros((2, 3)), [0.0, 0.01])
    spatial, temporal = _networks(spokes)
    with pytest.raises(ValueError, match="rank"):
        fit_to_bases(spatial, temporal, targets, ReconConfig(k=2))


# === FINE-TUNING ===


def test_temporal_network_frozen_for_first_iterations(spokes, two_coils):
    spatial, temporal = _networks(spokes)
    initial = temporal.snapshot()
    spatial_before = spatial.snapshot()
    cfg = ReconConfig(k=2, finetune_iters=12, freeze_temporal_iters=10, finetune_lr=1e-3)
    snapshots = {}
    log = fine_tune(spatial, temporal, spokes, two_coils, cfg, snapshots=snapshots)

    for name in initial:
        npt.assert_array_equal(snapshots[10][name], initial[name])
    assert any(not np.array_equal(snapshots[11][name], initial[name]) for name in initial)
    assert any(not np.array_equal(spatial.params[n], spatial_before[n]) for n in spatial_before)
    phases = [row["phase"] for row in log.rows]
    assert phases == [PHASE_FROZEN] * 10 + [PHASE_FINETUNE] * 2


def test_minibatch_fine_tuning_is_reproducible(spokes, two_coils):
    cfg = ReconConfig(k=2, finetune_iters=3, freeze_temporal_iters=1, spokes_per_batch=2,
                      finetune_lr=1e-3, seed=9)
    runs = []
    for _ in range(2):
        spatial, temporal = _networks(spokes)
        log = fine_tune(spatial, temporal, spokes, two_coils, cfg)
        runs.append((log.losses(), spatial.params["w0"].copy()))
    npt.assert_array_equal(runs[0][0], runs[1][0])
    npt.assert_array_equal(runs[0][1], runs[1][1])


def test_fine_tuning_lowers_the_loss(spokes, two_coils):
    spatial, temporal = _networks(spokes)
    cfg = ReconConfig(k=2, finetune_iters=15, freeze_temporal_iters=2, finetune_lr=3e-3)
    losses = fine_tune(spatial, temporal, spokes, two_coils, cfg).losses()
    assert losses[-1] < losses[0]


# === INFERENCE ===


def test_constant_networks_render_constant_frames(toy_grid):
    spatial = CoordinateNetwork(1, HASH, 4, 1, (-128.0, 128.0))
    temporal = CoordinateNetwork(1, HASH_1D, 4, 1, (0.0, 1.0))
    spatial.params["b1"] = np.array([2.0, 1.0])
    temporal.params["b1"] = np.array([0.5, -1.0])
    dyn = infer(spatial, temporal, toy_grid, [0.0, 0.25, 1.0])
    assert dyn.frames.shape == (3, 16, 16)
    npt.assert_allclose(dyn.frames, (2.0 + 1.0j) * (0.5 - 1.0j))
    npt.assert_array_equal(dyn.times, [0.0, 0.25, 1.0])


def test_infer_is_unchanged_by_rescaling_the_factors(spokes, toy_grid, rng):
    spatial, temporal = _networks(spokes)
    for net in (spatial, temporal):
        net.params["table"] = rng.uniform(-1.0, 1.0, size=net.params["table"].shape)
        net.params[f"b{net.n_layers - 1}"] = rng.uniform(-0.5, 0.5, size=2 * net.k)
        net.mark_updated()
    times = np.linspace(0.0, spokes.window, 5)
    before = infer(spatial, temporal, toy_grid, times).frames

    alpha = 3.7
    for net, scale in ((spatial, alpha), (temporal, 1.0 / alpha)):
        last = net.n_layers - 1
        net.params[f"w{last}"] = net.params[f"w{last}"] * scale
        net.params[f"b{last}"] = net.params[f"b{last}"] * scale
        net.mark_updated()
    after = infer(spatial, temporal, toy_grid, times).frames
    npt.assert_allclose(after, before, rtol=1e-12, atol=1e-12 * np.abs(before).max())


def test_infer_rejects_times_outside_the_window(toy_grid):
    spatial = CoordinateNetwork(1, HASH, 4, 1, (-128.0, 128.0))
    temporal = CoordinateNetwork(1, HASH_1D, 4, 1, (0.0, 1.0))
    with pytest.raises(ValueError):
        infer(spatial, temporal, toy_grid, [0.5, 1.5])


def test_default_frame_times_are_bin_centres(spokes):
    big = dataclasses.replace(spokes, angles=np.zeros(800), times=np.arange(800) * 2.3e-3,
                              samples=np.zeros((800, 1, 16), dtype=complex))
    times = default_frame_times(big, 20)
    assert times.shape == (40,)
    npt.assert_allclose(times[0], 9.5 * 2.3e-3)
    npt.assert_allclose(np.diff(times), 20 * 2.3e-3)


# === CONFIG AND LOG ===


@pytest.mark.parametrize("field, value", [("k", 0), ("finetune_lr", 0.0), ("precision", "float16"),
                                          ("finetune_iters", -1)])
def test_recon_config_validation(field, value):
    with pytest.raises(ValueError):
        dataclasses.replace(ReconConfig(), **{field: value}).validate()


def test_train_log_round_trips_through_csv(tmp_path):
    log = TrainLog()
    log.record(1, PHASE_INIT_SPATIAL, 0.5)
    log.record(1, PHASE_FINETUNE, 0.25)
    path = tmp_path / "trainlog.csv"
    log.to_csv(path)
    restored = TrainLog.from_csv(path)
    assert list(restored.to_frame().columns) == ["iteration", "phase", "loss", "elapsed_s"]
    npt.assert_allclose(restored.losses(PHASE_FINETUNE), [0.25])
    npt.assert_allclose(restored.losses(), [0.5, 0.25])
