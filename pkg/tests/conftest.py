import numpy as np
import pytest

from utils.phantom import Blob, FourierSeries, GridSpec, PhantomSpec, constant, make_coil_maps

# Small experiment: 16x16 grid, two wide blobs (sigma >= one 16 mm pixel), cheap stages.
TINY_CONFIG = """
[run]
seed = 3

[grid]
n = 16
fov = 256.0

[trajectory]
n_spokes = 40

[coils]
n_coils = 2

[acquisition]
noise_snr_db = 30.0

[grasp]
iterations = 3
spokes_per_bin = 10
lowres_fraction = 0.5
power_iterations = 5

[recon]
k = 2
init_steps = 3
finetune_iters = 2
freeze_temporal_iters = 1
frame_spokes_per_bin = 10
hidden = 8
hidden_layers = 1
spokes_per_chunk = 16

[hashgrid]
levels = 2
base_resolution = 4
log2_table_size = 8

[metrics]
baseline_bins = 10, 20

[blob.0]
amplitude = 1.0
center_x = 0.0, 10.0, 0.0
center_y = 0.0
sigma = 40.0, 5.0, 0.0

[blob.1]
amplitude = 0.5+0.2j
center_x = -30.0
center_y = 20.0
sigma = 20.0, 2.0, 0.0
"""


@pytest.fixture(scope="session")
def tiny_config_text():
    return TINY_CONFIG


@pytest.fixture
def toy_grid():
    return GridSpec(16, 16, 256.0)


@pytest.fixture
def static_spec():
    return PhantomSpec(
        blobs=[
            Blob(1.0 + 0j, constant(0.0), constant(0.0), constant(40.0)),
            Blob(0.6 + 0j, constant(-30.0), constant(25.0), constant(20.0)),
        ],
        t_card=0.8,
        fov=256.0,
    )


@pytest.fixture
def moving_spec():
    return PhantomSpec(
        blobs=[
            Blob(1.0 + 0j, constant(0.0), constant(0.0), FourierSeries((40.0, 5.0, 0.0))),
            Blob(0.6 + 0.2j, FourierSeries((-20.0, 15.0, 0.0)), constant(20.0), constant(20.0)),
        ],
        t_card=0.8,
        fov=256.0,
    )


@pytest.fixture
def two_coils(toy_grid):
    return make_coil_maps(2, toy_grid, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
