import numpy as np
import pytest

from utils.config import (
    CONFIG_ENV_VAR,
    ExperimentConfig,
    load_config,
    load_config_file,
    quick_config,
    resolve_config_path,
    write_config,
)
from utils.errors import ConfigError


def test_empty_text_gives_defaults():
    cfg = load_config("")
    assert cfg == ExperimentConfig()
    assert cfg.grid.n == 64
    assert cfg.recon.k == 6
    assert cfg.acquisition.noise_sigma is None
    cfg.validate()


def test_tiny_config_is_parsed(tiny_config_text):
    cfg = load_config(tiny_config_text)
    assert cfg.run.seed == 3
    assert cfg.grid.n == 16
    assert cfg.grasp.lowres_fraction == 0.5
    assert cfg.metrics.baseline_bins == (10, 20)
    assert cfg.hashgrid.levels == 2
    assert len(cfg.blobs) == 2
    assert cfg.blobs[1].amplitude == 0.5 + 0.2j
    assert cfg.blobs[0].sigma.coeffs == (40.0, 5.0, 0.0)
    cfg.validate()


def test_write_then_load_keeps_every_value(tiny_config_text):
    cfg = load_config(tiny_config_text)
    cfg.acquisition.noise_sigma = 0.25
    cfg.run.dump_stages = True
    again = load_config(write_config(cfg))
    assert again == cfg


def test_default_config_round_trips():
    assert load_config(write_config(ExperimentConfig())) == ExperimentConfig()


@pytest.mark.parametrize("text, field", [
    ("[grid]\nsize = 3\n", "grid.size"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[grid]\nn = many\n", "grid.n"),
    ("[run]\ndump_stages = maybe\n", "run.dump_stages"),
    ("[blob.0]\namplitude = 1\n", "blob.0."),
    ("[blob.x]\namplitude = 1\ncenter_x = 0\ncenter_y = 0\nsigma = 20\n", "blob.x"),
])
def test_bad_text_names_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        load_config(text)
    assert info.value.field.startswith(field)


@pytest.mark.parametrize("text, field", [
    ("[grid]\nn = 4\n", "grid.n"),
    ("[trajectory]\ntr = 0\n", "trajectory"),
    ("[recon]\nk = 0\n", "recon"),
    ("[grasp]\nlowres_fraction = 2\n", "grasp"),
    ("[hashgrid]\nper_level_scale = 0.5\n", "hashgrid"),
    ("[grid]\nn = 16\n", "phantom"),
])
def test_validation_errors_name_the_section(text, field):
    with pytest.raises(ConfigError) as info:
        load_config(text).validate()
    assert info.value.field == field


def test_with_seed_reaches_every_stream():
    cfg = ExperimentConfig().with_seed(17)
    assert (cfg.run.seed, cfg.coils.seed, cfg.grasp.seed, cfg.recon.seed) == (17, 17, 17, 17)
    assert ExperimentConfig().run.seed == 0


def test_quick_config_validates_on_its_coarse_grid():
    cfg = quick_config()
    cfg.validate()
    assert cfg.grid.n == 32
    delta = cfg.grid.fov / cfg.grid.n
    assert all(blob.sigma.lower_bound() >= delta for blob in cfg.blobs)
    assert load_config(write_config(cfg)) == cfg


def test_quick_config_keeps_default_blobs_on_fine_grids():
    cfg = quick_config(n=64)
    default = ExperimentConfig().phantom_spec().blobs
    assert [b.sigma.coeffs for b in cfg.blobs] == [b.sigma.coeffs for b in default]
    assert np.isclose(cfg.blobs[3].amplitude, default[3].amplitude)


def test_config_path_from_environment(monkeypatch, tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[grid]\nn = 32\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert resolve_config_path(None) == path
    assert resolve_config_path("other.ini").name == "other.ini"
    assert load_config_file(resolve_config_path(None)).grid.n == 32


def test_missing_config_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.ini")


def test_no_config_path_gives_defaults():
    assert load_config_file(None) == ExperimentConfig()
