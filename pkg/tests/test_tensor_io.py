import struct
import zlib

import numpy as np
import pytest
from numpy import testing as npt

from utils.errors import FormatError
from utils.inr import HashGridConfig, build_network
from utils.phantom import GridSpec, PhantomSpec, render_dynamic
from utils.subspace_init import svd_subspace
from utils.tensor_io import (
    checkpoint_entries,
    checkpoint_from,
    decode_bundle,
    dynamic_entries,
    dynamic_from,
    encode_bundle,
    load_image,
    read_bundle,
    spoke_set_entries,
    spoke_set_from,
    subspace_entries,
    write_bundle,
)
from utils.trajectory import golden_angle_geometry, simulate_spokes


def _entries(rng):
    return {
        "a": rng.standard_normal((3, 4)),
        "b": (rng.standard_normal(5) + 1j * rng.standard_normal(5)).astype(np.complex64),
        "c": np.arange(6, dtype=np.int64).reshape(2, 3),
        "empty": np.zeros(0, dtype=np.int64),
    }


def _recrc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def test_bundle_preserves_names_order_and_values(rng):
    entries = _entries(rng)
    decoded = decode_bundle(encode_bundle(entries))
    assert list(decoded) == list(entries)
    for name in entries:
        assert decoded[name].dtype == entries[name].dtype
        npt.assert_array_equal(decoded[name], entries[name])


def test_reencoding_reproduces_the_bytes(rng):
    data = encode_bundle(_entries(rng))
    assert encode_bundle(decode_bundle(data)) == data


def test_big_endian_input_is_stored_little_endian():
    value = np.array([1.5, -2.0], dtype=">f8")
    decoded = decode_bundle(encode_bundle({"x": value}))["x"]
    assert decoded.dtype == np.dtype("<f8")
    npt.assert_array_equal(decoded, [1.5, -2.0])


def test_bad_magic():
    with pytest.raises(FormatError, match="magic"):
        decode_bundle(b"NOPE" + bytes(20))


def test_corrupted_payload_fails_the_checksum(rng):
    data = bytearray(encode_bundle(_entries(rng)))
    data[30] ^= 0xFF
    with pytest.raises(FormatError, match="checksum"):
        decode_bundle(bytes(data))


def test_unknown_version_is_rejected(rng):
    body = bytearray(encode_bundle(_entries(rng))[:-4])
    body[4:6] = struct.pack("<H", 99)
    with pytest.raises(FormatError, match="version"):
        decode_bundle(_recrc(bytes(body)))


def test_truncated_payload_is_rejected(rng):
    body = encode_bundle({"x": np.ones(10)})[:-4]
    with pytest.raises(FormatError):
        decode_bundle(_recrc(body[:-8]))


def test_unsupported_dtype_is_rejected():
    with pytest.raises(FormatError, match="unsupported"):
        encode_bundle({"x": np.ones(3, dtype=np.int32)})


# === TYPED FILES ===


def test_spoke_set_file_round_trip(tmp_path, toy_grid, static_spec, two_coils):
    spokes = simulate_spokes(static_spec, two_coils, golden_angle_geometry(5, 16, 256.0), toy_grid, 2.3e-3,
                             noise_snr_db=20.0, seed=3)
    path = write_bundle(tmp_path / "nested" / "spokes.cspk", spoke_set_entries(spokes))
    restored = spoke_set_from(read_bundle(path))
    npt.assert_array_equal(restored.samples, spokes.samples)
    npt.assert_array_equal(restored.angles, spokes.angles)
    assert restored.grid == spokes.grid
    assert restored.tr == spokes.tr and restored.readout_fov == spokes.readout_fov


def test_wrong_kind_is_reported(toy_grid, static_spec):
    dyn = render_dynamic(static_spec, [0.0, 0.1], toy_grid)
    with pytest.raises(FormatError, match="missing"):
        spoke_set_from(dynamic_entries(dyn))


def test_checkpoint_restores_identical_networks(rng):
    cfg = HashGridConfig(levels=2, base_resolution=4, log2_table_size=6)
    spatial = build_network(2, cfg, 8, 2, (-128.0, 128.0), seed=1)
    temporal = build_network(2, HashGridConfig(levels=2, base_resolution=4, log2_table_size=6, dim=1),
                             8, 1, (0.0, 1.84), seed=2)
    s2, t2 = checkpoint_from(decode_bundle(encode_bundle(checkpoint_entries(spatial, temporal))))
    coords = rng.uniform(-128.0, 128.0, size=(20, 2))
    npt.assert_array_equal(s2.evaluate(coords), spatial.evaluate(coords))
    times = rng.uniform(0.0, 1.84, size=(7, 1))
    npt.assert_array_equal(t2.evaluate(times), temporal.evaluate(times))
    assert t2.hash_cfg == temporal.hash_cfg
    assert s2.domain == spatial.domain


def test_load_image_accepts_movies_and_subspace_models(tmp_path, toy_grid, moving_spec):
    dyn = render_dynamic(moving_spec, np.linspace(0.0, 0.7, 6), toy_grid)
    movie_path = write_bundle(tmp_path / "movie.cspk", dynamic_entries(dyn))
    npt.assert_array_equal(load_image(movie_path).frames, dyn.frames)

    model = svd_subspace(dyn, 2)
    model_path = write_bundle(tmp_path / "model.cspk", subspace_entries(model))
    npt.assert_allclose(load_image(model_path).frames, model.to_dynamic().frames)
    npt.assert_array_equal(dynamic_from(read_bundle(movie_path)).times, dyn.times)


def test_grid_is_restored_from_bundle():
    grid = GridSpec(24, 24, 256.0)
    dyn = render_dynamic(PhantomSpec(), [0.0], grid)
    restored = dynamic_from(decode_bundle(encode_bundle(dynamic_entries(dyn))))
    assert restored.grid == grid
