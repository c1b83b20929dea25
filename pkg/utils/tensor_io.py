"""
Binary tensor bundles (.cspk).

Layout, little-endian throughout:
    b"CSPK" | u16 version | u32 entry count
    per entry: u16 name length | name (utf-8) | u8 dtype tag | u8 rank | u64 dims[rank] | payload
    u32 CRC32 of everything before it

Complex payloads are interleaved (re, im). Entry order is preserved, so
read -> write reproduces the original bytes.
"""

import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .errors import FormatError
from .inr import CoordinateNetwork, HashGridConfig
from .phantom import DynamicImage, GridSpec
from .subspace_init import SubspaceModel
from .trajectory import SpokeSet

logger = logging.getLogger(__name__)

MAGIC = b"CSPK"
VERSION = 1

DTYPE_TAGS = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<c8"): 3,
    np.dtype("<c16"): 4,
    np.dtype("<i8"): 5,
}
TAG_DTYPES = {tag: dtype for dtype, tag in DTYPE_TAGS.items()}

PathLike = Union[str, Path]


def encode_bundle(entries: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, array in entries.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in DTYPE_TAGS:
            raise FormatError(f"entry '{name}': unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", DTYPE_TAGS[dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_bundle(data: bytes) -> Dict[str, np.ndarray]:
    if len(data) < 14 or data[:4] != MAGIC:
        raise FormatError("not a tensor bundle (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError("checksum mismatch")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported bundle version {version}")

    offset = 10
    entries: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset:offset + name_len].decode("utf-8")
            offset += name_len
            tag, rank = struct.unpack_from("<BB", body, offset)
            offset += 2
            shape = struct.unpack_from(f"<{rank}Q", body, offset)
            offset += 8 * rank
            dtype = TAG_DTYPES.get(tag)
            if dtype is None:
                raise FormatError(f"entry '{name}': unknown dtype tag {tag}")
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + size > len(body):
                raise FormatError(f"entry '{name}': truncated payload")
            entries[name] = np.frombuffer(body, dtype=dtype, count=size // dtype.itemsize,
                                          offset=offset).reshape(shape).copy()
            offset += size
    except struct.error as exc:
        raise FormatError(f"truncated bundle: {exc}") from exc
    if offset != len(body):
        raise FormatError("trailing bytes after last entry")
    return entries


def write_bundle(path: PathLike, entries: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_bundle(entries))
    logger.debug("Wrote %s (%d entries)", path, len(entries))
    return path


def read_bundle(path: PathLike) -> Dict[str, np.ndarray]:
    return decode_bundle(Path(path).read_bytes())


# === TYPED ENTRIES ===


def _grid_entry(grid: GridSpec) -> Dict[str, np.ndarray]:
    return {"grid.n": np.array([grid.nx, grid.ny], dtype=np.int64),
            "grid.fov": np.array([grid.fov], dtype=np.float64)}


def _grid_from(entries: Dict[str, np.ndarray]) -> GridSpec:
    nx, ny = (int(v) for v in entries["grid.n"])
    return GridSpec(nx, ny, float(entries["grid.fov"][0]))


def _require(entries: Dict[str, np.ndarray], *names: str) -> None:
    missing = [n for n in names if n not in entries]
    if missing:
        raise FormatError(f"bundle is missing entries: {', '.join(missing)}")


def spoke_set_entries(spokes: SpokeSet) -> Dict[str, np.ndarray]:
    return {
        "kind.spokes": np.zeros(0, dtype=np.int64),
        **_grid_entry(spokes.grid),
        "angles": spokes.angles,
        "times": spokes.times,
        "tr": np.array([spokes.tr]),
        "readout_fov": np.array([spokes.readout_fov]),
        "samples": spokes.samples.astype(np.complex128),
    }


def spoke_set_from(entries: Dict[str, np.ndarray]) -> SpokeSet:
    _require(entries, "kind.spokes", "angles", "times", "tr", "readout_fov", "samples", "grid.n")
    return SpokeSet(entries["angles"], entries["times"], entries["samples"],
                    float(entries["tr"][0]), float(entries["readout_fov"][0]), _grid_from(entries))


def dynamic_entries(dyn: DynamicImage) -> Dict[str, np.ndarray]:
    return {
        "kind.dynamic": np.zeros(0, dtype=np.int64),
        **_grid_entry(dyn.grid),
        "times": dyn.times,
        "frames": dyn.frames.astype(np.complex128),
    }


def dynamic_from(entries: Dict[str, np.ndarray]) -> DynamicImage:
    _require(entries, "kind.dynamic", "times", "frames", "grid.n")
    return DynamicImage(_grid_from(entries), entries["frames"], entries["times"])


def subspace_entries(model: SubspaceModel) -> Dict[str, np.ndarray]:
    entries = {
        "kind.subspace": np.zeros(0, dtype=np.int64),
        **_grid_entry(model.grid),
        "frame_times": model.frame_times,
        "spatial": model.spatial.astype(np.complex128),
        "temporal": model.temporal.astype(np.complex128),
    }
    if model.singular_values is not None:
        entries["singular_values"] = np.asarray(model.singular_values, dtype=np.float64)
    return entries


def subspace_from(entries: Dict[str, np.ndarray]) -> SubspaceModel:
    _require(entries, "kind.subspace", "frame_times", "spatial", "temporal", "grid.n")
    return SubspaceModel(_grid_from(entries), entries["spatial"], entries["temporal"],
                         entries["frame_times"], entries.get("singular_values"))


def network_entries(net: CoordinateNetwork, prefix: str) -> Dict[str, np.ndarray]:
    h = net.hash_cfg
    entries = {
        f"{prefix}.config": np.array([net.k, net.hidden, net.hidden_layers, h.levels, h.features,
                                      h.base_resolution, h.log2_table_size, h.dim], dtype=np.int64),
        f"{prefix}.scale": np.array([h.per_level_scale, net.domain[0], net.domain[1]]),
    }
    for name, p in net.params.items():
        entries[f"{prefix}.{name}"] = p
    return entries


def network_from(entries: Dict[str, np.ndarray], prefix: str) -> CoordinateNetwork:
    _require(entries, f"{prefix}.config", f"{prefix}.scale", f"{prefix}.table")
    k, hidden, layers, levels, features, base, log2, dim = (int(v) for v in entries[f"{prefix}.config"])
    scale, lo, hi = (float(v) for v in entries[f"{prefix}.scale"])
    cfg = HashGridConfig(levels, features, base, scale, log2, dim)
    net = CoordinateNetwork(k, cfg, hidden, layers, (lo, hi), entries[f"{prefix}.table"].dtype)
    net.load({name: entries[f"{prefix}.{name}"] for name in net.params})
    return net


def checkpoint_entries(spatial: CoordinateNetwork, temporal: CoordinateNetwork) -> Dict[str, np.ndarray]:
    return {"kind.checkpoint": np.zeros(0, dtype=np.int64),
            **network_entries(spatial, "spatial"), **network_entries(temporal, "temporal")}


def checkpoint_from(entries: Dict[str, np.ndarray]) -> Tuple[CoordinateNetwork, CoordinateNetwork]:
    _require(entries, "kind.checkpoint")
    return network_from(entries, "spatial"), network_from(entries, "temporal")


def load_image(path: PathLike) -> DynamicImage:
    """A DynamicImage or the product of a SubspaceModel, whichever the file holds."""
    entries = read_bundle(path)
    if "kind.subspace" in entries:
        return subspace_from(entries).to_dynamic()
    return dynamic_from(entries)
