"""
Coordinate networks: multiresolution hash-grid encoding feeding a ReLU MLP,
with hand-written reverse mode and an Adam optimiser.

A network maps d-dimensional coordinates in [0, 1]^d to 2k reals, read as the
real parts followed by the imaginary parts of k complex basis values.

Per level the table holds min(2^log2_table_size, (N_l + 1)^d) entries; levels
whose full corner lattice fits are indexed densely, the rest through the
spatial hash (x * 1) XOR (y * 2654435761) mod table size. With the default
2^20-row table every 2D level up to resolution 512 is dense; hashing starts
once the finest lattice outgrows the table (log2_table_size 18 and below).
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

PRIMES = (np.uint64(1), np.uint64(2654435761))


# === HASH GRID ===


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    features: int = 2
    base_resolution: int = 16
    per_level_scale: float = 1.26
    log2_table_size: int = 20
    dim: int = 2

    def validate(self) -> None:
        if self.levels < 1:
            raise ValueError("hash grid needs at least one level")
        if self.features < 1:
            raise ValueError("hash grid needs at least one feature per level")
        if self.per_level_scale <= 1:
            raise ValueError("per_level_scale must exceed 1")
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be positive")
        if not 1 <= self.log2_table_size <= 30:
            raise ValueError("log2_table_size must lie in [1, 30]")
        if self.dim not in (1, 2):
            raise ValueError(f"only 1D and 2D inputs are supported, got {self.dim}")

    @property
    def table_size(self) -> int:
        return 1 << self.log2_table_size

    @property
    def output_dim(self) -> int:
        return self.levels * self.features

    def resolutions(self) -> List[int]:
        return [int(np.floor(self.base_resolution * self.per_level_scale**level))
                for level in range(self.levels)]

    def level_sizes(self) -> List[int]:
        return [min(self.table_size, (res + 1) ** self.dim) for res in self.resolutions()]

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.level_sizes())]).astype(np.int64)

    @property
    def total_entries(self) -> int:
        return int(sum(self.level_sizes()))


@dataclass
class EncodingCache:
    indices: np.ndarray  # [L, 2^d, n] flat table rows
    weights: np.ndarray  # [L, 2^d, n]
    clamped: int = 0


def _corner_index(corner: np.ndarray, res: int, size: int, dim: int) -> np.ndarray:
    if (res + 1) ** dim <= size:
        index = corner[:, 0].copy()
        if dim == 2:
            index += (res + 1) * corner[:, 1]
        return index
    h = corner[:, 0].astype(np.uint64) * PRIMES[0]
    for d in range(1, dim):
        h ^= corner[:, d].astype(np.uint64) * PRIMES[d]
    return (h & np.uint64(size - 1)).astype(np.int64)


def hash_encode(coords: np.ndarray, cfg: HashGridConfig,
                table: np.ndarray) -> Tuple[np.ndarray, EncodingCache]:
    """Multilinear hash-grid features [n, L*F] for coords [n, d] in [0, 1]^d."""
    coords = np.asarray(coords, dtype=table.dtype).reshape(-1, cfg.dim)
    outside = (coords < 0) | (coords > 1)
    clamped = int(np.count_nonzero(np.any(outside, axis=1)))
    if clamped:
        logger.debug("Clamped %d coordinates into [0, 1]", clamped)
        coords = np.clip(coords, 0.0, 1.0)

    n = coords.shape[0]
    n_corners = 2**cfg.dim
    offsets = cfg.offsets()
    indices = np.empty((cfg.levels, n_corners, n), dtype=np.int64)
    weights = np.empty((cfg.levels, n_corners, n), dtype=table.dtype)
    features = np.empty((n, cfg.levels * cfg.features), dtype=table.dtype)

    for level, (res, size) in enumerate(zip(cfg.resolutions(), cfg.level_sizes())):
        pos = coords * res
        cell = np.minimum(np.floor(pos), res - 1).astype(np.int64)
        frac = pos - cell
        acc = np.zeros((n, cfg.features), dtype=table.dtype)
        for c, bits in enumerate(itertools.product((0, 1), repeat=cfg.dim)):
            bits = np.asarray(bits)
            w = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
            idx = _corner_index(cell + bits, res, size, cfg.dim) + offsets[level]
            indices[level, c] = idx
            weights[level, c] = w
            acc += w[:, None] * table[idx]
        features[:, level * cfg.features:(level + 1) * cfg.features] = acc

    return features, EncodingCache(indices, weights, clamped)


def hash_encode_backward(cache: EncodingCache, grad_features: np.ndarray,
                         cfg: HashGridConfig, n_entries: int) -> np.ndarray:
    """Dense table gradient; rows no coordinate touched stay exactly zero."""
    levels, n_corners, n = cache.weights.shape
    grad_levels = grad_features.reshape(n, levels, cfg.features).transpose(1, 0, 2)  # [L, n, F]
    flat_idx = cache.indices.reshape(-1)
    grad = np.zeros((n_entries, cfg.features), dtype=np.float64)
    for f in range(cfg.features):
        contrib = cache.weights * grad_levels[:, None, :, f]
        grad[:, f] = np.bincount(flat_idx, weights=contrib.reshape(-1), minlength=n_entries)
    return grad


# === NETWORK ===


@dataclass
class ForwardCache:
    encoding: EncodingCache
    activations: List[np.ndarray]  # inputs to every linear layer
    pre_activations: List[np.ndarray]  # hidden pre-ReLU values

    @property
    def batch(self) -> int:
        return self.activations[0].shape[0]


class CoordinateNetwork:
    """Hash-grid encoding + MLP [L*F -> hidden ... -> 2k]; ReLU hidden, linear out."""

    def __init__(self, k: int, hash_cfg: HashGridConfig = HashGridConfig(), hidden: int = 64,
                 hidden_layers: int = 2, domain: Tuple[float, float] = (0.0, 1.0),
                 dtype=np.float64):
        hash_cfg.validate()
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        self.k = k
        self.hash_cfg = hash_cfg
        self.hidden = hidden
        self.hidden_layers = hidden_layers
        self.domain = (float(domain[0]), float(domain[1]))
        self.dtype = np.dtype(dtype)
        sizes = [hash_cfg.output_dim] + [hidden] * hidden_layers + [2 * k]
        self.layer_sizes = sizes
        self.params: Dict[str, np.ndarray] = {
            "table": np.zeros((hash_cfg.total_entries, hash_cfg.features), dtype=self.dtype)
        }
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"w{i}"] = np.zeros((fan_in, fan_out), dtype=self.dtype)
            self.params[f"b{i}"] = np.zeros(fan_out, dtype=self.dtype)
        self.version = 0
        self._checked_version = -1

    @property
    def dim(self) -> int:
        return self.hash_cfg.dim

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def to_unit(self, coords: np.ndarray) -> np.ndarray:
        lo, hi = self.domain
        return (np.asarray(coords, dtype=np.float64) - lo) / (hi - lo)

    def mark_updated(self) -> None:
        self.version += 1

    def _check_finite(self) -> None:
        if self._checked_version == self.version:
            return
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise NumericalError(f"non-finite values in parameter group '{name}'")
        self._checked_version = self.version

    def forward(self, coords: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """coords [n, d] in [0, 1]^d -> outputs [n, 2k]."""
        coords = np.asarray(coords).reshape(-1, self.dim)
        if coords.shape[0] == 0:
            raise ValueError("forward needs a non-empty batch")
        self._check_finite()
        enc, enc_cache = hash_encode(coords, self.hash_cfg, self.params["table"])
        activations = [enc]
        pre = []
        h = enc
        for i in range(self.n_layers):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                pre.append(z)
                h = np.maximum(z, 0.0)
                activations.append(h)
            else:
                h = z
        return h, ForwardCache(enc_cache, activations, pre)

    def backward(self, cache: ForwardCache, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        grad_out = np.asarray(grad_out, dtype=self.dtype)
        if grad_out.shape != (cache.batch, 2 * self.k):
            raise ValueError(
                f"output gradient {grad_out.shape} does not match cached batch ({cache.batch}, {2 * self.k})"
            )
        grads: Dict[str, np.ndarray] = {}
        g = grad_out
        for i in reversed(range(self.n_layers)):
            a = cache.activations[i]
            grads[f"w{i}"] = a.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"w{i}"].T
            if i > 0:
                g = g * (cache.pre_activations[i - 1] > 0)
        table_grad = hash_encode_backward(cache.encoding, g, self.hash_cfg,
                                          self.params["table"].shape[0])
        grads["table"] = table_grad.astype(self.dtype, copy=False)
        return {name: grads[name] for name in self.params}

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        """Complex basis values [n, k] at physical coordinates."""
        out, _ = self.forward(self.to_unit(coords))
        return out[:, :self.k] + 1j * out[:, self.k:]

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.params.items()}

    def load(self, params: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if params[name].shape != p.shape:
                raise ValueError(f"parameter '{name}' has shape {params[name].shape}, expected {p.shape}")
            self.params[name] = np.array(params[name], dtype=self.dtype)
        self.mark_updated()


def init_parameters(net: CoordinateNetwork, seed: int = 0) -> None:
    """Tables U(-1e-4, 1e-4), Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    table = net.params["table"]
    net.params["table"] = rng.uniform(-1e-4, 1e-4, size=table.shape).astype(net.dtype)
    for i, (fan_in, fan_out) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        net.params[f"w{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(net.dtype)
        net.params[f"b{i}"] = np.zeros(fan_out, dtype=net.dtype)
    net.mark_updated()


# === ADAM ===


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            **kwargs,
        )


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ValueError(f"gradient for '{name}' does not match the parameters")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter group '{name}'")

    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def optimizer_step(net: CoordinateNetwork, grads: Dict[str, np.ndarray], state: AdamState,
                   lr: float) -> None:
    adam_step(net.params, grads, state, lr)
    net.mark_updated()


def build_network(k: int, hash_cfg: HashGridConfig, hidden: int, hidden_layers: int,
                  domain: Tuple[float, float], precision: str = "float64",
                  seed: Optional[int] = None) -> CoordinateNetwork:
    dtype = {"float64": np.float64, "float32": np.float32}.get(precision)
    if dtype is None:
        raise ValueError(f"unknown precision '{precision}'")
    net = CoordinateNetwork(k, hash_cfg, hidden, hidden_layers, domain, dtype)
    if seed is not None:
        init_parameters(net, seed)
    return net


def finite_difference(loss_fn, params: Dict[str, np.ndarray], name: str,
                      index: Sequence[int], h: float = 1e-4) -> float:
    """Central difference of loss_fn() with respect to one parameter entry."""
    p = params[name]
    original = p[tuple(index)]
    p[tuple(index)] = original + h
    plus = loss_fn()
    p[tuple(index)] = original - h
    minus = loss_fn()
    p[tuple(index)] = original
    return (plus - minus) / (2 * h)
