"""
Subspace reconstruction: fit the coordinate networks to the interpolated
initial bases, fine-tune them against individual spokes through the Fourier
slice operator, and render frames as spatial x temporal products.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from .errors import NumericalError
from .fourier import ifft1_centered, project_to_spoke, rotated_lattice, support_mask
from .inr import AdamState, ForwardCache, optimizer_step
from .parallel import ordered_map
from .phantom import CoilMaps, DynamicImage, GridSpec
from .subspace_init import SubspaceModel
from .trajectory import SpokeGeometry, SpokeSet, bin_center_times, ramp_weights

logger = logging.getLogger(__name__)

PHASE_INIT_SPATIAL = "init_spatial"
PHASE_INIT_TEMPORAL = "init_temporal"
PHASE_FROZEN = "finetune_frozen"
PHASE_FINETUNE = "finetune"


@dataclass
class ReconConfig:
    k: int = 6
    init_steps: int = 1000
    init_lr: float = 0.01
    finetune_iters: int = 150
    finetune_lr: float = 3e-5
    freeze_temporal_iters: int = 10
    spokes_per_batch: int = 0  # 0 means every spoke in one batch
    frame_spokes_per_bin: int = 20
    seed: int = 0
    precision: str = "float64"
    spokes_per_chunk: int = 32
    hidden: int = 64
    hidden_layers: int = 2
    log_every: int = 10
    skip_init: bool = False

    def validate(self) -> None:
        for name in ("init_steps", "finetune_iters", "freeze_temporal_iters", "spokes_per_batch"):
            if getattr(self, name) < 0:
                raise ValueError(f"recon.{name} must be non-negative")
        for name in ("k", "frame_spokes_per_bin", "spokes_per_chunk", "hidden", "hidden_layers", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"recon.{name} must be positive")
        if self.init_lr <= 0 or self.finetune_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"recon.precision must be float64 or float32, got {self.precision}")


class BasisField(Protocol):
    """What the spoke loss needs from a network; CoordinateNetwork satisfies it."""

    k: int

    def to_unit(self, coords: np.ndarray) -> np.ndarray:
        ...

    def forward(self, coords: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        ...

    def backward(self, cache, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        ...


# === TRAIN LOG ===


@dataclass
class TrainLog:
    rows: List[Dict] = field(default_factory=list)
    _start: float = field(default_factory=time.perf_counter, repr=False)

    def record(self, iteration: int, phase: str, loss: float) -> None:
        self.rows.append({
            "iteration": iteration,
            "phase": phase,
            "loss": float(loss),
            "elapsed_s": time.perf_counter() - self._start,
        })

    def extend(self, other: "TrainLog") -> None:
        self.rows.extend(other.rows)

    def losses(self, *phases: str) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows if not phases or r["phase"] in phases])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["iteration", "phase", "loss", "elapsed_s"])

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        df = pd.read_csv(path)
        return cls(rows=df.to_dict(orient="records"))


# === SPOKE LOSS ===


@dataclass
class SpokeLoss:
    loss: float
    spatial_grads: Dict[str, np.ndarray]
    temporal_grads: Optional[Dict[str, np.ndarray]]
    spoke_losses: List[float] = field(default_factory=list)


def coil_values(coil_maps: CoilMaps, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Coil sensitivities [C, n] at arbitrary points; bilinear when only rasters exist."""
    if coil_maps.is_analytic:
        return coil_maps.evaluate(x, y)
    grid = coil_maps.raster_grid
    coords = np.stack([x / grid.delta + grid.nx / 2, y / grid.delta + grid.ny / 2])
    out = np.empty((coil_maps.n_coils, x.shape[0]), dtype=np.complex128)
    for c in range(coil_maps.n_coils):
        raster = coil_maps.raster[c]
        out[c] = ndimage.map_coordinates(raster.real, coords, order=1, mode="nearest") + \
            1j * ndimage.map_coordinates(raster.imag, coords, order=1, mode="nearest")
    return out


def _as_complex(out: np.ndarray, k: int) -> np.ndarray:
    return out[:, :k] + 1j * out[:, k:]


def _split_gradient(g: np.ndarray) -> np.ndarray:
    return np.concatenate([g.real, g.imag], axis=1)


def spokes_loss(spatial: BasisField, temporal: BasisField, geometry: Sequence[SpokeGeometry],
                samples: Sequence[np.ndarray], coil_maps: CoilMaps, ramp: np.ndarray,
                support_fov: float, need_temporal: bool = True) -> SpokeLoss:
    """
    Summed ramp-weighted loss and gradients over a group of spokes.

    Per spoke: loss = sum_c sum_m w_m^2 |y_hat - y|^2 / (C * M), with y_hat the
    Fourier-slice projection of coil x (spatial . temporal) on the rotated lattice.
    Complex gradients follow G = dL/dRe + i dL/dIm.
    """
    k = spatial.k
    if temporal.k != k:
        raise ValueError(f"spatial k={k} but temporal k={temporal.k}")

    points, masks = [], []
    for g in geometry:
        x, y = rotated_lattice(g)
        mask = support_mask(x, y, support_fov)
        masks.append(mask)
        points.append(np.stack([x[mask], y[mask]], axis=1))
    counts = [p.shape[0] for p in points]
    all_points = np.concatenate(points)

    out_s, cache_s = spatial.forward(spatial.to_unit(all_points))
    times = np.array([g.time for g in geometry])
    out_t, cache_t = temporal.forward(temporal.to_unit(times).reshape(-1, 1))
    u = _as_complex(out_s, k)
    v = _as_complex(out_t, k)

    grad_u = np.zeros_like(u)
    grad_v = np.zeros_like(v)
    w2 = ramp**2
    spoke_losses = []
    start = 0
    for j, (g, mask, count) in enumerate(zip(geometry, masks, counts)):
        sl = slice(start, start + count)
        start += count
        m = g.m
        step = g.fov / m
        f = u[sl] @ v[j]
        coils = coil_values(coil_maps, points[j][:, 0], points[j][:, 1])
        n_coils = coils.shape[0]
        lattice = np.zeros((n_coils, m, m), dtype=np.complex128)
        lattice[:, mask] = coils * f[None, :]
        residual = project_to_spoke(lattice, g) - samples[j]
        norm = n_coils * m
        loss = float(np.sum(w2 * np.abs(residual) ** 2) / norm)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at spoke {g.index}")
        spoke_losses.append(loss)

        grad_yhat = 2.0 * w2 * residual / norm
        grad_proj = step * m * ifft1_centered(grad_yhat, axis=-1)  # [C, M]
        rows = np.nonzero(mask)[0]
        grad_points = step * grad_proj[:, rows]  # [C, n_in]
        grad_f = np.sum(np.conj(coils) * grad_points, axis=0)
        grad_u[sl] = grad_f[:, None] * np.conj(v[j])[None, :]
        grad_v[j] = grad_f @ np.conj(u[sl])

    spatial_grads = spatial.backward(cache_s, _split_gradient(grad_u))
    temporal_grads = temporal.backward(cache_t, _split_gradient(grad_v)) if need_temporal else None
    return SpokeLoss(float(sum(spoke_losses)), spatial_grads, temporal_grads, spoke_losses)


def spoke_loss(spatial: BasisField, temporal: BasisField, spoke: SpokeGeometry,
               samples: np.ndarray, coil_maps: CoilMaps, ramp: np.ndarray,
               grid: GridSpec) -> SpokeLoss:
    return spokes_loss(spatial, temporal, [spoke], [samples], coil_maps, ramp, grid.fov)


def _merge(total: Optional[Dict[str, np.ndarray]], grads: Optional[Dict[str, np.ndarray]]):
    if grads is None:
        return total
    if total is None:
        return {name: g.astype(np.float64, copy=True) for name, g in grads.items()}
    for name, g in grads.items():
        total[name] += g
    return total


def batch_loss(spatial: BasisField, temporal: BasisField, spoke_set: SpokeSet,
               indices: Sequence[int], coil_maps: CoilMaps, ramp: np.ndarray,
               chunk: int = 32, threads: int = 1, need_temporal: bool = True) -> SpokeLoss:
    """
    Mean loss and mean gradients over the given spokes.

    Chunks run concurrently against read-only parameters; their gradients
    are merged in spoke order so the result does not depend on threading.
    """
    indices = list(indices)
    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]

    def run(idx: List[int]) -> SpokeLoss:
        return spokes_loss(spatial, temporal, [spoke_set.geometry(i) for i in idx],
                           [spoke_set.samples[i] for i in idx], coil_maps, ramp,
                           spoke_set.grid.fov, need_temporal)

    results = ordered_map(run, chunks, threads=threads)
    spatial_total, temporal_total = None, None
    losses: List[float] = []
    for r in results:
        spatial_total = _merge(spatial_total, r.spatial_grads)
        temporal_total = _merge(temporal_total, r.temporal_grads)
        losses.extend(r.spoke_losses)
    n = len(indices)
    for total in (spatial_total, temporal_total):
        if total is not None:
            for name in total:
                total[name] /= n
    return SpokeLoss(float(np.sum(losses) / n), spatial_total, temporal_total, losses)


# === INITIALISATION ===


def _fit_network(net, coords: np.ndarray, target: np.ndarray, steps: int, lr: float,
                 phase: str, log_every: int) -> TrainLog:
    log = TrainLog()
    state = AdamState.for_params(net.params)
    target_real = _split_gradient(target)
    n = coords.shape[0]
    unit = net.to_unit(coords).reshape(n, -1)
    for step in range(1, steps + 1):
        out, cache = net.forward(unit)
        diff = out - target_real
        loss = float(np.sum(diff**2) / n)
        if not np.isfinite(loss):
            raise NumericalError(f"{phase}: non-finite MSE at step {step}")
        grads = net.backward(cache, 2.0 * diff / n)
        optimizer_step(net, grads, state, lr)
        log.record(step, phase, loss)
        if step % log_every == 0:
            logger.debug("%s step %d MSE %.4g", phase, step, loss)
    return log


def fit_to_bases(spatial, temporal, targets: SubspaceModel, cfg: ReconConfig,
                 threads: int = 1) -> TrainLog:
    """Independent MSE fits of the spatial net to the grid bases and the temporal net to the spoke-time bases."""
    if targets.k != cfg.k or spatial.k != cfg.k or temporal.k != cfg.k:
        raise ValueError(
            f"rank mismatch: targets k={targets.k}, config k={cfg.k}, nets k={spatial.k}/{temporal.k}"
        )
    grid = targets.grid
    x, y = grid.mesh()
    spatial_coords = np.stack([x.ravel(), y.ravel()], axis=1)
    spatial_target = targets.spatial.reshape(-1, targets.k)
    temporal_coords = targets.frame_times.reshape(-1, 1)

    jobs = [
        (spatial, spatial_coords, spatial_target, PHASE_INIT_SPATIAL),
        (temporal, temporal_coords, targets.temporal, PHASE_INIT_TEMPORAL),
    ]
    logs = ordered_map(
        lambda job: _fit_network(job[0], job[1], job[2], cfg.init_steps, cfg.init_lr, job[3], cfg.log_every),
        jobs, threads=min(threads, 2),
    )
    log = TrainLog()
    for part in logs:
        log.extend(part)
    logger.info("Initial fit: spatial MSE %.4g, temporal MSE %.4g",
                logs[0].rows[-1]["loss"] if logs[0].rows else float("nan"),
                logs[1].rows[-1]["loss"] if logs[1].rows else float("nan"))
    return log


# === FINE-TUNING ===


def fine_tune(spatial, temporal, spoke_set: SpokeSet, coil_maps: CoilMaps, cfg: ReconConfig,
              threads: int = 1, log: Optional[TrainLog] = None,
              snapshots: Optional[Dict[int, Dict[str, np.ndarray]]] = None) -> TrainLog:
    """
    Adam on the spoke loss with fresh optimiser state.

    The temporal network is frozen for the first freeze_temporal_iters
    iterations. If `snapshots` is given, the temporal parameters after every
    iteration are copied into it (used to check the freeze).
    """
    log = log if log is not None else TrainLog()
    ramp = ramp_weights(spoke_set.m)
    spatial_state = AdamState.for_params(spatial.params)
    temporal_state = AdamState.for_params(temporal.params)
    rng = np.random.default_rng([cfg.seed, 2])
    n = spoke_set.n_spokes
    batch = cfg.spokes_per_batch if 0 < cfg.spokes_per_batch < n else n

    for it in range(1, cfg.finetune_iters + 1):
        frozen = it <= cfg.freeze_temporal_iters
        order = np.arange(n) if batch == n else rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            result = batch_loss(spatial, temporal, spoke_set, idx, coil_maps, ramp,
                                chunk=cfg.spokes_per_chunk, threads=threads,
                                need_temporal=not frozen)
            optimizer_step(spatial, result.spatial_grads, spatial_state, cfg.finetune_lr)
            if not frozen:
                optimizer_step(temporal, result.temporal_grads, temporal_state, cfg.finetune_lr)
            total += result.loss * len(idx)
        mean_loss = total / n
        log.record(it, PHASE_FROZEN if frozen else PHASE_FINETUNE, mean_loss)
        if snapshots is not None:
            snapshots[it] = {name: p.copy() for name, p in temporal.params.items()}
        if it == 1 or it % cfg.log_every == 0 or it == cfg.finetune_iters:
            logger.info("Fine-tune iteration %d/%d loss %.6g%s", it, cfg.finetune_iters,
                        mean_loss, " (temporal frozen)" if frozen else "")
    return log


# === INFERENCE ===


def default_frame_times(spoke_set: SpokeSet, spokes_per_bin: int = 20) -> np.ndarray:
    return bin_center_times(spoke_set.n_spokes, spoke_set.tr, spokes_per_bin)


def infer(spatial, temporal, grid: GridSpec, frame_times: Sequence[float]) -> DynamicImage:
    """frame(t) = sum_j spatial_j(grid) * temporal_j(t)."""
    frame_times = np.asarray(frame_times, dtype=np.float64)
    lo, hi = temporal.domain
    if frame_times.size and (frame_times.min() < lo or frame_times.max() > hi):
        raise ValueError(f"frame times must lie within [{lo}, {hi}] s")
    x, y = grid.mesh()
    u = spatial.evaluate(np.stack([x.ravel(), y.ravel()], axis=1))  # [P, k]
    v = temporal.evaluate(frame_times.reshape(-1, 1))  # [T, k]
    frames = (v @ u.T).reshape(len(frame_times), grid.nx, grid.ny)
    return DynamicImage(grid, frames.astype(np.complex128), frame_times)
