"""
Initialisation targets for the coordinate networks.

Low-resolution binned GRASP -> rank-k SVD of the Casorati matrix -> bilinear /
linear interpolation of the bases back to the full grid and to every spoke time.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import NumericalError
from .fourier import RadialOperator, coil_combine
from .parallel import ordered_map
from .phantom import MIN_GRID, CoilMaps, DynamicImage, GridSpec
from .trajectory import BinnedSpokeSet, SpokeSet, area_weights

logger = logging.getLogger(__name__)


@dataclass
class GraspConfig:
    iterations: int = 100
    tv_weight: float = 0.025
    spokes_per_bin: int = 20
    lowres_fraction: float = 1 / 2.56
    power_iterations: int = 20
    tv_iterations: int = 50
    max_backtracks: int = 40
    seed: int = 0

    def validate(self) -> None:
        for name in ("iterations", "spokes_per_bin", "power_iterations", "tv_iterations", "max_backtracks"):
            if getattr(self, name) < 1:
                raise ValueError(f"grasp.{name} must be positive")
        if self.tv_weight < 0:
            raise ValueError("grasp.tv_weight must be non-negative")
        if not 0 < self.lowres_fraction <= 1:
            raise ValueError("grasp.lowres_fraction must lie in (0, 1]")


@dataclass
class SubspaceModel:
    """spatial [nx, ny, k] and temporal [T, k]; frame tau = sum_j spatial_j * temporal[tau, j]."""

    grid: GridSpec
    spatial: np.ndarray
    temporal: np.ndarray
    frame_times: np.ndarray
    singular_values: Optional[np.ndarray] = None

    def __post_init__(self):
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.spatial.ndim != 3 or self.spatial.shape[-1] < 1:
            raise ValueError("spatial bases must be [nx, ny, k] with k >= 1")
        k = self.spatial.shape[-1]
        if self.spatial.shape != (self.grid.nx, self.grid.ny, k):
            raise ValueError(f"spatial bases {self.spatial.shape} do not match grid")
        if self.temporal.shape != (self.frame_times.shape[0], k):
            raise ValueError(f"temporal bases {self.temporal.shape} do not match {k} components")

    @property
    def k(self) -> int:
        return self.spatial.shape[-1]

    def to_dynamic(self) -> DynamicImage:
        frames = np.einsum("xyj,tj->txy", self.spatial, self.temporal)
        return DynamicImage(self.grid, frames, self.frame_times)


# === K-SPACE CROP ===


def crop_center(spoke_set: SpokeSet, fraction: float) -> SpokeSet:
    """Keep the central even number of samples of every spoke; dk is unchanged."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    m = spoke_set.m
    m_low = 2 * round(m * fraction / 2)
    if m_low < 4:
        raise ValueError(f"cropped readout length {m_low} is below 4")
    start = m // 2 - m_low // 2
    # GridSpec needs MIN_GRID pixels; very short crops leave the outer frequencies unmeasured
    n_low = max(MIN_GRID, 2 * round(m_low * spoke_set.grid.nx / (2 * m)))
    low_grid = GridSpec(n_low, n_low, spoke_set.grid.fov)
    logger.info("Cropped spokes from %d to %d samples (low-res grid %d)", m, m_low, n_low)
    return SpokeSet(
        angles=spoke_set.angles,
        times=spoke_set.times,
        samples=spoke_set.samples[:, :, start:start + m_low],
        tr=spoke_set.tr,
        readout_fov=spoke_set.readout_fov,
        grid=low_grid,
    )


# === GRASP ===


@dataclass
class GraspResult:
    image: DynamicImage
    objective: List[float] = field(default_factory=list)
    lipschitz: float = 1.0


def temporal_diff(x: np.ndarray) -> np.ndarray:
    return x[1:] - x[:-1]


def temporal_diff_adjoint(p: np.ndarray) -> np.ndarray:
    """D^T p for the forward difference D along axis 0."""
    out = np.zeros((p.shape[0] + 1,) + p.shape[1:], dtype=p.dtype)
    out[:-1] -= p
    out[1:] += p
    return out


def _clip_magnitude(p: np.ndarray, bound: float) -> np.ndarray:
    mag = np.abs(p)
    return np.where(mag > bound, p * (bound / np.maximum(mag, 1e-300)), p)


def tv_prox(v: np.ndarray, weight: float, iterations: int,
            dual: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    argmin_z 0.5 ||z - v||^2 + weight * sum_b |z_{b+1} - z_b| along axis 0, per pixel.

    Accelerated projected gradient on the dual (|p_b| <= weight); returns (z, p)
    so the next call can warm-start from p.
    """
    if v.shape[0] < 2 or weight == 0:
        return v.copy(), np.zeros((max(v.shape[0] - 1, 0),) + v.shape[1:], dtype=v.dtype)
    p = np.zeros((v.shape[0] - 1,) + v.shape[1:], dtype=v.dtype) if dual is None \
        else _clip_magnitude(dual, weight)
    r = p
    t = 1.0
    for _ in range(iterations):
        # ||D D^T|| <= 4
        p_next = _clip_magnitude(r + 0.25 * temporal_diff(v - temporal_diff_adjoint(r)), weight)
        if np.vdot(r - p_next, p_next - p).real > 0:
            # momentum points uphill: restart it
            t = 1.0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        r = p_next + ((t - 1.0) / t_next) * (p_next - p)
        p, t = p_next, t_next
    return v - temporal_diff_adjoint(p), p


class BinnedProblem:
    """
    sum_b ||A_b x_b - y_b||^2 / L + tv_weight * sum_b sum_r |x_{b+1}(r) - x_b(r)|.

    Dividing by L = ||A^H A|| puts the data term on a unit-norm operator, so
    tv_weight is relative to image intensity whatever the k-space scaling.
    """

    def __init__(self, binned: BinnedSpokeSet, coil_maps: CoilMaps, grid: GridSpec,
                 cfg: GraspConfig, threads: int = 1):
        self.grid = grid
        self.cfg = cfg
        self.threads = threads
        self.raster = coil_maps.rasterize(grid)
        self.ops: List[RadialOperator] = []
        self.data: List[np.ndarray] = []
        for b in range(binned.n_bins):
            spokes = binned.spokes(b)
            self.ops.append(RadialOperator(spokes.angles, spokes.m, spokes.readout_fov, grid, self.raster))
            self.data.append(spokes.samples)
        self.lipschitz = 1.0

    @property
    def n_bins(self) -> int:
        return len(self.ops)

    def _per_bin(self, fn) -> List[np.ndarray]:
        return ordered_map(fn, range(self.n_bins), threads=self.threads)

    def adjoint_init(self) -> np.ndarray:
        """Area-weighted adjoint divided by the coil sum-of-squares, per bin."""

        def one(b: int) -> np.ndarray:
            op = self.ops[b]
            w = area_weights(op.m, op.n_spokes, op.readout_fov, self.grid.delta)
            return coil_combine(op.adjoint(self.data[b] * w[None, None, :]), self.raster)

        return np.stack(self._per_bin(one))

    def estimate_lipschitz(self) -> float:
        """Largest eigenvalue of the block-diagonal A^H A by power iteration."""
        rng = np.random.default_rng(self.cfg.seed)
        shape = (self.n_bins, self.grid.nx, self.grid.ny)
        v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        v /= np.linalg.norm(v)
        estimate = np.nan
        for _ in range(self.cfg.power_iterations):
            w = np.stack(self._per_bin(lambda b: self.ops[b].normal(v[b])))
            estimate = float(np.linalg.norm(w))
            if not np.isfinite(estimate) or estimate <= 0:
                break
            v = w / estimate
        if not np.isfinite(estimate) or estimate <= 0:
            raise NumericalError(f"power iteration did not give a usable Lipschitz estimate ({estimate})")
        self.lipschitz = estimate
        return estimate

    def residuals(self, x: np.ndarray) -> List[np.ndarray]:
        return self._per_bin(lambda b: self.ops[b].forward(x[b]) - self.data[b])

    def data_term(self, x: np.ndarray) -> float:
        return sum(float(np.sum(np.abs(r) ** 2)) for r in self.residuals(x)) / self.lipschitz

    def tv_term(self, x: np.ndarray) -> float:
        if self.n_bins < 2:
            return 0.0
        return float(np.sum(np.abs(temporal_diff(x))))

    def objective(self, x: np.ndarray) -> float:
        if self.cfg.tv_weight == 0:
            return self.data_term(x)
        return self.data_term(x) + self.cfg.tv_weight * self.tv_term(x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the data term only; the TV term goes through `tv_prox`."""
        res = self.residuals(x)
        grad = np.stack(self._per_bin(lambda b: self.ops[b].adjoint(res[b])))
        return grad * (2.0 / self.lipschitz)

    def data_residual_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(sum(np.sum(np.abs(r) ** 2) for r in self.residuals(x))))


def grasp_solve(binned: BinnedSpokeSet, coil_maps: CoilMaps, cfg: GraspConfig,
                grid: Optional[GridSpec] = None, threads: int = 1) -> GraspResult:
    """
    Proximal gradient with backtracking on the GRASP objective.

    The normalised data term has a 2-Lipschitz gradient, so the base step is
    1/2; a step is halved until the objective does not increase. The temporal
    TV term is applied through its proximal map, which is exact in the
    large-weight limit (every pixel collapses to its temporal mean).
    """
    cfg.validate()
    grid = grid or binned.source.grid
    if binned.n_bins == 0:
        raise ValueError("grasp needs at least one bin")
    problem = BinnedProblem(binned, coil_maps, grid, cfg, threads=threads)
    lipschitz = problem.estimate_lipschitz()
    logger.info("GRASP on %d bins of %d spokes, grid %d, L = %.4g",
                binned.n_bins, binned.spokes_per_bin, grid.nx, lipschitz)

    x = problem.adjoint_init()
    current = problem.objective(x)
    if not np.isfinite(current):
        raise NumericalError("GRASP objective is non-finite at the adjoint start")
    history = [current]
    base_step = 0.5
    step = base_step
    dual = None
    for it in range(cfg.iterations):
        g = problem.gradient(x)
        step = min(base_step, 2.0 * step)
        for _ in range(cfg.max_backtracks):
            candidate, trial_dual = tv_prox(x - step * g, step * cfg.tv_weight, cfg.tv_iterations, dual)
            value = problem.objective(candidate)
            if value <= current:
                break
            step *= 0.5
        else:
            logger.debug("GRASP: no decrease at iteration %d, stopping", it + 1)
            break
        x, current, dual = candidate, value, trial_dual
        history.append(current)
        if (it + 1) % 20 == 0:
            logger.debug("GRASP iteration %d objective %.6g step %.3g", it + 1, current, step)

    if not np.all(np.isfinite(x)):
        raise NumericalError("GRASP produced non-finite frames")
    image = DynamicImage(grid, x, binned.center_times)
    return GraspResult(image=image, objective=history, lipschitz=lipschitz)


def grasp_reconstruct(binned: BinnedSpokeSet, coil_maps: CoilMaps, cfg: GraspConfig,
                      grid: Optional[GridSpec] = None, threads: int = 1) -> DynamicImage:
    return grasp_solve(binned, coil_maps, cfg, grid=grid, threads=threads).image


# === SVD ===


def svd_subspace(dyn: DynamicImage, k: int) -> SubspaceModel:
    t, nx, ny = dyn.frames.shape
    if k < 1 or k > min(nx * ny, t):
        raise ValueError(f"rank {k} outside [1, {min(nx * ny, t)}]")
    casorati = dyn.frames.reshape(t, nx * ny).T
    u, s, vh = np.linalg.svd(casorati, full_matrices=False)
    spatial = (u[:, :k] * s[:k]).reshape(nx, ny, k)
    temporal = vh[:k, :].T
    logger.info("SVD kept %d of %d components (%.2f%% energy)", k, len(s),
                100.0 * np.sum(s[:k] ** 2) / max(np.sum(s**2), 1e-300))
    return SubspaceModel(dyn.grid, spatial, temporal, dyn.times, singular_values=s)


# === INTERPOLATION ===


def interpolate_bases(model: SubspaceModel, target_grid: GridSpec,
                      target_times: np.ndarray) -> SubspaceModel:
    """
    Bilinear upsampling of the spatial bases (real and imaginary parts
    separately) and linear interpolation of the temporal bases onto
    target_times, clamped beyond the first and last frame time.
    """
    target_times = np.asarray(target_times, dtype=np.float64)
    src = model.grid
    ratio = target_grid.delta / src.delta
    ix = (np.arange(target_grid.nx) - target_grid.nx / 2) * ratio + src.nx / 2
    iy = (np.arange(target_grid.ny) - target_grid.ny / 2) * ratio + src.ny / 2
    gx, gy = np.meshgrid(ix, iy, indexing="ij")
    coords = np.stack([gx.ravel(), gy.ravel()])

    spatial = np.empty((target_grid.nx, target_grid.ny, model.k), dtype=np.complex128)
    for j in range(model.k):
        basis = model.spatial[:, :, j]
        re = ndimage.map_coordinates(basis.real, coords, order=1, mode="nearest")
        im = ndimage.map_coordinates(basis.imag, coords, order=1, mode="nearest")
        spatial[:, :, j] = (re + 1j * im).reshape(target_grid.nx, target_grid.ny)

    temporal = np.empty((target_times.shape[0], model.k), dtype=np.complex128)
    for j in range(model.k):
        curve = model.temporal[:, j]
        temporal[:, j] = np.interp(target_times, model.frame_times, curve.real) + \
            1j * np.interp(target_times, model.frame_times, curve.imag)

    return SubspaceModel(target_grid, spatial, temporal, target_times,
                         singular_values=model.singular_values)
