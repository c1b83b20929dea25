"""
Analytic dynamic phantom and coil sensitivities.

The scene is a sum of complex Gaussian blobs whose centres and widths follow
truncated Fourier series in time. Coils are complex Gaussians too, so the
coil-weighted k-space has a closed form and acquisition never touches the
reconstruction grid.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_FOV_MM = 256.0
DEFAULT_T_CARD_S = 0.8
MIN_GRID = 8


# === GRID AND IMAGE CONTAINERS ===


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    fov: float = DEFAULT_FOV_MM

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ValueError(f"grid must have pixels, got {self.nx}x{self.ny}")
        if self.nx != self.ny:
            raise ValueError(f"grid must be square, got {self.nx}x{self.ny}")
        if self.nx < MIN_GRID:
            raise ValueError(f"grid size must be at least {MIN_GRID}, got {self.nx}")
        if not np.isfinite(self.fov) or self.fov <= 0:
            raise ValueError(f"fov must be positive, got {self.fov}")

    @property
    def delta(self) -> float:
        return self.fov / self.nx

    def axis(self) -> np.ndarray:
        """Pixel-centre coordinates in mm; the FOV centre sits at index n/2."""
        return (np.arange(self.nx) - self.nx / 2) * self.delta

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        a = self.axis()
        return np.meshgrid(a, a, indexing="ij")

    def support(self) -> np.ndarray:
        x, y = self.mesh()
        return x**2 + y**2 <= (self.fov / 2) ** 2


@dataclass
class ComplexImage:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"image shape {self.values.shape} does not match grid {self.grid.nx}x{self.grid.ny}"
            )


@dataclass
class DynamicImage:
    """Frames indexed [T, nx, ny] with one timestamp per frame."""

    grid: GridSpec
    frames: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.grid.nx, self.grid.ny):
            raise ValueError(f"frames shape {self.frames.shape} does not match grid")
        if self.frames.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"{self.frames.shape[0]} frames but {self.times.shape[0]} frame times"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def frame(self, index: int) -> ComplexImage:
        return ComplexImage(self.grid, self.frames[index])


# === PHANTOM SPEC ===


@dataclass
class FourierSeries:
    """value(t) = c0 + sum_h a_h cos(2 pi h t / T) + b_h sin(2 pi h t / T).

    Coefficients are stored flat as (c0, a1, b1, a2, b2, ...). Periodic up to rounding:
    t + T is itself rounded, so value(t + T) matches value(t) to about 1e-15, not bit for bit.
    """

    coeffs: Tuple[float, ...]

    def __post_init__(self):
        self.coeffs = tuple(float(c) for c in self.coeffs)
        if len(self.coeffs) % 2 != 1:
            raise ValueError("Fourier series needs c0 followed by (a, b) pairs")

    @property
    def harmonics(self) -> int:
        return (len(self.coeffs) - 1) // 2

    def __call__(self, t, period: float):
        t = np.asarray(t, dtype=np.float64)
        phase = 2.0 * np.pi * np.mod(t, period) / period
        value = np.full_like(t, self.coeffs[0])
        for h in range(1, self.harmonics + 1):
            a, b = self.coeffs[2 * h - 1], self.coeffs[2 * h]
            value = value + a * np.cos(h * phase) + b * np.sin(h * phase)
        return value

    def lower_bound(self) -> float:
        return self.coeffs[0] - sum(abs(c) for c in self.coeffs[1:])

    def upper_abs_bound(self) -> float:
        return abs(self.coeffs[0]) + sum(abs(c) for c in self.coeffs[1:])

    def is_static(self) -> bool:
        return all(c == 0.0 for c in self.coeffs[1:])


def constant(value: float) -> FourierSeries:
    return FourierSeries((value,))


@dataclass
class Blob:
    amplitude: complex
    center_x: FourierSeries
    center_y: FourierSeries
    sigma: FourierSeries

    def state(self, t: float, period: float) -> Tuple[float, float, float]:
        return (
            float(self.center_x(t, period)),
            float(self.center_y(t, period)),
            float(self.sigma(t, period)),
        )


@dataclass
class PhantomSpec:
    blobs: List[Blob] = field(default_factory=list)
    t_card: float = DEFAULT_T_CARD_S
    fov: float = DEFAULT_FOV_MM

    def validate(self, grid: GridSpec) -> None:
        if not np.isfinite(self.t_card) or self.t_card <= 0:
            raise ValueError(f"t_card must be positive, got {self.t_card}")
        for i, blob in enumerate(self.blobs):
            if blob.sigma.lower_bound() < grid.delta:
                raise ValueError(
                    f"blob {i}: sigma may drop below one pixel ({grid.delta:.3f} mm)"
                )
            reach = np.hypot(blob.center_x.upper_abs_bound(), blob.center_y.upper_abs_bound())
            if reach > self.fov / 2:
                raise ValueError(f"blob {i}: centre trajectory leaves the FOV")


def default_phantom(fov: float = DEFAULT_FOV_MM, t_card: float = DEFAULT_T_CARD_S) -> PhantomSpec:
    """Torso-like background, a beating left ventricle, a right ventricle and a small moving blob."""
    blobs = [
        Blob(0.5 + 0j, constant(0.0), constant(0.0), constant(45.0)),
        # left ventricle; its width drives the systole/diastole phases
        Blob(1.0 + 0j, FourierSeries((-20.0, 0.0, 2.0)), constant(10.0),
             FourierSeries((18.0, 5.0, 0.0, 1.5, 0.0))),
        Blob(0.7 + 0j, constant(25.0), constant(5.0), FourierSeries((14.0, 3.0, 0.0))),
        Blob(0.5 * np.exp(0.3j), FourierSeries((-20.0, 0.0, 6.0)), constant(-30.0),
             constant(6.0)),
    ]
    return PhantomSpec(blobs=blobs, t_card=t_card, fov=fov)


LV_BLOB_INDEX = 1


def cardiac_phase_times(spec: PhantomSpec, blob_index: int = LV_BLOB_INDEX,
                        samples: int = 2000) -> Tuple[float, float]:
    """(end-systole, end-diastole) times: minimal and maximal blob width in the first cycle."""
    t = np.arange(samples) * spec.t_card / samples
    sigma = spec.blobs[blob_index].sigma(t, spec.t_card)
    return float(t[np.argmin(sigma)]), float(t[np.argmax(sigma)])


# === RENDERING ===


def render_frame(spec: PhantomSpec, t: float, grid: GridSpec) -> ComplexImage:
    if not np.isfinite(t):
        raise ValueError(f"frame time must be finite, got {t}")
    x, y = grid.mesh()
    return ComplexImage(grid, evaluate_scene(spec, t, x, y))


def render_dynamic(spec: PhantomSpec, times: Sequence[float], grid: GridSpec) -> DynamicImage:
    times = np.asarray(times, dtype=np.float64)
    frames = np.stack([render_frame(spec, t, grid).values for t in times]) if len(times) else \
        np.zeros((0, grid.nx, grid.ny), dtype=np.complex128)
    return DynamicImage(grid, frames, times)


def evaluate_scene(spec: PhantomSpec, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Scene value at arbitrary mm coordinates (no support mask)."""
    values = np.zeros(np.broadcast(x, y).shape, dtype=np.complex128)
    for blob in spec.blobs:
        cx, cy, sigma = blob.state(t, spec.t_card)
        values += blob.amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2))
    return values


# === COILS ===


@dataclass
class CoilMaps:
    """Analytic complex Gaussian coils; `raster` holds an optional sampled copy."""

    gains: Optional[np.ndarray] = None
    centers: Optional[np.ndarray] = None
    widths: Optional[np.ndarray] = None
    raster: Optional[np.ndarray] = None
    raster_grid: Optional[GridSpec] = None

    @property
    def is_analytic(self) -> bool:
        return self.gains is not None

    @property
    def n_coils(self) -> int:
        if self.is_analytic:
            return len(self.gains)
        return self.raster.shape[0]

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Coil values [C, *shape] at mm coordinates."""
        if not self.is_analytic:
            raise ValueError("coil maps are rasterized only; analytic form required")
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.empty((self.n_coils,) + np.broadcast(x, y).shape, dtype=np.complex128)
        for c in range(self.n_coils):
            tau = self.widths[c]
            if np.isinf(tau):
                out[c] = self.gains[c]
                continue
            d2 = (x - self.centers[c, 0]) ** 2 + (y - self.centers[c, 1]) ** 2
            out[c] = self.gains[c] * np.exp(-d2 / (2.0 * tau**2))
        return out

    def rasterize(self, grid: GridSpec) -> np.ndarray:
        if not self.is_analytic:
            if self.raster_grid != grid:
                raise ValueError("rasterized coil maps exist only on their own grid")
            return self.raster
        x, y = grid.mesh()
        return self.evaluate(x, y)

    def sum_of_squares(self, grid: GridSpec) -> np.ndarray:
        return np.sum(np.abs(self.rasterize(grid)) ** 2, axis=0)


def make_coil_maps(n_coils: int, grid: GridSpec, seed: int = 0) -> CoilMaps:
    if n_coils < 1:
        raise ValueError(f"n_coils must be at least 1, got {n_coils}")
    if n_coils == 1:
        return CoilMaps(
            gains=np.ones(1, dtype=np.complex128),
            centers=np.zeros((1, 2)),
            widths=np.array([np.inf]),
        )

    rng = np.random.default_rng(seed)
    radius = 0.55 * grid.fov
    angles = 2.0 * np.pi * np.arange(n_coils) / n_coils
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    phases = angles + rng.uniform(-0.2, 0.2, size=n_coils)
    magnitudes = rng.uniform(0.8, 1.2, size=n_coils)
    coils = CoilMaps(
        gains=magnitudes * np.exp(1j * phases),
        centers=centers,
        widths=np.full(n_coils, 0.6 * grid.fov),
    )

    sos = coils.sum_of_squares(grid)[grid.support()]
    if sos.min() < 0.1:
        raise ValueError(f"coil coverage has a dead zone (min sum-of-squares {sos.min():.3f})")
    logger.debug("Built %d coils, min sum-of-squares %.3f", n_coils, sos.min())
    return coils


# === ANALYTIC K-SPACE ===


def analytic_kspace(spec: PhantomSpec, coils: CoilMaps, t: float,
                    k_points: np.ndarray) -> np.ndarray:
    """
    Exact k-space of coil x scene at time t, F(k) = int f(r) exp(-2 pi i k.r) dr.

    k_points: [K, 2] in 1/mm. Returns [C, K] complex.
    """
    if not coils.is_analytic:
        raise ValueError("analytic_kspace needs analytic coil maps")
    k_points = np.asarray(k_points, dtype=np.float64).reshape(-1, 2)
    kx, ky = k_points[:, 0], k_points[:, 1]
    k2 = kx**2 + ky**2
    out = np.zeros((coils.n_coils, k_points.shape[0]), dtype=np.complex128)

    for blob in spec.blobs:
        cx, cy, sigma = blob.state(t, spec.t_card)
        p1 = 1.0 / sigma**2
        for c in range(coils.n_coils):
            tau = coils.widths[c]
            p2 = 0.0 if np.isinf(tau) else 1.0 / tau**2
            mx, my = coils.centers[c]
            p = p1 + p2
            s2 = 1.0 / p
            ux = (p1 * cx + p2 * mx) / p
            uy = (p1 * cy + p2 * my) / p
            scale = np.exp(-p1 * p2 * ((cx - mx) ** 2 + (cy - my) ** 2) / (2.0 * p))
            amp = blob.amplitude * coils.gains[c] * scale
            out[c] += amp * 2.0 * np.pi * s2 * np.exp(-2.0 * np.pi**2 * s2 * k2) * \
                np.exp(-2j * np.pi * (kx * ux + ky * uy))
    return out
