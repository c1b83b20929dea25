"""
Centred FFTs, the Fourier-slice spoke operator, a brute-force DTFT oracle and
the direct (no gridding kernel) radial forward/adjoint pair.

Sign convention: F(k) = sum f(r) exp(-2 pi i k.r). Forward FFTs are
unnormalised and inverses divide by M; pixel-area factors are applied
explicitly where continuous integrals are approximated.
"""

import logging
from typing import Optional, Protocol, Tuple

import numpy as np
from scipy import ndimage

from .phantom import CoilMaps, ComplexImage, GridSpec, PhantomSpec, evaluate_scene
from .trajectory import SpokeGeometry, SpokeSet

logger = logging.getLogger(__name__)


# === CENTRED 1D FFT ===


def fft1_centered(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """X_k = sum_n v_n exp(-2 pi i (n - M/2)(k - M/2) / M)."""
    v = np.asarray(v)
    m = v.shape[axis]
    if m % 2 == 0:
        return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(v, axes=axis), axis=axis), axes=axis)
    c = m / 2.0
    n = np.arange(m)
    shape = [1] * v.ndim
    shape[axis] = m
    pre = np.exp(2j * np.pi * c * n / m).reshape(shape)
    post = np.exp(-2j * np.pi * (c * c - c * n) / m).reshape(shape)
    return post * np.fft.fft(v * pre, axis=axis)


def ifft1_centered(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    m = x.shape[axis]
    if m % 2 == 0:
        return np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(x, axes=axis), axis=axis), axes=axis)
    return np.conj(fft1_centered(np.conj(x), axis=axis)) / m


# === SAMPLABLE IMAGES ===


class SamplableImage(Protocol):
    """Anything that can be queried at mm coordinates; zero outside its FOV."""

    def query(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...


class CoilWeightedPhantom:
    """Analytic coil x phantom product at a fixed time."""

    def __init__(self, spec: PhantomSpec, coils: CoilMaps, coil: int, t: float, fov: float):
        self.spec = spec
        self.coils = coils
        self.coil = coil
        self.t = t
        self.fov = fov

    def query(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        inside = x**2 + y**2 <= (self.fov / 2) ** 2
        values = evaluate_scene(self.spec, self.t, x, y) * self.coils.evaluate(x, y)[self.coil]
        return np.where(inside, values, 0.0)


class BilinearImage:
    """Bilinear interpolation of a ComplexImage, real and imaginary parts separately."""

    def __init__(self, image: ComplexImage):
        self.image = image

    def query(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        grid = self.image.grid
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        coords = np.stack([x.ravel() / grid.delta + grid.nx / 2, y.ravel() / grid.delta + grid.ny / 2])
        re = ndimage.map_coordinates(self.image.values.real, coords, order=1, mode="constant", cval=0.0)
        im = ndimage.map_coordinates(self.image.values.imag, coords, order=1, mode="constant", cval=0.0)
        inside = (x**2 + y**2 <= (grid.fov / 2) ** 2).ravel()
        return np.where(inside, re + 1j * im, 0.0).reshape(x.shape)


# === FOURIER SLICE ===


def rotated_lattice(spoke: SpokeGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """
    M x M points at spacing fov/M rotated by the spoke angle about the FOV centre.

    Axis 0 runs along the spoke direction, axis 1 across it.
    """
    m = spoke.m
    step = spoke.fov / m
    u = (np.arange(m) - m // 2) * step
    e = spoke.direction
    uu, vv = np.meshgrid(u, u, indexing="ij")
    x = uu * e[0] - vv * e[1]
    y = uu * e[1] + vv * e[0]
    return x, y


def support_mask(x: np.ndarray, y: np.ndarray, fov: float) -> np.ndarray:
    return x**2 + y**2 <= (fov / 2) ** 2


def project_to_spoke(lattice_values: np.ndarray, spoke: SpokeGeometry) -> np.ndarray:
    """Line-integrate across the spoke then FFT along it; works on [..., M, M]."""
    step = spoke.fov / spoke.m
    projection = lattice_values.sum(axis=-1) * step
    return fft1_centered(projection, axis=-1) * step


def fourier_slice_forward(img: SamplableImage, spoke: SpokeGeometry,
                          grid: Optional[GridSpec] = None) -> np.ndarray:
    x, y = rotated_lattice(spoke)
    values = np.asarray(img.query(x, y), dtype=np.complex128)
    if grid is not None:
        values = np.where(support_mask(x, y, grid.fov), values, 0.0)
    return project_to_spoke(values, spoke)


# === DTFT ORACLE ===


def _exponentials(grid: GridSpec, k_points: np.ndarray, sign: float) -> Tuple[np.ndarray, np.ndarray]:
    axis = grid.axis()
    ex = np.exp(sign * 2j * np.pi * np.outer(k_points[:, 0], axis))
    ey = np.exp(sign * 2j * np.pi * np.outer(k_points[:, 1], axis))
    return ex, ey


def dtft_oracle(img: ComplexImage, k_points: np.ndarray) -> np.ndarray:
    """y(k) = delta^2 * sum_pixels img(r) exp(-2 pi i k.r)."""
    grid = img.grid
    k_points = np.asarray(k_points, dtype=np.float64).reshape(-1, 2)
    ex, ey = _exponentials(grid, k_points, -1.0)
    inner = img.values @ ey.T  # [nx, K]
    return grid.delta**2 * np.sum(ex * inner.T, axis=1)


# === DIRECT RADIAL OPERATOR ===


class RadialOperator:
    """
    Multi-coil DTFT on a set of spokes.

    forward: image [nx, ny] -> samples [n_spokes, C, M]
    adjoint: samples -> image, the exact Hermitian transpose of forward.
    """

    def __init__(self, angles: np.ndarray, m: int, readout_fov: float, grid: GridSpec,
                 coil_raster: np.ndarray):
        self.grid = grid
        self.m = m
        self.n_spokes = len(angles)
        self.readout_fov = readout_fov
        self.coils = coil_raster
        geometry = [SpokeGeometry(i, float(a), 0.0, m, readout_fov) for i, a in enumerate(angles)]
        k = np.concatenate([g.k_points() for g in geometry]) if geometry else np.zeros((0, 2))
        self.k_points = k
        self.ex, self.ey = _exponentials(grid, k, -1.0)
        self.scale = grid.delta**2

    @classmethod
    def for_spokes(cls, spoke_set: SpokeSet, coil_maps: CoilMaps, grid: GridSpec) -> "RadialOperator":
        return cls(spoke_set.angles, spoke_set.m, spoke_set.readout_fov, grid, coil_maps.rasterize(grid))

    @property
    def n_coils(self) -> int:
        return self.coils.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = self.coils * x[None]  # [C, nx, ny]
        inner = z @ self.ey.T  # [C, nx, K]
        y = self.scale * np.einsum("ki,cik->ck", self.ex, inner)
        return y.reshape(self.n_coils, self.n_spokes, self.m).transpose(1, 0, 2)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        flat = y.transpose(1, 0, 2).reshape(self.n_coils, -1)  # [C, K]
        weighted = np.conj(self.ex).T[None] * flat[:, None, :]  # [C, nx, K]
        per_coil = weighted @ np.conj(self.ey)  # [C, nx, ny]
        return self.scale * np.sum(np.conj(self.coils) * per_coil, axis=0)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x))


def adjoint_radial(spoke_set: SpokeSet, dcf: np.ndarray, coil_maps: CoilMaps,
                   grid: GridSpec) -> ComplexImage:
    """Density-weighted adjoint summed over coils with conjugate coil weights."""
    if spoke_set.n_spokes == 0:
        raise ValueError("adjoint_radial needs at least one spoke")
    op = RadialOperator.for_spokes(spoke_set, coil_maps, grid)
    return ComplexImage(grid, op.adjoint(spoke_set.samples * np.asarray(dcf)[None, None, :]))


def coil_combine(image: np.ndarray, coil_raster: np.ndarray) -> np.ndarray:
    """Divide a conj-coil-summed image by the coil sum-of-squares."""
    sos = np.sum(np.abs(coil_raster) ** 2, axis=0)
    return image / np.maximum(sos, 1e-12)
