"""
Tiny-golden-angle radial trajectory, spoke timing, weights and binning.

Sample m of a spoke with M samples sits at k_m = (m - M/2) * dk * (cos t, sin t),
so the DC sample is at m = M/2, matching the centred FFT layout in fourier.py.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .parallel import ordered_map
from .phantom import CoilMaps, GridSpec, PhantomSpec, analytic_kspace

logger = logging.getLogger(__name__)

TINY_GOLDEN_ANGLE_DEG = 23.62814
DEFAULT_TR_S = 2.3e-3
DEFAULT_N_SPOKES = 800


@dataclass(frozen=True)
class SpokeGeometry:
    index: int
    angle: float  # degrees in [0, 180)
    time: float  # seconds
    m: int  # readout length
    fov: float  # readout FOV in mm, dk = 1 / fov

    @property
    def delta_k(self) -> float:
        return 1.0 / self.fov

    @property
    def direction(self) -> np.ndarray:
        theta = np.deg2rad(self.angle)
        return np.array([np.cos(theta), np.sin(theta)])

    def readout(self) -> np.ndarray:
        """Signed k position of every sample along the spoke, 1/mm."""
        return (np.arange(self.m) - self.m // 2) * self.delta_k

    def k_points(self) -> np.ndarray:
        return self.readout()[:, None] * self.direction[None, :]


@dataclass
class SpokeSet:
    """Measured spokes: samples [N, n_coils, M] plus per-spoke angle and time."""

    angles: np.ndarray
    times: np.ndarray
    samples: np.ndarray
    tr: float
    readout_fov: float
    grid: GridSpec

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        n = self.angles.shape[0]
        if self.samples.ndim != 3 or self.samples.shape[0] != n or self.times.shape[0] != n:
            raise ValueError(
                f"samples {self.samples.shape} inconsistent with {n} spokes"
            )
        if self.samples.shape[2] % 2:
            raise ValueError("readout length must be even")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("spoke samples must be finite")

    @property
    def n_spokes(self) -> int:
        return self.samples.shape[0]

    @property
    def n_coils(self) -> int:
        return self.samples.shape[1]

    @property
    def m(self) -> int:
        return self.samples.shape[2]

    @property
    def window(self) -> float:
        """Acquisition window N * TR used to normalise time."""
        return self.n_spokes * self.tr

    def geometry(self, i: int) -> SpokeGeometry:
        return SpokeGeometry(i, float(self.angles[i]), float(self.times[i]), self.m, self.readout_fov)

    def geometries(self) -> List[SpokeGeometry]:
        return [self.geometry(i) for i in range(self.n_spokes)]

    def subset(self, indices: Sequence[int]) -> "SpokeSet":
        idx = np.asarray(indices, dtype=np.int64)
        return SpokeSet(self.angles[idx], self.times[idx], self.samples[idx],
                        self.tr, self.readout_fov, self.grid)


@dataclass
class SpokeBin:
    indices: np.ndarray
    center_time: float


@dataclass
class BinnedSpokeSet:
    source: SpokeSet
    bins: List[SpokeBin]
    spokes_per_bin: int
    dropped: int

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def center_times(self) -> np.ndarray:
        return np.array([b.center_time for b in self.bins])

    def spokes(self, b: int) -> SpokeSet:
        return self.source.subset(self.bins[b].indices)

    def flatten(self) -> np.ndarray:
        if not self.bins:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([b.indices for b in self.bins])


# === GEOMETRY ===


def readout_length(n: int, oversampling: float = 1.0) -> int:
    """Even readout length for an n-pixel grid."""
    m = int(2 * round(n * oversampling / 2))
    return max(m, 2)


def golden_angle_geometry(n_spokes: int = DEFAULT_N_SPOKES, m: int = 64, fov: float = 256.0,
                          tr: float = DEFAULT_TR_S,
                          psi_deg: float = TINY_GOLDEN_ANGLE_DEG) -> List[SpokeGeometry]:
    if n_spokes < 1:
        raise ValueError(f"n_spokes must be at least 1, got {n_spokes}")
    if psi_deg <= 0:
        raise ValueError(f"golden angle must be positive, got {psi_deg}")
    if m < 2 or m % 2:
        raise ValueError(f"readout length must be even and >= 2, got {m}")
    i = np.arange(n_spokes)
    angles = np.mod(i * psi_deg, 180.0)
    return [SpokeGeometry(int(j), float(angles[j]), float(j * tr), m, fov) for j in i]


def max_angular_gap(angles: Sequence[float]) -> float:
    a = np.unique(np.mod(np.asarray(angles, dtype=np.float64), 180.0))
    gaps = np.diff(np.concatenate([a, [a[0] + 180.0]]))
    return float(gaps.max())


# === WEIGHTS ===


def ramp_weights(m: int) -> np.ndarray:
    """w_m = |m - M/2| / (M/2): zero at DC, one at the first sample."""
    if m < 2 or m % 2:
        raise ValueError(f"readout length must be even and >= 2, got {m}")
    half = m // 2
    return np.abs(np.arange(m) - half) / half


def density_compensation(m: int) -> np.ndarray:
    if m < 2 or m % 2:
        raise ValueError(f"readout length must be even and >= 2, got {m}")
    d = np.maximum(np.abs(np.arange(m) - m // 2), 0.5)
    return d * (m / d.sum())


def area_weights(m: int, n_spokes: int, readout_fov: float, pixel: float) -> np.ndarray:
    """
    Density compensation scaled to the k-space area each sample covers,
    divided by pixel area so the Δ²-scaled adjoint gives image units.
    """
    mean_radius = np.maximum(np.abs(np.arange(m) - m // 2), 0.5).mean()
    radius = density_compensation(m) * mean_radius
    # the DC disc of radius dk/2 is shared by all N spokes: pi dk^2 / (4N) each
    radius[m // 2] = 0.25
    dk = 1.0 / readout_fov
    # each of the 2N half-spokes at radius r covers pi * r * dk^2 / N
    return radius * np.pi * dk**2 / (n_spokes * pixel**2)


# === BINNING ===


def bin_spokes(spoke_set: SpokeSet, spokes_per_bin: int) -> BinnedSpokeSet:
    if spokes_per_bin < 1:
        raise ValueError(f"spokes_per_bin must be at least 1, got {spokes_per_bin}")
    n = spoke_set.n_spokes
    if spokes_per_bin > n:
        raise ValueError(f"spokes_per_bin {spokes_per_bin} exceeds {n} spokes")
    n_bins = n // spokes_per_bin
    dropped = n - n_bins * spokes_per_bin
    if dropped:
        logger.warning("Dropping %d trailing spokes that do not fill a bin", dropped)
    bins = []
    for b in range(n_bins):
        idx = np.arange(b * spokes_per_bin, (b + 1) * spokes_per_bin)
        bins.append(SpokeBin(idx, float(spoke_set.times[idx].mean())))
    return BinnedSpokeSet(spoke_set, bins, spokes_per_bin, dropped)


def bin_center_times(n_spokes: int, tr: float, spokes_per_bin: int) -> np.ndarray:
    n_bins = n_spokes // spokes_per_bin
    return np.array([np.mean(np.arange(b * spokes_per_bin, (b + 1) * spokes_per_bin) * tr)
                     for b in range(n_bins)])


# === ACQUISITION ===


def simulate_spokes(spec: PhantomSpec, coils: CoilMaps, geometry: List[SpokeGeometry],
                    grid: GridSpec, tr: float, noise_sigma: Optional[float] = None,
                    noise_snr_db: float = np.inf, seed: int = 0,
                    threads: int = 1) -> SpokeSet:
    """
    Sample the analytic coil-weighted k-space at every spoke's points and time.

    Complex noise of standard deviation sigma (sigma / sqrt(2) per component)
    is added; when sigma is None it is derived from the target data SNR.
    """
    if not geometry:
        raise ValueError("geometry must contain at least one spoke")

    def acquire(g: SpokeGeometry) -> np.ndarray:
        return analytic_kspace(spec, coils, g.time, g.k_points())

    samples = np.stack(ordered_map(acquire, geometry, threads=threads))

    if noise_sigma is None:
        if np.isinf(noise_snr_db):
            noise_sigma = 0.0
        else:
            rms = float(np.sqrt(np.mean(np.abs(samples) ** 2)))
            noise_sigma = rms / 10 ** (noise_snr_db / 20.0)
    if noise_sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {noise_sigma}")
    if noise_sigma > 0:
        rng = np.random.default_rng([seed, 1])
        noise = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
        samples = samples + noise * (noise_sigma / np.sqrt(2.0))
    logger.info("Simulated %d spokes x %d coils x %d samples (noise sigma %.3g)",
                samples.shape[0], samples.shape[1], samples.shape[2], noise_sigma)

    return SpokeSet(
        angles=np.array([g.angle for g in geometry]),
        times=np.array([g.time for g in geometry]),
        samples=samples,
        tr=tr,
        readout_fov=geometry[0].fov,
        grid=grid,
    )
