"""
Image quality metrics.

Reference-free: ROI-based SNR and 20-80% edge sharpness along line profiles
from the LV centre.
With ground truth: NRMSE and PSNR on magnitudes, plus x-t profile error.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from .phantom import LV_BLOB_INDEX, DynamicImage, GridSpec, PhantomSpec, cardiac_phase_times

logger = logging.getLogger(__name__)

N_PROFILES = 6
REPORT_COLUMNS = (
    ["method", "phase", "snr_db", "es_mean"]
    + [f"es_{i + 1}" for i in range(N_PROFILES)]
    + ["nrmse", "psnr_db"]
)


@dataclass
class MetricsConfig:
    roi_size: int = 5
    noise_roi_x: float = 0.0
    noise_roi_y: float = -115.0
    n_profiles: int = N_PROFILES
    profile_length_mm: float = 40.0
    xt_row_mm: float = -30.0
    baseline_bins: Tuple[int, ...] = (20, 40)

    def validate(self) -> None:
        if self.roi_size < 1:
            raise ValueError("metrics.roi_size must be positive")
        if self.n_profiles != N_PROFILES:
            raise ValueError(f"metrics.n_profiles must be {N_PROFILES} to match the report columns")
        if self.profile_length_mm <= 0:
            raise ValueError("metrics.profile_length_mm must be positive")


# === ROIS AND SNR ===


@dataclass(frozen=True)
class Roi:
    ix: int
    iy: int
    size: int = 5

    @classmethod
    def from_mm(cls, grid: GridSpec, x: float, y: float, size: int = 5) -> "Roi":
        return cls(int(round(x / grid.delta + grid.nx / 2)), int(round(y / grid.delta + grid.ny / 2)), size)

    def bounds(self) -> Tuple[slice, slice]:
        start_x = self.ix - self.size // 2
        start_y = self.iy - self.size // 2
        return slice(start_x, start_x + self.size), slice(start_y, start_y + self.size)

    def patch(self, image: np.ndarray) -> np.ndarray:
        sx, sy = self.bounds()
        if sx.start < 0 or sy.start < 0 or sx.stop > image.shape[0] or sy.stop > image.shape[1]:
            raise ValueError(f"ROI at ({self.ix}, {self.iy}) size {self.size} leaves the image")
        return image[sx, sy]

    def overlaps(self, other: "Roi") -> bool:
        ax, ay = self.bounds()
        bx, by = other.bounds()
        return ax.start < bx.stop and bx.start < ax.stop and ay.start < by.stop and by.start < ay.stop


def snr(image: np.ndarray, signal_roi: Roi, noise_roi: Roi) -> float:
    """10 log10(P_s / P_n) with P = mean magnitude over each patch."""
    if signal_roi.size < 1 or noise_roi.size < 1:
        raise ValueError("ROIs must be non-empty")
    if signal_roi.overlaps(noise_roi):
        raise ValueError("signal and noise ROIs overlap")
    magnitude = np.abs(image)
    p_s = float(np.mean(signal_roi.patch(magnitude)))
    p_n = float(np.mean(noise_roi.patch(magnitude)))
    if p_n == 0:
        raise ValueError("noise patch is identically zero")
    return 10.0 * np.log10(p_s / p_n)


# === EDGE SHARPNESS ===


def _first_crossing(profile: np.ndarray, level: float) -> float:
    above = np.nonzero(profile >= level)[0]
    if above.size == 0 or above[0] == 0:
        raise ValueError(f"profile does not cross {level:.4g} from below")
    i = above[0]
    lo, hi = profile[i - 1], profile[i]
    return (i - 1) + (level - lo) / (hi - lo)


def edge_segment(profile: np.ndarray) -> np.ndarray:
    """The stretch between the profile's minimum and maximum, oriented to rise."""
    i_min, i_max = int(np.argmin(profile)), int(np.argmax(profile))
    if i_min <= i_max:
        return profile[i_min:i_max + 1]
    return profile[i_max:i_min + 1][::-1]


def edge_sharpness(profile: Sequence[float], spacing: float = 1.0) -> float:
    """
    1 / distance between the 20% and 80% crossings of the edge, in 1/mm.

    Levels sit 20% and 80% of the way from the edge's floor to its peak, which is
    0.2*max and 0.8*max on a zero background.
    """
    p = np.asarray(profile, dtype=np.float64)
    if p.size < 2:
        raise ValueError("profile needs at least two samples")
    if p.max() <= 0:
        raise ValueError("profile has no positive maximum")
    edge = edge_segment(p)
    floor, peak = edge[0], edge[-1]
    if peak <= floor:
        raise ValueError("profile is flat")
    low = _first_crossing(edge, floor + 0.2 * (peak - floor))
    high = _first_crossing(edge, floor + 0.8 * (peak - floor))
    span = abs(high - low) * spacing
    if span == 0:
        raise ValueError("20% and 80% crossings coincide")
    return 1.0 / span


def radial_profiles(image: np.ndarray, grid: GridSpec, center: Tuple[float, float],
                    n_profiles: int = N_PROFILES, length_mm: float = 40.0,
                    spacing_mm: Optional[float] = None) -> Tuple[List[np.ndarray], float]:
    """Magnitude line profiles from `center` outwards at equally spaced angles."""
    spacing = spacing_mm or grid.delta / 2
    r = np.arange(0.0, length_mm + spacing / 2, spacing)
    magnitude = np.abs(image)
    profiles = []
    for j in range(n_profiles):
        angle = 2.0 * np.pi * j / n_profiles
        x = center[0] + r * np.cos(angle)
        y = center[1] + r * np.sin(angle)
        coords = np.stack([x / grid.delta + grid.nx / 2, y / grid.delta + grid.ny / 2])
        profiles.append(ndimage.map_coordinates(magnitude, coords, order=1, mode="nearest"))
    return profiles, spacing


# === GROUND-TRUTH METRICS ===


def nrmse_psnr(recon: DynamicImage, truth: DynamicImage) -> Tuple[float, float]:
    """Magnitude NRMSE and PSNR; PSNR is +inf for identical inputs."""
    if recon.frames.shape != truth.frames.shape:
        raise ValueError(f"shape mismatch: {recon.frames.shape} vs {truth.frames.shape}")
    a = np.abs(recon.frames)
    b = np.abs(truth.frames)
    err = np.linalg.norm(a - b)
    ref = np.linalg.norm(b)
    nrmse = float(err / ref) if ref > 0 else float("inf")
    mse = float(np.mean((a - b) ** 2))
    psnr = float("inf") if mse == 0 else float(10.0 * np.log10(b.max() ** 2 / mse))
    return nrmse, psnr


def xt_profile(dyn: DynamicImage, y_index: int) -> np.ndarray:
    """Magnitude along row y_index for every frame, shape [nx, T]."""
    if not 0 <= y_index < dyn.grid.ny:
        raise ValueError(f"y_index {y_index} outside [0, {dyn.grid.ny})")
    return np.abs(dyn.frames[:, :, y_index]).T


def xt_rmse(recon: DynamicImage, truth: DynamicImage, y_index: int) -> float:
    a = xt_profile(recon, y_index)
    b = xt_profile(truth, y_index)
    if a.shape != b.shape:
        raise ValueError(f"profile shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def row_index(grid: GridSpec, y_mm: float) -> int:
    return int(np.clip(round(y_mm / grid.delta + grid.ny / 2), 0, grid.ny - 1))


# === REPORT ===


def nearest_frame(times: np.ndarray, target: float, period: float) -> int:
    """Frame whose cardiac phase is closest to target's."""
    d = np.mod(np.asarray(times) - target + period / 2, period) - period / 2
    return int(np.argmin(np.abs(d)))


@dataclass
class MetricsReport:
    rows: List[Dict] = field(default_factory=list)

    def add(self, row: Dict) -> None:
        self.rows.append({col: row.get(col, np.nan) for col in REPORT_COLUMNS})

    def extend(self, other: "MetricsReport") -> None:
        self.rows.extend(other.rows)

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        """This report with other's rows appended; other replaces rows of the same method."""
        methods = {row["method"] for row in other.rows}
        merged = MetricsReport([row for row in self.rows if row["method"] not in methods])
        merged.extend(other)
        return merged

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        df = pd.read_csv(path)
        return cls(rows=df[REPORT_COLUMNS].to_dict(orient="records"))


def evaluate_reconstruction(method: str, recon: DynamicImage, spec: PhantomSpec,
                            cfg: MetricsConfig, truth: Optional[DynamicImage] = None) -> MetricsReport:
    """SNR and edge sharpness at end-systole and end-diastole, plus NRMSE/PSNR when truth exists."""
    cfg.validate()
    grid = recon.grid
    systole, diastole = cardiac_phase_times(spec)
    nrmse, psnr = nrmse_psnr(recon, truth) if truth is not None else (np.nan, np.nan)
    noise_roi = Roi.from_mm(grid, cfg.noise_roi_x, cfg.noise_roi_y, cfg.roi_size)

    report = MetricsReport()
    for phase, t_phase in (("systole", systole), ("diastole", diastole)):
        index = nearest_frame(recon.times, t_phase, spec.t_card)
        image = recon.frames[index]
        cx, cy, _ = spec.blobs[LV_BLOB_INDEX].state(recon.times[index], spec.t_card)
        row = {"method": method, "phase": phase, "nrmse": nrmse, "psnr_db": psnr}
        try:
            row["snr_db"] = snr(image, Roi.from_mm(grid, cx, cy, cfg.roi_size), noise_roi)
        except ValueError as exc:
            logger.warning("%s %s: SNR undefined (%s)", method, phase, exc)
        profiles, spacing = radial_profiles(image, grid, (cx, cy), cfg.n_profiles, cfg.profile_length_mm)
        es = []
        for i, profile in enumerate(profiles):
            try:
                value = edge_sharpness(profile, spacing)
            except ValueError as exc:
                logger.warning("%s %s profile %d: %s", method, phase, i + 1, exc)
                value = np.nan
            row[f"es_{i + 1}"] = value
            es.append(value)
        row["es_mean"] = float(np.nanmean(es)) if np.any(np.isfinite(es)) else np.nan
        report.add(row)
    return report
