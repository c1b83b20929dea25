"""Binned reference reconstructions: density-compensated adjoint and full-resolution GRASP."""

import logging
from typing import Optional

import numpy as np

from .fourier import RadialOperator, coil_combine
from .parallel import ordered_map
from .phantom import CoilMaps, DynamicImage, GridSpec
from .subspace_init import GraspConfig, grasp_reconstruct
from .trajectory import SpokeSet, area_weights, bin_spokes

logger = logging.getLogger(__name__)

BASELINE_METHODS = ("nufft", "grasp")


def nufft_baseline(spoke_set: SpokeSet, coil_maps: CoilMaps, spokes_per_bin: int,
                   grid: Optional[GridSpec] = None, threads: int = 1) -> DynamicImage:
    """One density-compensated, coil-combined adjoint frame per bin at the bin-centre time."""
    grid = grid or spoke_set.grid
    binned = bin_spokes(spoke_set, spokes_per_bin)
    raster = coil_maps.rasterize(grid)

    def reconstruct_bin(b: int) -> np.ndarray:
        spokes = binned.spokes(b)
        op = RadialOperator(spokes.angles, spokes.m, spokes.readout_fov, grid, raster)
        w = area_weights(spokes.m, spokes.n_spokes, spokes.readout_fov, grid.delta)
        return coil_combine(op.adjoint(spokes.samples * w[None, None, :]), raster)

    frames = np.stack(ordered_map(reconstruct_bin, range(binned.n_bins), threads=threads))
    logger.info("NUFFT baseline: %d frames at %d spokes/bin", binned.n_bins, spokes_per_bin)
    return DynamicImage(grid, frames, binned.center_times)


def grasp_baseline(spoke_set: SpokeSet, coil_maps: CoilMaps, spokes_per_bin: int,
                   grid: Optional[GridSpec] = None, cfg: Optional[GraspConfig] = None,
                   threads: int = 1) -> DynamicImage:
    cfg = cfg or GraspConfig()
    grid = grid or spoke_set.grid
    binned = bin_spokes(spoke_set, spokes_per_bin)
    logger.info("GRASP baseline: %d bins at %d spokes/bin on %dx%d", binned.n_bins,
                spokes_per_bin, grid.nx, grid.ny)
    return grasp_reconstruct(binned, coil_maps, cfg, grid=grid, threads=threads)


def run_baseline(method: str, spoke_set: SpokeSet, coil_maps: CoilMaps, spokes_per_bin: int,
                 cfg: Optional[GraspConfig] = None, threads: int = 1) -> DynamicImage:
    if method == "nufft":
        return nufft_baseline(spoke_set, coil_maps, spokes_per_bin, threads=threads)
    if method == "grasp":
        return grasp_baseline(spoke_set, coil_maps, spokes_per_bin, cfg=cfg, threads=threads)
    raise ValueError(f"unknown baseline method '{method}', expected one of {BASELINE_METHODS}")
