"""
End-to-end pipeline behind the CLI:
simulate -> reconstruct (crop, bin, GRASP, SVD, interpolate, fit, fine-tune, infer)
-> baselines -> evaluate -> export -> report.
"""

import dataclasses
import io
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from .baselines import BASELINE_METHODS, run_baseline
from .config import ExperimentConfig
from .errors import CineSpokeError, ConfigError, FormatError, StageError
from .inr import CoordinateNetwork, build_network
from .metrics import MetricsReport, evaluate_reconstruction, nearest_frame, row_index, xt_profile, xt_rmse
from .phantom import (
    CoilMaps,
    DynamicImage,
    GridSpec,
    PhantomSpec,
    cardiac_phase_times,
    make_coil_maps,
    render_dynamic,
)
from .recon import TrainLog, default_frame_times, fine_tune, fit_to_bases, infer
from .report_export import build_excel_from_report, render_report_to_pdf
from .subspace_init import SubspaceModel, crop_center, grasp_reconstruct, interpolate_bases, svd_subspace
from .tensor_io import (
    checkpoint_entries,
    checkpoint_from,
    dynamic_entries,
    dynamic_from,
    load_image,
    read_bundle,
    spoke_set_entries,
    spoke_set_from,
    subspace_entries,
    subspace_from,
    write_bundle,
)
from .trajectory import SpokeSet, bin_spokes, golden_angle_geometry, readout_length, simulate_spokes
from .visualisations import (
    create_basis_figure,
    create_frame_heatmap,
    create_kspace_chart,
    create_loss_chart,
    create_metric_bar,
    create_trajectory_chart,
    create_xt_profile_chart,
)

logger = logging.getLogger(__name__)

SPOKES_FILE = "spokes.cspk"
TRUTH_FILE = "truth.cspk"
RECON_FILE = "recon.cspk"
CHECKPOINT_FILE = "checkpoint.cspk"
TRAINLOG_FILE = "trainlog.csv"
METRICS_FILE = "metrics.csv"
STAGES_DIR = "stages"
NO_INIT_SUFFIX = "_no_init"
EXPORT_FORMATS = ("pgm", "png", "csv")

StageHook = Callable[[str, object], None]


@contextmanager
def stage(name: str):
    logger.info("Stage: %s", name)
    try:
        yield
    except StageError:
        raise
    except (CineSpokeError, ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        raise StageError(name, exc) from exc


# === SIMULATION ===


@dataclass
class Acquisition:
    grid: GridSpec
    spec: PhantomSpec
    coils: CoilMaps


@dataclass
class SimulationResult:
    spokes: SpokeSet
    truth: DynamicImage
    acquisition: Acquisition


def build_acquisition(cfg: ExperimentConfig) -> Acquisition:
    cfg.validate()
    grid = cfg.grid.spec()
    return Acquisition(grid, cfg.phantom_spec(), make_coil_maps(cfg.coils.n_coils, grid, cfg.coils.seed))


def simulate(cfg: ExperimentConfig) -> SimulationResult:
    with stage("simulate"):
        acq = build_acquisition(cfg)
        t = cfg.trajectory
        m = readout_length(acq.grid.nx, t.oversampling)
        geometry = golden_angle_geometry(t.n_spokes, m, m * acq.grid.delta, t.tr, t.golden_angle)
        spokes = simulate_spokes(acq.spec, acq.coils, geometry, acq.grid, t.tr,
                                 noise_sigma=cfg.acquisition.noise_sigma,
                                 noise_snr_db=cfg.acquisition.noise_snr_db,
                                 seed=cfg.run.seed, threads=cfg.run.threads)
        truth = render_dynamic(acq.spec, default_frame_times(spokes, cfg.recon.frame_spokes_per_bin), acq.grid)
    return SimulationResult(spokes, truth, acq)


# === RECONSTRUCTION ===


@dataclass
class ReconResult:
    spatial: CoordinateNetwork
    temporal: CoordinateNetwork
    image: DynamicImage
    log: TrainLog
    lowres: Optional[DynamicImage] = None
    svd_model: Optional[SubspaceModel] = None
    init_model: Optional[SubspaceModel] = None
    init_image: Optional[DynamicImage] = None
    temporal_snapshots: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)


def build_networks(cfg: ExperimentConfig, spokes: SpokeSet) -> Tuple[CoordinateNetwork, CoordinateNetwork]:
    r = cfg.recon
    fov = spokes.grid.fov
    spatial = build_network(r.k, cfg.hashgrid, r.hidden, r.hidden_layers, (-fov / 2, fov / 2),
                            r.precision, seed=r.seed)
    temporal = build_network(r.k, dataclasses.replace(cfg.hashgrid, dim=1), r.hidden, r.hidden_layers,
                             (0.0, spokes.window), r.precision, seed=r.seed + 1)
    return spatial, temporal


def reconstruct(cfg: ExperimentConfig, spokes: SpokeSet, coils: CoilMaps,
                skip_init: bool = False, hook: Optional[StageHook] = None,
                keep_snapshots: bool = False) -> ReconResult:
    """Full subspace reconstruction; `skip_init` trains from random networks."""
    cfg.validate()
    hook = hook or (lambda name, obj: None)
    threads = cfg.run.threads
    skip_init = skip_init or cfg.recon.skip_init
    spatial, temporal = build_networks(cfg, spokes)
    log = TrainLog()
    result_parts = {}

    if not skip_init:
        with stage("crop_center"):
            low = crop_center(spokes, cfg.grasp.lowres_fraction)
        with stage("bin"):
            binned = bin_spokes(low, cfg.grasp.spokes_per_bin)
        with stage("grasp"):
            lowres = grasp_reconstruct(binned, coils, cfg.grasp, threads=threads)
            hook("grasp", lowres)
        with stage("svd"):
            svd_model = svd_subspace(lowres, cfg.recon.k)
            hook("svd", svd_model)
        with stage("interpolate"):
            init_model = interpolate_bases(svd_model, spokes.grid, spokes.times)
            hook("interpolate", init_model)
        with stage("fit_to_bases"):
            log.extend(fit_to_bases(spatial, temporal, init_model, cfg.recon, threads=threads))
        result_parts = {"lowres": lowres, "svd_model": svd_model, "init_model": init_model}
    else:
        logger.info("Skipping initialisation; fine-tuning from random networks")

    frame_times = default_frame_times(spokes, cfg.recon.frame_spokes_per_bin)
    init_image = None
    if not skip_init:
        with stage("infer_init"):
            init_image = infer(spatial, temporal, spokes.grid, frame_times)

    snapshots: Dict[int, Dict[str, np.ndarray]] = {}
    with stage("fine_tune"):
        fine_tune(spatial, temporal, spokes, coils, cfg.recon, threads=threads, log=log,
                  snapshots=snapshots if keep_snapshots else None)
    with stage("infer"):
        image = infer(spatial, temporal, spokes.grid, frame_times)
    return ReconResult(spatial, temporal, image, log, init_image=init_image,
                       temporal_snapshots=snapshots, **result_parts)


def baseline(cfg: ExperimentConfig, spokes: SpokeSet, coils: CoilMaps, method: str,
             spokes_per_bin: int) -> DynamicImage:
    if method not in BASELINE_METHODS:
        raise ConfigError("method", f"unknown baseline '{method}', expected one of {BASELINE_METHODS}")
    with stage(f"baseline_{method}"):
        return run_baseline(method, spokes, coils, spokes_per_bin, cfg=cfg.grasp, threads=cfg.run.threads)


def evaluate(cfg: ExperimentConfig, method: str, recon: DynamicImage,
             truth: Optional[DynamicImage] = None) -> MetricsReport:
    with stage("evaluate"):
        return evaluate_reconstruction(method, recon, cfg.phantom_spec(), cfg.metrics, truth)


def resample_truth(cfg: ExperimentConfig, recon: DynamicImage) -> DynamicImage:
    """Ground truth rendered at the reconstruction's own frame times."""
    return render_dynamic(cfg.phantom_spec(), recon.times, recon.grid)


def temporal_fidelity(cfg: ExperimentConfig, recon: DynamicImage) -> float:
    """x-t profile RMSE along the configured row against truth at the same times."""
    truth = resample_truth(cfg, recon)
    return xt_rmse(recon, truth, row_index(recon.grid, cfg.metrics.xt_row_mm))


def network_bases(spatial: CoordinateNetwork, temporal: CoordinateNetwork, grid: GridSpec,
                  times: np.ndarray) -> SubspaceModel:
    """Sample both networks into a SubspaceModel for plotting and saving."""
    x, y = grid.mesh()
    u = spatial.evaluate(np.stack([x.ravel(), y.ravel()], axis=1)).reshape(grid.nx, grid.ny, -1)
    v = temporal.evaluate(np.asarray(times, dtype=np.float64).reshape(-1, 1))
    return SubspaceModel(grid, u, v, np.asarray(times, dtype=np.float64))


def benchmark(cfg: ExperimentConfig, sim: SimulationResult, proposed: DynamicImage,
              methods: Tuple[str, ...] = BASELINE_METHODS) -> Tuple[MetricsReport, Dict[str, DynamicImage]]:
    """Metrics for the proposed reconstruction and every baseline at each configured bin size."""
    report = evaluate(cfg, "proposed", proposed, resample_truth(cfg, proposed))
    images: Dict[str, DynamicImage] = {"proposed": proposed}
    for method in methods:
        for spb in cfg.metrics.baseline_bins:
            name = f"{method}_{spb}"
            image = baseline(cfg, sim.spokes, sim.acquisition.coils, method, spb)
            images[name] = image
            report.extend(evaluate(cfg, name, image, resample_truth(cfg, image)))
    return report, images


# === FILE COMMANDS ===


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path) -> Tuple[Path, Path]:
    result = simulate(cfg)
    with stage("write"):
        spokes_path = write_bundle(Path(out_dir) / SPOKES_FILE, spoke_set_entries(result.spokes))
        truth_path = write_bundle(Path(out_dir) / TRUTH_FILE, dynamic_entries(result.truth))
    logger.info("Wrote %s and %s", spokes_path, truth_path)
    return spokes_path, truth_path


def no_init_name(name: str) -> str:
    """File name used by `--skip-init` runs, so they sit beside the initialised run."""
    path = Path(name)
    return f"{path.stem}{NO_INIT_SUFFIX}{path.suffix}"


def _load_spokes(path: Path) -> SpokeSet:
    with stage("read_spokes"):
        return spoke_set_from(read_bundle(path))


def cmd_reconstruct(cfg: ExperimentConfig, spokes_path: Path, out_dir: Path,
                    skip_init: bool = False, dump_stages: bool = False) -> Dict[str, Path]:
    spokes = _load_spokes(spokes_path)
    coils = make_coil_maps(cfg.coils.n_coils, spokes.grid, cfg.coils.seed)
    out_dir = Path(out_dir)
    dump_stages = dump_stages or cfg.run.dump_stages
    skip_init = skip_init or cfg.recon.skip_init
    name = no_init_name if skip_init else str

    def hook(stage_name: str, obj) -> None:
        if not dump_stages:
            return
        entries = subspace_entries(obj) if isinstance(obj, SubspaceModel) else dynamic_entries(obj)
        write_bundle(out_dir / STAGES_DIR / name(f"{stage_name}.cspk"), entries)

    result = reconstruct(cfg, spokes, coils, skip_init=skip_init, hook=hook)
    with stage("write"):
        paths = {
            "checkpoint": write_bundle(out_dir / name(CHECKPOINT_FILE),
                                       checkpoint_entries(result.spatial, result.temporal)),
            "image": write_bundle(out_dir / name(RECON_FILE), dynamic_entries(result.image)),
            "trainlog": out_dir / name(TRAINLOG_FILE),
        }
        result.log.to_csv(paths["trainlog"])
    return paths


def cmd_baseline(cfg: ExperimentConfig, spokes_path: Path, method: str, spokes_per_bin: int,
                 out_dir: Path) -> Path:
    if method not in BASELINE_METHODS:
        raise ConfigError("method", f"unknown baseline '{method}', expected one of {BASELINE_METHODS}")
    spokes = _load_spokes(spokes_path)
    coils = make_coil_maps(cfg.coils.n_coils, spokes.grid, cfg.coils.seed)
    image = baseline(cfg, spokes, coils, method, spokes_per_bin)
    with stage("write"):
        return write_bundle(Path(out_dir) / f"{method}_{spokes_per_bin}.cspk", dynamic_entries(image))


def cmd_evaluate(cfg: ExperimentConfig, recon_path: Path, truth_path: Optional[Path],
                 out_path: Path, method: Optional[str] = None) -> MetricsReport:
    with stage("read_images"):
        recon = load_image(recon_path)
        truth = None
        if truth_path is not None and Path(truth_path).exists():
            truth = dynamic_from(read_bundle(truth_path))
            if not np.array_equal(truth.times, recon.times):
                truth = resample_truth(cfg, recon)
        elif truth_path is not None:
            logger.warning("Truth file %s not found; reporting reference-free metrics only", truth_path)
    report = evaluate(cfg, method or Path(recon_path).stem, recon, truth)
    with stage("write"):
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        combined = report
        if out_path.exists():
            try:
                combined = MetricsReport.from_csv(out_path).merge(report)
            except (KeyError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
                raise FormatError(f"{out_path} is not a metrics CSV ({exc})") from exc
        combined.to_csv(out_path)
        logger.info("%s now holds %d rows", out_path, len(combined.rows))
    return report


# === EXPORT ===


def window_to_uint8(values: np.ndarray, window: Optional[Tuple[float, float]] = None) -> np.ndarray:
    lo, hi = window if window is not None else (0.0, float(values.max()) if values.size else 0.0)
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (np.clip(values, lo, hi) - lo) / (hi - lo)
    return np.round(scaled * 255).astype(np.uint8)


def encode_pgm(pixels: np.ndarray) -> bytes:
    """8-bit binary PGM; array axis 0 becomes image columns."""
    rows = np.ascontiguousarray(pixels.T)
    height, width = rows.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + rows.tobytes()


def encode_png(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels.T)).save(buffer, format="PNG")
    return buffer.getvalue()


def export_array(dyn: DynamicImage, frame: Optional[int] = 0, xt_row: Optional[int] = None) -> np.ndarray:
    """Magnitude of one frame [nx, ny], or the x-t profile [nx, T] for a row."""
    if xt_row is not None:
        return xt_profile(dyn, xt_row)
    if not 0 <= frame < dyn.n_frames:
        raise ValueError(f"frame {frame} outside [0, {dyn.n_frames})")
    return np.abs(dyn.frames[frame])


def cmd_export(image_path: Path, fmt: str, out_path: Path, frame: int = 0,
               window: Optional[Tuple[float, float]] = None, xt_row: Optional[int] = None) -> Path:
    if fmt not in EXPORT_FORMATS:
        raise ConfigError("format", f"unknown export format '{fmt}', expected one of {EXPORT_FORMATS}")
    with stage("export"):
        dyn = load_image(image_path)
        values = export_array(dyn, frame, xt_row)
        if window is None:
            window = (0.0, float(np.abs(dyn.frames).max()) if xt_row is None else float(values.max()))
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            pd.DataFrame(values).to_csv(out_path, index=False, header=False, float_format="%.10g")
        elif fmt == "pgm":
            out_path.write_bytes(encode_pgm(window_to_uint8(values, window)))
        else:
            out_path.write_bytes(encode_png(window_to_uint8(values, window)))
    logger.info("Exported %s", out_path)
    return out_path


# === REPORT ===


REPORT_DIR = "report"


def _write_figure(fig, path: Path) -> Path:
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path


def report_settings(cfg: ExperimentConfig) -> Dict[str, str]:
    return {
        "Grid": f"{cfg.grid.n} x {cfg.grid.n}, FOV {cfg.grid.fov:.0f} mm",
        "Spokes": f"{cfg.trajectory.n_spokes} (TR {cfg.trajectory.tr * 1e3:.1f} ms)",
        "Coils": str(cfg.coils.n_coils),
        "Rank": str(cfg.recon.k),
        "Fine-tune iterations": str(cfg.recon.finetune_iters),
        "Seed": str(cfg.run.seed),
    }


def cmd_report(cfg: ExperimentConfig, run_dir: Path, out_dir: Optional[Path] = None) -> Dict[str, Path]:
    """
    Figures (HTML) and metric reports (Excel, PDF) for whatever a run directory holds.

    Each input is optional; outputs are only written for the files present.
    A `--skip-init` run in the same directory adds its bases and loss curve.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / REPORT_DIR
    written: Dict[str, Path] = {}

    with stage("report"):
        if not run_dir.is_dir():
            raise FileNotFoundError(f"run directory {run_dir} does not exist")
        out_dir.mkdir(parents=True, exist_ok=True)

        if (run_dir / SPOKES_FILE).exists():
            spokes = spoke_set_from(read_bundle(run_dir / SPOKES_FILE))
            written["trajectory"] = _write_figure(create_trajectory_chart(spokes), out_dir / "trajectory.html")
            written["kspace"] = _write_figure(create_kspace_chart(spokes), out_dir / "kspace.html")

        if (run_dir / RECON_FILE).exists():
            image = load_image(run_dir / RECON_FILE)
            spec = cfg.phantom_spec()
            zmax = float(np.abs(image.frames).max())
            for phase, t_phase in zip(("systole", "diastole"), cardiac_phase_times(spec)):
                index = nearest_frame(image.times, t_phase, spec.t_card)
                title = f"End-{phase}, t = {image.times[index]:.3f} s"
                written[f"frame_{phase}"] = _write_figure(
                    create_frame_heatmap(image.frames[index], image.grid, title, zmax),
                    out_dir / f"frame_{phase}.html",
                )
            row = row_index(image.grid, cfg.metrics.xt_row_mm)
            written["xt_profile"] = _write_figure(create_xt_profile_chart(image, row), out_dir / "xt_profile.html")

            if (run_dir / CHECKPOINT_FILE).exists():
                spatial, temporal = checkpoint_from(read_bundle(run_dir / CHECKPOINT_FILE))
                model = network_bases(spatial, temporal, image.grid, image.times)
                written["bases"] = _write_figure(create_basis_figure(model, title="Network bases"),
                                                 out_dir / "bases.html")

        ablation_image = run_dir / no_init_name(RECON_FILE)
        ablation_checkpoint = run_dir / no_init_name(CHECKPOINT_FILE)
        if ablation_image.exists() and ablation_checkpoint.exists():
            cold = load_image(ablation_image)
            spatial, temporal = checkpoint_from(read_bundle(ablation_checkpoint))
            model = network_bases(spatial, temporal, cold.grid, cold.times)
            written["ablation_bases"] = _write_figure(
                create_basis_figure(model, title="Network bases without initialisation"),
                out_dir / "ablation_bases.html",
            )

        initial = run_dir / STAGES_DIR / "interpolate.cspk"
        if initial.exists():
            model = subspace_from(read_bundle(initial))
            written["initial_bases"] = _write_figure(
                create_basis_figure(model, title="Initial bases (GRASP + SVD, interpolated)"),
                out_dir / "initial_bases.html",
            )

        if (run_dir / TRAINLOG_FILE).exists():
            log = TrainLog.from_csv(run_dir / TRAINLOG_FILE)
            cold_log = run_dir / no_init_name(TRAINLOG_FILE)
            ablation = TrainLog.from_csv(cold_log) if cold_log.exists() else None
            written["loss"] = _write_figure(create_loss_chart(log, ablation=ablation), out_dir / "loss.html")

        if (run_dir / METRICS_FILE).exists():
            report = MetricsReport.from_csv(run_dir / METRICS_FILE)
            settings = report_settings(cfg)
            for metric in ("snr_db", "nrmse"):
                written[f"bars_{metric}"] = _write_figure(create_metric_bar(report, metric),
                                                          out_dir / f"{metric}.html")
            written["excel"] = out_dir / "metrics.xlsx"
            written["excel"].write_bytes(build_excel_from_report(report, settings))
            written["pdf"] = out_dir / "quality_report.pdf"
            written["pdf"].write_bytes(render_report_to_pdf(report, settings))

    if not written:
        logger.warning("Nothing to report in %s", run_dir)
    else:
        logger.info("Wrote %d report files to %s", len(written), out_dir)
    return written
