"""
Experiment configuration: dataclass sections read from and written to INI text.

Every key has a default, so an empty file is a complete config. Phantom blobs
live in [blob.N] sections; without any, the default phantom is used.
"""

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple

from dotenv import load_dotenv

from .errors import ConfigError
from .inr import HashGridConfig
from .metrics import MetricsConfig
from .phantom import Blob, FourierSeries, GridSpec, PhantomSpec, default_phantom
from .recon import ReconConfig
from .subspace_init import GraspConfig
from .trajectory import DEFAULT_N_SPOKES, DEFAULT_TR_S, TINY_GOLDEN_ANGLE_DEG

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "CINESPOKE_CONFIG"


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    output_dir: str = "runs/default"
    dump_stages: bool = False


@dataclass
class GridConfig:
    n: int = 64
    fov: float = 256.0

    def spec(self) -> GridSpec:
        return GridSpec(self.n, self.n, self.fov)


@dataclass
class TrajectoryConfig:
    n_spokes: int = DEFAULT_N_SPOKES
    tr: float = DEFAULT_TR_S
    golden_angle: float = TINY_GOLDEN_ANGLE_DEG
    oversampling: float = 1.0


@dataclass
class CoilConfig:
    n_coils: int = 6
    seed: int = 0


@dataclass
class AcquisitionConfig:
    noise_sigma: Optional[float] = None
    noise_snr_db: float = 25.0


@dataclass
class PhantomConfig:
    t_card: float = 0.8


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    coils: CoilConfig = field(default_factory=CoilConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    grasp: GraspConfig = field(default_factory=GraspConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    hashgrid: HashGridConfig = field(default_factory=HashGridConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    blobs: Optional[List[Blob]] = None

    def phantom_spec(self) -> PhantomSpec:
        if self.blobs is None:
            return default_phantom(self.grid.fov, self.phantom.t_card)
        return PhantomSpec(list(self.blobs), self.phantom.t_card, self.grid.fov)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with one seed driving coils, GRASP, networks and noise."""
        return dataclasses.replace(
            self,
            run=dataclasses.replace(self.run, seed=seed),
            coils=dataclasses.replace(self.coils, seed=seed),
            grasp=dataclasses.replace(self.grasp, seed=seed),
            recon=dataclasses.replace(self.recon, seed=seed),
        )

    def validate(self) -> None:
        checks = [
            ("grid.n", lambda: self.grid.spec()),
            ("trajectory", self._validate_trajectory),
            ("coils.n_coils", lambda: _positive(self.coils.n_coils, "must be at least 1")),
            ("run.threads", lambda: _positive(self.run.threads, "must be at least 1")),
            ("grasp", self.grasp.validate),
            ("recon", self.recon.validate),
            ("hashgrid", self.hashgrid.validate),
            ("metrics", self.metrics.validate),
            ("phantom", lambda: self.phantom_spec().validate(self.grid.spec())),
        ]
        for name, check in checks:
            try:
                check()
            except ValueError as exc:
                raise ConfigError(name, str(exc)) from exc
        if self.hashgrid.dim != 2:
            raise ConfigError("hashgrid.dim", "the spatial network is 2D; leave dim at 2")

    def _validate_trajectory(self) -> None:
        t = self.trajectory
        if t.n_spokes < 1:
            raise ValueError("n_spokes must be at least 1")
        if t.tr <= 0:
            raise ValueError("tr must be positive")
        if t.golden_angle <= 0:
            raise ValueError("golden_angle must be positive")
        if t.oversampling < 1:
            raise ValueError("oversampling must be at least 1")


def _positive(value: int, message: str) -> None:
    if value < 1:
        raise ValueError(message)


SECTIONS = ("run", "grid", "trajectory", "coils", "acquisition", "phantom", "grasp", "recon",
            "hashgrid", "metrics")


# === VALUE CODECS ===


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, default: Any, type_hint: str, where: str) -> Any:
    text = text.strip()
    try:
        if "Optional" in str(type_hint):
            return None if text == "" else float(text)
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from exc


def _series(text: str, where: str) -> FourierSeries:
    try:
        return FourierSeries(tuple(float(v) for v in text.split(",") if v.strip()))
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from exc


# === READ / WRITE ===


def load_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from exc

    cfg = ExperimentConfig()
    blob_sections = []
    for section in parser.sections():
        if section.startswith("blob."):
            blob_sections.append(section)
            continue
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        current = getattr(cfg, section)
        known = {f.name: f for f in dataclasses.fields(current)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{section}.{key}", "unknown key")
            updates[key] = _parse(raw, getattr(current, key), known[key].type, f"{section}.{key}")
        setattr(cfg, section, dataclasses.replace(current, **updates))

    if blob_sections:
        cfg.blobs = [_read_blob(parser, s) for s in sorted(blob_sections, key=_blob_order)]
    return cfg


def _blob_order(section: str) -> int:
    try:
        return int(section.split(".", 1)[1])
    except ValueError as exc:
        raise ConfigError(section, "blob sections are named blob.<integer>") from exc


def _read_blob(parser: configparser.ConfigParser, section: str) -> Blob:
    allowed = {"amplitude", "center_x", "center_y", "sigma"}
    keys = set(parser.options(section))
    for key in keys - allowed:
        raise ConfigError(f"{section}.{key}", "unknown key")
    for key in allowed - keys:
        raise ConfigError(f"{section}.{key}", "missing key")
    try:
        amplitude = complex(parser.get(section, "amplitude").replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"{section}.amplitude", str(exc)) from exc
    return Blob(
        amplitude,
        _series(parser.get(section, "center_x"), f"{section}.center_x"),
        _series(parser.get(section, "center_y"), f"{section}.center_y"),
        _series(parser.get(section, "sigma"), f"{section}.sigma"),
    )


def write_config(cfg: ExperimentConfig) -> str:
    lines: List[str] = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        current = getattr(cfg, section)
        for f in dataclasses.fields(current):
            lines.append(f"{f.name} = {_format(getattr(current, f.name))}")
        lines.append("")
    for i, blob in enumerate(cfg.blobs or []):
        lines.append(f"[blob.{i}]")
        lines.append(f"amplitude = {complex(blob.amplitude)!r}")
        lines.append(f"center_x = {_format(blob.center_x.coeffs)}")
        lines.append(f"center_y = {_format(blob.center_y.coeffs)}")
        lines.append(f"sigma = {_format(blob.sigma.coeffs)}")
        lines.append("")
    return "\n".join(lines)


def resolve_config_path(cli_path: Optional[str]) -> Optional[Path]:
    """--config wins; otherwise CINESPOKE_CONFIG from the environment or a .env file."""
    load_dotenv()
    path = cli_path or os.getenv(CONFIG_ENV_VAR)
    return Path(path) if path else None


def load_config_file(path: Optional[Path]) -> ExperimentConfig:
    if path is None:
        logger.info("No config given; using defaults")
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return load_config(text)


def quick_config(n: int = 32, n_spokes: int = 200) -> ExperimentConfig:
    """Small settings for quick previews (`--quick`)."""
    cfg = ExperimentConfig()
    cfg.grid = GridConfig(n=n, fov=cfg.grid.fov)
    cfg.trajectory = dataclasses.replace(cfg.trajectory, n_spokes=n_spokes)
    cfg.grasp = dataclasses.replace(cfg.grasp, iterations=30)
    cfg.recon = dataclasses.replace(cfg.recon, init_steps=200, finetune_iters=20, freeze_temporal_iters=5)
    cfg.hashgrid = dataclasses.replace(cfg.hashgrid, levels=8, log2_table_size=14)
    # coarse grids cannot resolve the narrowest default blobs; widen them to one pixel
    delta = cfg.grid.fov / n
    cfg.blobs = []
    for blob in default_phantom(cfg.grid.fov, cfg.phantom.t_card).blobs:
        shortfall = delta - blob.sigma.lower_bound()
        if shortfall > 0:
            coeffs = (blob.sigma.coeffs[0] + shortfall,) + blob.sigma.coeffs[1:]
            blob = dataclasses.replace(blob, sigma=FourierSeries(coeffs))
        cfg.blobs.append(blob)
    return cfg
