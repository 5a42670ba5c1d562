"""Pipeline configuration: nested dataclasses loaded from YAML, unknown keys rejected."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .iekf import IterationControls, NoiseConfig
from .maintenance import MaintenanceParams
from .patches import ObjectiveWeights, PatchParams


class ConfigError(ValueError):
    pass


@dataclass
class SequenceSection:
    path: str = ""
    camera: str | None = None  # sequence.yaml; defaults to <path>/sequence.yaml
    groundtruth: str | None = None  # defaults to <path>/groundtruth.txt when present
    max_frames: int | None = None


@dataclass
class NoiseSection:
    process_q: list = field(default_factory=lambda: [0.01**2] * 3 + [0.01**2] * 3 + [0.05**2] * 3)
    measurement_u: float = 1.0
    initial_covariance: list = field(default_factory=lambda: [1e-10] * 6 + [1e-4] * 3)
    no_imu_q_scale: float = 100.0

    def noise(self, scale: float = 1.0) -> NoiseConfig:
        return NoiseConfig(np.diag(np.asarray(self.process_q, float) * scale), self.measurement_u)


@dataclass
class TsdfSection:
    lower: list = field(default_factory=lambda: [-2.0, -2.0, 0.0])
    upper: list = field(default_factory=lambda: [2.0, 2.0, 4.0])
    voxel_size: float = 0.04
    truncation: float | None = None
    w_max: float = 100.0


@dataclass
class Toggles:
    use_imu: bool = True
    use_deformation: bool = True
    use_model_depth: bool = True
    fuse: bool = True


@dataclass
class ImuSection:
    scheme: str = "midpoint"
    accel_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    gyro_bias: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class OutputSection:
    trajectory: str | None = None
    report: str | None = None
    mesh: str | None = None
    include_timing: bool = False


@dataclass
class PipelineConfig:
    sequence: SequenceSection = field(default_factory=SequenceSection)
    objective: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    noise: NoiseSection = field(default_factory=NoiseSection)
    patches: PatchParams = field(default_factory=PatchParams)
    tsdf: TsdfSection = field(default_factory=TsdfSection)
    iteration: IterationControls = field(default_factory=IterationControls)
    toggles: Toggles = field(default_factory=Toggles)
    maintenance: MaintenanceParams = field(default_factory=MaintenanceParams)
    imu: ImuSection = field(default_factory=ImuSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = _SECTIONS.get(ftype) if isinstance(ftype, str) else None
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTIONS = {
    "SequenceSection": SequenceSection,
    "ObjectiveWeights": ObjectiveWeights,
    "NoiseSection": NoiseSection,
    "PatchParams": PatchParams,
    "TsdfSection": TsdfSection,
    "IterationControls": IterationControls,
    "Toggles": Toggles,
    "MaintenanceParams": MaintenanceParams,
    "ImuSection": ImuSection,
    "OutputSection": OutputSection,
}


def config_from_dict(data: dict, base_dir: Path | None = None) -> PipelineConfig:
    """Config from a parsed mapping; relative sequence and output paths resolve against ``base_dir``."""
    cfg = _build(PipelineConfig, data or {}, "config")
    if base_dir is not None:
        for section, names in ((cfg.sequence, ("path", "camera", "groundtruth")),
                               (cfg.output, ("trajectory", "report", "mesh"))):
            for name in names:
                value = getattr(section, name)
                if value and not Path(value).is_absolute():
                    setattr(section, name, str(Path(base_dir) / value))
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)
