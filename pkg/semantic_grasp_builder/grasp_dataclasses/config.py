"""Pipeline configuration: one pydantic model per stage, loaded from YAML"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .. import PROCESSES
from ..errors import InputValidationError
from .grasp_dataclasses import PositiveRatio, Ratio

logger = logging.getLogger(__name__)

STANDARD_GRAVITY = 9.81
Vector3 = tuple[float, float, float]


def _axis_accelerations(magnitude: float) -> tuple[Vector3, ...]:
    """+/- magnitude along each axis"""
    accelerations: list[Vector3] = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            vector = [0.0, 0.0, 0.0]
            vector[axis] = sign * magnitude
            accelerations.append((vector[0], vector[1], vector[2]))
    return tuple(accelerations)


class ConfigSection(BaseModel):
    """Base for all config sections: immutable and strict about unknown keys"""

    model_config = ConfigDict(extra="forbid", frozen=True)


class RegionConfig(ConfigSection):
    """Useful region proposal settings"""

    views: int = Field(default=20, ge=1)
    surface: Literal["auto", "sphere", "dome"] = "auto"
    radius_factor: float = Field(default=3.0, gt=1.0)
    image_width: int = Field(default=128, ge=1)
    image_height: int = Field(default=128, ge=1)
    framing: PositiveRatio = 0.8
    fraction: PositiveRatio = 0.6
    oracle_noise: Ratio = 0.25
    seed: int = 0


class EnergyWeights(ConfigSection):
    """Weights of the four penalty terms added to the force closure term"""

    w_dis: float = Field(default=100.0, ge=0.0)
    w_joints: float = Field(default=1.0, ge=0.0)
    w_pen: float = Field(default=100.0, ge=0.0)
    w_spen: float = Field(default=10.0, ge=0.0)


class OptimizerConfig(ConfigSection):  # pylint: disable=too-many-instance-attributes
    """Grasp initialisation and descent settings"""

    steps: int = Field(default=400, ge=0)
    step_size_T: float = Field(default=1e-6, gt=0.0)
    step_size_rot: float = Field(default=1e-5, gt=0.0)
    step_size_theta: float = Field(default=5e-4, gt=0.0)
    max_step_T: float = Field(default=0.005, gt=0.0)
    max_step_rot: float = Field(default=0.05, gt=0.0)
    max_step_theta: float = Field(default=0.1, gt=0.0)
    fd_epsilon: float = Field(default=1e-4, gt=0.0)
    anneal_noise_sigma: float = Field(default=0.002, ge=0.0)
    contact_threshold: float = Field(default=0.005, gt=0.0)
    inflate_delta: Optional[float] = Field(default=None, ge=0.0)
    inflate_factor: float = Field(default=0.15, ge=0.0)
    init_sigma_T: float = Field(default=0.005, ge=0.0)
    init_sigma_rot: float = Field(default=0.1, ge=0.0)
    init_sigma_theta: float = Field(default=0.1, ge=0.0)
    contact_mode: Literal["power", "precision"] = "power"
    table_obstacle: bool = True
    seed: int = 0


class EvalConfig(ConfigSection):  # pylint: disable=too-many-instance-attributes
    """Quasi-static lift and shake evaluation settings"""

    mu: float = Field(default=0.5, gt=0.0)
    pyramid_sides: int = Field(default=8, ge=3)
    f_max: float = Field(default=10.0, gt=0.0)
    residual_eps: float = Field(default=1e-3, gt=0.0)
    object_mass: float = Field(default=0.1, gt=0.0)
    gravity: Vector3 = (0.0, 0.0, -STANDARD_GRAVITY)
    shake_accels: tuple[Vector3, ...] = _axis_accelerations(STANDARD_GRAVITY)
    d: int = Field(default=5, ge=0)
    perturb_sigma: float = Field(default=0.05, ge=0.0)
    contact_tol: float = Field(default=0.002, ge=0.0)
    max_penetration: float = Field(default=0.005, gt=0.0)
    close_increment: float = Field(default=0.01, gt=0.0)
    cap_weight: float = Field(default=10.0, gt=0.0)
    task: Literal["auto", "lift", "shake"] = "auto"
    seed: int = 0


class BPSConfig(ConfigSection):
    """Basis point set used to encode object clouds"""

    n_b: int = Field(default=256, ge=1)
    radius: float = Field(default=0.15, gt=0.0)
    cloud_points: int = Field(default=2048, ge=1)
    seed: int = 0


class ScheduleConfig(ConfigSection):
    """Linear noise schedule; betas are given for `reference_steps` and rescaled"""

    T_steps: int = Field(default=100, ge=1)
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(default=0.02, gt=0.0, lt=1.0)
    reference_steps: int = Field(default=1000, ge=1)


class TrainConfig(ConfigSection):
    """Denoiser architecture and optimisation settings"""

    hidden_sizes: tuple[int, ...] = (256, 256, 256)
    time_embedding_dim: int = Field(default=32, ge=0)
    learning_rate: float = Field(default=1e-3, ge=0.0)
    epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=64, ge=1)
    seed: int = 0


class PipelineConfig(ConfigSection):
    """Orchestration settings shared by the CLI commands"""

    jobs: int = Field(default=PROCESSES, ge=1)
    grasps_per_prompt: int = Field(default=200, ge=0)
    label_threshold: Ratio = 0.5
    archive: Optional[Literal["tar.gz", "tar", "zip"]] = None


class GraspBuilderConfig(ConfigSection):  # pylint: disable=too-many-instance-attributes
    """The effective configuration of a pipeline run"""

    seed: int = 0
    region: RegionConfig = RegionConfig()
    weights: EnergyWeights = EnergyWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    evaluation: EvalConfig = EvalConfig()
    bps: BPSConfig = BPSConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    training: TrainConfig = TrainConfig()
    pipeline: PipelineConfig = PipelineConfig()

    def with_seed(self, seed: int) -> "GraspBuilderConfig":
        """Propagate a master seed into every seeded section"""
        return self.model_copy(
            update={
                "seed": seed,
                "region": self.region.model_copy(update={"seed": seed}),
                "optimizer": self.optimizer.model_copy(update={"seed": seed}),
                "evaluation": self.evaluation.model_copy(update={"seed": seed}),
                "bps": self.bps.model_copy(update={"seed": seed}),
                "training": self.training.model_copy(update={"seed": seed}),
            }
        )

    def with_overrides(self, **sections: dict[str, Any]) -> "GraspBuilderConfig":
        """Copy with some keys of some sections replaced, re-validated"""
        data = self.model_dump()
        for name, values in sections.items():
            data[name] = {**data[name], **values}
        return GraspBuilderConfig.model_validate(data)


def config_hash(config: GraspBuilderConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical config JSON.

    The job count and archive format are left out: they never change records.
    """
    payload = config.model_dump(mode="json")
    payload["pipeline"].pop("jobs", None)
    payload["pipeline"].pop("archive", None)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config(path: Optional[Path] = None) -> GraspBuilderConfig:
    """Read a YAML config file; missing sections and keys take their defaults

    Raises:
        FileNotFoundError: if the path does not exist
        InputValidationError: if the file is not a valid config
    """
    if path is None:
        return GraspBuilderConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as config_file:
        raw = yaml.safe_load(config_file) or {}
    if not isinstance(raw, dict):
        raise InputValidationError(f"{path} does not hold a mapping")
    try:
        config = GraspBuilderConfig.model_validate(raw)
    except ValidationError as err:
        raise InputValidationError(f"invalid config {path}: {err}") from err
    logger.info("loaded config %s (hash %s)", path, config_hash(config))
    return config
