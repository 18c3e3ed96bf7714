"""Stage functions behind the command line: scenes in, regions, candidate
grasps, labelled and filtered datasets, a trained sampler and exports out.

Every stage reads and writes documented files only. Work inside a stage is
split into contiguous chunks that are mapped over a process pool in order,
so the output does not depend on the number of workers.
"""

import logging
import re
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Optional, TypeVar

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from slugify import slugify

from .distill import (
    POSE_DIM,
    NoiseSchedule,
    TrainedDenoiser,
    encode,
    generate_basis,
    grasp_vectors,
    load_checkpoint,
    sample_many,
    save_checkpoint,
    train,
    vector_to_grasp,
)
from .errors import EmptyResultError, InputValidationError
from .evaluator import (
    EvalResult,
    SuccessSummary,
    Task,
    evaluate_grasp,
    filter_dataset,
    summarize_success,
)
from .export_writer import archive_export, write_export
from .geometry import FloatArray, TriangleMesh, load_mesh
from .grasp_dataclasses.config import EvalConfig, GraspBuilderConfig, OptimizerConfig, config_hash
from .grasp_dataclasses.grasp_dataclasses import GraspParameters, GraspRecord, Provenance
from .grasp_dataclasses.record_io import (
    RecordFileHeader,
    read_records,
    write_energy_trace,
    write_loss_trace,
    write_records,
    write_success_report,
)
from .grasp_dataclasses.record_manifest import RecordManifest
from .grasp_optimizer import (
    EnergyModel,
    Obstacle,
    OptimizationResult,
    SceneContext,
    TablePlane,
    init_grasps,
    optimize_candidates,
)
from .hand_model import GraspPose, HandModel, load_hand, quaternion_to_matrix
from .region_proposal import (
    FaceTally,
    MaskObservation,
    UsefulRegion,
    Viewpoint,
    propose_region,
    read_mask_observation,
    read_region,
    sample_viewpoints,
    synthetic_oracle_masks,
    write_region,
)

logger = logging.getLogger(__name__)

SAMPLED_PROMPT = "sampled"
VIEW_FILE = re.compile(r"view_(\d+)\.pgm")

T = TypeVar("T")
R = TypeVar("R")


class _SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PoseSpec(_SceneSpec):
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)


class HalfSpaceSpec(_SceneSpec):
    """Faces whose centroid c (mesh file coordinates) has direction . c >= offset"""

    direction: tuple[float, float, float]
    offset: float = 0.0


class SceneObjectSpec(_SceneSpec):
    mesh: str
    pose: PoseSpec = PoseSpec()
    scale: float = Field(default=1.0, gt=0.0)
    prompts: list[str] = Field(default_factory=list)
    oracle_regions: dict[str, HalfSpaceSpec] = Field(default_factory=dict)


class SceneFileSpec(_SceneSpec):
    format: Literal["semantic-grasp-scene v1"]
    scene_id: str
    seed: int = 0
    table: Optional[float] = None
    target_object: int = 0
    objects: list[SceneObjectSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _target_exists(self) -> "SceneFileSpec":
        if not 0 <= self.target_object < len(self.objects):
            raise ValueError(f"target_object {self.target_object} is not an object index")
        return self


@dataclass(kw_only=True, eq=False)
class SceneObject:
    """An object placed in a scene

    Attr:
        object_id (int): index in the scene file
        mesh (TriangleMesh): the scaled and posed mesh in world coordinates
        prompts (list[str]): segmentation prompts to synthesise grasps for
        oracle_faces (dict[str, frozenset[int]]): planted region per prompt, if any
    """

    object_id: int
    mesh_file: Path
    mesh: TriangleMesh
    prompts: list[str]
    oracle_faces: dict[str, frozenset[int]] = field(default_factory=dict)

    def prompt_index(self, prompt: str) -> int:
        if prompt not in self.prompts:
            raise InputValidationError(f"object {self.object_id} has no prompt {prompt!r}")
        return self.prompts.index(prompt)


@dataclass(kw_only=True, eq=False)
class Scene:
    """A loaded scene file"""

    path: Path
    scene_id: str
    seed: int
    table: Optional[float]
    target_object: int
    objects: list[SceneObject]

    @property
    def meshes(self) -> list[TriangleMesh]:
        return [obj.mesh for obj in self.objects]

    @property
    def target(self) -> SceneObject:
        return self.objects[self.target_object]

    def obstacles(self, object_id: int, table_obstacle: bool = True) -> tuple[Obstacle, ...]:
        """Every other object, then the table if there is one"""
        found: list[Obstacle] = [obj.mesh for obj in self.objects if obj.object_id != object_id]
        if table_obstacle and self.table is not None:
            found.append(TablePlane(height=self.table))
        return tuple(found)

    def context(
        self, object_id: int, region: Optional[UsefulRegion] = None, table_obstacle: bool = True
    ) -> SceneContext:
        """Grasp task on one object; without a region the task has no region faces"""
        mesh = self.objects[object_id].mesh
        if region is None:
            region = UsefulRegion(
                label="", face_indices=frozenset(), tally=FaceTally.zeros(len(mesh))
            )
        return SceneContext(
            target=mesh, region=region, obstacles=self.obstacles(object_id, table_obstacle)
        )

    def camera_surface(self, config: GraspBuilderConfig) -> Literal["sphere", "dome"]:
        if config.region.surface != "auto":
            return config.region.surface
        return "sphere" if len(self.objects) == 1 and self.table is None else "dome"

    def task(self, config: GraspBuilderConfig) -> Task:
        if config.evaluation.task != "auto":
            return config.evaluation.task
        return "shake" if len(self.objects) == 1 else "lift"


def _half_space_faces(mesh: TriangleMesh, spec: HalfSpaceSpec) -> frozenset[int]:
    direction = np.asarray(spec.direction, dtype=np.float64)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise InputValidationError("oracle region direction must be non-zero")
    inside = mesh.face_centroids @ (direction / norm) >= spec.offset
    return frozenset(int(face) for face in np.flatnonzero(inside))


def load_scene(path: Path) -> Scene:
    """Read a scene file and place its meshes in the world

    Raises:
        FileNotFoundError: if the scene or a mesh is missing
        InputValidationError: if the scene file is malformed
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scene file not found: {path}")
    with open(path, "r", encoding="utf-8") as scene_file:
        raw = yaml.safe_load(scene_file)
    try:
        spec = SceneFileSpec.model_validate(raw)
    except ValidationError as err:
        raise InputValidationError(f"invalid scene file {path}: {err}") from err
    objects = []
    for object_id, obj in enumerate(spec.objects):
        mesh_file = path.parent / obj.mesh
        local = load_mesh(mesh_file)
        quaternion = np.asarray(obj.pose.rotation, dtype=np.float64)
        norm = float(np.linalg.norm(quaternion))
        if norm == 0.0:
            raise InputValidationError(f"object {object_id} has a zero rotation quaternion")
        world = local.transformed(
            quaternion_to_matrix(quaternion / norm), obj.pose.translation, obj.scale
        )
        oracle = {
            label: _half_space_faces(local, half) for label, half in obj.oracle_regions.items()
        }
        objects.append(
            SceneObject(
                object_id=object_id,
                mesh_file=mesh_file,
                mesh=world,
                prompts=list(obj.prompts),
                oracle_faces=oracle,
            )
        )
    logger.info("loaded scene %s with %d objects", spec.scene_id, len(objects))
    return Scene(
        path=path,
        scene_id=spec.scene_id,
        seed=spec.seed,
        table=spec.table,
        target_object=spec.target_object,
        objects=objects,
    )


def stream_seed(*parts: int) -> int:
    """A 32-bit seed derived from integer parts, distinct per tuple"""
    return int(np.random.SeedSequence([part % (1 << 63) for part in parts]).generate_state(1)[0])


def chunk_ranges(count: int, jobs: int) -> list[range]:
    """Split range(count) into at most `jobs` contiguous, non-empty parts"""
    parts = max(1, min(jobs, count))
    bounds = np.linspace(0, count, parts + 1).round().astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def fan_out(worker: Callable[[T], R], tasks: Sequence[T], jobs: int) -> list[R]:
    """Map a picklable worker over tasks, results in task order"""
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as executor:
        return list(executor.map(worker, tasks))


def region_path(regions_dir: Path, object_id: int, prompt: str) -> Path:
    return Path(regions_dir) / f"object_{object_id}" / f"{slugify(prompt)}.region"


def mask_directory(masks_dir: Path, object_id: int, prompt: str) -> Path:
    return Path(masks_dir) / f"object_{object_id}" / slugify(prompt)


def load_mask_views(directory: Path) -> tuple[list[Viewpoint], list[MaskObservation]]:
    """Every `view_<j>.pgm` in a directory, in view order, re-indexed from zero

    Raises:
        FileNotFoundError: if the directory is missing or holds no masks
    """
    if not directory.is_dir():
        raise FileNotFoundError(f"missing masks: {directory}")
    found = sorted(
        (int(match.group(1)), path)
        for path in directory.iterdir()
        if (match := VIEW_FILE.fullmatch(path.name))
    )
    if not found:
        raise FileNotFoundError(f"missing masks: no view_<j>.pgm in {directory}")
    views, observations = [], []
    for position, (_, path) in enumerate(found):
        view, observation = read_mask_observation(path)
        views.append(view)
        observations.append(replace(observation, view_index=position))
    return views, observations


def cmd_regions(
    scene_path: Path,
    out_dir: Path,
    config: GraspBuilderConfig,
    masks_dir: Optional[Path] = None,
    oracle: bool = False,
) -> list[Path]:
    """Propose and write one region file per (object, prompt)

    Raises:
        InputValidationError: without masks and without oracle, or if a prompt has no oracle region
        FileNotFoundError: if masks are missing
        EmptyRegionError: if no mask survives filtering for a prompt
    """
    if not oracle and masks_dir is None:
        raise InputValidationError("a masks directory is required unless the oracle is used")
    scene = load_scene(scene_path)
    settings = config.region
    surface = scene.camera_surface(config)
    written = []
    for obj in scene.objects:
        centre, object_radius = obj.mesh.bounding_sphere
        for prompt_index, prompt in enumerate(obj.prompts):
            if oracle:
                if prompt not in obj.oracle_faces:
                    raise InputValidationError(
                        f"object {obj.object_id} has no oracle region for {prompt!r}"
                    )
                seed = stream_seed(settings.seed, obj.object_id, prompt_index)
                views = sample_viewpoints(
                    settings.views,
                    surface,
                    settings.radius_factor * object_radius,
                    centre,
                    seed,
                    object_radius=object_radius,
                    image_width=settings.image_width,
                    image_height=settings.image_height,
                    framing=settings.framing,
                )
                observations = synthetic_oracle_masks(
                    obj.mesh, obj.oracle_faces[prompt], views, settings.oracle_noise, seed, prompt
                )
            elif masks_dir is not None:
                views, observations = load_mask_views(
                    mask_directory(masks_dir, obj.object_id, prompt)
                )
            region = propose_region(obj.mesh, views, observations, settings.fraction, prompt)
            path = region_path(out_dir, obj.object_id, prompt)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_region(path, region)
            logger.info("object %d %r: %d region faces", obj.object_id, prompt, len(region))
            written.append(path)
    return written


@dataclass(kw_only=True, eq=False)
class _OptimizeTask:
    scene: SceneContext
    hand: HandModel
    inits: list[GraspPose]
    config: GraspBuilderConfig
    optimizer: OptimizerConfig
    first_index: int


def _optimize_chunk(task: _OptimizeTask) -> list[OptimizationResult]:
    return optimize_candidates(
        task.scene, task.hand, task.inits, task.config.weights, task.optimizer, task.first_index
    )


def _header(
    stage: str, config: GraspBuilderConfig, scene: Optional[Path], hand: Optional[Path]
) -> RecordFileHeader:
    """Header naming the scene and hand by absolute path"""
    return RecordFileHeader(
        stage=stage,
        config_hash=config_hash(config),
        scene_file=None if scene is None else str(Path(scene).resolve()),
        hand_file=None if hand is None else str(Path(hand).resolve()),
    )


def cmd_synth(  # pylint: disable=too-many-arguments,too-many-locals
    scene_path: Path,
    regions_dir: Path,
    out_path: Path,
    config: GraspBuilderConfig,
    hand_path: Optional[Path] = None,
    count: Optional[int] = None,
    traces_dir: Optional[Path] = None,
) -> int:
    """Initialise and optimise `count` grasps per (object, prompt)

    Returns:
        int: the number of candidate records written
    """
    count = config.pipeline.grasps_per_prompt if count is None else count
    if count < 0:
        raise InputValidationError(f"count must be >= 0, got {count}")
    scene = load_scene(scene_path)
    hand = load_hand(hand_path, contact_mode=config.optimizer.contact_mode)
    digest = config_hash(config)
    jobs = config.pipeline.jobs
    records: list[GraspRecord] = []
    for obj in scene.objects:
        for prompt_index, prompt in enumerate(obj.prompts):
            if not count:
                continue
            region = read_region(region_path(regions_dir, obj.object_id, prompt), len(obj.mesh))
            context = scene.context(obj.object_id, region, config.optimizer.table_obstacle)
            group_seed = stream_seed(config.optimizer.seed, obj.object_id, prompt_index)
            optimizer = config.optimizer.model_copy(update={"seed": group_seed})
            inits = init_grasps(context, hand, count, optimizer)
            tasks = [
                _OptimizeTask(
                    scene=context,
                    hand=hand,
                    inits=inits[part.start : part.stop],
                    config=config,
                    optimizer=optimizer,
                    first_index=part.start,
                )
                for part in chunk_ranges(count, jobs)
            ]
            chunks = fan_out(_optimize_chunk, tasks, jobs)
            results = [result for chunk in chunks for result in chunk]
            logger.info(
                "object %d %r: optimised %d candidates", obj.object_id, prompt, len(results)
            )
            for result in results:
                record = GraspRecord(
                    scene_id=scene.scene_id,
                    object_id=obj.object_id,
                    prompt=prompt,
                    grasp=GraspParameters.from_pose(result.grasp),
                    energy=result.energy,
                    provenance=Provenance(
                        master_seed=config.seed,
                        candidate_index=result.candidate_index,
                        config_hash=digest,
                        optimizer_seed=group_seed,
                    ),
                )
                if traces_dir is not None:
                    write_energy_trace(Path(traces_dir) / f"{record.record_id}.csv", result.trace)
                records.append(record)
    return write_records(out_path, _header("synth", config, scene_path, hand_path), records)


def _stage_inputs(
    records_path: Path,
    config: GraspBuilderConfig,
    scene_path: Optional[Path],
    hand_path: Optional[Path],
    allow_config_change: bool,
) -> tuple[RecordFileHeader, list[GraspRecord], Optional[Path], Optional[Path]]:
    """Records plus the scene and hand files, defaulting to those named in the header"""
    header, records = read_records(records_path, config_hash(config), allow_config_change)
    scene_file = scene_path if scene_path is not None else header.scene_file
    hand_file = hand_path if hand_path is not None else header.hand_file
    return (
        header,
        records,
        None if scene_file is None else Path(scene_file),
        None if hand_file is None else Path(hand_file),
    )


def _require_scene(scene_file: Optional[Path]) -> Scene:
    if scene_file is None:
        raise InputValidationError("no scene file given and none recorded in the record header")
    return load_scene(scene_file)


def _restamp(records: list[GraspRecord], digest: str) -> list[GraspRecord]:
    return [
        record.evolve(provenance=replace(record.provenance, config_hash=digest))
        if record.provenance.config_hash != digest
        else record
        for record in records
    ]


@dataclass(kw_only=True, eq=False)
class _EvaluateTask:
    scene: SceneContext
    hand: HandModel
    grasps: list[GraspPose]
    indices: list[int]
    config: EvalConfig
    task: Task


def _evaluate_chunk(task: _EvaluateTask) -> list[EvalResult]:
    return [
        evaluate_grasp(task.scene, task.hand, grasp, task.config, task.task, grasp_index=index)
        for grasp, index in zip(task.grasps, task.indices)
    ]


def cmd_eval(  # pylint: disable=too-many-arguments,too-many-locals
    candidates_path: Path,
    out_path: Path,
    config: GraspBuilderConfig,
    scene_path: Optional[Path] = None,
    hand_path: Optional[Path] = None,
    allow_config_change: bool = False,
) -> int:
    """Attach lift, shake and smooth labels to candidate records, keeping their order"""
    _, records, scene_file, hand_file = _stage_inputs(
        candidates_path, config, scene_path, hand_path, allow_config_change
    )
    scene = _require_scene(scene_file)
    hand = load_hand(hand_file)
    task = scene.task(config)
    digest = config_hash(config)
    jobs = config.pipeline.jobs
    evaluated: list[Optional[GraspRecord]] = [None] * len(records)
    for (object_id, prompt), positions in RecordManifest(records).group_positions.items():
        if not 0 <= object_id < len(scene.objects):
            raise InputValidationError(f"record object {object_id} is not in the scene")
        obj = scene.objects[object_id]
        prompt_index = (
            len(obj.prompts) if prompt == SAMPLED_PROMPT else obj.prompt_index(prompt)
        )
        eval_seed = stream_seed(config.evaluation.seed, object_id, prompt_index)
        settings = config.evaluation.model_copy(update={"seed": eval_seed})
        context = scene.context(object_id, table_obstacle=config.optimizer.table_obstacle)
        tasks = [
            _EvaluateTask(
                scene=context,
                hand=hand,
                grasps=[records[positions[i]].grasp.to_pose() for i in part],
                indices=[records[positions[i]].provenance.candidate_index for i in part],
                config=settings,
                task=task,
            )
            for part in chunk_ranges(len(positions), jobs)
        ]
        results = [result for chunk in fan_out(_evaluate_chunk, tasks, jobs) for result in chunk]
        for position, result in zip(positions, results):
            record = records[position]
            evaluated[position] = record.evolve(
                lift=result.lift,
                shake=result.shake,
                smooth_label=result.smooth_label,
                contacts_used=result.contacts_used,
                failure_reason=result.failure_reason,
                provenance=replace(
                    record.provenance,
                    config_hash=digest,
                    eval_seed=eval_seed,
                    perturbations=settings.d,
                    task=task,
                ),
            )
        logger.info(
            "object %d %r: %d lifted, %d shaken of %d",
            object_id,
            prompt,
            sum(result.lift for result in results),
            sum(result.shake for result in results),
            len(positions),
        )
    done = [record for record in evaluated if record is not None]
    return write_records(out_path, _header("eval", config, scene_file, hand_file), done)


def cmd_dataset(
    evaluated_path: Path,
    out_path: Path,
    config: GraspBuilderConfig,
    threshold: Optional[float] = None,
    allow_config_change: bool = False,
) -> int:
    """Keep records whose smooth label reaches the threshold

    Raises:
        EmptyResultError: if nothing is kept
    """
    threshold = config.pipeline.label_threshold if threshold is None else threshold
    _, records, scene_file, hand_file = _stage_inputs(
        evaluated_path, config, None, None, allow_config_change
    )
    kept = filter_dataset(_restamp(records, config_hash(config)), threshold)
    if not kept:
        raise EmptyResultError(f"no record of {evaluated_path} reaches label {threshold}")
    return write_records(out_path, _header("dataset", config, scene_file, hand_file), kept)


def object_cloud(mesh: TriangleMesh, count: int, seed: int) -> FloatArray:
    """Surface samples expressed relative to the mesh centroid"""
    points, _ = mesh.sample_surface(count, seed)
    centred: FloatArray = points - mesh.centroid
    return centred


def object_condition(scene: Scene, object_id: int, config: GraspBuilderConfig) -> FloatArray:
    """BPS encoding of one scene object's centred surface cloud"""
    settings = config.bps
    basis = generate_basis(settings.n_b, settings.radius, settings.seed)
    cloud = object_cloud(
        scene.objects[object_id].mesh,
        settings.cloud_points,
        stream_seed(settings.seed, object_id),
    )
    return encode(basis, cloud)


def cmd_bps(
    records_path: Path,
    out_path: Path,
    config: GraspBuilderConfig,
    scene_path: Optional[Path] = None,
    allow_config_change: bool = False,
) -> int:
    """Attach the BPS encoding of each record's object"""
    _, records, scene_file, hand_file = _stage_inputs(
        records_path, config, scene_path, None, allow_config_change
    )
    scene = _require_scene(scene_file)
    encodings: dict[int, list[float]] = {}
    encoded = []
    for record in _restamp(records, config_hash(config)):
        if record.object_id not in encodings:
            if not 0 <= record.object_id < len(scene.objects):
                raise InputValidationError(f"record object {record.object_id} is not in the scene")
            encodings[record.object_id] = object_condition(scene, record.object_id, config).tolist()
        encoded.append(record.evolve(bps=list(encodings[record.object_id])))
    return write_records(out_path, _header("bps", config, scene_file, hand_file), encoded)


def cmd_train(  # pylint: disable=too-many-arguments
    dataset_path: Path,
    checkpoint_path: Path,
    config: GraspBuilderConfig,
    scene_path: Optional[Path] = None,
    loss_path: Optional[Path] = None,
    allow_config_change: bool = False,
) -> TrainedDenoiser:
    """Train the denoiser on records carrying BPS encodings and save a checkpoint

    Grasp translations are taken relative to the centroid of their object.

    Raises:
        InputValidationError: if a record has no encoding
        EmptyResultError: if the dataset is empty
    """
    _, records, scene_file, _ = _stage_inputs(
        dataset_path, config, scene_path, None, allow_config_change
    )
    if not records:
        raise EmptyResultError(f"{dataset_path} holds no records to train on")
    missing = sum(1 for record in records if record.bps is None)
    if missing:
        raise InputValidationError(f"{missing} records have no BPS encoding; run bps first")
    scene = _require_scene(scene_file)
    vectors = np.concatenate(
        [
            grasp_vectors(
                [record.grasp.to_pose()], origin=scene.objects[record.object_id].mesh.centroid
            )
            for record in records
        ]
    )
    conditions = np.asarray([record.bps for record in records], dtype=np.float64)
    model = train(vectors, conditions, NoiseSchedule.linear(config.schedule), config.training)
    save_checkpoint(checkpoint_path, model)
    if loss_path is not None:
        write_loss_trace(loss_path, model.loss_trace)
    return model


def cmd_sample(  # pylint: disable=too-many-arguments,too-many-locals
    checkpoint_path: Path,
    scene_path: Path,
    count: int,
    out_path: Path,
    config: GraspBuilderConfig,
    hand_path: Optional[Path] = None,
) -> int:
    """Draw `count` grasps for the scene's target object from a trained model

    Raises:
        InputValidationError: if the model's vectors do not fit the hand
    """
    model = load_checkpoint(checkpoint_path)
    scene = load_scene(scene_path)
    hand = load_hand(hand_path, contact_mode=config.optimizer.contact_mode)
    if model.network.vector_dim != POSE_DIM + hand.joint_count:
        raise InputValidationError(
            f"model vectors have {model.network.vector_dim} entries, "
            f"hand needs {POSE_DIM + hand.joint_count}"
        )
    target = scene.target
    condition = object_condition(scene, target.object_id, config)
    if len(condition) != model.network.condition_dim:
        raise InputValidationError(
            f"model expects {model.network.condition_dim} basis points, config has {len(condition)}"
        )
    vectors = sample_many(model, condition, count, config.seed)
    centroid = target.mesh.centroid
    grasps = [vector_to_grasp(vector).moved(np.eye(3), centroid) for vector in vectors]
    energy_model = EnergyModel(
        scene.context(target.object_id, table_obstacle=config.optimizer.table_obstacle),
        hand,
        config.weights,
        config.optimizer,
    )
    digest = config_hash(config)
    records = []
    for index, grasp in enumerate(grasps):
        records.append(
            GraspRecord(
                scene_id=scene.scene_id,
                object_id=target.object_id,
                prompt=SAMPLED_PROMPT,
                grasp=GraspParameters.from_pose(grasp),
                energy=energy_model.energy(grasp),
                provenance=Provenance(
                    master_seed=config.seed, candidate_index=index, config_hash=digest
                ),
            )
        )
    logger.info("sampled %d grasps for object %d", len(records), target.object_id)
    return write_records(out_path, _header("sample", config, scene_path, hand_path), records)


def cmd_export(  # pylint: disable=too-many-arguments
    records_path: Path,
    out_dir: Path,
    config: GraspBuilderConfig,
    scene_path: Optional[Path] = None,
    hand_path: Optional[Path] = None,
    allow_config_change: bool = False,
) -> list[Path]:
    """One hand-plus-scene mesh per record, crate metadata, and the optional archive"""
    _, records, scene_file, hand_file = _stage_inputs(
        records_path, config, scene_path, hand_path, allow_config_change
    )
    scene = _require_scene(scene_file)
    hand = load_hand(hand_file)
    written = write_export(
        records,
        hand,
        scene.meshes,
        out_dir,
        scene_file=None if scene_file is None else str(scene_file),
        hand_file=None if hand_file is None else str(hand_file),
    )
    archive_export(config.pipeline.archive, Path(out_dir))
    return written


def cmd_report(
    records_path: Path,
    out_path: Path,
    config: GraspBuilderConfig,
    allow_config_change: bool = False,
) -> list[SuccessSummary]:
    """Per (object, prompt) lift and shake rates of evaluated records"""
    _, records = read_records(records_path, config_hash(config), allow_config_change)
    summaries = summarize_success(records)
    if not summaries:
        raise EmptyResultError(f"{records_path} holds no evaluated records")
    write_success_report(out_path, summaries)
    return summaries
