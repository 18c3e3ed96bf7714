"""Grasp initialisation on the inflated segmented hull and descent on the
five-term grasp energy.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation

from .errors import InputValidationError
from .geometry import (
    FloatArray,
    IntArray,
    TriangleMesh,
    convex_hull,
    farthest_point_sampling,
    inflate_hull,
    signed_distance_batch,
)
from .grasp_dataclasses.config import EnergyWeights, OptimizerConfig
from .grasp_dataclasses.grasp_dataclasses import EnergyBreakdown
from .hand_model import (
    GraspPose,
    HandModel,
    forward_kinematics_batch,
    joint_violation_batch,
    self_penetration_batch,
)
from .region_proposal import UsefulRegion

logger = logging.getLogger(__name__)

APPROACH_AXIS = np.array([0.0, 0.0, 1.0])
TRACE_COLUMNS = ("step", "e_fc", "e_dis", "e_joints", "e_pen", "e_spen", "total")


@dataclass(kw_only=True, frozen=True)
class TablePlane:
    """Horizontal support plane; everything below `height` is inside"""

    height: float

    def signed_distance(self, points: FloatArray) -> FloatArray:
        distance: FloatArray = points[:, 2] - self.height
        return distance


Obstacle = TriangleMesh | TablePlane


def obstacle_distance(obstacle: Obstacle, points: FloatArray) -> FloatArray:
    """Signed distance from points to a mesh or a table plane"""
    if isinstance(obstacle, TablePlane):
        return obstacle.signed_distance(points)
    return signed_distance_batch(obstacle, points).signed_distance


@dataclass(kw_only=True, frozen=True, eq=False)
class SceneContext:
    """Target, obstacles and useful region for one grasp task"""

    target: TriangleMesh
    region: UsefulRegion
    obstacles: tuple[Obstacle, ...] = ()
    object_centroid: FloatArray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if len(self.region) and max(self.region.face_indices) >= len(self.target):
            raise InputValidationError("region faces are not faces of the target")
        if self.object_centroid is None:
            centroid = self.target.centroid
        else:
            centroid = np.asarray(self.object_centroid, dtype=np.float64).reshape(3)
        object.__setattr__(self, "object_centroid", centroid)

    def without_obstacles(self) -> "SceneContext":
        return SceneContext(
            target=self.target, region=self.region, object_centroid=self.object_centroid
        )


def force_closure_residual(
    points: ArrayLike, normals: ArrayLike, centroid: ArrayLike
) -> float:
    """||G c|| / m for unit inward forces at m contacts, 1 when m is zero"""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(pts):
        return 1.0
    forces = -np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    torques = np.cross(pts - np.asarray(centroid, dtype=np.float64), forces)
    wrench = np.concatenate((forces.sum(axis=0), torques.sum(axis=0)))
    return float(np.linalg.norm(wrench) / len(pts))


@dataclass(kw_only=True, frozen=True, eq=False)
class EnergyBatch:
    """Energy terms for a batch of poses"""

    e_fc: FloatArray
    e_dis: FloatArray
    e_joints: FloatArray
    e_pen: FloatArray
    e_spen: FloatArray
    total: FloatArray
    active_contacts: IntArray

    def breakdown(self, index: int, weights: EnergyWeights) -> EnergyBreakdown:
        return EnergyBreakdown.from_terms(
            e_fc=float(self.e_fc[index]),
            e_dis=float(self.e_dis[index]),
            e_joints=float(self.e_joints[index]),
            e_pen=float(self.e_pen[index]),
            e_spen=float(self.e_spen[index]),
            w_dis=weights.w_dis,
            w_joints=weights.w_joints,
            w_pen=weights.w_pen,
            w_spen=weights.w_spen,
        )


def _local_rotations(rotvecs: FloatArray) -> FloatArray:
    matrices: FloatArray = Rotation.from_rotvec(np.asarray(rotvecs).reshape(-1, 3)).as_matrix()
    return matrices


class EnergyModel:
    """Batched energy and finite-difference gradient for one scene and hand

    Attr:
        scene (SceneContext): the grasp task
        hand (HandModel): the hand, switched to the configured contact mode
        weights (EnergyWeights): term weights
        config (OptimizerConfig): threshold and finite-difference settings
    """

    def __init__(
        self,
        scene: SceneContext,
        hand: HandModel,
        weights: EnergyWeights,
        config: OptimizerConfig,
    ) -> None:
        self.scene = scene
        if hand.contact_mode != config.contact_mode:
            hand = hand.with_contact_mode(config.contact_mode)
        self.hand = hand
        self.weights = weights
        self.config = config

    @property
    def dimension(self) -> int:
        return 6 + self.hand.joint_count

    def evaluate(
        self, translations: ArrayLike, rotations: ArrayLike, thetas: ArrayLike
    ) -> EnergyBatch:
        """All five terms for B poses given as (B, 3), (B, 3, 3), (B, J)"""
        state = forward_kinematics_batch(self.hand, translations, rotations, thetas)
        contacts = state.contact_points_world
        batch, count = contacts.shape[:2]
        query = signed_distance_batch(self.scene.target, contacts.reshape(-1, 3), with_sign=False)
        distance = np.abs(query.signed_distance).reshape(batch, count)
        normals = query.normal.reshape(batch, count, 3)
        active = distance < self.config.contact_threshold
        forces = -normals * active[..., None]
        torques = np.cross(contacts - self.scene.object_centroid, forces)
        wrench = np.concatenate((forces.sum(axis=1), torques.sum(axis=1)), axis=1)
        active_count = active.sum(axis=1)
        e_fc = np.where(
            active_count > 0, np.linalg.norm(wrench, axis=1) / np.maximum(active_count, 1), 1.0
        )
        e_dis = distance.sum(axis=1)

        centres = state.sphere_centers_world
        flat = centres.reshape(-1, 3)
        radii = np.tile(self.hand.sphere_radius, batch)
        penetration = np.maximum(
            0.0, radii - signed_distance_batch(self.scene.target, flat).signed_distance
        )
        for obstacle in self.scene.obstacles:
            penetration += np.maximum(0.0, radii - obstacle_distance(obstacle, flat))
        e_pen = penetration.reshape(batch, -1).sum(axis=1)
        e_joints = joint_violation_batch(self.hand, thetas)
        e_spen = self_penetration_batch(self.hand, centres)
        w = self.weights
        total = e_fc + w.w_dis * e_dis + w.w_joints * e_joints + w.w_pen * e_pen + w.w_spen * e_spen
        return EnergyBatch(
            e_fc=e_fc,
            e_dis=e_dis,
            e_joints=e_joints,
            e_pen=e_pen,
            e_spen=e_spen,
            total=total,
            active_contacts=active_count.astype(np.int64),
        )

    def energy(self, grasp: GraspPose) -> EnergyBreakdown:
        batch = self.evaluate(grasp.translation[None], grasp.rotation[None], grasp.theta[None])
        return batch.breakdown(0, self.weights)

    def active_contacts(self, grasp: GraspPose) -> int:
        """Contact candidates within the activation threshold"""
        batch = self.evaluate(grasp.translation[None], grasp.rotation[None], grasp.theta[None])
        return int(batch.active_contacts[0])

    def energy_and_gradient(
        self, grasp: GraspPose, epsilon: Optional[float] = None
    ) -> tuple[EnergyBreakdown, FloatArray]:
        """Energy at the grasp and central differences over translation,
        local rotation (right-multiplied increments) and joint angles.
        """
        eps = self.config.fd_epsilon if epsilon is None else epsilon
        dim = self.dimension
        steps = np.concatenate((np.eye(dim), -np.eye(dim))) * eps
        translations = grasp.translation + steps[:, :3]
        rotations = grasp.rotation @ _local_rotations(steps[:, 3:6])
        thetas = grasp.theta + steps[:, 6:]
        batch = self.evaluate(
            np.concatenate((grasp.translation[None], translations)),
            np.concatenate((grasp.rotation[None], rotations)),
            np.concatenate((grasp.theta[None], thetas)),
        )
        totals = batch.total[1:]
        gradient: FloatArray = (totals[:dim] - totals[dim:]) / (2.0 * eps)
        return batch.breakdown(0, self.weights), gradient


def energy(
    scene: SceneContext,
    hand: HandModel,
    grasp: GraspPose,
    weights: EnergyWeights,
    config: OptimizerConfig,
) -> EnergyBreakdown:
    """Force closure, distance, joint limit, penetration and self-penetration energies"""
    return EnergyModel(scene, hand, weights, config).energy(grasp)


def energy_gradient(
    scene: SceneContext,
    hand: HandModel,
    grasp: GraspPose,
    weights: EnergyWeights,
    config: OptimizerConfig,
) -> FloatArray:
    """Gradient over (T, local rotation, theta) by central finite differences"""
    return EnergyModel(scene, hand, weights, config).energy_and_gradient(grasp)[1]


def apply_increment(hand: HandModel, grasp: GraspPose, increment: ArrayLike) -> GraspPose:
    """Move a grasp by a (T, local rotation, theta) increment, clamping joints"""
    delta = np.asarray(increment, dtype=np.float64)
    return GraspPose.from_matrix(
        grasp.translation + delta[:3],
        grasp.rotation @ _local_rotations(delta[3:6])[0],
        hand.clamp(grasp.theta + delta[6:]),
    )


def _clip_norm(vector: FloatArray, limit: float) -> FloatArray:
    norm = float(np.linalg.norm(vector))
    if norm > limit:
        return vector * (limit / norm)
    return vector


@dataclass(kw_only=True)
class OptimizationResult:
    """Best iterate of a descent run and its energy trace"""

    grasp: GraspPose
    energy: EnergyBreakdown
    trace: list[EnergyBreakdown]
    candidate_index: int = 0


def optimize(  # pylint: disable=too-many-arguments,too-many-locals
    scene: SceneContext,
    hand: HandModel,
    init: GraspPose,
    weights: EnergyWeights,
    config: OptimizerConfig,
    candidate_index: int = 0,
) -> OptimizationResult:
    """Gradient descent with per-group step sizes and annealed noise.

    Each step first adds Gaussian noise of sigma * (1 - t / steps), then
    descends; joints are clamped after every move. The trace holds the
    energy of every visited iterate and the lowest one is returned.
    """
    model = EnergyModel(scene, hand, weights, config)
    rng = np.random.default_rng([config.seed, candidate_index])
    joints = model.hand.joint_count
    step_sizes = np.concatenate(
        (
            np.full(3, config.step_size_T),
            np.full(3, config.step_size_rot),
            np.full(joints, config.step_size_theta),
        )
    )
    current = init
    trace: list[EnergyBreakdown] = []
    best_grasp, best_energy = current, None
    for step in range(config.steps):
        sigma = config.anneal_noise_sigma * (1.0 - step / config.steps)
        if sigma > 0:
            current = apply_increment(model.hand, current, rng.normal(0.0, sigma, 6 + joints))
        breakdown, gradient = model.energy_and_gradient(current)
        trace.append(breakdown)
        if best_energy is None or breakdown.total < best_energy.total:
            best_grasp, best_energy = current, breakdown
        move = -step_sizes * gradient
        move[:3] = _clip_norm(move[:3], config.max_step_T)
        move[3:6] = _clip_norm(move[3:6], config.max_step_rot)
        move[6:] = np.clip(move[6:], -config.max_step_theta, config.max_step_theta)
        current = apply_increment(model.hand, current, move)
    final = model.energy(current)
    trace.append(final)
    if best_energy is None or final.total < best_energy.total:
        best_grasp, best_energy = current, final
    logger.debug(
        "candidate %d: energy %.5g -> %.5g", candidate_index, trace[0].total, best_energy.total
    )
    return OptimizationResult(
        grasp=best_grasp, energy=best_energy, trace=trace, candidate_index=candidate_index
    )


def segmented_hull(scene: SceneContext) -> TriangleMesh:
    """Convex hull of the vertices of the region's faces

    Raises:
        InputValidationError: if the region is empty
        DegenerateGeometryError: if those vertices are flat or too few
    """
    if not len(scene.region):
        raise InputValidationError("segmented hull needs a non-empty region")
    vertex_ids = np.unique(scene.target.faces[scene.region.sorted_faces])
    return convex_hull(scene.target.vertices[vertex_ids])


def rotation_aligning(source: FloatArray, target: FloatArray) -> FloatArray:
    """Smallest rotation taking unit vector `source` onto unit vector `target`"""
    axis = np.cross(source, target)
    sine = float(np.linalg.norm(axis))
    cosine = float(np.dot(source, target))
    if sine < 1e-12:
        if cosine > 0:
            return np.eye(3)
        perpendicular = np.cross(source, [1.0, 0.0, 0.0])
        if np.linalg.norm(perpendicular) < 1e-6:
            perpendicular = np.cross(source, [0.0, 1.0, 0.0])
        perpendicular /= np.linalg.norm(perpendicular)
        return _local_rotations(math.pi * perpendicular)[0]
    return _local_rotations(axis / sine * math.atan2(sine, cosine))[0]


def inflation_distance(scene: SceneContext, config: OptimizerConfig) -> float:
    if config.inflate_delta is not None:
        return config.inflate_delta
    return config.inflate_factor * scene.target.bounding_sphere[1]


def init_grasps(
    scene: SceneContext, hand: HandModel, count: int, config: OptimizerConfig
) -> list[GraspPose]:
    """Palms on farthest-point anchors of the inflated segmented hull.

    Each palm faces along the inward vertex normal with a uniform random
    roll, then gets Gaussian noise on translation, local rotation and joints.

    Raises:
        InputValidationError: if count < 1
    """
    if count < 1:
        raise InputValidationError("at least one grasp must be initialised")
    hull = inflate_hull(segmented_hull(scene), inflation_distance(scene, config))
    anchors = farthest_point_sampling(
        hull.vertices, min(count, len(hull.vertices)), seed=config.seed
    )
    rest = hand.clamp(np.zeros(hand.joint_count))
    grasps = []
    for index in range(count):
        anchor = anchors[index % len(anchors)]
        rng = np.random.default_rng([config.seed, index])
        align = rotation_aligning(APPROACH_AXIS, -hull.vertex_normals[anchor])
        roll = _local_rotations(APPROACH_AXIS * rng.uniform(0.0, 2.0 * math.pi))[0]
        rotation = align @ roll @ _local_rotations(rng.normal(0.0, config.init_sigma_rot, 3))[0]
        translation = hull.vertices[anchor] + rng.normal(0.0, config.init_sigma_T, 3)
        theta = hand.clamp(rest + rng.normal(0.0, config.init_sigma_theta, hand.joint_count))
        grasps.append(GraspPose.from_matrix(translation, rotation, theta))
    logger.info("initialised %d grasps on %d hull anchors", count, len(anchors))
    return grasps


def optimize_candidates(
    scene: SceneContext,
    hand: HandModel,
    inits: Sequence[GraspPose],
    weights: EnergyWeights,
    config: OptimizerConfig,
    first_index: int = 0,
) -> list[OptimizationResult]:
    """Optimise several initial grasps in order"""
    return [
        optimize(scene, hand, init, weights, config, candidate_index=first_index + offset)
        for offset, init in enumerate(inits)
    ]
