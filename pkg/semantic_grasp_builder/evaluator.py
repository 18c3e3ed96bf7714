"""Quasi-static grasp evaluation: finger closing, contact detection,
friction-pyramid wrench feasibility, lift and shake trials, smooth labels.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import nnls

from .errors import InputValidationError
from .geometry import FloatArray, signed_distance_batch
from .grasp_dataclasses.config import EvalConfig
from .grasp_dataclasses.grasp_dataclasses import FailureReason, GraspRecord
from .grasp_dataclasses.record_manifest import RecordManifest
from .grasp_optimizer import SceneContext, obstacle_distance
from .hand_model import GraspPose, HandModel, forward_kinematics_batch

logger = logging.getLogger(__name__)

Task = Literal["lift", "shake"]


@dataclass(kw_only=True, frozen=True, eq=False)
class ContactState:
    """A hand sphere touching the target"""

    point: FloatArray
    normal: FloatArray
    depth: float


@dataclass(kw_only=True, frozen=True)
class TrialOutcome:
    """Result of one lift or shake trial; truthy on success"""

    success: bool
    contacts_used: int
    failure_reason: Optional[FailureReason] = None

    def __bool__(self) -> bool:
        return self.success


@dataclass(kw_only=True, frozen=True)
class EvalResult:
    """Evaluation of a grasp and its perturbed variants"""

    lift: bool
    shake: bool
    smooth_label: float
    contacts_used: int
    failure_reason: Optional[FailureReason] = None


def _sphere_centres(hand: HandModel, grasps: Sequence[GraspPose]) -> FloatArray:
    state = forward_kinematics_batch(
        hand,
        np.stack([g.translation for g in grasps]),
        np.stack([g.rotation for g in grasps]),
        np.stack([g.theta for g in grasps]),
    )
    centres: FloatArray = state.sphere_centers_world
    return centres


def close_fingers(
    scene: SceneContext, hand: HandModel, grasp: GraspPose, config: EvalConfig
) -> GraspPose:
    """Advance each flexion joint towards its closing limit in fixed increments.

    A joint stops one increment before any sphere it drives penetrates the
    target by more than `contact_tol`; joints are closed in hand-file order.
    """
    theta = grasp.theta.copy()
    for joint in hand.flexion_joints():
        direction = int(hand.closing[joint])
        limit = hand.upper[joint] if direction > 0 else hand.lower[joint]
        span = max(0.0, (limit - theta[joint]) * direction)
        increments = int(math.floor(span / config.close_increment + 1e-9))
        angles = theta[joint] + direction * config.close_increment * np.arange(increments + 1)
        if span - increments * config.close_increment > 1e-12:
            angles = np.append(angles, limit)
        candidates = np.repeat(theta[None], len(angles), axis=0)
        candidates[:, joint] = angles
        driven = hand.driven_spheres(int(joint))
        state = forward_kinematics_batch(
            hand,
            np.repeat(grasp.translation[None], len(angles), axis=0),
            np.repeat(grasp.rotation[None], len(angles), axis=0),
            candidates,
        )
        centres = state.sphere_centers_world[:, driven]
        distance = signed_distance_batch(scene.target, centres.reshape(-1, 3)).signed_distance
        penetration = hand.sphere_radius[driven][None] - distance.reshape(len(angles), -1)
        blocked = np.flatnonzero((penetration > config.contact_tol).any(axis=1))
        stop = len(angles) - 1 if not blocked.size else max(0, int(blocked[0]) - 1)
        theta[joint] = angles[stop]
    return grasp.with_theta(theta)


def detect_contacts(
    scene: SceneContext, hand: HandModel, grasp: GraspPose, config: EvalConfig
) -> list[ContactState]:
    """One contact per sphere closer than r + contact_tol to the target"""
    centres = _sphere_centres(hand, [grasp])[0]
    query = signed_distance_batch(scene.target, centres)
    radii = hand.sphere_radius
    touching = np.flatnonzero(query.signed_distance < radii + config.contact_tol)
    return [
        ContactState(
            point=query.closest_point[i],
            normal=query.normal[i],
            depth=float(max(0.0, radii[i] - query.signed_distance[i])),
        )
        for i in touching
    ]


def _tangent_basis(normal: FloatArray) -> tuple[FloatArray, FloatArray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    first = np.cross(normal, helper)
    first /= np.linalg.norm(first)
    return first, np.cross(normal, first)


def contact_wrench_basis(
    contacts: Sequence[ContactState],
    mu: float,
    pyramid_sides: int,
    reference_point: ArrayLike = (0.0, 0.0, 0.0),
) -> FloatArray:
    """(6, contacts * (sides + 1)) wrenches of every pyramid edge and the pure
    normal force; each column carries a unit normal force component.
    """
    reference = np.asarray(reference_point, dtype=np.float64)
    angles = 2.0 * math.pi * np.arange(pyramid_sides) / pyramid_sides
    columns = []
    for contact in contacts:
        normal = np.asarray(contact.normal, dtype=np.float64)
        first, second = _tangent_basis(normal)
        edges = -normal + mu * (np.outer(np.cos(angles), first) + np.outer(np.sin(angles), second))
        forces = np.vstack((edges, -normal))
        torques = np.cross(np.asarray(contact.point) - reference, forces)
        columns.append(np.hstack((forces, torques)).T)
    if not columns:
        return np.zeros((6, 0))
    return np.hstack(columns)


def wrench_residual(
    contacts: Sequence[ContactState],
    external_wrench: ArrayLike,
    config: EvalConfig,
    reference_point: ArrayLike = (0.0, 0.0, 0.0),
) -> float:
    """Smallest ||sum(lambda w) + external|| found with per-contact force caps.

    The caps enter nonnegative least squares as weighted rows with slack
    variables; any cap still exceeded afterwards is enforced by scaling that
    contact's forces down before the residual is measured.
    """
    external = np.asarray(external_wrench, dtype=np.float64).reshape(6)
    basis = contact_wrench_basis(contacts, config.mu, config.pyramid_sides, reference_point)
    count, per_contact = len(contacts), config.pyramid_sides + 1
    if not count:
        return float(np.linalg.norm(external))
    membership = np.kron(np.eye(count), np.ones(per_contact))
    weight = config.cap_weight
    system = np.block(
        [
            [basis, np.zeros((6, count))],
            [weight * membership, weight * np.eye(count)],
        ]
    )
    target = np.concatenate((-external, np.full(count, weight * config.f_max)))
    solution, _ = nnls(system, target, maxiter=50 * system.shape[1])
    forces = solution[: count * per_contact].reshape(count, per_contact)
    totals = forces.sum(axis=1)
    over = totals > config.f_max
    forces[over] *= (config.f_max / totals[over])[:, None]
    return float(np.linalg.norm(basis @ forces.reshape(-1) + external))


def wrench_feasible(
    contacts: Sequence[ContactState],
    external_wrench: ArrayLike,
    config: EvalConfig,
    reference_point: ArrayLike = (0.0, 0.0, 0.0),
) -> bool:
    """Whether capped pyramid forces can cancel the external wrench within
    `residual_eps`. Torques are taken about `reference_point`.
    """
    external = np.asarray(external_wrench, dtype=np.float64)
    if not np.any(external):
        return True
    return wrench_residual(contacts, external, config, reference_point) <= config.residual_eps


def _collides(scene: SceneContext, hand: HandModel, grasp: GraspPose, config: EvalConfig) -> bool:
    if not scene.obstacles:
        return False
    centres = _sphere_centres(hand, [grasp])[0]
    for obstacle in scene.obstacles:
        if np.any(hand.sphere_radius - obstacle_distance(obstacle, centres) > config.contact_tol):
            return True
    return False


def _trial(
    scene: SceneContext, hand: HandModel, grasp: GraspPose, config: EvalConfig, task: Task
) -> TrialOutcome:
    """Close the hand then test the gravity wrench, plus shake wrenches for shake"""
    closed = close_fingers(scene, hand, grasp, config)
    if _collides(scene, hand, closed, config):
        return TrialOutcome(success=False, contacts_used=0, failure_reason=FailureReason.COLLISION)
    contacts = detect_contacts(scene, hand, closed, config)
    if not contacts:
        return TrialOutcome(success=False, contacts_used=0, failure_reason=FailureReason.NO_CONTACT)
    used = len(contacts)
    if max(contact.depth for contact in contacts) >= config.max_penetration:
        return TrialOutcome(
            success=False, contacts_used=used, failure_reason=FailureReason.PENETRATION
        )
    gravity = np.asarray(config.gravity, dtype=np.float64)
    accelerations = [np.zeros(3)]
    if task == "shake":
        accelerations.extend(np.asarray(a, dtype=np.float64) for a in config.shake_accels)
    for acceleration in accelerations:
        wrench = np.concatenate((config.object_mass * (gravity + acceleration), np.zeros(3)))
        if not wrench_feasible(contacts, wrench, config, scene.object_centroid):
            return TrialOutcome(
                success=False, contacts_used=used, failure_reason=FailureReason.INFEASIBLE_WRENCH
            )
    return TrialOutcome(success=True, contacts_used=used)


def evaluate_lift(
    scene: SceneContext, hand: HandModel, grasp: GraspPose, config: EvalConfig
) -> TrialOutcome:
    """Raise the wrist: no obstacle collision, shallow contacts, gravity resisted"""
    return _trial(scene, hand, grasp, config, "lift")


def evaluate_shake(
    scene: SceneContext, hand: HandModel, grasp: GraspPose, config: EvalConfig
) -> TrialOutcome:
    """A lift that also resists mass * (g + a) for every shake acceleration"""
    return _trial(scene, hand, grasp, config, "shake")


def perturbed_grasps(
    hand: HandModel, grasp: GraspPose, config: EvalConfig, grasp_index: int = 0
) -> list[GraspPose]:
    """The grasp followed by `d` joint-noise variants, each from its own stream"""
    variants = [grasp]
    for trial in range(1, config.d + 1):
        rng = np.random.default_rng([config.seed, grasp_index, trial])
        noise = rng.normal(0.0, config.perturb_sigma, hand.joint_count)
        variants.append(grasp.with_theta(hand.clamp(grasp.theta + noise)))
    return variants


def smooth_label(  # pylint: disable=too-many-arguments
    scene: SceneContext,
    hand: HandModel,
    grasp: GraspPose,
    config: EvalConfig,
    task: Task,
    grasp_index: int = 0,
) -> float:
    """Mean success over the grasp and d perturbed variants"""
    variants = perturbed_grasps(hand, grasp, config, grasp_index)
    successes = sum(bool(_trial(scene, hand, variant, config, task)) for variant in variants)
    return successes / len(variants)


def evaluate_grasp(  # pylint: disable=too-many-arguments
    scene: SceneContext,
    hand: HandModel,
    grasp: GraspPose,
    config: EvalConfig,
    task: Task,
    grasp_index: int = 0,
) -> EvalResult:
    """Lift and shake verdicts of the grasp itself plus its smooth label for `task`"""
    lift = evaluate_lift(scene, hand, grasp, config)
    shake = evaluate_shake(scene, hand, grasp, config) if lift else lift
    variants = perturbed_grasps(hand, grasp, config, grasp_index)
    first = shake if task == "shake" else lift
    successes = int(bool(first)) + sum(
        bool(_trial(scene, hand, variant, config, task)) for variant in variants[1:]
    )
    return EvalResult(
        lift=bool(lift),
        shake=bool(shake),
        smooth_label=successes / len(variants),
        contacts_used=first.contacts_used,
        failure_reason=first.failure_reason,
    )


def filter_dataset(records: Sequence[GraspRecord], threshold: float) -> list[GraspRecord]:
    """Records whose smooth label reaches the threshold

    Raises:
        InputValidationError: if threshold is outside [0, 1]
    """
    if not 0.0 <= threshold <= 1.0:
        raise InputValidationError(f"threshold must be in [0, 1], got {threshold}")
    unlabelled = sum(1 for record in records if record.smooth_label is None)
    if unlabelled:
        logger.warning("%d records have no smooth label and are dropped", unlabelled)
    kept = [
        record
        for record in records
        if record.smooth_label is not None and record.smooth_label >= threshold
    ]
    logger.info("kept %d of %d records at threshold %.3f", len(kept), len(records), threshold)
    return kept


@dataclass(kw_only=True, frozen=True)
class SuccessSummary:
    """Success rates of one object and prompt"""

    object_id: int
    prompt: str
    grasps: int
    lift_rate: float
    shake_rate: float
    mean_label: float


def summarize_success(records: Sequence[GraspRecord]) -> list[SuccessSummary]:
    """Per object and prompt lift and shake rates over evaluated records"""
    manifest = RecordManifest(records=[r for r in records if r.lift is not None])
    summaries = []
    for (object_id, prompt), group in sorted(manifest.groups.items()):
        summaries.append(
            SuccessSummary(
                object_id=object_id,
                prompt=prompt,
                grasps=len(group),
                lift_rate=sum(bool(r.lift) for r in group) / len(group),
                shake_rate=sum(bool(r.shake) for r in group) / len(group),
                mean_label=sum(r.smooth_label or 0.0 for r in group) / len(group),
            )
        )
    return summaries
