"""Kinematic hand model: hand-file loading, grasp poses, forward kinematics,
joint limit and self-penetration energies.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.spatial.transform import Rotation

from .errors import HandDescriptionError, InputValidationError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

ACTUATED_JOINTS = 16
QUATERNION_TOLERANCE = 1e-6
HAND_FORMAT = "semantic-grasp-hand v1"
BUNDLED_HAND = Path(__file__).parent / "data" / "four_finger_hand.yaml"

ContactMode = Literal["power", "precision"]


class _HandSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OriginSpec(_HandSpec):
    """Joint frame relative to the parent link; rotation as w, x, y, z"""

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)


class JointSpec(_HandSpec):
    """A revolute joint connecting a link to its parent"""

    axis: tuple[float, float, float]
    origin: OriginSpec = OriginSpec()
    limits: tuple[float, float]
    closing: Literal[-1, 0, 1] = 0


class LinkSpec(_HandSpec):
    """A rigid link as written in the hand file"""

    name: str
    parent: Optional[str] = None
    joint: Optional[JointSpec] = None
    spheres: list[tuple[float, float, float, float]] = Field(default_factory=list)
    contacts: list[tuple[float, float, float]] = Field(default_factory=list)
    fingertip: bool = False


class HandFileSpec(_HandSpec):
    """Top level of a hand description file"""

    format: Literal["semantic-grasp-hand v1"]
    name: str = "hand"
    description: str = ""
    links: list[LinkSpec]
    adjacency: list[tuple[str, str]] = Field(default_factory=list)


def quaternion_to_matrix(quaternion: ArrayLike) -> FloatArray:
    """Rotation matrices from w, x, y, z quaternions (any leading shape)"""
    quat = np.asarray(quaternion, dtype=np.float64)
    matrices: FloatArray = Rotation.from_quat(quat.reshape(-1, 4)[:, [1, 2, 3, 0]]).as_matrix()
    return matrices.reshape(quat.shape[:-1] + (3, 3))


def matrix_to_quaternion(matrix: ArrayLike) -> FloatArray:
    """w, x, y, z quaternions with w >= 0 from rotation matrices"""
    mats = np.asarray(matrix, dtype=np.float64)
    xyzw = Rotation.from_matrix(mats.reshape(-1, 3, 3)).as_quat()
    wxyz = xyzw[:, [3, 0, 1, 2]]
    wxyz[wxyz[:, 0] < 0] *= -1.0
    result: FloatArray = wxyz.reshape(mats.shape[:-2] + (4,))
    return result


def axis_angle_matrices(axis: FloatArray, angles: FloatArray) -> FloatArray:
    """Rotations about one fixed unit axis by each angle"""
    rotvecs = np.outer(np.asarray(angles, dtype=np.float64).reshape(-1), axis)
    matrices: FloatArray = Rotation.from_rotvec(rotvecs).as_matrix()
    return matrices


@dataclass(kw_only=True, frozen=True, eq=False)
class GraspPose:
    """Wrist translation, wrist rotation and joint angles

    Quaternions are stored w, x, y, z with w >= 0. Inputs within 1e-6 of unit
    norm are renormalised; anything further off is rejected.
    """

    translation: FloatArray
    quaternion: FloatArray
    theta: FloatArray

    def __post_init__(self) -> None:
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        quaternion = np.array(self.quaternion, dtype=np.float64).reshape(4)
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(quaternion))
        if not np.isfinite(norm) or abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise InputValidationError(f"quaternion norm {norm} is not 1")
        quaternion /= norm
        if quaternion[0] < 0:
            quaternion = -quaternion
        for arr in (translation, quaternion, theta):
            arr.setflags(write=False)
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "quaternion", quaternion)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_matrix(
        cls, translation: ArrayLike, rotation: ArrayLike, theta: ArrayLike
    ) -> "GraspPose":
        return cls(
            translation=np.asarray(translation, dtype=np.float64),
            quaternion=matrix_to_quaternion(rotation),
            theta=np.asarray(theta, dtype=np.float64),
        )

    @property
    def rotation(self) -> FloatArray:
        return quaternion_to_matrix(self.quaternion)

    def with_theta(self, theta: ArrayLike) -> "GraspPose":
        return replace(self, theta=np.asarray(theta, dtype=np.float64))

    def moved(self, rotation: ArrayLike, translation: ArrayLike) -> "GraspPose":
        """The pose after a rigid motion x -> rotation x + translation of the world"""
        rot = np.asarray(rotation, dtype=np.float64)
        return GraspPose.from_matrix(
            rot @ self.translation + np.asarray(translation, dtype=np.float64),
            rot @ self.rotation,
            self.theta,
        )


@dataclass(kw_only=True, frozen=True, eq=False)
class Joint:
    """Revolute joint: fixed origin frame then rotation about `axis`"""

    axis: FloatArray
    origin_translation: FloatArray
    origin_rotation: FloatArray
    lower: float
    upper: float
    closing: int


@dataclass(kw_only=True, frozen=True, eq=False)
class Link:
    """Rigid link with collision spheres and contact candidates in its frame"""

    name: str
    parent: int
    joint: Optional[Joint]
    spheres: FloatArray
    contacts: FloatArray
    fingertip: bool = False


@dataclass(kw_only=True, frozen=True, eq=False)
class HandStateWorld:
    """World-frame hand geometry; every array may carry a leading batch axis"""

    link_rotations: FloatArray
    link_translations: FloatArray
    contact_points_world: FloatArray
    sphere_centers_world: FloatArray

    def select(self, index: int) -> "HandStateWorld":
        return HandStateWorld(
            link_rotations=self.link_rotations[index],
            link_translations=self.link_translations[index],
            contact_points_world=self.contact_points_world[index],
            sphere_centers_world=self.sphere_centers_world[index],
        )


@dataclass(kw_only=True, frozen=True, eq=False)
class HandModel:  # pylint: disable=too-many-instance-attributes
    """Immutable kinematic tree with contact candidates and collision spheres.

    Links are stored parents first; joints are numbered in that order.
    """

    name: str
    links: tuple[Link, ...]
    exempt_links: frozenset[tuple[int, int]]
    contact_mode: ContactMode = "power"
    joint_links: IntArray = field(init=False)
    lower: FloatArray = field(init=False)
    upper: FloatArray = field(init=False)
    closing: IntArray = field(init=False)
    contact_link: IntArray = field(init=False)
    contact_local: FloatArray = field(init=False)
    sphere_link: IntArray = field(init=False)
    sphere_local: FloatArray = field(init=False)
    sphere_radius: FloatArray = field(init=False)
    pair_a: IntArray = field(init=False)
    pair_b: IntArray = field(init=False)

    def __post_init__(self) -> None:
        joint_links = [i for i, link in enumerate(self.links) if link.joint is not None]
        joints = [self.links[i].joint for i in joint_links]
        contact_links = [
            i
            for i, link in enumerate(self.links)
            if self.contact_mode == "power" or link.fingertip
        ]
        contact_link = np.concatenate(
            [np.full(len(self.links[i].contacts), i, dtype=np.int64) for i in contact_links]
            or [np.zeros(0, dtype=np.int64)]
        )
        contact_local = np.concatenate(
            [self.links[i].contacts.reshape(-1, 3) for i in contact_links] or [np.zeros((0, 3))]
        )
        sphere_link = np.concatenate(
            [np.full(len(link.spheres), i, dtype=np.int64) for i, link in enumerate(self.links)]
        )
        spheres = np.concatenate([link.spheres.reshape(-1, 4) for link in self.links])
        a_idx, b_idx = np.triu_indices(len(spheres), k=1)
        la, lb = sphere_link[a_idx], sphere_link[b_idx]
        exempt = np.array(
            [
                (int(x), int(y)) in self.exempt_links or (int(y), int(x)) in self.exempt_links
                for x, y in zip(la, lb)
            ],
            dtype=bool,
        ).reshape(-1)
        values = {
            "joint_links": np.asarray(joint_links, dtype=np.int64),
            "lower": np.array([j.lower for j in joints if j], dtype=np.float64),
            "upper": np.array([j.upper for j in joints if j], dtype=np.float64),
            "closing": np.array([j.closing for j in joints if j], dtype=np.int64),
            "contact_link": contact_link,
            "contact_local": contact_local,
            "sphere_link": sphere_link,
            "sphere_local": spheres[:, :3].copy(),
            "sphere_radius": spheres[:, 3].copy(),
            "pair_a": a_idx[~exempt].astype(np.int64),
            "pair_b": b_idx[~exempt].astype(np.int64),
        }
        for key, value in values.items():
            value.setflags(write=False)
            object.__setattr__(self, key, value)

    @property
    def joint_count(self) -> int:
        return len(self.joint_links)

    @property
    def finger_count(self) -> int:
        return sum(1 for link in self.links if link.fingertip)

    def joint_index(self, link_index: int) -> int:
        """Position in theta of the joint driving a link"""
        matches = np.flatnonzero(self.joint_links == link_index)
        if not matches.size:
            raise InputValidationError(f"link {self.links[link_index].name} has no joint")
        return int(matches[0])

    def link_index(self, name: str) -> int:
        for index, link in enumerate(self.links):
            if link.name == name:
                return index
        raise KeyError(name)

    def descendants(self, link_index: int) -> list[int]:
        """The link and every link below it"""
        found = [link_index]
        for index, link in enumerate(self.links):
            if link.parent in found:
                found.append(index)
        return found

    def driven_spheres(self, joint: int) -> IntArray:
        """Collision spheres moved by a joint"""
        links = self.descendants(int(self.joint_links[joint]))
        return np.flatnonzero(np.isin(self.sphere_link, links)).astype(np.int64)

    def flexion_joints(self) -> IntArray:
        return np.flatnonzero(self.closing != 0).astype(np.int64)

    def clamp(self, theta: ArrayLike) -> FloatArray:
        clamped: FloatArray = np.clip(np.asarray(theta, dtype=np.float64), self.lower, self.upper)
        return clamped

    def with_contact_mode(self, mode: ContactMode) -> "HandModel":
        """Power grasps use every link's candidates, precision only fingertips"""
        return HandModel(
            name=self.name, links=self.links, exempt_links=self.exempt_links, contact_mode=mode
        )

    def reference_pose(self) -> GraspPose:
        """Identity wrist at the origin with all joints at zero"""
        return GraspPose(
            translation=np.zeros(3),
            quaternion=np.array([1.0, 0.0, 0.0, 0.0]),
            theta=np.zeros(self.joint_count),
        )


def _sort_links(specs: list[LinkSpec]) -> list[LinkSpec]:
    """Order links parents first, rejecting cycles, orphans and extra roots"""
    by_name = {spec.name: spec for spec in specs}
    if len(by_name) != len(specs):
        raise HandDescriptionError("link names must be unique")
    roots = [spec.name for spec in specs if spec.parent is None]
    if len(roots) != 1:
        raise HandDescriptionError(f"hand must have exactly one root link, found {roots}")
    for spec in specs:
        seen = {spec.name}
        parent = spec.parent
        while parent is not None:
            if parent not in by_name:
                raise HandDescriptionError(f"{spec.name} has unknown parent {parent}")
            if parent in seen:
                raise HandDescriptionError(f"link parenting cycle through {parent}")
            seen.add(parent)
            parent = by_name[parent].parent
    ordered: list[LinkSpec] = []
    placed: set[str] = set()
    while len(ordered) < len(specs):
        for spec in specs:
            if spec.name not in placed and (spec.parent is None or spec.parent in placed):
                ordered.append(spec)
                placed.add(spec.name)
    return ordered


def _build_link(spec: LinkSpec, parent: int) -> Link:
    joint = None
    if spec.joint is not None and spec.parent is None:
        raise HandDescriptionError(f"root link {spec.name} cannot carry a joint")
    if spec.joint is not None:
        lower, upper = spec.joint.limits
        if lower > upper:
            raise InputValidationError(f"{spec.name}: joint limits {lower} > {upper}")
        axis = np.asarray(spec.joint.axis, dtype=np.float64)
        norm = float(np.linalg.norm(axis))
        if norm == 0.0:
            raise InputValidationError(f"{spec.name}: joint axis is zero")
        joint = Joint(
            axis=axis / norm,
            origin_translation=np.asarray(spec.joint.origin.translation, dtype=np.float64),
            origin_rotation=quaternion_to_matrix(spec.joint.origin.rotation),
            lower=lower,
            upper=upper,
            closing=spec.joint.closing,
        )
    elif spec.parent is not None:
        raise HandDescriptionError(f"{spec.name} has a parent but no joint")
    return Link(
        name=spec.name,
        parent=parent,
        joint=joint,
        spheres=np.asarray(spec.spheres, dtype=np.float64).reshape(-1, 4),
        contacts=np.asarray(spec.contacts, dtype=np.float64).reshape(-1, 3),
        fingertip=spec.fingertip,
    )


def load_hand(path: Optional[Path] = None, contact_mode: ContactMode = "power") -> HandModel:
    """Read a hand description file, defaulting to the bundled hand

    Raises:
        FileNotFoundError: if the file does not exist
        HandDescriptionError: if the links do not form a single rooted tree
        InputValidationError: if the file is otherwise malformed
    """
    path = Path(path) if path is not None else BUNDLED_HAND
    if not path.is_file():
        raise FileNotFoundError(f"hand file not found: {path}")
    with open(path, "r", encoding="utf-8") as hand_file:
        raw = yaml.safe_load(hand_file)
    try:
        spec = HandFileSpec.model_validate(raw)
    except ValidationError as err:
        raise InputValidationError(f"invalid hand file {path}: {err}") from err
    ordered = _sort_links(spec.links)
    index = {link.name: i for i, link in enumerate(ordered)}
    links = tuple(
        _build_link(link, -1 if link.parent is None else index[link.parent]) for link in ordered
    )
    exempt = {(i, i) for i in range(len(links))}
    exempt.update((i, link.parent) for i, link in enumerate(links) if link.parent >= 0)
    for first, second in spec.adjacency:
        if first not in index or second not in index:
            raise InputValidationError(f"adjacency names unknown link: {first}, {second}")
        exempt.add((index[first], index[second]))
    hand = HandModel(
        name=spec.name, links=links, exempt_links=frozenset(exempt), contact_mode=contact_mode
    )
    if hand.joint_count != ACTUATED_JOINTS:
        logger.warning(
            "hand %s has %d joints, expected %d", spec.name, hand.joint_count, ACTUATED_JOINTS
        )
    for link in links:
        if link.joint is not None and not len(link.contacts):
            logger.warning("link %s carries no contact candidates", link.name)
    logger.info("loaded hand %s with %d links", spec.name, len(links))
    return hand


def _check_theta(hand: HandModel, theta: FloatArray) -> None:
    if theta.shape[-1] != hand.joint_count:
        raise InputValidationError(
            f"expected {hand.joint_count} joint angles, got {theta.shape[-1]}"
        )


def forward_kinematics_batch(
    hand: HandModel, translations: ArrayLike, rotations: ArrayLike, thetas: ArrayLike
) -> HandStateWorld:
    """Forward kinematics for B poses at once

    Args:
        translations: (B, 3) wrist positions
        rotations: (B, 3, 3) wrist rotation matrices
        thetas: (B, J) joint angles

    Returns:
        HandStateWorld: arrays with a leading batch axis of size B
    """
    trans = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    rots = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    theta = np.asarray(thetas, dtype=np.float64).reshape(len(trans), -1)
    _check_theta(hand, theta)
    batch = len(trans)
    link_r = np.empty((batch, len(hand.links), 3, 3))
    link_t = np.empty((batch, len(hand.links), 3))
    joint_of_link = {int(link): j for j, link in enumerate(hand.joint_links)}
    for index, link in enumerate(hand.links):
        if link.joint is None:
            link_r[:, index] = rots
            link_t[:, index] = trans
            continue
        parent_r = link_r[:, link.parent]
        local = link.joint.origin_rotation @ axis_angle_matrices(
            link.joint.axis, theta[:, joint_of_link[index]]
        )
        link_r[:, index] = parent_r @ local
        link_t[:, index] = link_t[:, link.parent] + parent_r @ link.joint.origin_translation
    contacts = (
        np.einsum("bcij,cj->bci", link_r[:, hand.contact_link], hand.contact_local)
        + link_t[:, hand.contact_link]
    )
    spheres = (
        np.einsum("bsij,sj->bsi", link_r[:, hand.sphere_link], hand.sphere_local)
        + link_t[:, hand.sphere_link]
    )
    return HandStateWorld(
        link_rotations=link_r,
        link_translations=link_t,
        contact_points_world=contacts,
        sphere_centers_world=spheres,
    )


def forward_kinematics(hand: HandModel, grasp: GraspPose) -> HandStateWorld:
    """World link poses, contact candidates and sphere centres for one grasp"""
    return forward_kinematics_batch(
        hand, grasp.translation[None], grasp.rotation[None], grasp.theta[None]
    ).select(0)


def joint_violation_batch(hand: HandModel, thetas: ArrayLike) -> FloatArray:
    """Summed distance outside the joint limit box for each row"""
    theta = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    _check_theta(hand, theta)
    excess = np.maximum(0.0, theta - hand.upper) + np.maximum(0.0, hand.lower - theta)
    violation: FloatArray = excess.sum(axis=1)
    return violation


def joint_violation(hand: HandModel, theta: ArrayLike) -> float:
    """Sum over joints of max(0, theta - hi) + max(0, lo - theta)

    Raises:
        InputValidationError: if theta does not have one angle per joint
    """
    return float(joint_violation_batch(hand, np.asarray(theta, dtype=np.float64)[None])[0])


def self_penetration_batch(hand: HandModel, sphere_centers: ArrayLike) -> FloatArray:
    """Self-penetration for (B, S, 3) sphere centres"""
    centres = np.asarray(sphere_centers, dtype=np.float64)
    centres = centres.reshape(-1, len(hand.sphere_radius), 3)
    gaps = np.linalg.norm(centres[:, hand.pair_a] - centres[:, hand.pair_b], axis=-1)
    overlap = hand.sphere_radius[hand.pair_a] + hand.sphere_radius[hand.pair_b] - gaps
    penetration: FloatArray = np.maximum(0.0, overlap).sum(axis=1)
    return penetration


def self_penetration(hand: HandModel, state: HandStateWorld) -> float:
    """Summed overlap of every non-exempt sphere pair"""
    return float(self_penetration_batch(hand, state.sphere_centers_world[None])[0])
