"""Definition of grasp dataset dataclasses"""

import math
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Annotated, Any, Optional

from pydantic import AfterValidator, Field
from slugify import slugify

from .. import GRASP_NAMESPACE_UUID
from ..hand_model import GraspPose


def validate_ratio(value: Any) -> float:
    """Validator for values that must lie in the closed unit interval"""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f'Unexpected type for ratio: "{type(value)}"')
    if not 0.0 <= float(value) <= 1.0 or math.isnan(value):
        raise ValueError(f"Passed value {value} is not within [0, 1]")
    return float(value)


def validate_positive_ratio(value: Any) -> float:
    """Validator for fractions that must be in (0, 1]"""
    ratio = validate_ratio(value)
    if ratio == 0.0:
        raise ValueError("Passed value must be greater than zero")
    return ratio


Ratio = Annotated[float, AfterValidator(validate_ratio)]
PositiveRatio = Annotated[float, AfterValidator(validate_positive_ratio)]


class FailureReason(Enum):
    """Why a grasp failed an evaluation task"""

    NO_CONTACT = "no-contact"
    PENETRATION = "penetration"
    INFEASIBLE_WRENCH = "infeasible-wrench"
    COLLISION = "collision"


def gen_uuid_id(  #  type: ignore
    *args, namespace: uuid.UUID = GRASP_NAMESPACE_UUID
) -> str:
    """Generate a deterministic UUID for a dataset object

    Args:
        namespace (uuid.UUID, optional): the namespace UUID for the base of this UUID.
            Defaults to GRASP_NAMESPACE_UUID.
        args* (*Any): a collection of other values to base the UUID on the strings of

    Raises:
        TypeError: if a non UUID value is passed to the namespace UUID

    Returns:
        str: a uuid5 based on all inputs and namespaces
    """
    if not isinstance(namespace, uuid.UUID):
        raise TypeError("Namespace needs to be a UUID object.")
    if not args:
        return str(namespace)
    uuid_str = slugify(" ".join(map(str, args)))
    return str(uuid.uuid5(namespace, uuid_str))


@dataclass(kw_only=True)
class GraspParameters:
    """Serialisable wrist pose and joint angles

    Attr:
        translation (list[float]): wrist position in meters
        quaternion (list[float]): wrist rotation as w, x, y, z
        theta (list[float]): joint angles in radians, in hand-file order
    """

    translation: Annotated[list[float], Field(min_length=3, max_length=3)]
    quaternion: Annotated[list[float], Field(min_length=4, max_length=4)]
    theta: list[float]

    @classmethod
    def from_pose(cls, pose: GraspPose) -> "GraspParameters":
        return cls(
            translation=[float(value) for value in pose.translation],
            quaternion=[float(value) for value in pose.quaternion],
            theta=[float(value) for value in pose.theta],
        )

    def to_pose(self) -> GraspPose:
        return GraspPose(
            translation=self.translation, quaternion=self.quaternion, theta=self.theta
        )


@dataclass(kw_only=True)
class EnergyBreakdown:  # pylint: disable=too-many-instance-attributes
    """The five energy terms of a grasp and their weighted total"""

    e_fc: float
    e_dis: float
    e_joints: float
    e_pen: float
    e_spen: float
    total: float

    @classmethod
    def from_terms(  # pylint: disable=too-many-arguments
        cls,
        *,
        e_fc: float,
        e_dis: float,
        e_joints: float,
        e_pen: float,
        e_spen: float,
        w_dis: float,
        w_joints: float,
        w_pen: float,
        w_spen: float,
    ) -> "EnergyBreakdown":
        """Build a breakdown whose total is the weighted sum of the terms"""
        return cls(
            e_fc=float(e_fc),
            e_dis=float(e_dis),
            e_joints=float(e_joints),
            e_pen=float(e_pen),
            e_spen=float(e_spen),
            total=float(
                e_fc + w_dis * e_dis + w_joints * e_joints + w_pen * e_pen + w_spen * e_spen
            ),
        )

    def as_row(self) -> list[float]:
        return [self.e_fc, self.e_dis, self.e_joints, self.e_pen, self.e_spen, self.total]


@dataclass(kw_only=True)
class Provenance:
    """Seeds and settings a record was produced under"""

    master_seed: int
    candidate_index: int
    config_hash: str
    optimizer_seed: Optional[int] = None
    eval_seed: Optional[int] = None
    perturbations: Optional[int] = None
    task: Optional[str] = None


@dataclass(kw_only=True)
class GraspRecord:  # pylint: disable=too-many-instance-attributes
    """One row of the grasp dataset

    Evaluation and encoding fields stay None until the stage producing them runs.
    """

    scene_id: str
    object_id: int
    prompt: str
    grasp: GraspParameters
    energy: EnergyBreakdown
    provenance: Provenance
    lift: Optional[bool] = None
    shake: Optional[bool] = None
    smooth_label: Optional[Ratio] = None
    contacts_used: Optional[int] = None
    failure_reason: Optional[FailureReason] = None
    bps: Optional[list[float]] = field(default=None)

    @property
    def record_id(self) -> str:
        """Stable identifier from scene, object, prompt and candidate"""
        return gen_uuid_id(
            self.scene_id,
            self.object_id,
            self.prompt,
            self.provenance.candidate_index,
            self.provenance.config_hash,
        )

    @property
    def group_key(self) -> tuple[int, str]:
        return (self.object_id, self.prompt)

    def evolve(self, **changes: Any) -> "GraspRecord":
        """Copy of the record with some fields replaced"""
        return replace(self, **changes)
