# pylint: disable=import-error, no-name-in-module
"""Builder class and functions for describing exported grasp meshes as RO-Crate entities
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

from rocrate.model.contextentity import ContextEntity
from rocrate.model.data_entity import DataEntity
from rocrate.rocrate import ROCrate
from slugify import slugify

from .geometry import TriangleMesh, icosphere, merge_meshes
from .grasp_dataclasses.grasp_dataclasses import GraspRecord
from .hand_model import GraspPose, HandModel, forward_kinematics

logger = logging.getLogger(__name__)

HAND_SPHERE_SUBDIVISIONS = 1
OBJ_FORMAT = "text/plain"
# force closure is a plain number, the other terms sum lengths or joint angles
ENERGY_UNITS: Dict[str, Optional[str]] = {
    "e_fc": None,
    "e_dis": "m",
    "e_joints": "rad",
    "e_pen": "m",
    "e_spen": "m",
}


def add_property_value(name: str, value: Any, unit: Optional[str] = None) -> Dict[str, Any]:
    """Describe one grasp attribute as a schema.org PropertyValue

    Args:
        name (str): the attribute, e.g. an energy term
        value (Any): its value
        unit (Optional[str]): unit of the value, written as `unitText` when given

    Returns:
        Dict[str,Any]: the attribute as an additional property
    """
    prop: Dict[str, Any] = {"@type": "PropertyValue", "name": name, "value": value}
    if unit is not None:
        prop["unitText"] = unit
    return prop


def hand_mesh(hand: HandModel, grasp: GraspPose) -> TriangleMesh:
    """Collision spheres of the posed hand as one mesh, in sphere order"""
    state = forward_kinematics(hand, grasp)
    return merge_meshes(
        [
            icosphere(HAND_SPHERE_SUBDIVISIONS, float(radius), centre)
            for centre, radius in zip(state.sphere_centers_world, hand.sphere_radius)
        ]
    )


def grasp_scene_mesh(
    hand: HandModel, grasp: GraspPose, scene_meshes: list[TriangleMesh]
) -> TriangleMesh:
    """Posed hand followed by every scene object"""
    return merge_meshes([hand_mesh(hand, grasp), *scene_meshes])


class ExportBuilder:
    """A class to hold and add exported grasps to an ROCrate

    Attr:
        crate (ROCrate): an RO-Crate to build or modify
    """

    def __init__(self, crate: ROCrate) -> None:
        self.crate = crate

    def add_scene(
        self, scene_id: str, scene_file: Optional[str], hand_file: Optional[str]
    ) -> ContextEntity:
        """Add the scene the grasps were synthesised in, once

        Returns:
            ContextEntity: the scene entity
        """
        identifier = f"#scene-{slugify(scene_id)}"
        if existing := self.crate.dereference(identifier):
            return existing
        properties: Dict[str, Any] = {
            "@type": "Thing",
            "name": scene_id,
            "additionalProperty": [
                add_property_value(name, value)
                for name, value in (("scene_file", scene_file), ("hand_file", hand_file))
                if value is not None
            ],
        }
        entity: ContextEntity = self.crate.add(
            ContextEntity(self.crate, identifier, properties=properties)
        )
        return entity

    def add_grasp_mesh(
        self, record: GraspRecord, mesh_path: Path, scene: Optional[ContextEntity] = None
    ) -> DataEntity:
        """Add an exported mesh file, described by its record

        Args:
            record (GraspRecord): the grasp drawn in the mesh
            mesh_path (Path): the mesh file, already written inside the crate directory
            scene (Optional[ContextEntity]): scene entity the grasp belongs to

        Returns:
            DataEntity: the file entity
        """
        energy = record.energy
        extra = [
            add_property_value("record_id", record.record_id),
            add_property_value("object_id", record.object_id),
            add_property_value("prompt", record.prompt),
            add_property_value("wrist_translation", list(record.grasp.translation), "m"),
            add_property_value("wrist_quaternion", list(record.grasp.quaternion)),
            add_property_value("joint_angles", list(record.grasp.theta), "rad"),
            add_property_value("energy_total", energy.total),
        ]
        for term, unit in ENERGY_UNITS.items():
            extra.append(add_property_value(term, getattr(energy, term), unit))
        for name in ("lift", "shake", "smooth_label"):
            if (value := getattr(record, name)) is not None:
                extra.append(add_property_value(name, value))
        properties: Dict[str, Any] = {
            "name": mesh_path.name,
            "description": f"grasp of object {record.object_id} for {record.prompt!r}",
            "encodingFormat": OBJ_FORMAT,
            "additionalProperty": extra,
        }
        file_entity: DataEntity = self.crate.add_file(
            source=mesh_path, dest_path=mesh_path.name, properties=properties
        )
        if scene is not None:
            file_entity.append_to("about", scene)
        logger.debug("described %s in crate", mesh_path.name)
        return file_entity

