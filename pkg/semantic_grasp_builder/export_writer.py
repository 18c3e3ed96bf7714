"""Functions for writing exported grasp meshes and archiving the export directory
"""

import logging
import os
import tarfile
import zipfile
from collections.abc import Sequence
from pathlib import Path
from typing import Optional

from rocrate.rocrate import ROCrate

from .errors import InputValidationError
from .export_builder import ExportBuilder, grasp_scene_mesh
from .geometry import TriangleMesh, write_mesh
from .grasp_dataclasses.grasp_dataclasses import GraspRecord
from .hand_model import HandModel

logger = logging.getLogger(__name__)


def write_export(  # pylint: disable=too-many-arguments
    records: Sequence[GraspRecord],
    hand: HandModel,
    scene_meshes: list[TriangleMesh],
    destination: Path,
    scene_file: Optional[str] = None,
    hand_file: Optional[str] = None,
) -> list[Path]:
    """Write one hand-plus-scene mesh per record and the crate metadata describing them

    Args:
        records (Sequence[GraspRecord]): grasps to export
        hand (HandModel): the hand the grasps were made with
        scene_meshes (list[TriangleMesh]): every scene object in world coordinates
        destination (Path): export directory, created if missing
        scene_file (Optional[str]): scene file recorded in the metadata
        hand_file (Optional[str]): hand file recorded in the metadata

    Returns:
        list[Path]: the mesh files in record order
    """
    destination = Path(destination)
    destination.mkdir(parents=True, exist_ok=True)
    builder = ExportBuilder(ROCrate())
    builder.crate.root_dataset["name"] = f"grasp export of {len(records)} records"
    written = []
    for record in records:
        mesh_path = destination / f"{record.record_id}.obj"
        write_mesh(grasp_scene_mesh(hand, record.grasp.to_pose(), scene_meshes), mesh_path)
        scene = builder.add_scene(record.scene_id, scene_file, hand_file)
        builder.add_grasp_mesh(record, mesh_path, scene)
        written.append(mesh_path)
    logger.info("writing crate metadata for %d meshes to %s", len(written), destination)
    builder.crate.metadata.write(destination)
    return written


def archive_export(archive_type: str | None, export_location: Path) -> Optional[Path]:
    """Archive the export directory as a TAR, GZIPPED TAR or ZIP archive next to it

    Args:
        archive_type (str | None): the archive format [tar.gz, tar, or zip]
        export_location (Path): the export directory

    Returns:
        Optional[Path]: the archive, None when no archive type is given
    """
    if not archive_type:
        return None
    export_location = Path(export_location)
    file_location = export_location.parent / f"{export_location.name}.{archive_type}"
    match archive_type:
        case "tar.gz":
            logger.info("Tar GZIP archiving %s", export_location.name)
            with tarfile.open(file_location, mode="w:gz") as out_tar:
                out_tar.add(export_location, arcname=export_location.name, recursive=True)
        case "tar":
            logger.info("Tar archiving %s", export_location.name)
            with tarfile.open(file_location, mode="w") as out_tar:
                out_tar.add(export_location, arcname=export_location.name, recursive=True)
        case "zip":
            logger.info("zip archiving %s", export_location.name)
            with zipfile.ZipFile(file_location, "w") as out_zip:
                for root, _, files in os.walk(export_location):
                    for filename in sorted(files):
                        arcname = (
                            export_location.name
                            / Path(root).relative_to(export_location)
                            / filename
                        )
                        out_zip.write(os.path.join(root, filename), arcname=arcname)
        case _:
            raise InputValidationError(f"unknown archive type {archive_type!r}")
    return file_location
