"""Versioned JSON-lines record files and CSV side outputs"""

import csv
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Optional

from pydantic import BaseModel, ConfigDict, TypeAdapter, ValidationError

from .. import FORMAT_VERSION
from ..errors import InputValidationError
from .grasp_dataclasses import EnergyBreakdown, GraspRecord

if TYPE_CHECKING:
    from ..evaluator import SuccessSummary

logger = logging.getLogger(__name__)

RECORDS_FORMAT = "semantic-grasp-records"
TRACE_HEADER = ["step", "e_fc", "e_dis", "e_joints", "e_pen", "e_spen", "total"]
REPORT_HEADER = ["object_id", "prompt", "grasps", "lift_rate", "shake_rate", "mean_label"]

RECORD_ADAPTER = TypeAdapter(GraspRecord)


class RecordFileHeader(BaseModel):
    """First line of every record file"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    format: Literal["semantic-grasp-records"] = RECORDS_FORMAT
    version: int = FORMAT_VERSION
    stage: str
    config_hash: str
    scene_file: Optional[str] = None
    hand_file: Optional[str] = None


def write_records(
    path: Path, header: RecordFileHeader, records: Iterable[GraspRecord]
) -> int:
    """Write a header line then one JSON object per record

    Returns:
        int: the number of records written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "wb") as record_file:
        record_file.write(header.model_dump_json().encode("utf-8") + b"\n")
        for record in records:
            record_file.write(RECORD_ADAPTER.dump_json(record) + b"\n")
            count += 1
    logger.info("wrote %d %s records to %s", count, header.stage, path)
    return count


def read_records(
    path: Path,
    expected_hash: Optional[str] = None,
    allow_config_change: bool = False,
) -> tuple[RecordFileHeader, list[GraspRecord]]:
    """Read a record file, checking its header against the running config

    Args:
        path (Path): the record file
        expected_hash (Optional[str]): hash of the effective config, None skips the check
        allow_config_change (bool): downgrade a hash mismatch to a warning

    Raises:
        FileNotFoundError: if the file does not exist
        InputValidationError: on a bad header, a bad record line or a hash mismatch

    Returns:
        tuple[RecordFileHeader, list[GraspRecord]]: header and records in file order
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"record file not found: {path}")
    with open(path, "rb") as record_file:
        lines = [line for line in record_file.read().splitlines() if line.strip()]
    if not lines:
        raise InputValidationError(f"{path} is empty, expected a record header")
    try:
        header = RecordFileHeader.model_validate_json(lines[0])
    except ValidationError as err:
        raise InputValidationError(f"{path} has no valid record header: {err}") from err
    if header.version != FORMAT_VERSION:
        raise InputValidationError(
            f"{path} has record format version {header.version}, expected {FORMAT_VERSION}"
        )
    if expected_hash is not None and header.config_hash != expected_hash:
        message = f"{path} was written under config {header.config_hash}, running {expected_hash}"
        if not allow_config_change:
            raise InputValidationError(message)
        logger.warning("%s; continuing", message)
    records = []
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            records.append(RECORD_ADAPTER.validate_json(line))
        except ValidationError as err:
            raise InputValidationError(f"{path}:{line_number}: invalid record: {err}") from err
    logger.info("read %d %s records from %s", len(records), header.stage, path)
    return header, records


def write_energy_trace(path: Path, trace: Sequence[EnergyBreakdown]) -> None:
    """One CSV row per visited iterate"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as trace_file:
        writer = csv.writer(trace_file, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for step, breakdown in enumerate(trace):
            writer.writerow([step, *(repr(value) for value in breakdown.as_row())])


def write_success_report(path: Path, summaries: Sequence["SuccessSummary"]) -> None:
    """Per object and prompt success rates as CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as report_file:
        writer = csv.writer(report_file, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for summary in summaries:
            writer.writerow(
                [
                    summary.object_id,
                    summary.prompt,
                    summary.grasps,
                    f"{summary.lift_rate:.6f}",
                    f"{summary.shake_rate:.6f}",
                    f"{summary.mean_label:.6f}",
                ]
            )
    logger.info("wrote success report for %d groups to %s", len(summaries), path)


def write_loss_trace(path: Path, losses: Sequence[float]) -> None:
    """Training loss per epoch as CSV, epoch 0 being the untrained model"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as loss_file:
        writer = csv.writer(loss_file, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(losses):
            writer.writerow([epoch, repr(float(loss))])
