"""
Functions and classes for grouping grasp records by object and prompt
"""
from typing import Dict, List, Optional

from .grasp_dataclasses import GraspRecord

GroupKey = tuple[int, str]


class RecordManifest:
    """Manifest of grasp records, kept in insertion order"""

    def __init__(self, records: Optional[List[GraspRecord]] = None):
        self.records: List[GraspRecord] = list(records) if records else []

    def __len__(self) -> int:
        return len(self.records)

    @property
    def group_positions(self) -> Dict[GroupKey, List[int]]:
        """Manifest positions keyed by (object id, prompt), groups in first-seen order"""
        positions: Dict[GroupKey, List[int]] = {}
        for position, record in enumerate(self.records):
            positions.setdefault(record.group_key, []).append(position)
        return positions

    @property
    def groups(self) -> Dict[GroupKey, List[GraspRecord]]:
        """Records keyed by (object id, prompt), each list in manifest order"""
        return {
            key: [self.records[position] for position in positions]
            for key, positions in self.group_positions.items()
        }
