"""Semantically conditioned grasp synthesis, evaluation and distillation"""

import uuid

# Constants
GRASP_NAMESPACE_UUID = uuid.UUID(
    bytes=bytes.fromhex("9c41d2e07f1a4b8e8d3c52b6a1f04e77")
)
PROCESSES = 8
FORMAT_VERSION = 1
