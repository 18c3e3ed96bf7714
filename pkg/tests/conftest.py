# pylint: disable
#  type: ignore
# pylint: disable
# shared meshes, hands, configs and scenes for the grasp builder tests
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import yaml
from pytest import fixture

from semantic_grasp_builder.geometry import TriangleMesh, icosphere, write_mesh
from semantic_grasp_builder.grasp_dataclasses.config import (
    EvalConfig,
    GraspBuilderConfig,
    OptimizerConfig,
)
from semantic_grasp_builder.grasp_dataclasses.grasp_dataclasses import (
    EnergyBreakdown,
    GraspParameters,
    GraspRecord,
    Provenance,
)
from semantic_grasp_builder.grasp_optimizer import SceneContext
from semantic_grasp_builder.hand_model import HAND_FORMAT, HandModel, load_hand
from semantic_grasp_builder.region_proposal import FaceTally, UsefulRegion

CUBE_VERTICES = [
    [-0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5],
    [0.5, 0.5, -0.5],
    [-0.5, 0.5, -0.5],
    [-0.5, -0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, 0.5, 0.5],
    [-0.5, 0.5, 0.5],
]
# bottom, top, front (y-), back (y+), left (x-), right (x+)
CUBE_FACES = [
    [0, 2, 1],
    [0, 3, 2],
    [4, 5, 6],
    [4, 6, 7],
    [0, 1, 5],
    [0, 5, 4],
    [3, 7, 6],
    [3, 6, 2],
    [0, 4, 7],
    [0, 7, 3],
    [1, 2, 6],
    [1, 6, 5],
]
TOP_FACES = frozenset({2, 3})
RIGHT_FACES = frozenset({10, 11})


def make_box(half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    vertices = np.asarray(CUBE_VERTICES) * 2.0 * np.asarray(half_extents) + np.asarray(center)
    return TriangleMesh(vertices, CUBE_FACES)


def make_cylinder(
    radius: float = 0.04, height: float = 0.16, sections: int = 50, stacks: int = 19
) -> TriangleMesh:
    """Closed z-aligned cylinder centred on the origin, 2 * sections * (stacks + 1) faces"""
    angles = 2.0 * math.pi * np.arange(sections) / sections
    vertices = []
    for k in range(stacks + 1):
        z = -0.5 * height + height * k / stacks
        vertices.extend([radius * math.cos(a), radius * math.sin(a), z] for a in angles)
    bottom_centre = len(vertices)
    vertices.append([0.0, 0.0, -0.5 * height])
    vertices.append([0.0, 0.0, 0.5 * height])
    top_centre = bottom_centre + 1

    def ring(k: int, i: int) -> int:
        return k * sections + i % sections

    faces = []
    for k in range(stacks):
        for i in range(sections):
            a, b = ring(k, i), ring(k, i + 1)
            c, d = ring(k + 1, i + 1), ring(k + 1, i)
            faces.append([a, b, c])
            faces.append([a, c, d])
    for i in range(sections):
        faces.append([bottom_centre, ring(0, i + 1), ring(0, i)])
        faces.append([top_centre, ring(stacks, i), ring(stacks, i + 1)])
    return TriangleMesh(vertices, faces)


def region_of(mesh: TriangleMesh, faces, label: str = "region") -> UsefulRegion:
    counts = np.zeros(len(mesh), dtype=np.int64)
    counts[sorted(faces)] = 1
    return UsefulRegion(label=label, face_indices=frozenset(faces), tally=FaceTally(counts=counts))


def make_record(
    candidate_index: int = 0,
    object_id: int = 0,
    prompt: str = "handle",
    scene_id: str = "test-scene",
    digest: str = "0123456789abcdef",
    joints: int = 16,
    **changes: Any,
) -> GraspRecord:
    record = GraspRecord(
        scene_id=scene_id,
        object_id=object_id,
        prompt=prompt,
        grasp=GraspParameters(
            translation=[0.0, 0.0, 0.1 * candidate_index],
            quaternion=[1.0, 0.0, 0.0, 0.0],
            theta=[0.0] * joints,
        ),
        energy=EnergyBreakdown.from_terms(
            e_fc=0.5,
            e_dis=0.01,
            e_joints=0.0,
            e_pen=0.0,
            e_spen=0.0,
            w_dis=100.0,
            w_joints=1.0,
            w_pen=100.0,
            w_spen=10.0,
        ),
        provenance=Provenance(master_seed=0, candidate_index=candidate_index, config_hash=digest),
    )
    return record.evolve(**changes) if changes else record


@fixture
def test_cube() -> TriangleMesh:
    return TriangleMesh(CUBE_VERTICES, CUBE_FACES)


@fixture
def test_sphere() -> TriangleMesh:
    return icosphere(2)


@fixture
def test_cylinder() -> TriangleMesh:
    return make_cylinder()


@fixture
def test_small_box() -> TriangleMesh:
    return make_box((0.02, 0.02, 0.05))


@fixture
def test_bundled_hand() -> HandModel:
    return load_hand()


@fixture
def hand_factory(tmpdir) -> Callable[..., HandModel]:
    """Write a hand description to tmpdir and load it"""

    def build(
        links: List[Dict[str, Any]],
        adjacency: Optional[List[List[str]]] = None,
        name: str = "test-hand",
        contact_mode: str = "power",
    ) -> HandModel:
        spec: Dict[str, Any] = {"format": HAND_FORMAT, "name": name, "links": links}
        if adjacency:
            spec["adjacency"] = adjacency
        path = Path(tmpdir) / f"{name}.yaml"
        path.write_text(yaml.safe_dump(spec), encoding="utf-8")
        return load_hand(path, contact_mode=contact_mode)

    return build


@fixture
def test_gripper_links() -> List[Dict[str, Any]]:
    """Two hinged fingers above the origin that swing inwards as theta grows"""

    def finger(name: str, x: float, axis_y: float) -> Dict[str, Any]:
        return {
            "name": name,
            "parent": "palm",
            "joint": {
                "axis": [0.0, axis_y, 0.0],
                "origin": {"translation": [x, 0.0, 0.1]},
                "limits": [0.0, 1.5],
                "closing": 1,
            },
            "spheres": [[0.0, 0.0, -0.08, 0.01]],
            "contacts": [[0.0, 0.0, -0.08]],
            "fingertip": True,
        }

    return [
        {"name": "palm", "spheres": [[0.0, 0.0, 0.15, 0.01]]},
        finger("right", 0.05, 1.0),
        finger("left", -0.05, -1.0),
    ]


@fixture
def test_gripper(hand_factory, test_gripper_links) -> HandModel:
    return hand_factory(test_gripper_links, name="gripper")


@fixture
def test_box_scene(test_small_box) -> SceneContext:
    return SceneContext(target=test_small_box, region=region_of(test_small_box, range(12)))


@fixture
def test_eval_config() -> EvalConfig:
    return EvalConfig()


@fixture
def test_fast_optimizer() -> OptimizerConfig:
    return OptimizerConfig(steps=5)


@fixture
def test_small_config() -> GraspBuilderConfig:
    """Cheap settings for end to end pipeline runs"""
    return GraspBuilderConfig().with_overrides(
        region={"views": 6, "image_width": 24, "image_height": 24, "oracle_noise": 0.0},
        optimizer={"steps": 3},
        evaluation={"d": 1},
        bps={"n_b": 16, "cloud_points": 128},
        schedule={"T_steps": 5},
        training={"hidden_sizes": [16], "time_embedding_dim": 4, "epochs": 2, "batch_size": 4},
        pipeline={"jobs": 1, "grasps_per_prompt": 2, "label_threshold": 0.0},
    )


@fixture
def scene_writer(tmpdir) -> Callable[..., Path]:
    """Write a single-cube scene with a planted top-face region"""

    def write(
        scene_id: str = "cube-scene",
        prompts=("top",),
        oracle: Optional[Dict[str, Any]] = None,
        table: Optional[float] = None,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        folder = Path(tmpdir)
        mesh_path = folder / "cube.obj"
        write_mesh(make_box((0.03, 0.03, 0.03)), mesh_path)
        oracle_regions = (
            oracle
            if oracle is not None
            else {prompt: {"direction": [0.0, 0.0, 1.0], "offset": 0.029} for prompt in prompts}
        )
        spec: Dict[str, Any] = {
            "format": "semantic-grasp-scene v1",
            "scene_id": scene_id,
            "table": table,
            "objects": [
                {"mesh": "cube.obj", "prompts": list(prompts), "oracle_regions": oracle_regions}
            ],
        }
        if extra:
            spec.update(extra)
        path = folder / f"{scene_id}.yaml"
        path.write_text(yaml.safe_dump(spec), encoding="utf-8")
        return path

    return write
