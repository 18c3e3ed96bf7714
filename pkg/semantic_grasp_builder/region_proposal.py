"""Useful region proposal: cameras around an object, face-index rendering,
mask deprojection, two-means mask filtering and face voting.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from PIL import Image

from .errors import EmptyRegionError, InputValidationError
from .geometry import FloatArray, IntArray, TriangleMesh, raycast_batch

logger = logging.getLogger(__name__)

BACKGROUND = -1
MASK_THRESHOLD = 128
REGION_HEADER = "# semantic-grasp-builder region v1"
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
WORLD_UP = np.array([0.0, 0.0, 1.0])
FALLBACK_UP = np.array([0.0, 1.0, 0.0])

Surface = Literal["sphere", "dome"]


def _normalised(vector: ArrayLike) -> FloatArray:
    arr = np.asarray(vector, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise InputValidationError("zero-length vector")
    result: FloatArray = arr / norm
    return result


@dataclass(kw_only=True, frozen=True, eq=False)
class Viewpoint:  # pylint: disable=too-many-instance-attributes
    """Pinhole camera with square pixels and no distortion"""

    camera_position: FloatArray
    look_at: FloatArray
    up: FloatArray
    focal_px: float
    image_width: int = 128
    image_height: int = 128

    def __post_init__(self) -> None:
        position = np.asarray(self.camera_position, dtype=np.float64).reshape(3)
        target = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        if np.allclose(position, target, rtol=0.0, atol=1e-12):
            raise InputValidationError("camera position equals look-at point")
        up = _normalised(self.up)
        if np.linalg.norm(np.cross(_normalised(target - position), up)) < 1e-9:
            raise InputValidationError("up vector is parallel to the view axis")
        if self.focal_px <= 0 or self.image_width < 1 or self.image_height < 1:
            raise InputValidationError("focal length and image size must be positive")
        object.__setattr__(self, "camera_position", position)
        object.__setattr__(self, "look_at", target)
        object.__setattr__(self, "up", up)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    def frame(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Camera forward, right and up axes in world coordinates"""
        forward = _normalised(self.look_at - self.camera_position)
        right = _normalised(np.cross(forward, self.up))
        up = np.cross(right, forward)
        return forward, right, up

    def pixel_directions(self, pixels: Optional[IntArray] = None) -> FloatArray:
        """Unit ray directions through pixel centres, row-major pixel order"""
        if pixels is None:
            pixels = np.arange(self.image_width * self.image_height)
        rows, cols = np.divmod(np.asarray(pixels, dtype=np.int64), self.image_width)
        x = (cols + 0.5 - 0.5 * self.image_width) / self.focal_px
        y = -(rows + 0.5 - 0.5 * self.image_height) / self.focal_px
        forward, right, up = self.frame()
        directions = forward[None] + x[:, None] * right[None] + y[:, None] * up[None]
        unit: FloatArray = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        return unit


def framing_focal(
    distance: float, object_radius: float, image_height: int, framing: float = 0.8
) -> float:
    """Focal length making a sphere of `object_radius` fill `framing` of the height"""
    if object_radius >= distance:
        raise InputValidationError("camera lies inside the object bounding sphere")
    half_angle = math.asin(object_radius / distance)
    return 0.5 * framing * image_height / math.tan(half_angle)


def _lattice(count: int, offset: float) -> FloatArray:
    index = np.arange(count)
    z = 1.0 - (2.0 * index + 1.0) / count
    ring = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = index * GOLDEN_ANGLE + offset
    lattice: FloatArray = np.stack((ring * np.cos(phi), ring * np.sin(phi), z), axis=1)
    return lattice


def sample_viewpoints(  # pylint: disable=too-many-arguments
    n: int,
    surface: Surface,
    radius: float,
    center: ArrayLike,
    seed: int,
    *,
    object_radius: Optional[float] = None,
    image_width: int = 128,
    image_height: int = 128,
    framing: float = 0.8,
) -> list[Viewpoint]:
    """Cameras on a Fibonacci lattice over a sphere or its upper half, all
    looking at `center`. The lattice is rotated about z by a seeded angle.

    Args:
        object_radius: radius framed to `framing` of the image height;
            defaults to a third of the camera radius

    Raises:
        InputValidationError: if n < 1 or radius <= 0
    """
    if n < 1:
        raise InputValidationError("at least one viewpoint is required")
    if radius <= 0:
        raise InputValidationError("camera radius must be positive")
    centre = np.asarray(center, dtype=np.float64).reshape(3)
    offset = float(np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi))
    if surface == "sphere":
        directions = _lattice(n, offset)
    elif surface == "dome":
        count = 2 * n
        directions = _lattice(count, offset)
        while np.sum(directions[:, 2] >= 0.0) < n:
            count += 1
            directions = _lattice(count, offset)
        directions = directions[directions[:, 2] >= 0.0][:n]
    else:
        raise InputValidationError(f"unknown camera surface {surface!r}")
    focal = framing_focal(
        radius, object_radius if object_radius is not None else radius / 3.0, image_height, framing
    )
    views = []
    for direction in directions:
        up = WORLD_UP if np.linalg.norm(np.cross(direction, WORLD_UP)) > 1e-6 else FALLBACK_UP
        views.append(
            Viewpoint(
                camera_position=centre + radius * direction,
                look_at=centre,
                up=up,
                focal_px=focal,
                image_width=image_width,
                image_height=image_height,
            )
        )
    logger.debug("sampled %d %s viewpoints at radius %.3f", len(views), surface, radius)
    return views


def render_visible_faces(mesh: Optional[TriangleMesh], view: Viewpoint) -> IntArray:
    """Per-pixel index of the nearest face hit, BACKGROUND where rays miss"""
    if mesh is None:
        return np.full(view.shape, BACKGROUND, dtype=np.int64)
    directions = view.pixel_directions()
    faces, _, _ = raycast_batch(mesh, view.camera_position[None], directions)
    return faces.reshape(view.shape)


@dataclass(kw_only=True, frozen=True, eq=False)
class MaskObservation:
    """A binary part mask seen from one viewpoint"""

    view_index: int
    label: str
    mask: NDArray[np.bool_]

    def __post_init__(self) -> None:
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise InputValidationError("masks must be two dimensional")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.mask))


def synthetic_oracle_masks(
    mesh: TriangleMesh,
    region_faces: Iterable[int],
    views: Sequence[Viewpoint],
    noise: float,
    seed: int,
    label: str = "region",
) -> list[MaskObservation]:
    """Masks of the visible region faces, standing in for a segmentation model.

    Which views are corrupted is decided by one up-front draw of
    `len(views)` uniforms; a corrupted view emits a small random disc instead.
    """
    region = np.fromiter(region_faces, dtype=np.int64)
    if region.size and (region.min() < 0 or region.max() >= len(mesh)):
        raise InputValidationError("region face index outside the mesh")
    rng = np.random.default_rng(seed)
    corrupted = rng.random(len(views)) < noise
    observations = []
    for index, view in enumerate(views):
        if corrupted[index]:
            rows, cols = np.indices(view.shape)
            centre_row = rng.integers(view.image_height)
            centre_col = rng.integers(view.image_width)
            blob_radius = rng.uniform(1.5, 4.0)
            mask = (rows - centre_row) ** 2 + (cols - centre_col) ** 2 <= blob_radius**2
            logger.debug("view %d emits a corrupted mask", index)
        else:
            mask = np.isin(render_visible_faces(mesh, view), region)
        observations.append(MaskObservation(view_index=index, label=label, mask=mask))
    return observations


def deproject_mask(mesh: TriangleMesh, view: Viewpoint, mask: MaskObservation) -> FloatArray:
    """Surface points hit by the rays of every set pixel

    Raises:
        InputValidationError: if the mask shape differs from the view's image
    """
    if mask.mask.shape != view.shape:
        raise InputValidationError(
            f"mask is {mask.mask.shape} but view {mask.view_index} is {view.shape}"
        )
    pixels = np.flatnonzero(mask.mask.reshape(-1))
    if not pixels.size:
        return np.zeros((0, 3))
    faces, _, points = raycast_batch(
        mesh, view.camera_position[None], view.pixel_directions(pixels)
    )
    hits: FloatArray = points[faces >= 0]
    return hits


def filter_two_means(observations: Sequence[MaskObservation]) -> list[MaskObservation]:
    """Keep the observations in the larger-centroid cluster of a 1-D 2-means
    on pixel counts, found exhaustively over sorted split points.
    """
    if len(observations) <= 1:
        return list(observations)
    counts = np.array([obs.pixel_count for obs in observations], dtype=np.float64)
    ordered = np.sort(counts)
    if ordered[0] == ordered[-1]:
        return list(observations)
    prefix = np.concatenate(([0.0], np.cumsum(ordered)))
    prefix_sq = np.concatenate(([0.0], np.cumsum(ordered**2)))
    total, total_sq, size = prefix[-1], prefix_sq[-1], len(ordered)
    best_split, best_cost = 0, math.inf
    for split in range(1, size):
        if ordered[split - 1] == ordered[split]:
            continue
        left, left_sq = prefix[split], prefix_sq[split]
        right, right_sq = total - left, total_sq - left_sq
        cost = (left_sq - left**2 / split) + (right_sq - right**2 / (size - split))
        if cost < best_cost:
            best_split, best_cost = split, cost
    threshold = ordered[best_split]
    kept = [obs for obs, count in zip(observations, counts) if count >= threshold]
    logger.info("two-means kept %d of %d masks", len(kept), len(observations))
    return kept


@dataclass(kw_only=True, frozen=True, eq=False)
class FaceTally:
    """Per-face vote counts; tallies merge by addition in any order"""

    counts: IntArray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64).reshape(-1)
        if np.any(counts < 0):
            raise InputValidationError("face tallies cannot be negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, face_count: int) -> "FaceTally":
        return cls(counts=np.zeros(face_count, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.counts)

    def __add__(self, other: "FaceTally") -> "FaceTally":
        if len(other) != len(self):
            raise InputValidationError("cannot merge tallies of different meshes")
        return FaceTally(counts=self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def tally_faces(mesh: TriangleMesh, points: ArrayLike) -> FaceTally:
    """One vote per point for its closest face"""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(pts):
        return FaceTally.zeros(len(mesh))
    faces, _, _ = mesh.closest_faces(pts)
    return FaceTally(counts=np.bincount(faces, minlength=len(mesh)))


@dataclass(kw_only=True, frozen=True, eq=False)
class UsefulRegion:
    """Faces voted task relevant for one label"""

    label: str
    face_indices: frozenset[int]
    tally: FaceTally = field(repr=False)

    def __post_init__(self) -> None:
        faces = frozenset(int(face) for face in self.face_indices)
        if faces and (min(faces) < 0 or max(faces) >= len(self.tally)):
            raise InputValidationError("region face outside the tallied mesh")
        if any(self.tally.counts[face] < 1 for face in faces):
            raise InputValidationError("every region face needs at least one vote")
        object.__setattr__(self, "face_indices", faces)

    @property
    def sorted_faces(self) -> IntArray:
        return np.array(sorted(self.face_indices), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.face_indices)


def select_useful_region(tally: FaceTally, fraction: float, label: str = "") -> UsefulRegion:
    """Top ceil(fraction * voted) faces by votes, ties to the lowest index

    Raises:
        InputValidationError: if fraction is not in (0, 1]
        EmptyRegionError: if no face has a vote
    """
    if not 0.0 < fraction <= 1.0:
        raise InputValidationError(f"fraction must be in (0, 1], got {fraction}")
    voted = np.flatnonzero(tally.counts > 0)
    if not voted.size:
        raise EmptyRegionError(f"no face received a vote for {label!r}")
    order = voted[np.lexsort((voted, -tally.counts[voted]))]
    keep = math.ceil(round(fraction * len(voted), 9))
    return UsefulRegion(label=label, face_indices=frozenset(order[:keep].tolist()), tally=tally)


def propose_region(
    mesh: TriangleMesh,
    views: Sequence[Viewpoint],
    observations: Sequence[MaskObservation],
    fraction: float,
    label: str = "",
) -> UsefulRegion:
    """Filter masks, deproject the survivors, vote and select faces

    Raises:
        EmptyRegionError: if no mask survives or no face gets a vote
    """
    kept = filter_two_means([obs for obs in observations if obs.pixel_count > 0])
    if not kept:
        raise EmptyRegionError(f"no surviving masks for {label!r}")
    tally = FaceTally.zeros(len(mesh))
    for obs in kept:
        points = deproject_mask(mesh, views[obs.view_index], obs)
        tally = tally + tally_faces(mesh, points)
    logger.info("label %r: %d votes from %d masks", label, tally.total, len(kept))
    return select_useful_region(tally, fraction, label)


def _parse_vector(text: str) -> FloatArray:
    values = np.array([float(value) for value in text.split()], dtype=np.float64)
    if values.shape != (3,):
        raise InputValidationError(f"expected three numbers, got {text!r}")
    return values


def read_mask_observation(pgm_path: Path) -> tuple[Viewpoint, MaskObservation]:
    """Load a binary PGM mask and its `key: value` sidecar with the same stem

    Raises:
        FileNotFoundError: if either file is missing
        InputValidationError: if the sidecar is incomplete or disagrees with the image
    """
    pgm_path = Path(pgm_path)
    sidecar = pgm_path.with_suffix(".txt")
    for required in (pgm_path, sidecar):
        if not required.is_file():
            raise FileNotFoundError(f"mask file not found: {required}")
    meta: dict[str, str] = {}
    for line in sidecar.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise InputValidationError(f"{sidecar}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    try:
        view = Viewpoint(
            camera_position=_parse_vector(meta["camera_position"]),
            look_at=_parse_vector(meta["look_at"]),
            up=_parse_vector(meta["up"]),
            focal_px=float(meta["focal_px"]),
            image_width=int(meta["image_width"]),
            image_height=int(meta["image_height"]),
        )
        view_index, label = int(meta["view_index"]), meta["label"]
    except (KeyError, ValueError) as err:
        raise InputValidationError(f"{sidecar}: {err}") from err
    with Image.open(pgm_path) as image:
        pixels = np.asarray(image.convert("L"))
    if pixels.shape != view.shape:
        raise InputValidationError(f"{pgm_path} is {pixels.shape}, sidecar says {view.shape}")
    return view, MaskObservation(
        view_index=view_index, label=label, mask=pixels >= MASK_THRESHOLD
    )


def write_mask_observation(pgm_path: Path, view: Viewpoint, observation: MaskObservation) -> None:
    """Write a mask as P5 PGM plus its sidecar"""
    pgm_path = Path(pgm_path)
    pgm_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(observation.mask.astype(np.uint8) * 255).save(pgm_path)
    lines = [
        f"view_index: {observation.view_index}",
        f"label: {observation.label}",
        f"image_width: {view.image_width}",
        f"image_height: {view.image_height}",
        "camera_position: " + " ".join(repr(float(v)) for v in view.camera_position),
        "look_at: " + " ".join(repr(float(v)) for v in view.look_at),
        "up: " + " ".join(repr(float(v)) for v in view.up),
        f"focal_px: {view.focal_px!r}",
    ]
    pgm_path.with_suffix(".txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_region(path: Path, region: UsefulRegion) -> None:
    """Header, label, then one face index per line in ascending order"""
    lines = [REGION_HEADER, region.label]
    lines.extend(str(face) for face in region.sorted_faces.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_region(path: Path, face_count: int) -> UsefulRegion:
    """Read a region file; each listed face gets a single vote

    Raises:
        InputValidationError: on a missing header or bad face index
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != REGION_HEADER:
        raise InputValidationError(f"{path} is not a region file")
    if len(lines) < 2:
        raise InputValidationError(f"{path} has no label line")
    try:
        faces = [int(line) for line in lines[2:] if line.strip()]
    except ValueError as err:
        raise InputValidationError(f"{path}: {err}") from err
    if not faces:
        raise EmptyRegionError(f"{path} lists no faces")
    if min(faces) < 0 or max(faces) >= face_count:
        raise InputValidationError(f"{path} lists faces outside the mesh")
    counts = np.zeros(face_count, dtype=np.int64)
    counts[faces] = 1
    return UsefulRegion(
        label=lines[1], face_indices=frozenset(faces), tally=FaceTally(counts=counts)
    )
