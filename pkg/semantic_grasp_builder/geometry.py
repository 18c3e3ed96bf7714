"""Triangle mesh geometry: loading, signed distance, ray casting, convex hulls,
hull inflation and farthest point sampling.

All queries run in batches against a flat-array bounding volume hierarchy built
once when the mesh is constructed. A constructed mesh is never mutated, so it
can be shared (or pickled) across workers freely.
"""

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import DegenerateGeometryError, InputValidationError, MeshParseError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

DEGENERATE_AREA = 1e-12
RAY_EPSILON = 1e-9
UNIT_TOLERANCE = 1e-9
BARYCENTRIC_TOLERANCE = 1e-9
DETERMINANT_EPSILON = 1e-15
LEAF_SIZE = 8
MESH_HEADER = "# semantic-grasp-builder mesh v1"
IGNORED_OBJ_KEYWORDS = frozenset(("vn", "vt", "o", "g", "s", "usemtl", "mtllib"))


def _unit(vector: Sequence[float]) -> FloatArray:
    arr = np.asarray(vector, dtype=np.float64)
    return arr / np.linalg.norm(arr)


# fixed, non axis-aligned directions for inside/outside parity
PARITY_DIRECTIONS = (
    _unit((0.2672612419, 0.5345224838, 0.8017837257)),
    _unit((-0.5773502692, 0.2113248654, 0.7886751346)),
    _unit((0.7071067812, -0.4082482905, -0.5773502692)),
    _unit((-0.3015113446, -0.9045340337, 0.3015113446)),
    _unit((0.6123724357, 0.6123724357, -0.5)),
)


def _dot(a: FloatArray, b: FloatArray) -> FloatArray:
    """Row-wise dot product with a fixed summation order"""
    result: FloatArray = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]
    return result


def _squared_norm(a: FloatArray) -> FloatArray:
    return _dot(a, a)


def as_points(points: ArrayLike) -> FloatArray:
    """Coerce input to an (N, 3) float array

    Raises:
        InputValidationError: if the input cannot be read as 3D points
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputValidationError(f"expected 3D points, got array of shape {arr.shape}")
    return arr


def triangle_areas(triangles: FloatArray) -> FloatArray:
    """Areas of an (F, 3, 3) stack of triangles"""
    cross = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
    areas: FloatArray = 0.5 * np.sqrt(_squared_norm(cross))
    return areas


def closest_point_on_triangles(
    points: FloatArray, a: FloatArray, b: FloatArray, c: FloatArray
) -> FloatArray:
    """Closest point on each triangle (a, b, c) to the matching query point.

    Region tests follow the Voronoi-region classification for triangles; the
    region masks are applied from lowest to highest priority so that vertex
    regions override edge regions which override the interior.
    """
    ab = b - a
    ac = c - a
    ap = points - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = points - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = points - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        result = a + ab * v[:, None] + ac * w[:, None]

        region_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        result = np.where(region_bc[:, None], b + (c - b) * w_bc[:, None], result)

        region_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        w_ac = d2 / (d2 - d6)
        result = np.where(region_ac[:, None], a + ac * w_ac[:, None], result)

        region_c = (d6 >= 0) & (d5 <= d6)
        result = np.where(region_c[:, None], c, result)

        region_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        v_ab = d1 / (d1 - d3)
        result = np.where(region_ab[:, None], a + ab * v_ab[:, None], result)

        region_b = (d3 >= 0) & (d4 <= d3)
        result = np.where(region_b[:, None], b, result)

        region_a = (d1 <= 0) & (d2 <= 0)
        result = np.where(region_a[:, None], a, result)
    return result


@dataclass(kw_only=True, frozen=True)
class RayTriangleResult:
    """Per (ray, triangle) pair Moller-Trumbore quantities"""

    t: FloatArray
    u: FloatArray
    v: FloatArray
    valid: NDArray[np.bool_]

    @property
    def hit(self) -> NDArray[np.bool_]:
        """Intersections inside the triangle in front of the origin"""
        mask: NDArray[np.bool_] = (
            self.valid
            & (self.u >= 0.0)
            & (self.v >= 0.0)
            & (self.u + self.v <= 1.0)
            & (self.t > RAY_EPSILON)
        )
        return mask

    @property
    def clean_hit(self) -> NDArray[np.bool_]:
        """Hits that are clear of every triangle edge"""
        tol = BARYCENTRIC_TOLERANCE
        mask: NDArray[np.bool_] = (
            self.valid
            & (self.u > tol)
            & (self.v > tol)
            & (self.u + self.v < 1.0 - tol)
            & (self.t > RAY_EPSILON)
        )
        return mask

    @property
    def grazing(self) -> NDArray[np.bool_]:
        """Near-hits within tolerance of an edge, vertex or the origin"""
        tol = BARYCENTRIC_TOLERANCE
        near = (
            self.valid
            & (self.u >= -tol)
            & (self.v >= -tol)
            & (self.u + self.v <= 1.0 + tol)
            & (self.t > -tol)
        )
        mask: NDArray[np.bool_] = near & ~self.clean_hit
        return mask


def ray_triangle_intersect(
    origins: FloatArray,
    directions: FloatArray,
    a: FloatArray,
    b: FloatArray,
    c: FloatArray,
) -> RayTriangleResult:
    """Vectorised Moller-Trumbore over matching rows of rays and triangles"""
    e1 = b - a
    e2 = c - a
    p = np.cross(directions, e2)
    det = _dot(e1, p)
    valid = np.abs(det) > DETERMINANT_EPSILON
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = 1.0 / det
        s = origins - a
        u = _dot(s, p) * inv_det
        q = np.cross(s, e1)
        v = _dot(directions, q) * inv_det
        t = _dot(e2, q) * inv_det
    return RayTriangleResult(t=t, u=u, v=v, valid=valid)


class BoundingVolumeHierarchy:
    """Axis-aligned box tree over mesh faces stored as flat arrays.

    Nodes split at the median face centroid along the longest centroid extent.
    Queries advance a frontier of (query, node) pairs one tree level per step,
    so a whole batch of rays or points is processed with array operations.
    """

    def __init__(self, triangles: FloatArray, leaf_size: int = LEAF_SIZE) -> None:
        face_count = len(triangles)
        centroids = triangles.mean(axis=1)
        face_lo = triangles.min(axis=1)
        face_hi = triangles.max(axis=1)
        pad = 1e-9 * max(1.0, float(np.abs(triangles).max(initial=0.0)))
        self.order: IntArray = np.arange(face_count, dtype=np.int64)
        box_min: list[FloatArray] = []
        box_max: list[FloatArray] = []
        starts: list[int] = []
        counts: list[int] = []
        left: list[int] = []
        right: list[int] = []

        def new_node(start: int, end: int) -> int:
            members = self.order[start:end]
            box_min.append(face_lo[members].min(axis=0) - pad)
            box_max.append(face_hi[members].max(axis=0) + pad)
            starts.append(start)
            counts.append(end - start)
            left.append(-1)
            right.append(-1)
            return len(starts) - 1

        stack = [new_node(0, face_count)]
        while stack:
            node = stack.pop()
            start, end = starts[node], starts[node] + counts[node]
            if end - start <= leaf_size:
                continue
            members = self.order[start:end]
            member_centroids = centroids[members]
            extent = member_centroids.max(axis=0) - member_centroids.min(axis=0)
            axis = int(np.argmax(extent))
            if extent[axis] <= 0.0:
                continue
            ranks = np.argsort(member_centroids[:, axis], kind="stable")
            self.order[start:end] = members[ranks]
            middle = start + (end - start) // 2
            left[node] = new_node(start, middle)
            right[node] = new_node(middle, end)
            stack.extend((left[node], right[node]))

        self.box_min: FloatArray = np.asarray(box_min)
        self.box_max: FloatArray = np.asarray(box_max)
        self.start: IntArray = np.asarray(starts, dtype=np.int64)
        self.count: IntArray = np.asarray(counts, dtype=np.int64)
        self.left: IntArray = np.asarray(left, dtype=np.int64)
        self.right: IntArray = np.asarray(right, dtype=np.int64)

    @property
    def node_count(self) -> int:
        return len(self.start)

    def _expand_leaves(
        self, queries: IntArray, nodes: IntArray
    ) -> tuple[IntArray, IntArray]:
        counts = self.count[nodes]
        total = int(counts.sum())
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        faces = self.order[np.repeat(self.start[nodes], counts) + offsets]
        return np.repeat(queries, counts), faces

    def _descend(
        self, queries: IntArray, nodes: IntArray
    ) -> tuple[IntArray, IntArray, IntArray, IntArray]:
        """Split a frontier into leaf pairs and the next level of inner pairs"""
        leaf = self.left[nodes] < 0
        inner = ~leaf
        next_queries = np.concatenate((queries[inner], queries[inner]))
        next_nodes = np.concatenate((self.left[nodes[inner]], self.right[nodes[inner]]))
        return queries[leaf], nodes[leaf], next_queries, next_nodes

    def ray_pairs(
        self, origins: FloatArray, directions: FloatArray, limit: FloatArray
    ) -> Iterator[tuple[IntArray, IntArray]]:
        """Yield (ray, face) candidates from leaves each ray enters before `limit`.

        `limit` is read on every level, so a caller may shrink it in place
        between yields to prune the rest of the traversal.
        """
        with np.errstate(divide="ignore"):
            inverse = 1.0 / directions
        rays = np.arange(len(origins), dtype=np.int64)
        nodes = np.zeros(len(origins), dtype=np.int64)
        while rays.size:
            with np.errstate(invalid="ignore"):
                t1 = (self.box_min[nodes] - origins[rays]) * inverse[rays]
                t2 = (self.box_max[nodes] - origins[rays]) * inverse[rays]
                t_near = np.fmax.reduce(np.fmin(t1, t2), axis=1)
                t_far = np.fmin.reduce(np.fmax(t1, t2), axis=1)
            bound = limit[rays]
            keep = (t_far >= np.maximum(t_near, 0.0)) & (
                t_near <= bound + 1e-12 * np.abs(bound) + 1e-12
            )
            leaf_rays, leaf_nodes, rays, nodes = self._descend(rays[keep], nodes[keep])
            if leaf_rays.size:
                yield self._expand_leaves(leaf_rays, leaf_nodes)

    def point_pairs(
        self, points: FloatArray, bound: FloatArray
    ) -> Iterator[tuple[IntArray, IntArray]]:
        """Yield (point, face) candidates from leaves whose box lies within the
        squared distance `bound`; `bound` may be shrunk in place between yields.
        """
        queries = np.arange(len(points), dtype=np.int64)
        nodes = np.zeros(len(points), dtype=np.int64)
        while queries.size:
            p = points[queries]
            gap = np.maximum(np.maximum(self.box_min[nodes] - p, p - self.box_max[nodes]), 0.0)
            box_d2 = _squared_norm(gap)
            limit = bound[queries]
            keep = box_d2 <= limit * (1.0 + 1e-9) + 1e-18
            leaf_queries, leaf_nodes, queries, nodes = self._descend(
                queries[keep], nodes[keep]
            )
            if leaf_queries.size:
                yield self._expand_leaves(leaf_queries, leaf_nodes)


def _lexicographic_update(
    queries: IntArray,
    faces: IntArray,
    keys: FloatArray,
    best_key: FloatArray,
    best_face: IntArray,
) -> IntArray:
    """Fold candidates into running per-query minima of (key, face index).

    Returns the candidate rows that became the new best, one per improved query.
    """
    if not queries.size:
        return queries
    order = np.lexsort((faces, keys, queries))
    first = order[np.unique(queries[order], return_index=True)[1]]
    q, f, k = queries[first], faces[first], keys[first]
    better = (k < best_key[q]) | ((k == best_key[q]) & (f < best_face[q]))
    improved = first[better]
    best_key[q[better]] = k[better]
    best_face[q[better]] = f[better]
    return improved


class TriangleMesh:  # pylint: disable=too-many-instance-attributes
    """An immutable triangle mesh with derived normals and a query hierarchy

    Attr:
        vertices (FloatArray): (V, 3) positions in meters
        faces (IntArray): (F, 3) vertex indices, counter-clockwise seen from outside
        face_normals (FloatArray): (F, 3) unit normals
        face_areas (FloatArray): (F,) areas in square meters
        vertex_normals (FloatArray): (V, 3) angle-weighted unit normals
        dropped_faces (int): degenerate faces removed while loading
    """

    def __init__(
        self, vertices: ArrayLike, faces: ArrayLike, dropped_faces: int = 0
    ) -> None:
        """Build a mesh, validating indices and rejecting degenerate faces.

        Raises:
            InputValidationError: on out-of-range indices or malformed arrays
            DegenerateGeometryError: on zero faces or faces with no area
        """
        verts = as_points(vertices).copy()
        tris = np.asarray(faces, dtype=np.int64).reshape(-1, 3).copy()
        if len(tris) == 0:
            raise DegenerateGeometryError("mesh has no faces")
        if tris.min() < 0 or tris.max() >= len(verts):
            raise InputValidationError("face index outside the vertex range")
        triangles = verts[tris]
        cross = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
        doubled = np.sqrt(_squared_norm(cross))
        if np.any(doubled * 0.5 <= DEGENERATE_AREA):
            raise DegenerateGeometryError("mesh contains degenerate faces")
        self.vertices: FloatArray = verts
        self.faces: IntArray = tris
        self.face_areas: FloatArray = doubled * 0.5
        self.face_normals: FloatArray = cross / doubled[:, None]
        self.dropped_faces = dropped_faces
        self.vertex_normals: FloatArray = self._angle_weighted_normals(triangles)
        self._triangles: FloatArray = triangles
        for arr in (
            self.vertices,
            self.faces,
            self.face_areas,
            self.face_normals,
            self.vertex_normals,
            self._triangles,
        ):
            arr.setflags(write=False)
        self.is_watertight = self._closed_edges()
        self.bvh = BoundingVolumeHierarchy(triangles)
        self._centroid_tree = cKDTree(triangles.mean(axis=1))

    def __len__(self) -> int:
        return len(self.faces)

    def __repr__(self) -> str:
        return f"TriangleMesh(vertices={len(self.vertices)}, faces={len(self.faces)})"

    @property
    def triangles(self) -> FloatArray:
        """(F, 3, 3) face corner positions"""
        return self._triangles

    @property
    def face_centroids(self) -> FloatArray:
        centroids: FloatArray = self.triangles.mean(axis=1)
        return centroids

    def _angle_weighted_normals(self, triangles: FloatArray) -> FloatArray:
        normals = np.zeros_like(self.vertices)
        for corner in range(3):
            here = triangles[:, corner]
            to_next = triangles[:, (corner + 1) % 3] - here
            to_prev = triangles[:, (corner + 2) % 3] - here
            cosine = _dot(to_next, to_prev) / np.sqrt(
                _squared_norm(to_next) * _squared_norm(to_prev)
            )
            angle = np.arccos(np.clip(cosine, -1.0, 1.0))
            np.add.at(normals, self.faces[:, corner], self.face_normals * angle[:, None])
        lengths = np.sqrt(_squared_norm(normals))
        used = lengths > 0
        normals[used] /= lengths[used, None]
        return normals

    def _closed_edges(self) -> bool:
        """Every undirected edge is shared by exactly two faces"""
        edges = np.concatenate(
            (self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]])
        )
        _, counts = np.unique(np.sort(edges, axis=1), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def centroid(self) -> FloatArray:
        """Area-weighted surface centroid"""
        weights = self.face_areas / self.face_areas.sum()
        centre: FloatArray = weights @ self.face_centroids
        return centre

    @property
    def bounding_sphere(self) -> tuple[FloatArray, float]:
        """Sphere around the bounding box centre enclosing every used vertex"""
        used = self.vertices[np.unique(self.faces)]
        centre = 0.5 * (used.min(axis=0) + used.max(axis=0))
        radius = float(np.sqrt(_squared_norm(used - centre).max()))
        return centre, radius

    def transformed(
        self,
        rotation: ArrayLike | None = None,
        translation: ArrayLike | None = None,
        scale: float = 1.0,
    ) -> "TriangleMesh":
        """Return the mesh scaled, then rotated, then translated"""
        matrix = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        offset = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        if scale <= 0:
            raise InputValidationError(f"scale must be positive, got {scale}")
        moved = (self.vertices * scale) @ matrix.T + offset
        return TriangleMesh(moved, self.faces)

    def sample_surface(self, count: int, seed: int) -> tuple[FloatArray, IntArray]:
        """Area-weighted uniform surface samples and the faces they lie on"""
        rng = np.random.default_rng(seed)
        faces = rng.choice(len(self.faces), size=count, p=self.face_areas / self.area)
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        tris = self.triangles[faces]
        points = (
            tris[:, 0] * (1.0 - r1)[:, None]
            + tris[:, 1] * (r1 * (1.0 - r2))[:, None]
            + tris[:, 2] * (r1 * r2)[:, None]
        )
        return points, faces.astype(np.int64)

    def closest_faces(self, points: ArrayLike) -> tuple[IntArray, FloatArray, FloatArray]:
        """Closest face, closest point and squared distance for each point.

        Exact distance ties go to the lowest face index.
        """
        pts = as_points(points)
        tris = self.triangles
        _, seed_faces = self._centroid_tree.query(pts)
        best_face = np.asarray(seed_faces, dtype=np.int64).reshape(-1)
        best_point = closest_point_on_triangles(
            pts, tris[best_face, 0], tris[best_face, 1], tris[best_face, 2]
        )
        best_d2 = _squared_norm(best_point - pts)
        for queries, faces in self.bvh.point_pairs(pts, best_d2):
            candidates = closest_point_on_triangles(
                pts[queries], tris[faces, 0], tris[faces, 1], tris[faces, 2]
            )
            d2 = _squared_norm(candidates - pts[queries])
            improved = _lexicographic_update(queries, faces, d2, best_d2, best_face)
            best_point[queries[improved]] = candidates[improved]
        return best_face, best_point, best_d2

    def intersect_rays(
        self, origins: ArrayLike, directions: ArrayLike
    ) -> tuple[IntArray, FloatArray]:
        """Nearest hit per ray as (face index or -1, t or inf)"""
        orig = as_points(origins)
        dirs = as_points(directions)
        tris = self.triangles
        best_t = np.full(len(orig), np.inf)
        best_face = np.full(len(orig), -1, dtype=np.int64)
        for rays, faces in self.bvh.ray_pairs(orig, dirs, best_t):
            result = ray_triangle_intersect(
                orig[rays], dirs[rays], tris[faces, 0], tris[faces, 1], tris[faces, 2]
            )
            hit = result.hit
            _lexicographic_update(rays[hit], faces[hit], result.t[hit], best_t, best_face)
        return best_face, best_t

    def count_crossings(
        self, origins: FloatArray, direction: FloatArray
    ) -> tuple[IntArray, NDArray[np.bool_]]:
        """Surface crossings along one direction, flagging rays that graze an edge"""
        dirs = np.tile(direction, (len(origins), 1))
        tris = self.triangles
        crossings = np.zeros(len(origins), dtype=np.int64)
        grazing = np.zeros(len(origins), dtype=bool)
        unlimited = np.full(len(origins), np.inf)
        for rays, faces in self.bvh.ray_pairs(origins, dirs, unlimited):
            result = ray_triangle_intersect(
                origins[rays], dirs[rays], tris[faces, 0], tris[faces, 1], tris[faces, 2]
            )
            crossings += np.bincount(rays[result.clean_hit], minlength=len(origins))
            grazing[rays[result.grazing]] = True
        return crossings, grazing

    def contains(self, points: ArrayLike) -> NDArray[np.bool_]:
        """Inside test by crossing parity, re-cast along the next fixed
        direction whenever a ray grazes an edge or vertex.
        """
        pts = as_points(points)
        inside = np.zeros(len(pts), dtype=bool)
        pending = np.arange(len(pts))
        for direction in PARITY_DIRECTIONS:
            crossings, grazing = self.count_crossings(pts[pending], direction)
            inside[pending] = crossings % 2 == 1
            pending = pending[grazing]
            if not pending.size:
                break
        return inside


@dataclass(kw_only=True, frozen=True)
class SurfaceQueryResult:
    """Closest surface point to a query and the distance to it

    Attr:
        signed_distance (float): meters, negative inside a closed surface
        closest_point (FloatArray): point on face `face_index`
        normal (FloatArray): outward unit normal of that face
        face_index (int): closest face, lowest index on ties
        signed (bool): False when the mesh is open and the sign is forced positive
    """

    signed_distance: float
    closest_point: FloatArray
    normal: FloatArray
    face_index: int
    signed: bool = True


@dataclass(kw_only=True, frozen=True)
class SurfaceQueryBatch:
    """Array form of SurfaceQueryResult for many queries"""

    signed_distance: FloatArray
    closest_point: FloatArray
    normal: FloatArray
    face_index: IntArray
    signed: bool = True

    def __len__(self) -> int:
        return len(self.face_index)

    def __getitem__(self, index: int) -> SurfaceQueryResult:
        return SurfaceQueryResult(
            signed_distance=float(self.signed_distance[index]),
            closest_point=self.closest_point[index],
            normal=self.normal[index],
            face_index=int(self.face_index[index]),
            signed=self.signed,
        )


@dataclass(kw_only=True, frozen=True)
class RayHit:
    """Nearest intersection of a ray with a mesh"""

    face_index: int
    point: FloatArray
    t: float


def signed_distance_batch(
    mesh: TriangleMesh, points: ArrayLike, with_sign: bool = True
) -> SurfaceQueryBatch:
    """Closest-point queries for many points.

    With `with_sign` False, or on a mesh that is not watertight, the returned
    distances are unsigned.
    """
    pts = as_points(points)
    faces, closest, d2 = mesh.closest_faces(pts)
    distance = np.sqrt(d2)
    signed = with_sign and mesh.is_watertight
    if signed:
        distance = np.where(mesh.contains(pts), -distance, distance)
    return SurfaceQueryBatch(
        signed_distance=distance,
        closest_point=closest,
        normal=mesh.face_normals[faces],
        face_index=faces,
        signed=signed,
    )


def signed_distance(mesh: TriangleMesh, query: ArrayLike) -> SurfaceQueryResult:
    """Signed distance from one point to the mesh surface"""
    return signed_distance_batch(mesh, as_points(query))[0]


def _check_unit(directions: FloatArray) -> None:
    norms = np.sqrt(_squared_norm(directions))
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise InputValidationError("ray directions must have unit length")


def raycast_batch(
    mesh: TriangleMesh, origins: ArrayLike, directions: ArrayLike
) -> tuple[IntArray, FloatArray, FloatArray]:
    """Nearest hits for many rays as (face index or -1, t or inf, hit points)

    Raises:
        InputValidationError: if any direction is not unit length
    """
    orig = as_points(origins)
    dirs = as_points(directions)
    if len(orig) != len(dirs):
        orig = np.broadcast_to(orig, dirs.shape).copy()
    _check_unit(dirs)
    faces, t = mesh.intersect_rays(orig, dirs)
    with np.errstate(invalid="ignore"):
        points = orig + dirs * t[:, None]
    points[faces < 0] = np.nan
    return faces, t, points


def raycast(mesh: TriangleMesh, origin: ArrayLike, direction: ArrayLike) -> RayHit | None:
    """Nearest intersection with t above RAY_EPSILON, None when the ray misses"""
    faces, t, points = raycast_batch(mesh, as_points(origin), as_points(direction))
    if faces[0] < 0:
        return None
    return RayHit(face_index=int(faces[0]), point=points[0], t=float(t[0]))


def convex_hull(points: ArrayLike) -> TriangleMesh:
    """Outward-oriented convex hull whose vertices are a subset of the input

    Raises:
        DegenerateGeometryError: for fewer than 4 points or flat point sets
    """
    pts = as_points(points)
    if len(pts) < 4:
        raise DegenerateGeometryError(f"convex hull needs 4 points, got {len(pts)}")
    try:
        hull = ConvexHull(pts)
    except QhullError as err:
        raise DegenerateGeometryError(f"points are coplanar or collinear: {err}") from err
    extent = float(np.ptp(pts, axis=0).max())
    if hull.volume <= 1e-12 * extent**3:
        raise DegenerateGeometryError("points span no volume")
    faces = np.asarray(hull.simplices, dtype=np.int64).copy()
    tris = pts[faces]
    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    flip = _dot(normals, hull.equations[:, :3]) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    areas = 0.5 * np.sqrt(_squared_norm(normals))
    if np.any(areas <= DEGENERATE_AREA):
        logger.debug("dropping %d sliver hull faces", int(np.sum(areas <= DEGENERATE_AREA)))
        faces = faces[areas > DEGENERATE_AREA]
    used = np.unique(faces)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(pts[used], remap[faces])


def inflate_hull(hull: TriangleMesh, delta: float) -> TriangleMesh:
    """Push every vertex `delta` meters along its angle-weighted normal

    Raises:
        InputValidationError: if delta is negative
    """
    if delta < 0:
        raise InputValidationError(f"inflation distance must be >= 0, got {delta}")
    if delta == 0:
        return hull
    return TriangleMesh(hull.vertices + delta * hull.vertex_normals, hull.faces)


def farthest_point_sampling(points: ArrayLike, k: int, seed: int) -> list[int]:
    """Greedy farthest point selection from a seeded random start.

    Ties go to the lowest index, so the first j picks are the same for every k >= j.

    Raises:
        InputValidationError: if k is not within 1..len(points)
    """
    pts = as_points(points)
    if not 1 <= k <= len(pts):
        raise InputValidationError(f"k must be in 1..{len(pts)}, got {k}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(len(pts)))]
    nearest = _squared_norm(pts - pts[chosen[0]])
    nearest[chosen[0]] = -1.0
    for _ in range(k - 1):
        pick = int(np.argmax(nearest))
        chosen.append(pick)
        nearest = np.minimum(nearest, _squared_norm(pts - pts[pick]))
        nearest[pick] = -1.0
    return chosen


def load_mesh(path: Path) -> TriangleMesh:
    """Read an ASCII `v`/`f` triangle mesh with 1-based indices.

    Degenerate faces are dropped and counted on `TriangleMesh.dropped_faces`.

    Raises:
        FileNotFoundError: if the file does not exist
        MeshParseError: on any malformed line
        DegenerateGeometryError: if no valid face remains
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    face_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as mesh_file:
        for line_number, raw in enumerate(mesh_file, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            keyword, *fields = line.split()
            match keyword:
                case "v":
                    if len(fields) < 3:
                        raise MeshParseError("vertex needs 3 coordinates", line_number)
                    try:
                        vertices.append([float(value) for value in fields[:3]])
                    except ValueError as err:
                        raise MeshParseError(str(err), line_number) from err
                case "f":
                    if len(fields) != 3:
                        raise MeshParseError(
                            f"faces must be triangles, got {len(fields)} indices",
                            line_number,
                        )
                    try:
                        faces.append([int(field.split("/")[0]) - 1 for field in fields])
                    except ValueError as err:
                        raise MeshParseError(str(err), line_number) from err
                    face_lines.append(line_number)
                case _ if keyword in IGNORED_OBJ_KEYWORDS:
                    continue
                case _:
                    raise MeshParseError(f"unknown keyword {keyword!r}", line_number)
    for face, line_number in zip(faces, face_lines):
        if min(face) < 0 or max(face) >= len(vertices):
            raise MeshParseError("face index out of range", line_number)
    if not faces:
        raise DegenerateGeometryError(f"{path} has no faces")
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(faces, dtype=np.int64)
    keep = triangle_areas(verts[tris]) > DEGENERATE_AREA
    dropped = int(np.sum(~keep))
    if dropped:
        logger.warning("dropped %d degenerate faces from %s", dropped, path)
    if not keep.any():
        raise DegenerateGeometryError(f"{path} has no non-degenerate faces")
    mesh = TriangleMesh(verts, tris[keep], dropped_faces=dropped)
    if not mesh.is_watertight:
        logger.warning("%s is not watertight, distances to it are unsigned", path)
    logger.info("loaded %s with %d faces", path.name, len(mesh))
    return mesh


def write_mesh(mesh: TriangleMesh, path: Path) -> None:
    """Write the mesh in the ASCII `v`/`f` format read by load_mesh"""
    lines = [MESH_HEADER]
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


ICOSAHEDRON_FACES = (
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
)  # fmt: skip


def icosphere(
    subdivisions: int = 1, radius: float = 1.0, center: ArrayLike = (0.0, 0.0, 0.0)
) -> TriangleMesh:
    """Subdivided icosahedron: 20 * 4**subdivisions outward-facing faces"""
    if subdivisions < 0 or radius <= 0:
        raise InputValidationError("icosphere needs subdivisions >= 0 and radius > 0")
    phi = (1.0 + 5.0**0.5) / 2.0
    vertices = [
        list(v)
        for v in (
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        )  # fmt: skip
    ]
    faces = [list(face) for face in ICOSAHEDRON_FACES]
    for _ in range(subdivisions):
        midpoints: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                midpoints[key] = len(vertices)
                vertices.append([(p + q) / 2.0 for p, q in zip(vertices[a], vertices[b])])
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend(([a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]))
        faces = refined
    verts = np.asarray(vertices, dtype=np.float64)
    verts /= np.sqrt(_squared_norm(verts))[:, None]
    tris = np.asarray(faces, dtype=np.int64)
    corners = verts[tris]
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    inward = _dot(normals, corners.mean(axis=1)) < 0
    tris[inward] = tris[inward][:, ::-1]
    return TriangleMesh(verts * radius + np.asarray(center, dtype=np.float64), tris)


def merge_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    """One mesh holding every vertex and face of the inputs, in order"""
    if not meshes:
        raise DegenerateGeometryError("nothing to merge")
    offsets = np.cumsum([0] + [len(mesh.vertices) for mesh in meshes[:-1]])
    return TriangleMesh(
        np.concatenate([mesh.vertices for mesh in meshes]),
        np.concatenate([mesh.faces + offset for mesh, offset in zip(meshes, offsets)]),
    )
