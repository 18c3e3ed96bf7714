# Test viewpoint sampling, face rendering, mask filtering and face voting
# type: ignore
# pylint: disable
import math
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx, fixture, mark, raises

from semantic_grasp_builder.errors import EmptyRegionError, InputValidationError
from semantic_grasp_builder.geometry import icosphere, raycast, signed_distance_batch
from semantic_grasp_builder.hand_model import quaternion_to_matrix
from semantic_grasp_builder.region_proposal import (
    BACKGROUND,
    REGION_HEADER,
    FaceTally,
    MaskObservation,
    Viewpoint,
    deproject_mask,
    filter_two_means,
    framing_focal,
    propose_region,
    read_mask_observation,
    read_region,
    render_visible_faces,
    sample_viewpoints,
    select_useful_region,
    synthetic_oracle_masks,
    tally_faces,
    write_mask_observation,
    write_region,
)
from tests.conftest import RIGHT_FACES, TOP_FACES, make_cylinder

vote_counts = st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=40)


def mask_with(pixels: int, index: int = 0, side: int = 40) -> MaskObservation:
    flat = np.zeros(side * side, dtype=bool)
    flat[:pixels] = True
    return MaskObservation(view_index=index, label="part", mask=flat.reshape(side, side))


@fixture
def test_side_view() -> Viewpoint:
    """Camera on +x looking at the origin, 32 px square"""
    return Viewpoint(
        camera_position=[3.0, 0.0, 0.0],
        look_at=[0.0, 0.0, 0.0],
        up=[0.0, 0.0, 1.0],
        focal_px=40.0,
        image_width=32,
        image_height=32,
    )


def test_viewpoint_validation() -> None:
    with raises(InputValidationError):
        Viewpoint(camera_position=[0, 0, 1], look_at=[0, 0, 0], up=[0, 0, 1], focal_px=10.0)
    with raises(InputValidationError):
        Viewpoint(camera_position=[0, 0, 0], look_at=[0, 0, 0], up=[0, 1, 0], focal_px=10.0)
    with raises(InputValidationError):
        Viewpoint(camera_position=[1, 0, 0], look_at=[0, 0, 0], up=[0, 0, 1], focal_px=0.0)


def test_single_sphere_viewpoint() -> None:
    views = sample_viewpoints(1, "sphere", 2.0, [1.0, 1.0, 1.0], seed=0)
    assert len(views) == 1
    assert np.linalg.norm(views[0].camera_position - [1.0, 1.0, 1.0]) == approx(2.0)
    assert np.allclose(views[0].look_at, [1.0, 1.0, 1.0])


def test_dome_viewpoints_stay_above_centre() -> None:
    views = sample_viewpoints(20, "dome", 1.5, [0.0, 0.0, 0.2], seed=3)
    assert len(views) == 20
    assert all(view.camera_position[2] >= 0.2 for view in views)


def test_sphere_viewpoints_are_spread() -> None:
    views = sample_viewpoints(100, "sphere", 1.0, [0.0, 0.0, 0.0], seed=1)
    directions = np.stack([view.camera_position for view in views])
    cosines = np.clip(directions @ directions.T, -1.0, 1.0)
    np.fill_diagonal(cosines, -1.0)
    smallest = math.acos(cosines.max())
    assert smallest > 0.5 * math.sqrt(4.0 * math.pi / 100)


def test_viewpoints_are_seeded() -> None:
    first = sample_viewpoints(5, "sphere", 1.0, [0, 0, 0], seed=4)
    again = sample_viewpoints(5, "sphere", 1.0, [0, 0, 0], seed=4)
    other = sample_viewpoints(5, "sphere", 1.0, [0, 0, 0], seed=5)
    assert all(np.array_equal(a.camera_position, b.camera_position) for a, b in zip(first, again))
    assert not np.allclose(first[0].camera_position, other[0].camera_position)


@mark.parametrize("count, radius", [(0, 1.0), (5, 0.0), (5, -1.0)])
def test_viewpoint_arguments(count: int, radius: float) -> None:
    with raises(InputValidationError):
        sample_viewpoints(count, "sphere", radius, [0, 0, 0], seed=0)


def test_framing_focal() -> None:
    assert framing_focal(3.0, 1.0, 128, 0.8) == approx(51.2 * math.sqrt(8.0))
    with raises(InputValidationError):
        framing_focal(1.0, 1.0, 128)


def test_render_shows_only_facing_triangles(test_cube, test_side_view) -> None:
    image = render_visible_faces(test_cube, test_side_view)
    assert image.shape == (32, 32)
    assert set(np.unique(image).tolist()) == {BACKGROUND} | RIGHT_FACES


def test_render_empty_scene(test_side_view) -> None:
    image = render_visible_faces(None, test_side_view)
    assert np.all(image == BACKGROUND)


def test_deproject_centre_pixel(test_tilted_sphere) -> None:
    test_sphere = test_tilted_sphere
    view = Viewpoint(
        camera_position=[3.0, 0.0, 0.0],
        look_at=[0.0, 0.0, 0.0],
        up=[0.0, 0.0, 1.0],
        focal_px=40.0,
        image_width=33,
        image_height=33,
    )
    mask = np.zeros((33, 33), dtype=bool)
    mask[16, 16] = True
    points = deproject_mask(test_sphere, view, MaskObservation(view_index=0, label="", mask=mask))
    assert points.shape == (1, 3)
    assert np.allclose(points[0], [1.0, 0.0, 0.0], atol=0.05)
    assert np.allclose(points[0, 1:], 0.0)
    with raises(InputValidationError):
        deproject_mask(test_sphere, view, mask_with(5))


@fixture
def test_tilted_sphere():
    """Icosphere tilted so that no vertex sits on a camera axis"""
    quaternion = np.array([0.9, 0.1, 0.3, 0.2])
    tilt = quaternion_to_matrix(quaternion / np.linalg.norm(quaternion))
    return icosphere(2).transformed(rotation=tilt)


def tilted_views(image_side: int):
    return sample_viewpoints(
        3, "sphere", 3.0, [0.0, 0.0, 0.0], seed=4, image_width=image_side, image_height=image_side
    )


def test_render_matches_a_ray_per_pixel(test_tilted_sphere) -> None:
    view = tilted_views(64)[0]
    image = render_visible_faces(test_tilted_sphere, view).reshape(-1)
    directions = view.pixel_directions()
    for pixel, direction in enumerate(directions):
        hit = raycast(test_tilted_sphere, view.camera_position, direction)
        assert image[pixel] == (BACKGROUND if hit is None else hit.face_index)
    assert BACKGROUND in image and np.count_nonzero(image != BACKGROUND) > 100


def test_deprojected_silhouettes_lie_on_the_surface(test_tilted_sphere) -> None:
    for index, view in enumerate(tilted_views(48)):
        silhouette = render_visible_faces(test_tilted_sphere, view) != BACKGROUND
        observation = MaskObservation(view_index=index, label="all", mask=silhouette)
        points = deproject_mask(test_tilted_sphere, view, observation)
        assert len(points) == np.count_nonzero(silhouette)
        distances = signed_distance_batch(test_tilted_sphere, points).signed_distance
        assert np.abs(distances) == approx(np.zeros(len(points)), abs=1e-9)


def test_two_means_drops_the_small_cluster() -> None:
    masks = [mask_with(count, index) for index, count in enumerate([1000, 950, 980, 40])]
    kept = filter_two_means(masks)
    assert [obs.view_index for obs in kept] == [0, 1, 2]


@mark.parametrize(
    "counts",
    [
        [1000, 950, 980, 40],
        [3, 5, 4, 200, 220, 210, 6],
        [10, 500, 12, 480, 11, 9],
        [0, 700],
    ],
)
def test_two_means_ignores_duplicated_views(counts) -> None:
    masks = [mask_with(count, index) for index, count in enumerate(counts)]
    kept = {obs.view_index for obs in filter_two_means(masks)}
    doubled = filter_two_means(masks + masks)
    assert [obs.view_index for obs in doubled] == [
        obs.view_index for obs in masks + masks if obs.view_index in kept
    ]


def test_two_means_keeps_uniform_sets() -> None:
    masks = [mask_with(300, index) for index in range(4)]
    assert filter_two_means(masks) == masks
    assert filter_two_means(masks[:1]) == masks[:1]
    assert filter_two_means([]) == []


def test_tally_faces_votes_for_closest_face(test_cube) -> None:
    tally = tally_faces(test_cube, test_cube.face_centroids[[0, 5, 5]])
    assert tally.counts[0] == 1
    assert tally.counts[5] == 2
    assert tally.total == 3
    assert tally_faces(test_cube, np.zeros((0, 3))).total == 0


@settings(deadline=None, max_examples=25)
@given(first=vote_counts, second=vote_counts)
def test_tallies_merge_in_any_order(first, second) -> None:
    size = min(len(first), len(second))
    a = FaceTally(counts=first[:size])
    b = FaceTally(counts=second[:size])
    assert np.array_equal((a + b).counts, (b + a).counts)
    assert (a + b).total == a.total + b.total


def test_tally_validation() -> None:
    with raises(InputValidationError):
        FaceTally(counts=[1, -1])
    with raises(InputValidationError):
        FaceTally.zeros(3) + FaceTally.zeros(4)


def test_select_useful_region() -> None:
    tally = FaceTally(counts=[10, 5, 1, 0, 0])
    assert select_useful_region(tally, 0.6, "part").face_indices == {0, 1}
    assert select_useful_region(tally, 1.0).face_indices == {0, 1, 2}
    uniform = FaceTally(counts=[4] * 10)
    assert select_useful_region(uniform, 0.6).face_indices == set(range(6))


def test_select_useful_region_errors() -> None:
    with raises(EmptyRegionError):
        select_useful_region(FaceTally.zeros(5), 0.5)
    for fraction in (0.0, 1.5):
        with raises(InputValidationError):
            select_useful_region(FaceTally(counts=[1, 2]), fraction)


@settings(deadline=None, max_examples=25)
@given(
    counts=vote_counts.filter(lambda values: any(values)),
    low=st.floats(min_value=0.01, max_value=1.0),
    high=st.floats(min_value=0.01, max_value=1.0),
)
def test_region_grows_with_fraction(counts, low, high) -> None:
    low, high = sorted((low, high))
    tally = FaceTally(counts=counts)
    small = select_useful_region(tally, low).face_indices
    large = select_useful_region(tally, high).face_indices
    assert small <= large
    voted = sum(1 for value in counts if value)
    assert len(large) == math.ceil(round(high * voted, 9))


def test_oracle_masks_replay_corruption(test_cube) -> None:
    views = sample_viewpoints(
        20, "sphere", 3.0, [0, 0, 0], seed=2, image_width=24, image_height=24
    )
    masks = synthetic_oracle_masks(test_cube, TOP_FACES, views, noise=0.25, seed=3)
    corrupted = np.random.default_rng(3).random(20) < 0.25
    for view, mask, bad in zip(views, masks, corrupted):
        if bad:
            assert 1 <= mask.pixel_count <= 49
        else:
            expected = np.isin(render_visible_faces(test_cube, view), list(TOP_FACES))
            assert np.array_equal(mask.mask, expected)
    with raises(InputValidationError):
        synthetic_oracle_masks(test_cube, [12], views, noise=0.0, seed=0)


def test_planted_region_is_recovered(test_cube) -> None:
    centre, radius = test_cube.bounding_sphere
    views = sample_viewpoints(
        6,
        "sphere",
        3.0 * radius,
        centre,
        seed=0,
        object_radius=radius,
        image_width=32,
        image_height=32,
    )
    masks = synthetic_oracle_masks(test_cube, TOP_FACES, views, noise=0.0, seed=0, label="lid")
    region = propose_region(test_cube, views, masks, fraction=1.0, label="lid")
    assert region.face_indices == TOP_FACES
    assert region.label == "lid"


def test_no_surviving_masks(test_cube, test_side_view) -> None:
    empty = MaskObservation(view_index=0, label="", mask=np.zeros((32, 32), dtype=bool))
    with raises(EmptyRegionError):
        propose_region(test_cube, [test_side_view], [empty], fraction=0.6)


def test_mask_files(tmpdir, test_side_view) -> None:
    mask = np.zeros((32, 32), dtype=bool)
    mask[4:9, 10:20] = True
    path = Path(tmpdir) / "view_0.pgm"
    observation = MaskObservation(view_index=3, label="cap", mask=mask)
    write_mask_observation(path, test_side_view, observation)
    view, observation = read_mask_observation(path)
    assert np.array_equal(observation.mask, mask)
    assert observation.view_index == 3
    assert observation.label == "cap"
    assert np.array_equal(view.camera_position, test_side_view.camera_position)
    assert view.focal_px == test_side_view.focal_px
    path.with_suffix(".txt").unlink()
    with raises(FileNotFoundError):
        read_mask_observation(path)


def test_mask_sidecar_disagrees(tmpdir, test_side_view) -> None:
    path = Path(tmpdir) / "view_1.pgm"
    small = Viewpoint(
        camera_position=[3.0, 0.0, 0.0],
        look_at=[0.0, 0.0, 0.0],
        up=[0.0, 0.0, 1.0],
        focal_px=40.0,
        image_width=16,
        image_height=16,
    )
    write_mask_observation(
        path, small, MaskObservation(view_index=1, label="", mask=np.ones((32, 32), dtype=bool))
    )
    with raises(InputValidationError):
        read_mask_observation(path)


def test_region_files(tmpdir) -> None:
    path = Path(tmpdir) / "part.region"
    region = select_useful_region(FaceTally(counts=[0, 3, 0, 7]), 1.0, "spout")
    write_region(path, region)
    assert path.read_text(encoding="utf-8").splitlines() == [REGION_HEADER, "spout", "1", "3"]
    loaded = read_region(path, 4)
    assert loaded.face_indices == {1, 3}
    assert loaded.label == "spout"
    assert loaded.tally.counts.tolist() == [0, 1, 0, 1]
    with raises(InputValidationError):
        read_region(path, 3)


@mark.parametrize(
    "text, error",
    [
        ("not a region\nlabel\n1\n", InputValidationError),
        (f"{REGION_HEADER}\nlabel\n", EmptyRegionError),
        (f"{REGION_HEADER}\nlabel\none\n", InputValidationError),
    ],
)
def test_bad_region_files(tmpdir, text, error) -> None:
    path = Path(tmpdir) / "bad.region"
    path.write_text(text, encoding="utf-8")
    with raises(error):
        read_region(path, 10)


@mark.slow
def test_planted_region_survives_corrupted_views() -> None:
    mesh = make_cylinder()
    assert len(mesh) == 2000
    planted = frozenset(np.flatnonzero(mesh.face_centroids[:, 2] >= 0.0).tolist())
    centre, radius = mesh.bounding_sphere
    views = sample_viewpoints(20, "sphere", 3.0 * radius, centre, seed=0, object_radius=radius)
    masks = synthetic_oracle_masks(mesh, planted, views, noise=0.25, seed=0, label="upper")
    corrupted = set(np.flatnonzero(np.random.default_rng(0).random(20) < 0.25).tolist())
    kept = filter_two_means([obs for obs in masks if obs.pixel_count > 0])
    assert not corrupted & {obs.view_index for obs in kept}
    region = propose_region(mesh, views, masks, fraction=1.0, label="upper")
    overlap = len(region.face_indices & planted) / len(region.face_indices | planted)
    assert overlap >= 0.9
