# Test the basis point encoding, grasp vectors, noise schedule, denoiser and checkpoints
# type: ignore
# pylint: disable
import math
from pathlib import Path

import numpy as np
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx, fixture, mark, raises

from semantic_grasp_builder import FORMAT_VERSION
from semantic_grasp_builder.distill import (
    CHECKPOINT_MAGIC,
    MAX_BETA,
    POSE_DIM,
    Denoiser,
    NoiseSchedule,
    TrainedDenoiser,
    _noise_loss,
    encode,
    forward_noise,
    generate_basis,
    grasp_to_vector,
    grasp_vectors,
    load_checkpoint,
    orthonormalise,
    sample,
    sample_many,
    save_checkpoint,
    time_embedding,
    train,
    vector_to_grasp,
)
from semantic_grasp_builder.errors import DegenerateGeometryError, InputValidationError
from semantic_grasp_builder.grasp_dataclasses.config import (
    EnergyWeights,
    OptimizerConfig,
    ScheduleConfig,
    TrainConfig,
)
from semantic_grasp_builder.grasp_optimizer import (
    EnergyModel,
    SceneContext,
    init_grasps,
    optimize_candidates,
)
from semantic_grasp_builder.hand_model import GraspPose, quaternion_to_matrix
from semantic_grasp_builder.pipeline import object_cloud
from tests.conftest import region_of

unit_component = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@fixture
def test_schedule() -> NoiseSchedule:
    return NoiseSchedule.linear(ScheduleConfig(T_steps=5))


@fixture
def test_dataset():
    rng = np.random.default_rng(11)
    return rng.normal(size=(24, 11)), rng.uniform(size=(24, 6))


@fixture
def test_model(test_dataset, test_schedule):
    vectors, conditions = test_dataset
    config = TrainConfig(hidden_sizes=(16, 8), time_embedding_dim=4, epochs=2, batch_size=8)
    return train(vectors, conditions, test_schedule, config)


def test_basis_lies_in_the_ball() -> None:
    basis = generate_basis(300, 0.15, seed=2)
    assert basis.points.shape == (300, 3)
    assert np.all(np.linalg.norm(basis.points, axis=1) <= 0.15)
    assert np.array_equal(basis.points, generate_basis(300, 0.15, seed=2).points)
    assert not np.array_equal(basis.points, generate_basis(300, 0.15, seed=3).points)
    assert len(basis) == 300


def test_basis_is_uniform_in_the_ball() -> None:
    # E|x| = 3r/4 for points uniform in a ball of radius r
    basis = generate_basis(4096, 0.3, seed=0)
    assert np.linalg.norm(basis.points, axis=1).mean() == approx(0.75 * 0.3, rel=0.02)


@mark.parametrize("n_b, radius", [(0, 0.1), (-3, 0.1), (10, 0.0), (10, -1.0)])
def test_basis_arguments(n_b: int, radius: float) -> None:
    with raises(InputValidationError):
        generate_basis(n_b, radius, seed=0)


def test_encode_measures_nearest_distances() -> None:
    basis = generate_basis(64, 1.0, seed=0)
    single = encode(basis, [[0.0, 0.0, 0.0]])
    assert single == approx(np.linalg.norm(basis.points, axis=1))
    assert encode(basis, basis.points) == approx(np.zeros(64))
    crowd = np.vstack([[0.0, 0.0, 0.0], basis.points[:10]])
    assert np.all(encode(basis, crowd) <= single + 1e-12)
    with raises(InputValidationError):
        encode(basis, np.zeros((0, 3)))


@settings(deadline=None, max_examples=25)
@given(
    seed=st.integers(min_value=0, max_value=2**16),
    shift=st.tuples(unit_component, unit_component, unit_component),
)
def test_encode_ignores_order_and_follows_shifts(seed: int, shift) -> None:
    rng = np.random.default_rng(seed)
    basis = generate_basis(32, 0.2, seed=1)
    cloud = rng.uniform(-0.1, 0.1, size=(50, 3))
    encoding = encode(basis, cloud)
    assert encode(basis, rng.permutation(cloud)) == approx(encoding, rel=1e-12, abs=1e-15)
    offset = 0.05 * np.asarray(shift)
    moved = encode(basis, cloud + offset)
    assert np.all(np.abs(moved - encoding) <= np.linalg.norm(offset) + 1e-12)


def test_grasp_vector_layout() -> None:
    rotation = quaternion_to_matrix([math.cos(0.3), 0.0, math.sin(0.3), 0.0])
    grasp = GraspPose.from_matrix([0.1, 0.2, 0.3], rotation, [0.5, -0.5])
    vector = grasp_to_vector(grasp)
    assert len(vector) == POSE_DIM + 2
    assert vector[:3] == approx([0.1, 0.2, 0.3])
    assert vector[3:6] == approx(rotation[:, 0])
    assert vector[6:9] == approx(rotation[:, 1])
    assert vector[9:] == approx([0.5, -0.5])


@settings(deadline=None, max_examples=25)
@given(quaternion=st.tuples(unit_component, unit_component, unit_component, unit_component))
def test_vector_round_trip_keeps_the_rotation(quaternion) -> None:
    if np.linalg.norm(quaternion) < 0.1:
        return
    quaternion = np.asarray(quaternion) / np.linalg.norm(quaternion)
    grasp = GraspPose(translation=[0.0, 0.1, 0.0], quaternion=quaternion, theta=[0.2])
    decoded = vector_to_grasp(grasp_to_vector(grasp))
    assert np.allclose(decoded.rotation, grasp.rotation)
    assert np.allclose(decoded.translation, grasp.translation)
    assert np.allclose(decoded.theta, grasp.theta)


def test_orthonormalise_repairs_columns() -> None:
    rotation = orthonormalise(np.array([2.0, 0.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert rotation == approx(np.eye(3))
    skewed = orthonormalise(np.array([1.0, 0.1, 0.0]), np.array([0.0, 1.0, 0.2]))
    assert skewed @ skewed.T == approx(np.eye(3))
    assert np.linalg.det(skewed) == approx(1.0)


def test_orthonormalise_rejects_degenerate_columns() -> None:
    with raises(DegenerateGeometryError):
        orthonormalise(np.zeros(3), np.array([0.0, 1.0, 0.0]))
    with raises(DegenerateGeometryError):
        orthonormalise(np.array([1.0, 0.0, 0.0]), np.array([-3.0, 0.0, 0.0]))
    with raises(InputValidationError):
        vector_to_grasp(np.zeros(POSE_DIM - 1))


def test_grasp_vectors_are_relative_to_the_origin() -> None:
    grasp = GraspPose(translation=[1.0, 2.0, 3.0], quaternion=[1, 0, 0, 0], theta=[0.0])
    vectors = grasp_vectors([grasp, grasp], origin=[1.0, 1.0, 1.0])
    assert vectors.shape == (2, POSE_DIM + 1)
    assert vectors[0, :3] == approx([0.0, 1.0, 2.0])
    assert grasp_vectors([grasp])[0, :3] == approx([1.0, 2.0, 3.0])


def test_linear_schedule() -> None:
    reference = NoiseSchedule.linear(ScheduleConfig(T_steps=1000))
    assert reference.betas == approx(np.linspace(1e-4, 0.02, 1000))
    rescaled = NoiseSchedule.linear(ScheduleConfig(T_steps=100))
    assert rescaled.T_steps == 100
    assert rescaled.betas[0] == approx(1e-3)
    assert rescaled.betas[-1] == approx(0.2)
    assert rescaled.alpha_bars == approx(np.cumprod(1.0 - rescaled.betas))
    capped = NoiseSchedule.linear(ScheduleConfig(T_steps=10))
    assert capped.betas[-1] == MAX_BETA
    assert np.all(np.diff(capped.alpha_bars) < 0)


def test_schedule_validation(test_schedule) -> None:
    for betas in ([], [0.1, 1.0], [0.0, 0.1]):
        with raises(InputValidationError):
            NoiseSchedule(betas=np.asarray(betas))
    test_schedule.check_step(1)
    test_schedule.check_step(5)
    for step in (0, 6):
        with raises(InputValidationError):
            test_schedule.check_step(step)


def test_forward_noise(test_schedule) -> None:
    clean = np.array([1.0, -2.0, 0.5])
    noised, eps = forward_noise(clean, 1, test_schedule, seed=4)
    beta = test_schedule.betas[0]
    assert noised == approx(math.sqrt(1.0 - beta) * clean + math.sqrt(beta) * eps)
    again, _ = forward_noise(clean, 1, test_schedule, seed=4)
    assert np.array_equal(noised, again)
    last, eps_last = forward_noise(clean, 5, test_schedule, seed=4)
    alpha_bar = test_schedule.alpha_bars[-1]
    assert last == approx(math.sqrt(alpha_bar) * clean + math.sqrt(1.0 - alpha_bar) * eps_last)
    with raises(InputValidationError):
        forward_noise(clean, 6, test_schedule, seed=4)


def test_forward_noise_moments() -> None:
    schedule = NoiseSchedule.linear(ScheduleConfig())
    t = 50
    alpha_bar = schedule.alpha_bars[t - 1]
    clean = np.linspace(-1.0, 1.0, 25)
    draws = np.stack(
        [forward_noise(clean, t, schedule, seed=[7, index])[0] for index in range(10_000)]
    )
    spread = math.sqrt((1.0 - alpha_bar) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - math.sqrt(alpha_bar) * clean) < 4.0 * spread)
    norms = np.einsum("ij,ij->i", draws, draws)
    expected = alpha_bar * float(clean @ clean) + (1.0 - alpha_bar) * len(clean)
    assert norms.mean() == approx(expected, abs=4.0 * norms.std() / math.sqrt(len(norms)))
    last, eps = forward_noise(clean, schedule.T_steps, schedule, seed=1)
    assert last == approx(eps, abs=0.01)


def test_time_embedding() -> None:
    steps = torch.tensor([0, 3, 7])
    embedding = time_embedding(steps, 6)
    assert tuple(embedding.shape) == (3, 6)
    assert embedding[0].tolist() == approx([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    assert embedding[1, 0].item() == approx(math.sin(3.0))
    odd = time_embedding(steps, 5)
    assert odd[:, -1].tolist() == [0.0, 0.0, 0.0]
    assert tuple(time_embedding(steps, 0).shape) == (3, 0)


def test_denoiser_layout_and_seeding() -> None:
    network = Denoiser(9, 4, 6, [16, 8], seed=3)
    assert network.widths == [19, 16, 8, 9]
    twin = Denoiser(9, 4, 6, [16, 8], seed=3)
    other = Denoiser(9, 4, 6, [16, 8], seed=4)
    assert torch.equal(network.layers[0].weight, twin.layers[0].weight)
    assert not torch.equal(network.layers[0].weight, other.layers[0].weight)
    output = network(
        torch.zeros((2, 9), dtype=torch.float64),
        torch.zeros((2, 4), dtype=torch.float64),
        torch.tensor([1, 2]),
    )
    assert tuple(output.shape) == (2, 9)


def test_train_records_a_loss_trace(test_model, test_dataset) -> None:
    vectors, _ = test_dataset
    assert len(test_model.loss_trace) == 3
    assert all(math.isfinite(loss) and loss > 0 for loss in test_model.loss_trace)
    assert test_model.mean == approx(vectors.mean(axis=0))
    assert test_model.restore(test_model.standardise(vectors)) == approx(vectors)


def test_train_is_seeded(test_dataset, test_schedule, test_model) -> None:
    vectors, conditions = test_dataset
    config = TrainConfig(hidden_sizes=(16, 8), time_embedding_dim=4, epochs=2, batch_size=8)
    again = train(vectors, conditions, test_schedule, config)
    assert again.loss_trace == test_model.loss_trace
    untrained = train(vectors, conditions, test_schedule, config.model_copy(update={"epochs": 0}))
    assert untrained.loss_trace == test_model.loss_trace[:1]


def test_training_lowers_the_loss(test_dataset, test_schedule) -> None:
    vectors, conditions = test_dataset
    config = TrainConfig(
        hidden_sizes=(64,), time_embedding_dim=4, learning_rate=1e-2, epochs=60, batch_size=8
    )
    model = train(vectors, conditions, test_schedule, config)
    assert model.loss_trace[-1] < model.loss_trace[0]


def test_train_rejects_empty_data(test_schedule) -> None:
    with raises(InputValidationError):
        train(np.zeros((0, 9)), np.zeros((0, 4)), test_schedule, TrainConfig())


def test_train_shares_a_single_condition(test_schedule) -> None:
    vectors = np.random.default_rng(5).normal(size=(12, 11))
    condition = encode(generate_basis(8, 0.15, seed=0), [[0.0, 0.0, 0.0]])
    config = TrainConfig(hidden_sizes=(8,), time_embedding_dim=2, epochs=1, batch_size=4)
    shared = train(vectors, condition, test_schedule, config)
    tiled = train(vectors, np.tile(condition, (12, 1)), test_schedule, config)
    assert shared.network.condition_dim == 8
    assert shared.loss_trace == tiled.loss_trace
    with raises(InputValidationError):
        train(vectors, np.zeros((5, 8)), test_schedule, config)


def test_zero_learning_rate_keeps_the_loss(test_dataset, test_schedule) -> None:
    vectors, conditions = test_dataset
    config = TrainConfig(
        hidden_sizes=(16,), time_embedding_dim=4, learning_rate=0.0, epochs=3, batch_size=8
    )
    model = train(vectors, conditions, test_schedule, config)
    assert model.loss_trace == [model.loss_trace[0]] * 4


def test_a_single_record_is_memorised() -> None:
    schedule = NoiseSchedule(betas=np.linspace(0.3, 0.6, 4))
    vector = np.random.default_rng(3).normal(size=(1, 6))
    config = TrainConfig(
        hidden_sizes=(64, 64), time_embedding_dim=8, learning_rate=3e-3, epochs=500, batch_size=1
    )
    model = train(vector, [], schedule, config)
    assert model.loss_trace[-1] < 0.1 * model.loss_trace[0]


def test_noise_loss_gradient_matches_finite_differences() -> None:
    schedule = NoiseSchedule.linear(ScheduleConfig(T_steps=10))
    network = Denoiser(2, 0, 0, [4], seed=1)
    assert network.widths == [2, 4, 2]
    parameters = list(network.parameters())
    rng = np.random.default_rng(2)
    condition = torch.zeros((3, 0), dtype=torch.float64)
    step = 1e-6
    for _ in range(10):
        clean = torch.from_numpy(rng.normal(size=(3, 2)))
        steps = rng.integers(1, 11, 3)
        eps = rng.standard_normal((3, 2))

        def loss() -> torch.Tensor:
            return _noise_loss(network, schedule, clean, condition, steps, eps)

        network.zero_grad()
        loss().backward()
        analytic = torch.cat([parameter.grad.reshape(-1) for parameter in parameters]).numpy()
        numeric = []
        with torch.no_grad():
            for parameter in parameters:
                flat = parameter.view(-1)
                for index in range(flat.numel()):
                    kept = flat[index].item()
                    flat[index] = kept + step
                    up = loss().item()
                    flat[index] = kept - step
                    down = loss().item()
                    flat[index] = kept
                    numeric.append((up - down) / (2.0 * step))
        error = np.linalg.norm(analytic - np.asarray(numeric))
        assert error < 1e-4 * np.linalg.norm(analytic)


def test_constant_coordinates_are_not_divided_by_zero(test_schedule) -> None:
    vectors = np.ones((6, 10))
    model = train(vectors, [], test_schedule, TrainConfig(hidden_sizes=(4,), epochs=1))
    assert np.all(model.std > 0)
    assert np.all(np.isfinite(sample(model, [], seed=0)))


def test_sampling_is_seeded(test_model, test_dataset) -> None:
    condition = test_dataset[1][0]
    first = sample(test_model, condition, seed=[5, 0])
    assert first.shape == (11,)
    assert np.array_equal(first, sample(test_model, condition, seed=[5, 0]))
    assert not np.array_equal(first, sample(test_model, condition, seed=[5, 1]))
    quiet = sample(test_model, condition, seed=9, stochastic=False)
    assert np.array_equal(quiet, sample(test_model, condition, seed=9, stochastic=False))


def test_a_silent_denoiser_rescales_the_initial_noise() -> None:
    schedule = NoiseSchedule(betas=np.linspace(0.05, 0.2, 5))
    network = Denoiser(4, 3, 2, [8], seed=0)
    with torch.no_grad():
        network.layers[-1].weight.zero_()
        network.layers[-1].bias.zero_()
    model = TrainedDenoiser(
        network=network, schedule=schedule, mean=np.full(4, 0.5), std=np.full(4, 2.0)
    )
    condition = np.ones(3)
    rng = np.random.default_rng(9)
    quiet = rng.standard_normal(4) / math.sqrt(schedule.alpha_bars[-1])
    assert sample(model, condition, seed=9, stochastic=False) == approx(2.0 * quiet + 0.5)
    noisy = quiet.copy()
    for t in range(schedule.T_steps, 1, -1):
        step_noise = math.sqrt(schedule.betas[t - 1]) * rng.standard_normal(4)
        noisy += step_noise / math.sqrt(schedule.alpha_bars[t - 2])
    assert sample(model, condition, seed=9) == approx(2.0 * noisy + 0.5)


def test_sample_many_streams(test_model, test_dataset) -> None:
    condition = test_dataset[1][0]
    batch = sample_many(test_model, condition, 3, seed=5)
    assert batch.shape == (3, 11)
    for index in range(3):
        single = sample(test_model, condition, seed=[5, index])
        assert np.allclose(batch[index], single, rtol=1e-7, atol=1e-9)
    assert sample_many(test_model, condition, 0, seed=5).shape == (0, 11)
    with raises(InputValidationError):
        sample_many(test_model, condition, -1, seed=5)


def test_checkpoint_round_trip(tmpdir, test_model, test_dataset) -> None:
    path = Path(tmpdir) / "models" / "denoiser.ckpt"
    save_checkpoint(path, test_model)
    assert path.read_bytes().startswith(CHECKPOINT_MAGIC)
    loaded = load_checkpoint(path)
    assert loaded.network.widths == test_model.network.widths
    assert np.array_equal(loaded.schedule.betas, test_model.schedule.betas)
    assert np.array_equal(loaded.mean, test_model.mean)
    assert np.array_equal(loaded.std, test_model.std)
    condition = test_dataset[1][0]
    assert np.array_equal(
        sample(loaded, condition, seed=1), sample(test_model, condition, seed=1)
    )


def corrupt(path: Path, payload: bytes) -> Path:
    broken = path.with_name("broken.ckpt")
    broken.write_bytes(payload)
    return broken


def test_checkpoint_errors(tmpdir, test_model) -> None:
    path = Path(tmpdir) / "denoiser.ckpt"
    with raises(FileNotFoundError):
        load_checkpoint(path)
    save_checkpoint(path, test_model)
    payload = path.read_bytes()
    wrong_version = bytearray(payload)
    wrong_version[8:12] = np.asarray([FORMAT_VERSION + 1], dtype="<u4").tobytes()
    wrong_width = bytearray(payload)
    wrong_width[32:36] = np.asarray([999], dtype="<u4").tobytes()
    for broken in (
        b"NOTACKPT" + payload[8:],
        bytes(wrong_version),
        bytes(wrong_width),
        payload[:-8],
        payload + b"\x00" * 8,
        payload[:20],
    ):
        with raises(InputValidationError):
            load_checkpoint(corrupt(path, broken))


def turn_about_z(angle: float) -> np.ndarray:
    cos, sin = math.cos(angle), math.sin(angle)
    return np.array([[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]])


@mark.slow
def test_distilled_samples_beat_gaussian_grasps(test_cylinder, test_bundled_hand) -> None:
    scene = SceneContext(target=test_cylinder, region=region_of(test_cylinder, range(2000)))
    weights = EnergyWeights()
    optimizer = OptimizerConfig(seed=0)
    inits = init_grasps(scene, test_bundled_hand, 32, optimizer)
    optimised = [
        result.grasp
        for result in optimize_candidates(scene, test_bundled_hand, inits, weights, optimizer)
    ]
    # the 50-section cylinder maps onto itself under turns of 2 pi k / 50
    turns = [turn_about_z(2.0 * math.pi * k / 50) for k in range(0, 50, 7)]
    grasps = [grasp.moved(turn, np.zeros(3)) for grasp in optimised for turn in turns]
    assert len(grasps) == 256
    vectors = grasp_vectors(grasps, test_cylinder.centroid)
    condition = encode(generate_basis(64, 0.15, 0), object_cloud(test_cylinder, 1024, 0))
    model = train(
        vectors,
        condition,
        NoiseSchedule.linear(ScheduleConfig()),
        TrainConfig(hidden_sizes=(128, 128), epochs=200),
    )
    assert model.loss_trace[-1] < 0.5 * model.loss_trace[1]

    def mean_energy(rows) -> float:
        poses = [vector_to_grasp(row).moved(np.eye(3), test_cylinder.centroid) for row in rows]
        batch = EnergyModel(scene, test_bundled_hand, weights, optimizer).evaluate(
            np.stack([pose.translation for pose in poses]),
            np.stack([pose.rotation for pose in poses]),
            np.stack([test_bundled_hand.clamp(pose.theta) for pose in poses]),
        )
        return float(batch.total.mean())

    sampled = sample_many(model, condition, 64, seed=3)
    gaussian = np.random.default_rng(3).standard_normal((64, vectors.shape[1]))
    assert mean_energy(sampled) < mean_energy(gaussian)
