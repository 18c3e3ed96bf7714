"""Basis point set encoding and a small denoising diffusion model over
flat grasp vectors conditioned on the encoding.

Grasp vectors are translation (3), the first two rotation columns (6) and
the joint angles. Training and sampling work on standardised vectors; the
statistics travel with the model and its checkpoint.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree
from torch import nn

from . import FORMAT_VERSION
from .errors import DegenerateGeometryError, InputValidationError
from .geometry import FloatArray, as_points
from .grasp_dataclasses.config import ScheduleConfig, TrainConfig
from .hand_model import GraspPose

logger = logging.getLogger(__name__)

POSE_DIM = 9
PARALLEL_EPSILON = 1e-6
STD_FLOOR = 1e-8
MAX_BETA = 0.999
CHECKPOINT_MAGIC = b"SGBDENO1"
UINT32 = np.dtype("<u4")
FLOAT64 = np.dtype("<f8")


@dataclass(kw_only=True, frozen=True, eq=False)
class BasisPointSet:
    """Fixed points drawn uniformly inside a ball"""

    points: FloatArray
    radius: float
    seed: int

    def __len__(self) -> int:
        return len(self.points)


def generate_basis(n_b: int, radius: float, seed: int) -> BasisPointSet:
    """Uniform-in-ball points by seeded rejection sampling from the cube

    Raises:
        InputValidationError: if n_b < 1 or radius <= 0
    """
    if n_b < 1:
        raise InputValidationError(f"basis needs at least one point, got {n_b}")
    if radius <= 0:
        raise InputValidationError(f"basis radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    accepted: list[FloatArray] = []
    total = 0
    while total < n_b:
        draws = rng.uniform(-radius, radius, size=(2 * n_b, 3))
        inside = draws[np.einsum("ij,ij->i", draws, draws) <= radius * radius]
        accepted.append(inside)
        total += len(inside)
    points = np.concatenate(accepted)[:n_b]
    points.setflags(write=False)
    return BasisPointSet(points=points, radius=float(radius), seed=seed)


def encode(bps: BasisPointSet, cloud: ArrayLike) -> FloatArray:
    """Distance from every basis point to its nearest cloud point

    Raises:
        InputValidationError: if the cloud is empty
    """
    points = as_points(cloud)
    if not len(points):
        raise InputValidationError("cannot encode an empty point cloud")
    distances, _ = cKDTree(points).query(bps.points)
    encoding: FloatArray = np.asarray(distances, dtype=np.float64)
    return encoding


def grasp_to_vector(grasp: GraspPose) -> FloatArray:
    rotation = grasp.rotation
    vector: FloatArray = np.concatenate(
        (grasp.translation, rotation[:, 0], rotation[:, 1], grasp.theta)
    )
    return vector


def orthonormalise(first: FloatArray, second: FloatArray) -> FloatArray:
    """Rotation whose first two columns follow the given vectors

    Raises:
        DegenerateGeometryError: if a column vanishes or the two are near-parallel
    """
    norm_first = float(np.linalg.norm(first))
    norm_second = float(np.linalg.norm(second))
    if norm_first < PARALLEL_EPSILON or norm_second < PARALLEL_EPSILON:
        raise DegenerateGeometryError("rotation columns must be non-zero")
    b1 = first / norm_first
    if float(np.linalg.norm(np.cross(b1, second / norm_second))) < PARALLEL_EPSILON:
        raise DegenerateGeometryError("rotation columns are near-parallel")
    b2 = second - np.dot(b1, second) * b1
    b2 = b2 / np.linalg.norm(b2)
    return np.stack((b1, b2, np.cross(b1, b2)), axis=1)


def vector_to_grasp(vector: ArrayLike) -> GraspPose:
    """Decode a grasp vector, re-orthonormalising the rotation columns

    Raises:
        InputValidationError: if the vector is shorter than the pose block
        DegenerateGeometryError: if the rotation columns are degenerate
    """
    values = np.asarray(vector, dtype=np.float64).reshape(-1)
    if len(values) < POSE_DIM:
        raise InputValidationError(f"grasp vector needs at least {POSE_DIM} entries")
    rotation = orthonormalise(values[3:6], values[6:9])
    return GraspPose.from_matrix(values[:3], rotation, values[POSE_DIM:])


@dataclass(kw_only=True, frozen=True, eq=False)
class NoiseSchedule:
    """Linear betas with their alphas and cumulative products, indexed t - 1"""

    betas: FloatArray
    alphas: FloatArray = field(init=False)
    alpha_bars: FloatArray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.array(self.betas, dtype=np.float64).reshape(-1)
        if not len(betas) or np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise InputValidationError("betas must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for arr in (betas, alphas, alpha_bars):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T_steps(self) -> int:  # pylint: disable=invalid-name
        return len(self.betas)

    @classmethod
    def linear(cls, config: ScheduleConfig) -> "NoiseSchedule":
        """Betas spaced linearly over T_steps, scaled by reference_steps / T_steps"""
        scale = config.reference_steps / config.T_steps
        betas = np.linspace(config.beta_start, config.beta_end, config.T_steps) * scale
        return cls(betas=np.minimum(betas, MAX_BETA))

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T_steps:
            raise InputValidationError(f"step {t} is outside [1, {self.T_steps}]")


def forward_noise(
    x0: ArrayLike, t: int, schedule: NoiseSchedule, seed: int | Sequence[int]
) -> tuple[FloatArray, FloatArray]:
    """Noised vector at step t and the standard normal noise used

    Raises:
        InputValidationError: if t is outside [1, T_steps]
    """
    schedule.check_step(t)
    clean = np.asarray(x0, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(clean.shape)
    alpha_bar = schedule.alpha_bars[t - 1]
    noised: FloatArray = math.sqrt(alpha_bar) * clean + math.sqrt(1.0 - alpha_bar) * eps
    return noised, eps


def time_embedding(steps: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer steps, shape (B, dim)"""
    steps = steps.to(torch.float64).reshape(-1, 1)
    if dim == 0:
        return steps.new_zeros((steps.shape[0], 0))
    half = dim // 2
    frequencies = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1)
    )
    angles = steps * frequencies
    embedding = torch.cat((torch.sin(angles), torch.cos(angles)), dim=1)
    if dim % 2:
        embedding = torch.cat((embedding, steps.new_zeros((steps.shape[0], 1))), dim=1)
    return embedding


class Denoiser(nn.Module):
    """Fully connected noise predictor on [x_t, condition, time embedding]"""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        vector_dim: int,
        condition_dim: int,
        time_embedding_dim: int,
        hidden_sizes: Sequence[int],
        seed: int = 0,
    ) -> None:
        super().__init__()
        self.vector_dim = vector_dim
        self.condition_dim = condition_dim
        self.time_embedding_dim = time_embedding_dim
        widths = [vector_dim + condition_dim + time_embedding_dim, *hidden_sizes, vector_dim]
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1], dtype=torch.float64)
            for i in range(len(widths) - 1)
        )
        self.activation = nn.SiLU()
        generator = torch.Generator().manual_seed(seed)

        def uniform(shape: torch.Size, bound: float) -> torch.Tensor:
            draws = torch.rand(shape, generator=generator, dtype=torch.float64)
            return (draws * 2.0 - 1.0) * bound

        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.copy_(uniform(layer.weight.shape, bound))
                layer.bias.copy_(uniform(layer.bias.shape, bound))

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].in_features] + [layer.out_features for layer in self.layers]

    def forward(
        self, noised: torch.Tensor, condition: torch.Tensor, steps: torch.Tensor
    ) -> torch.Tensor:
        hidden = torch.cat(
            (noised, condition, time_embedding(steps, self.time_embedding_dim)), dim=1
        )
        for layer in self.layers[:-1]:
            hidden = self.activation(layer(hidden))
        output: torch.Tensor = self.layers[-1](hidden)
        return output


@dataclass(kw_only=True, eq=False)
class TrainedDenoiser:
    """Network, schedule and vector standardisation of a trained model

    Attr:
        network (Denoiser): the noise predictor
        schedule (NoiseSchedule): the schedule it was trained under
        mean (FloatArray): per-coordinate mean of the training vectors
        std (FloatArray): per-coordinate spread, floored away from zero
        loss_trace (list[float]): loss before training, then after each epoch
    """

    network: Denoiser
    schedule: NoiseSchedule
    mean: FloatArray
    std: FloatArray
    loss_trace: list[float] = field(default_factory=list)

    def standardise(self, vectors: ArrayLike) -> FloatArray:
        scaled: FloatArray = (np.asarray(vectors, dtype=np.float64) - self.mean) / self.std
        return scaled

    def restore(self, scaled: ArrayLike) -> FloatArray:
        vectors: FloatArray = np.asarray(scaled, dtype=np.float64) * self.std + self.mean
        return vectors


def _condition_rows(conditions: ArrayLike, count: int) -> FloatArray:
    """Conditions as a (count, C) array, C possibly zero

    A single 1-D encoding is shared by every row.

    Raises:
        InputValidationError: if the rows do not match `count`
    """
    values = np.asarray(conditions, dtype=np.float64)
    if values.size == 0:
        return np.zeros((count, 0))
    if values.ndim == 1:
        return np.array(np.broadcast_to(values, (count, values.size)))
    if values.ndim != 2 or len(values) != count:
        raise InputValidationError(
            f"expected {count} condition rows, got an array of shape {values.shape}"
        )
    rows: FloatArray = values
    return rows


def _noise_loss(  # pylint: disable=too-many-arguments
    network: Denoiser,
    schedule: NoiseSchedule,
    clean: torch.Tensor,
    condition: torch.Tensor,
    steps: np.ndarray,
    eps: np.ndarray,
) -> torch.Tensor:
    alpha_bar = torch.from_numpy(schedule.alpha_bars[steps - 1]).reshape(-1, 1)
    noise = torch.from_numpy(eps)
    noised = torch.sqrt(alpha_bar) * clean + torch.sqrt(1.0 - alpha_bar) * noise
    predicted = network(noised, condition, torch.from_numpy(steps))
    return torch.mean((predicted - noise) ** 2)


def train(
    vectors: ArrayLike,
    conditions: ArrayLike,
    schedule: NoiseSchedule,
    config: TrainConfig,
) -> TrainedDenoiser:
    """Fit the noise predictor by minibatch Adam on the squared noise error

    The loss trace is measured on one fixed seeded draw of steps and noise
    over the whole dataset, before training and after every epoch.

    Raises:
        InputValidationError: if the dataset is empty or shapes disagree
    """
    data = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if not data.size:
        raise InputValidationError("cannot train on an empty dataset")
    cond = _condition_rows(conditions, len(data))
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), STD_FLOOR)
    model = TrainedDenoiser(
        network=Denoiser(
            data.shape[1],
            cond.shape[1],
            config.time_embedding_dim,
            config.hidden_sizes,
            seed=config.seed,
        ),
        schedule=schedule,
        mean=mean,
        std=std,
    )
    clean = torch.from_numpy(model.standardise(data))
    condition = torch.from_numpy(cond)
    rng = np.random.default_rng([config.seed, 0])
    held = np.random.default_rng([config.seed, 1])
    held_steps = held.integers(1, schedule.T_steps + 1, len(data))
    held_eps = held.standard_normal(data.shape)

    def held_loss() -> float:
        with torch.no_grad():
            return float(
                _noise_loss(model.network, schedule, clean, condition, held_steps, held_eps)
            )

    optimizer = torch.optim.Adam(model.network.parameters(), lr=config.learning_rate)
    model.loss_trace.append(held_loss())
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            batch = order[start : start + config.batch_size]
            steps = rng.integers(1, schedule.T_steps + 1, len(batch))
            eps = rng.standard_normal((len(batch), data.shape[1]))
            optimizer.zero_grad()
            rows = torch.from_numpy(batch)
            loss = _noise_loss(
                model.network, schedule, clean[rows], condition[rows], steps, eps
            )
            loss.backward()
            optimizer.step()
        model.loss_trace.append(held_loss())
        logger.debug("epoch %d: loss %.6g", epoch + 1, model.loss_trace[-1])
    logger.info(
        "trained on %d vectors for %d epochs: loss %.6g -> %.6g",
        len(data),
        config.epochs,
        model.loss_trace[0],
        model.loss_trace[-1],
    )
    return model


def _ancestral(
    model: TrainedDenoiser,
    conditions: FloatArray,
    rngs: Sequence[np.random.Generator],
    stochastic: bool,
) -> FloatArray:
    schedule = model.schedule
    dim = model.network.vector_dim
    state = np.stack([rng.standard_normal(dim) for rng in rngs])
    condition = torch.from_numpy(conditions)
    for t in range(schedule.T_steps, 0, -1):
        with torch.no_grad():
            predicted = model.network(
                torch.from_numpy(state), condition, torch.full((len(rngs),), t)
            ).numpy()
        beta = schedule.betas[t - 1]
        scale = beta / math.sqrt(1.0 - schedule.alpha_bars[t - 1])
        state = (state - scale * predicted) / math.sqrt(schedule.alphas[t - 1])
        if t > 1 and stochastic:
            state = state + math.sqrt(beta) * np.stack(
                [rng.standard_normal(dim) for rng in rngs]
            )
    return model.restore(state)


def sample(
    model: TrainedDenoiser,
    bps_condition: ArrayLike,
    seed: int | Sequence[int],
    stochastic: bool = True,
) -> FloatArray:
    """One grasp vector by ancestral denoising from seeded noise

    Per-step noise has variance beta_t and is skipped at the last step, or
    everywhere when `stochastic` is False.
    """
    condition = _condition_rows(bps_condition, 1)
    vector: FloatArray = _ancestral(
        model, condition, [np.random.default_rng(seed)], stochastic
    )[0]
    return vector


def sample_many(
    model: TrainedDenoiser, bps_condition: ArrayLike, count: int, seed: int
) -> FloatArray:
    """`count` vectors, sample i drawn from the stream (seed, i)"""
    if count < 0:
        raise InputValidationError(f"sample count must be >= 0, got {count}")
    if count == 0:
        return np.zeros((0, model.network.vector_dim))
    condition = np.tile(_condition_rows(bps_condition, 1), (count, 1))
    rngs = [np.random.default_rng([seed, index]) for index in range(count)]
    return _ancestral(model, condition, rngs, stochastic=True)


def save_checkpoint(path: Path, model: TrainedDenoiser) -> None:
    """Write the little-endian binary checkpoint"""
    network = model.network
    widths = network.widths
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as checkpoint:
        checkpoint.write(CHECKPOINT_MAGIC)
        header = [
            FORMAT_VERSION,
            network.vector_dim,
            network.condition_dim,
            network.time_embedding_dim,
            len(network.layers),
            model.schedule.T_steps,
        ]
        checkpoint.write(np.asarray(header, dtype=UINT32).tobytes())
        checkpoint.write(np.asarray(widths, dtype=UINT32).tobytes())
        for layer in network.layers:
            checkpoint.write(layer.weight.detach().numpy().astype(FLOAT64).tobytes(order="C"))
            checkpoint.write(layer.bias.detach().numpy().astype(FLOAT64).tobytes())
        for values in (model.schedule.betas, model.mean, model.std):
            checkpoint.write(np.asarray(values, dtype=FLOAT64).tobytes())
    logger.info("wrote checkpoint %s (%d layers)", path, len(network.layers))


class _Reader:
    def __init__(self, payload: bytes, path: Path) -> None:
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, dtype: np.dtype, count: int) -> np.ndarray:
        size = dtype.itemsize * count
        if self.offset + size > len(self.payload):
            raise InputValidationError(f"{self.path} is truncated")
        values = np.frombuffer(self.payload, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return values.astype(dtype.newbyteorder("="))


def load_checkpoint(path: Path) -> TrainedDenoiser:
    """Read a checkpoint written by save_checkpoint

    Raises:
        FileNotFoundError: if the file does not exist
        InputValidationError: on a wrong magic, version, layout or length
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = path.read_bytes()
    if not payload.startswith(CHECKPOINT_MAGIC):
        raise InputValidationError(f"{path} is not a denoiser checkpoint")
    reader = _Reader(payload, path)
    reader.offset = len(CHECKPOINT_MAGIC)
    version, vector_dim, condition_dim, embed_dim, layer_count, t_steps = (
        int(value) for value in reader.take(UINT32, 6)
    )
    if version != FORMAT_VERSION:
        raise InputValidationError(f"{path} has checkpoint version {version}")
    widths = [int(value) for value in reader.take(UINT32, layer_count + 1)]
    if (
        layer_count < 1
        or widths[0] != vector_dim + condition_dim + embed_dim
        or widths[-1] != vector_dim
    ):
        raise InputValidationError(f"{path} has inconsistent layer widths {widths}")
    network = Denoiser(vector_dim, condition_dim, embed_dim, widths[1:-1])
    with torch.no_grad():
        for layer, (fan_in, fan_out) in zip(network.layers, zip(widths[:-1], widths[1:])):
            weight = reader.take(FLOAT64, fan_in * fan_out).reshape(fan_out, fan_in)
            layer.weight.copy_(torch.from_numpy(weight))
            layer.bias.copy_(torch.from_numpy(reader.take(FLOAT64, fan_out)))
    betas = reader.take(FLOAT64, t_steps)
    mean = reader.take(FLOAT64, vector_dim)
    std = reader.take(FLOAT64, vector_dim)
    if reader.offset != len(payload):
        raise InputValidationError(f"{path} has {len(payload) - reader.offset} trailing bytes")
    logger.info("loaded checkpoint %s (%d layers, %d steps)", path, layer_count, t_steps)
    return TrainedDenoiser(
        network=network, schedule=NoiseSchedule(betas=betas), mean=mean, std=std
    )


def grasp_vectors(grasps: Sequence[GraspPose], origin: Optional[ArrayLike] = None) -> FloatArray:
    """Stacked grasp vectors with translations taken relative to `origin`"""
    shift = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    return np.stack(
        [grasp_to_vector(grasp.moved(np.eye(3), -shift)) for grasp in grasps]
    )
