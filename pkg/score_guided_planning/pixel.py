"""
Single integrator observed and actuated through images.

The latent state ``x`` lives in a 2-D box and is observed as a G x G image
with a Gaussian blob at ``x``. Controls are G x G images too: the applied
control is the intensity-weighted average of a control grid after the image
is normalized to unit sum. Both grids leave ``margin`` pixels on every side
so a blob at the edge of the range is not cut off.

Images are flattened row-major (index ``row * G + col``, rows along the
second coordinate) wherever they meet a dynamics model or planner.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .environments import Box, Env, EnvSpec, Region, TrajectoryReward
from .errors import ConfigError, DomainError, ShapeError

logger = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass(frozen=True)
class PixelParams:
    grid_size: int = 16
    state_low: float = -1.0
    state_high: float = 1.0
    control_low: float = -0.2
    control_high: float = 0.2
    blob_std: float = 1.0
    margin: int = 2
    horizon: int = 15
    q: float = 500.0
    r: float = 6.5
    q_terminal: float = 1000.0
    start: tuple[float, float] = (-0.6, -0.6)
    goal: tuple[float, float] = (0.6, 0.6)

    def __post_init__(self):
        if self.grid_size < 4:
            raise ConfigError(f"grid_size must be >= 4, got {self.grid_size}")
        if self.grid_size - 1 - 2 * self.margin < 1:
            raise ConfigError(f"margin {self.margin} leaves no interior on a {self.grid_size} grid")
        if self.blob_std <= 0:
            raise ConfigError("blob_std must be > 0")


def _pitch(params: PixelParams, low: float, high: float) -> float:
    return (high - low) / (params.grid_size - 1 - 2 * params.margin)


def grid_values(params: PixelParams, low: float, high: float) -> np.ndarray:
    """``(G*G, 2)`` coordinates of every pixel center, flattened row-major."""
    G = params.grid_size
    axis = low + (np.arange(G) - params.margin) * _pitch(params, low, high)
    cols, rows = np.meshgrid(axis, axis)
    return np.stack([cols.ravel(), rows.ravel()], axis=-1)


def state_grid(params: PixelParams) -> np.ndarray:
    return grid_values(params, params.state_low, params.state_high)


def control_grid(params: PixelParams) -> np.ndarray:
    return grid_values(params, params.control_low, params.control_high)


def state_pitch(params: PixelParams) -> float:
    return _pitch(params, params.state_low, params.state_high)


def _render(grid: np.ndarray, pitch: float, blob_std: float, x: np.ndarray) -> np.ndarray:
    d2 = np.sum((x[..., None, :] - grid) ** 2, axis=-1)
    img = np.exp(-d2 / (2.0 * (blob_std * pitch) ** 2))
    return img / np.sum(img, axis=-1, keepdims=True)


def pixel_render(params: PixelParams, x) -> np.ndarray:
    """
    Render latent state(s) ``x`` (``(..., 2)``) as flattened unit-sum images.

    States outside the state range are clamped with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    clamped = np.clip(x, params.state_low, params.state_high)
    if np.any(clamped != x):
        logger.warning(f"Pixel state outside [{params.state_low}, {params.state_high}]; clamped")
    return _render(state_grid(params), state_pitch(params), params.blob_std, clamped)


def render_control(params: PixelParams, u) -> np.ndarray:
    """Blob image whose decoded control is (approximately) ``u``."""
    u = np.clip(np.asarray(u, dtype=np.float64), params.control_low, params.control_high)
    pitch = _pitch(params, params.control_low, params.control_high)
    return _render(control_grid(params), pitch, params.blob_std, u)


def _weighted_average(grid: np.ndarray, image: np.ndarray, G: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim >= 2 and image.shape[-2:] == (G, G):
        image = image.reshape(image.shape[:-2] + (G * G,))
    if image.shape[-1] != G * G:
        raise ShapeError(f"Expected a {G}x{G} image, got shape {image.shape}")
    total = np.sum(image, axis=-1, keepdims=True)
    if np.any(np.abs(total) <= _EPS):
        raise DomainError("Cannot take the spatial average of an all-zero image")
    return (image / total) @ grid


def pixel_extract_state(params: PixelParams, image) -> np.ndarray:
    """Intensity-weighted average of the state grid."""
    return _weighted_average(state_grid(params), image, params.grid_size)


def pixel_extract_control(params: PixelParams, image) -> np.ndarray:
    """Control decoded from an image; negative pixels count as zero."""
    weights = np.maximum(np.asarray(image, dtype=np.float64), 0.0)
    return _weighted_average(control_grid(params), weights, params.grid_size)


def pixel_step(params: PixelParams, y, u_image) -> np.ndarray:
    x = pixel_extract_state(params, y)
    u = pixel_extract_control(params, u_image)
    x_next = np.clip(x + u, params.state_low, params.state_high)
    return pixel_render(params, x_next)


def pixel_cost_terms(params: PixelParams, x_seq, u_seq, goal=None) -> tuple[float, float]:
    """(running, terminal) cost of a decoded trajectory ``x_seq`` (T+1, 2), ``u_seq`` (T, 2)."""
    goal = np.asarray(params.goal if goal is None else goal, dtype=np.float64)
    x_seq = np.asarray(x_seq, dtype=np.float64)
    u_seq = np.asarray(u_seq, dtype=np.float64)
    err = x_seq - goal
    running = params.q * float(np.sum(err[:-1] ** 2)) + params.r * float(np.sum(u_seq**2))
    terminal = params.q_terminal * float(np.sum(err[-1] ** 2))
    return running, terminal


def pixel_cost(params: PixelParams, x_seq, u_seq, goal=None) -> float:
    running, terminal = pixel_cost_terms(params, x_seq, u_seq, goal)
    return running + terminal


class PixelReward(TrajectoryReward):
    """
    Negative pixel cost evaluated on images.

    Observations decode linearly (no renormalization, so a model's predicted
    image is differentiable everywhere); control images are normalized to unit
    sum before decoding.
    """

    def __init__(self, params: PixelParams):
        self.params = params
        self.goal = np.asarray(params.goal, dtype=np.float64)
        self._sgrid = state_grid(params)
        self._cgrid = control_grid(params)

    def decode_state(self, y):
        return ad.matmul(y, self._sgrid)

    def decode_control(self, u_img):
        total = ad.add(ad.sum(u_img, axis=-1, keepdims=True), _EPS)
        return ad.matmul(ad.div(u_img, total), self._cgrid)

    def running(self, t, y, u_img):
        err = ad.sub(self.decode_state(y), self.goal)
        u = self.decode_control(u_img)
        return ad.neg(
            ad.add(
                ad.mul(self.params.q, ad.sum(ad.square(err), axis=-1)),
                ad.mul(self.params.r, ad.sum(ad.square(u), axis=-1)),
            )
        )

    def terminal(self, y):
        err = ad.sub(self.decode_state(y), self.goal)
        return ad.neg(ad.mul(self.params.q_terminal, ad.sum(ad.square(err), axis=-1)))


class PixelEnv(Env):
    def __init__(self, params: PixelParams | None = None):
        self.params = params or PixelParams()
        p = self.params
        d = p.grid_size * p.grid_size
        self.latent_state_box = Box([p.state_low] * 2, [p.state_high] * 2)
        self.latent_action_box = Box([p.control_low] * 2, [p.control_high] * 2)
        unit = Box(np.zeros(d), np.ones(d))
        self.spec = EnvSpec(
            name="pixel",
            n=d,
            m=d,
            action_box=unit,
            state_box=unit,
            episode_length=p.horizon,
            cost="running ||x_t - goal||_Q^2 + ||u_t||_R^2, terminal ||x_T - goal||_QT^2 (decoded)",
        )
        self.start = np.array(p.start, dtype=np.float64)
        self.goal = np.array(p.goal, dtype=np.float64)
        self.data_region = Region(self.latent_state_box)
        self.reward = PixelReward(p)

    def step(self, y, u_image):
        return pixel_step(self.params, y, u_image)

    def encode_state(self, latent):
        return pixel_render(self.params, latent)

    def encode_action(self, latent):
        return render_control(self.params, latent)

    def decode_state(self, obs):
        return pixel_extract_state(self.params, obs)

    def decode_action(self, u_image):
        return pixel_extract_control(self.params, u_image)

    def cost(self, x_seq, u_seq) -> float:
        """True pixel cost of an image trajectory (decoded with renormalization)."""
        return pixel_cost(self.params, self.decode_state(x_seq), self.decode_action(u_seq))


def write_pgm_sequence(
    images, directory: str | os.PathLike, grid_size: int, prefix: str = "frame"
) -> list[Path]:
    """Write each flattened image as an 8-bit binary PGM scaled to its own maximum."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(np.asarray(images, dtype=np.float64)):
        img = img.reshape(grid_size, grid_size)
        peak = img.max()
        scaled = np.zeros_like(img) if peak <= 0 else np.clip(img / peak, 0.0, 1.0)
        pixels = np.round(scaled * 255).astype(np.uint8)
        path = out / f"{prefix}_{i:03d}.pgm"
        with open(path, "wb") as f:
            f.write(f"P5\n{grid_size} {grid_size}\n255\n".encode("ascii"))
            f.write(pixels.tobytes())
        paths.append(path)
    return paths
