import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection

import numpy as np
import pandas as pd

from PIL import Image, UnidentifiedImageError

from atd.classes.gaussian_mixture import GaussianMixturePrior, empirical_prior
from atd.classes.query_grid import QueryGrid
from atd.exc import (
    DimensionMismatchError,
    InvalidRangeError,
    RepeatMeasurementError,
    SceneParseError,
)
from atd.utils.utils import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

TARGET_SUFFIX: str = ".target.csv"
SCENE_FORMATS: tuple[str, ...] = ("csv", "pgm")
PGM_MAX_VALUES: dict[str, float] = {"L": 255.0, "I;16": 65535.0, "I;16B": 65535.0, "I": 65535.0}


@dataclass(frozen=True)
class ObservationNoise:
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.mu) or not np.isfinite(self.sigma) or self.sigma < 0:
            raise InvalidRangeError(
                f"need finite mu and sigma >= 0, got ({self.mu}, {self.sigma})", key="scene.noise"
            )

    def is_active(self) -> bool:
        return self.mu != 0.0 or self.sigma != 0.0


@dataclass(frozen=True)
class ThresholdRule:
    """
    A cell is a target when its value exceeds theta.
    """

    theta: float = 0.5

    def apply(self, grid: np.ndarray, component_mean: np.ndarray | None = None) -> np.ndarray:
        return (grid > self.theta).astype(np.float64)


@dataclass(frozen=True)
class ComponentRule:
    """
    A cell is a target when the mean of the component the scene was drawn from exceeds theta.
    """

    theta: float = 0.5

    def apply(self, grid: np.ndarray, component_mean: np.ndarray | None = None) -> np.ndarray:
        if component_mean is None:
            raise InvalidRangeError(
                "component rule needs a sampled component", key="scene.target_rule.kind"
            )
        return (component_mean > self.theta).astype(np.float64)


@dataclass(frozen=True)
class Measurement:
    location: int
    cells: np.ndarray = field(repr=False)
    content: np.ndarray
    y: float
    t: int


class Scene:
    """
    Ground-truth search space.

    :param grid: rows x cols cell values in [0, 1]
    :param target: rows x cols per-cell target ratio in [0, 1]
    :param block: query block side, must divide both dimensions
    :param noise: additive Gaussian noise on revealed content
    """

    def __init__(self, grid, target, block: int = 1, noise: ObservationNoise | None = None):
        grid = np.array(grid, dtype=np.float64, ndmin=2)
        target = np.array(target, dtype=np.float64, ndmin=2)

        if grid.ndim != 2 or grid.shape != target.shape:
            raise DimensionMismatchError(f"grid {grid.shape} and target {target.shape} differ")
        if not np.all((grid >= 0.0) & (grid <= 1.0)):
            raise SceneParseError("grid values must lie in [0, 1]")
        if not np.all((target >= 0.0) & (target <= 1.0)):
            raise SceneParseError("target ratios must lie in [0, 1]")

        self.__grid: np.ndarray = grid
        self.__target: np.ndarray = target
        self.__query_grid: QueryGrid = QueryGrid(grid.shape[0], grid.shape[1], block)
        self.__noise: ObservationNoise = noise if noise is not None else ObservationNoise()
        self.__location_targets: np.ndarray = self.__query_grid.aggregate(target)

        for arr in (self.__grid, self.__target, self.__location_targets):
            arr.setflags(write=False)

    def __str__(self) -> str:
        rows, cols = self.get_shape()
        return f"Scene(shape={rows}x{cols}, block={self.get_block()}, U={self.get_U()})"

    def __repr__(self) -> str:
        return self.__str__()

    def get_grid(self) -> np.ndarray:
        return self.__grid

    def get_target(self) -> np.ndarray:
        return self.__target

    def get_shape(self) -> tuple[int, int]:
        return self.__grid.shape

    def get_block(self) -> int:
        return self.__query_grid.get_block()

    def get_noise(self) -> ObservationNoise:
        return self.__noise

    def get_query_grid(self) -> QueryGrid:
        return self.__query_grid

    def get_N(self) -> int:
        return self.__grid.size

    def get_location_targets(self) -> np.ndarray:
        """
        Target ratio y of every query location.
        """
        return self.__location_targets

    def get_U(self) -> int:
        """
        Number of locations holding any target.
        """
        return int(np.count_nonzero(self.__location_targets > 0.0))


def measure(
    scene: Scene,
    location: int,
    rng: np.random.Generator,
    measured: Collection[int] = (),
    t: int = 0,
) -> Measurement:
    """
    Reveal the content of one query location.

    Noise, when configured, is drawn from rng and added to the revealed content only; y is always
    the ground truth.

    :param measured: locations already revealed in this episode
    :param t: measurement index recorded with the result
    """
    cells = scene.get_query_grid().cells(location)
    if location in measured:
        raise RepeatMeasurementError(f"location {location} already measured")

    content = scene.get_grid().reshape(-1)[cells].copy()
    noise = scene.get_noise()
    if noise.is_active():
        content = content + rng.normal(noise.mu, noise.sigma, size=content.size)

    y = float(scene.get_location_targets()[location])

    return Measurement(location=int(location), cells=cells, content=content, y=y, t=t)


def gen_gmm_scene(
    prior: GaussianMixturePrior,
    target_rule: ThresholdRule | ComponentRule,
    rng: np.random.Generator,
    shape: tuple[int, int] | None = None,
    block: int = 1,
    noise: ObservationNoise | None = None,
) -> Scene:
    """
    Sample a scene from a prior over [0, 1] cell values.

    :param shape: grid shape, square when omitted
    :return: the scene, clipped to [0, 1]
    """
    n = prior.get_dimension()
    if shape is None:
        side = int(round(np.sqrt(n)))
        shape = (side, side)
    if shape[0] * shape[1] != n:
        raise DimensionMismatchError(f"prior of dimension {n} for a {shape[0]}x{shape[1]} grid")

    sample, k = prior.sample(rng)
    grid = np.clip(sample, 0.0, 1.0)
    target = target_rule.apply(grid, prior.get_means()[k])

    return Scene(grid.reshape(shape), target.reshape(shape), block, noise)


def _parse_target_channel(target_channel: str) -> tuple[str, float | None]:
    if target_channel in ("sidecar", "counts"):
        return target_channel, None

    kind, _, value = target_channel.partition(":")
    if kind == "threshold":
        try:
            return kind, float(value)
        except ValueError:
            pass

    raise SceneParseError(f"unknown target channel {target_channel!r}")


def _read_csv_grid(path: Path) -> np.ndarray:
    try:
        df = pd.read_csv(path, header=None, dtype=np.float64, float_precision="round_trip")
    except FileNotFoundError as e:
        raise SceneParseError(f"scene file not found: {path}") from e
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SceneParseError(f"Error parsing {path}: {e}") from e

    grid = df.to_numpy()
    if np.isnan(grid).any():
        raise SceneParseError(f"Error parsing {path}: ragged or missing values")

    return grid


def _read_pgm_grid(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            mode = image.mode
            pixels = np.asarray(image, dtype=np.float64)
    except FileNotFoundError as e:
        raise SceneParseError(f"scene file not found: {path}") from e
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise SceneParseError(f"Error parsing {path}: {e}") from e

    if mode not in PGM_MAX_VALUES:
        raise SceneParseError(f"Error parsing {path}: unsupported image mode {mode}")

    return pixels / PGM_MAX_VALUES[mode]


def load_scene(
    path: str | Path,
    format: str | None = None,
    target_channel: str = "sidecar",
    block: int = 1,
    noise: ObservationNoise | None = None,
) -> Scene:
    """
    Load a grid from disk.

    :param format: "csv" or "pgm", taken from the suffix when omitted
    :param target_channel: "sidecar" reads <name>.target.csv next to the grid, "threshold:<theta>"
        marks cells above theta, "counts" treats the grid as counts and sets grid and target to
        count / max_count
    """
    path = Path(path)
    format = format or path.suffix.lstrip(".").lower()
    if format not in SCENE_FORMATS:
        raise SceneParseError(f"unknown scene format {format!r} for {path}")

    kind, theta = _parse_target_channel(target_channel)
    grid = _read_csv_grid(path) if format == "csv" else _read_pgm_grid(path)

    if kind == "counts":
        if np.any(grid < 0):
            raise SceneParseError(f"negative counts in {path}")
        max_count = grid.max()
        grid = grid / max_count if max_count > 0 else np.zeros_like(grid)
        target = grid.copy()
    elif kind == "threshold":
        target = (grid > theta).astype(np.float64)
    else:
        target_path = path.with_suffix(TARGET_SUFFIX)
        target = _read_csv_grid(target_path)
        if target.shape != grid.shape:
            raise SceneParseError(
                f"target {target.shape} in {target_path} does not match grid {grid.shape}"
            )

    if not np.all((grid >= 0.0) & (grid <= 1.0)):
        raise SceneParseError(f"values in {path} outside [0, 1]; use the counts channel")

    return Scene(grid, target, block, noise)


def save_scene(scene: Scene, path: str | Path, format: str | None = None) -> None:
    """
    Write a scene and its <name>.target.csv sidecar. CSV output reloads bit-identically.
    """
    path = Path(path)
    format = format or path.suffix.lstrip(".").lower()
    if format not in SCENE_FORMATS:
        raise SceneParseError(f"unknown scene format {format!r} for {path}")

    if format == "csv":
        pd.DataFrame(scene.get_grid()).to_csv(
            path, header=False, index=False, float_format=CSV_FLOAT_FORMAT
        )
    else:
        pixels = np.round(scene.get_grid() * 255.0).astype(np.uint8)
        Image.fromarray(pixels).save(path, format="PPM")

    pd.DataFrame(scene.get_target()).to_csv(
        path.with_suffix(TARGET_SUFFIX), header=False, index=False, float_format=CSV_FLOAT_FORMAT
    )


def load_empirical_prior(
    directory: str | Path, variance: float, target_channel: str = "threshold:0.5"
) -> GaussianMixturePrior:
    """
    Empirical-Bayes prior from every csv / pgm grid in a directory, in name order.
    """
    directory = Path(directory)
    files = sorted(
        p
        for p in directory.iterdir()
        if p.suffix.lower() in (".csv", ".pgm") and not p.name.endswith(TARGET_SUFFIX)
    )
    grids = []

    for file in files:
        try:
            grids.append(load_scene(file, target_channel=target_channel).get_grid())
        except SceneParseError as e:
            logger.warning(f"Error processing {file}: {e}")

    shapes = {g.shape for g in grids}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"corpus grids in {directory} have shapes {sorted(shapes)}")

    logger.info(f"Empirical prior from {len(grids)} grids in {directory}")

    return empirical_prior(grids, variance)
