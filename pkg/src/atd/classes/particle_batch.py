import logging

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from scipy.special import logsumexp

from atd.classes.guided_diffusion import GuidanceConfig, Observations, ScoreFn, reverse_step, tweedie_denoise
from atd.classes.noise_schedule import NoiseSchedule
from atd.classes.query_grid import QueryGrid
from atd.exc import (
    DimensionMismatchError,
    ExhaustedCandidatesError,
    InvalidRangeError,
    OracleSizeError,
    UnknownLocationError,
)
from atd.utils.utils import write_frame

logger = logging.getLogger(__name__)

ORACLE_MAX_PARTICLES: int = 4
ORACLE_MAX_CANDIDATES: int = 16
ORACLE_TIE_RTOL: float = 1e-9
WEIGHT_TOLERANCE: float = 1e-12
SCORE_FIELD_COLUMNS: list[str] = ["t", "location", "expl", "likeli", "reward", "exploit", "combined"]

RewardFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BeliefConfig:
    """
    :param sigma_x2: variance of every belief component
    :param weights: mixture weights, uniform when None; only the marginal entropy uses them
    """

    sigma_x2: float = 1.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not np.isfinite(self.sigma_x2) or self.sigma_x2 <= 0:
            raise InvalidRangeError(f"must be > 0, got {self.sigma_x2}", key="belief.sigma_x2")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOLERANCE:
                raise InvalidRangeError("weights must be non-negative and sum to 1", key="belief.weights")

    def weight_vector(self, n_b: int) -> np.ndarray:
        if self.weights is None:
            return np.full(n_b, 1.0 / n_b)
        if len(self.weights) != n_b:
            raise DimensionMismatchError(f"{len(self.weights)} weights for {n_b} particles")

        return np.asarray(self.weights, dtype=np.float64)


class ParticleBatch:
    """
    N_B diffusion states together with their denoised means, at one reverse step.

    A batch is a snapshot: advancing returns a new batch whose denoised means are regenerated for
    the new step. At tau = 0 the particles are final samples and are their own means.
    """

    def __init__(self, particles, denoised, tau: int):
        particles = np.array(particles, dtype=np.float64)
        denoised = np.array(denoised, dtype=np.float64)

        if particles.ndim != 2 or particles.shape != denoised.shape:
            raise DimensionMismatchError(
                f"particles {particles.shape} and denoised means {denoised.shape} differ"
            )
        if particles.shape[0] < 2:
            raise InvalidRangeError(f"need at least 2 particles, got {particles.shape[0]}", key="belief.n_b")

        particles.setflags(write=False)
        denoised.setflags(write=False)
        self.__particles: np.ndarray = particles
        self.__denoised: np.ndarray = denoised
        self.__tau: int = int(tau)

    def __str__(self) -> str:
        return f"ParticleBatch(n_b={self.get_n_b()}, N={self.get_dimension()}, tau={self.__tau})"

    def __repr__(self) -> str:
        return self.__str__()

    def get_particles(self) -> np.ndarray:
        return self.__particles

    def get_denoised(self) -> np.ndarray:
        return self.__denoised

    def get_tau(self) -> int:
        return self.__tau

    def get_n_b(self) -> int:
        return self.__particles.shape[0]

    def get_dimension(self) -> int:
        return self.__particles.shape[1]

    @classmethod
    def initialize(
        cls, dimension: int, rngs: list[np.random.Generator], score_fn: ScoreFn, sched: NoiseSchedule
    ) -> "ParticleBatch":
        """
        Standard normal start at tau = T, one generator per particle.
        """
        x = np.stack([rng.standard_normal(dimension) for rng in rngs])
        tau = sched.get_T()

        return cls(x, tweedie_denoise(x, tau, score_fn, sched), tau)

    def advance(
        self,
        observed: Observations,
        cfg: GuidanceConfig,
        score_fn: ScoreFn,
        sched: NoiseSchedule,
        rngs: list[np.random.Generator],
    ) -> "ParticleBatch":
        """
        One guided reverse step tau -> tau - 1 for every particle.
        """
        if self.__tau < 1:
            raise InvalidRangeError("the batch is already fully denoised", key="tau")
        if len(rngs) != self.get_n_b():
            raise DimensionMismatchError(f"{len(rngs)} generators for {self.get_n_b()} particles")

        z = np.stack([rng.standard_normal(self.get_dimension()) for rng in rngs])
        x = reverse_step(
            self.__particles, self.__denoised, self.__tau, z, observed, cfg, score_fn, sched
        )
        tau = self.__tau - 1
        denoised = tweedie_denoise(x, tau, score_fn, sched) if tau >= 1 else x

        return ParticleBatch(x, denoised, tau)

    def mean(self) -> np.ndarray:
        return self.__particles.mean(axis=0)


def _location_values(batch: ParticleBatch, location: int, grid: QueryGrid | None) -> np.ndarray:
    if grid is None:
        if not 0 <= location < batch.get_dimension():
            raise UnknownLocationError(f"location {location} outside 0..{batch.get_dimension() - 1}")
        return batch.get_denoised()[:, [location]]

    return batch.get_denoised()[:, grid.cells(location)]


def _pairwise_sq(values: np.ndarray) -> np.ndarray:
    """
    :param values: P x ... x c values per particle
    :return: P x P x ... squared distances summed over the last axis
    """
    diff = values[:, None] - values[None, :]
    return np.sum(diff * diff, axis=-1)


def marginal_entropy(batch: ParticleBatch, cfg: BeliefConfig) -> float:
    """
    sum_i a_i log sum_j a_j exp(||x_i - x_j||^2 / (2 sigma_x^2)) over the full denoised means.

    The exponent is positive: the value ranks candidate measurement sets and is not the entropy of
    the mixture itself.
    """
    weights = cfg.weight_vector(batch.get_n_b())
    sq = _pairwise_sq(batch.get_denoised())
    inner = logsumexp(sq / (2.0 * cfg.sigma_x2), b=weights[None, :], axis=1)

    return float(np.dot(weights, inner))


def exploration_score(
    batch: ParticleBatch, location: int, cfg: BeliefConfig, grid: QueryGrid | None = None
) -> float:
    """
    Pairwise disagreement of the denoised means at a location,
    sum_ij sum_c ([x_i]_c - [x_j]_c)^2 / (2 sigma_x^2) over the location's cells c.

    :param grid: block partition; locations are cells when omitted
    """
    sq = _pairwise_sq(_location_values(batch, location, grid))
    return float(np.sum(sq) / (2.0 * cfg.sigma_x2))


def likelihood_score(
    batch: ParticleBatch, location: int, cfg: BeliefConfig, grid: QueryGrid | None = None
) -> float:
    """
    sum_ij exp(-sum_c ([x_i]_c - [x_j]_c)^2 / (2 sigma_x^2)), in (0, N_B^2].
    """
    sq = _pairwise_sq(_location_values(batch, location, grid))
    return float(np.sum(np.exp(-sq / (2.0 * cfg.sigma_x2))))


def exploitation_score(
    batch: ParticleBatch,
    location: int,
    cfg: BeliefConfig,
    reward_fn: RewardFn,
    grid: QueryGrid | None = None,
) -> float:
    """
    Likelihood score times the summed predicted reward of every particle's patch at the location.
    """
    patches = _location_values(batch, location, grid)
    rewards = np.asarray(reward_fn(patches), dtype=np.float64)

    return likelihood_score(batch, location, cfg, grid) * float(np.sum(rewards))


@dataclass(frozen=True)
class ScoreField:
    """
    Per-candidate score components at one measurement step.
    """

    locations: np.ndarray
    expl: np.ndarray
    likeli: np.ndarray
    reward: np.ndarray
    exploit: np.ndarray
    combined: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return int(self.locations.size)

    def with_combined(self, combined: np.ndarray) -> "ScoreField":
        return replace(self, combined=np.asarray(combined, dtype=np.float64))

    def index_of(self, location: int) -> int:
        idx = np.flatnonzero(self.locations == location)
        if idx.size == 0:
            raise UnknownLocationError(f"location {location} is not a candidate")

        return int(idx[0])

    def to_frame(self, t: int | None = None) -> pd.DataFrame:
        n = len(self)
        df = pd.DataFrame(
            {
                "location": self.locations,
                "expl": self.expl,
                "likeli": self.likeli,
                "reward": self.reward,
                "exploit": self.exploit,
                "combined": self.combined if self.combined is not None else np.full(n, np.nan),
            }
        )
        if t is not None:
            df.insert(0, "t", np.full(n, t, dtype=np.int64))

        return df

    def to_csv(self, path: str | Path, t: int | None = None) -> None:
        write_frame(self.to_frame(t), path)


def score_field(
    batch: ParticleBatch,
    candidates,
    cfg: BeliefConfig,
    reward_fn: RewardFn,
    grid: QueryGrid,
) -> ScoreField:
    """
    All score components over the candidate locations at once.
    """
    locations = np.asarray(candidates, dtype=np.int64)
    if locations.size == 0:
        raise ExhaustedCandidatesError("no candidate locations left")
    for location in (locations.min(), locations.max()):
        grid.check_location(int(location))
    if grid.get_n_cells() != batch.get_dimension():
        raise DimensionMismatchError(f"grid of {grid.get_n_cells()} cells for dimension {batch.get_dimension()}")

    cells = grid.get_coordinates()[locations]
    values = batch.get_denoised()[:, cells]
    sq = _pairwise_sq(values)

    expl = sq.sum(axis=(0, 1)) / (2.0 * cfg.sigma_x2)
    likeli = np.exp(-sq / (2.0 * cfg.sigma_x2)).sum(axis=(0, 1))

    n_b, n_loc, patch = values.shape
    rewards = np.asarray(reward_fn(values.reshape(n_b * n_loc, patch)), dtype=np.float64)
    reward = rewards.reshape(n_b, n_loc).sum(axis=0)

    return ScoreField(locations, expl, likeli, reward, likeli * reward)


def entropy_rank_oracle(
    batch: ParticleBatch,
    candidates,
    cfg: BeliefConfig,
    measured=(),
) -> set[int]:
    """
    Brute-force maximizer of the marginal entropy over candidate measurements.

    For every candidate q the squared distances are taken over the measured cells plus q and
    pushed through sum_ij log(exp(d_ij / (2 sigma_x^2))) in the log domain, with equal weights.
    Only small scalar-cell instances are accepted.

    :param measured: cells already measured
    :return: the tied set of maximizing candidates
    """
    candidates = [int(c) for c in candidates]
    if batch.get_n_b() > ORACLE_MAX_PARTICLES or len(candidates) > ORACLE_MAX_CANDIDATES:
        raise OracleSizeError(
            f"oracle limited to {ORACLE_MAX_PARTICLES} particles and {ORACLE_MAX_CANDIDATES} "
            f"candidates, got {batch.get_n_b()} and {len(candidates)}"
        )
    if not candidates:
        raise ExhaustedCandidatesError("no candidate locations left")

    denoised = batch.get_denoised()
    measured = [int(m) for m in measured]
    values = []

    for q in candidates:
        if not 0 <= q < batch.get_dimension():
            raise UnknownLocationError(f"location {q} outside 0..{batch.get_dimension() - 1}")
        sq = _pairwise_sq(denoised[:, measured + [q]])
        values.append(np.sum(logsumexp(sq[..., None] / (2.0 * cfg.sigma_x2), axis=-1)))

    values = np.array(values)
    if not np.all(np.isfinite(values)):
        raise InvalidRangeError("non-finite entropy for a candidate set", key="belief")
    best = values.max()
    tol = ORACLE_TIE_RTOL * max(abs(best), 1.0)

    return {q for q, v in zip(candidates, values) if v >= best - tol}
