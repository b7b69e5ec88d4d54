import logging

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from atd.classes.noise_schedule import NoiseSchedule
from atd.exc import ConfigError, DimensionMismatchError, InvalidRangeError, UnknownLocationError

logger = logging.getLogger(__name__)

JACOBIAN_MODES: tuple[str, ...] = ("scaled-identity", "exact")

ScoreFn = Callable[[np.ndarray, int], np.ndarray]


class Observations(Protocol):
    def get_coordinates(self) -> np.ndarray: ...

    def get_values(self) -> np.ndarray: ...


@dataclass(frozen=True)
class GuidanceConfig:
    zeta: float = 1.0
    jacobian_mode: str = "scaled-identity"

    def __post_init__(self):
        if not np.isfinite(self.zeta) or self.zeta < 0:
            raise InvalidRangeError(f"must be finite and >= 0, got {self.zeta}", key="guidance.zeta")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise InvalidRangeError(
                f"unknown mode {self.jacobian_mode!r}", key="guidance.jacobian_mode"
            )


class FixedObservations:
    """
    Observation set that never changes, for reconstruction from known measurements.
    """

    def __init__(self, coordinates, values):
        self.__coordinates: np.ndarray = np.asarray(coordinates, dtype=np.int64).reshape(-1)
        self.__values: np.ndarray = np.asarray(values, dtype=np.float64).reshape(-1)

        if self.__coordinates.size != self.__values.size:
            raise DimensionMismatchError(
                f"{self.__coordinates.size} coordinates with {self.__values.size} values"
            )

    def get_coordinates(self) -> np.ndarray:
        return self.__coordinates

    def get_values(self) -> np.ndarray:
        return self.__values


def tweedie_denoise(x_tau, tau: int, score_fn: ScoreFn, sched: NoiseSchedule) -> np.ndarray:
    """
    One-step estimate of the clean sample: (x_tau + (1 - alpha_bar) s(x_tau, tau)) / sqrt(alpha_bar).
    """
    sched.check_step(tau)
    alpha_bar = sched.get_alpha_bar()[tau]
    x_tau = np.asarray(x_tau, dtype=np.float64)

    return (x_tau + (1.0 - alpha_bar) * score_fn(x_tau, tau)) / np.sqrt(alpha_bar)


def ancestral_step(x_tau, x_hat, tau: int, z, sched: NoiseSchedule) -> np.ndarray:
    """
    Unguided reverse update towards x_{tau-1}, with alpha_bar_0 = 1.
    """
    c_x, c_hat = sched.ancestral_coefficients(tau)

    return c_x * np.asarray(x_tau) + c_hat * np.asarray(x_hat) + sched.get_sigma_tilde()[tau] * z


def _checked_coordinates(observed: Observations, dimension: int) -> np.ndarray:
    coords = np.asarray(observed.get_coordinates(), dtype=np.int64)
    if coords.size and (coords.min() < 0 or coords.max() >= dimension):
        bad = coords[(coords < 0) | (coords >= dimension)]
        raise UnknownLocationError(f"observed coordinates {bad.tolist()} outside 0..{dimension - 1}")

    return coords


def guidance_gradient(
    x_tau,
    x_hat,
    observed: Observations,
    tau: int,
    cfg: GuidanceConfig,
    score_fn: ScoreFn,
    sched: NoiseSchedule,
) -> np.ndarray:
    """
    Gradient with respect to x_tau of the squared residual between observed values and the
    denoised mean at the observed coordinates.

    :param x_tau: state or P x N batch
    :param x_hat: its denoised mean
    :return: gradient with the shape of x_tau
    """
    x_tau = np.asarray(x_tau, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    coords = _checked_coordinates(observed, x_tau.shape[-1])
    alpha_bar = sched.get_alpha_bar()[tau]

    residual = np.zeros_like(x_tau)
    residual[..., coords] = 2.0 * (x_hat[..., coords] - observed.get_values())

    if cfg.jacobian_mode == "scaled-identity":
        return residual / np.sqrt(alpha_bar)

    if not hasattr(score_fn, "jvp"):
        raise ConfigError(
            "exact mode needs a score function with a Jacobian product", key="guidance.jacobian_mode"
        )

    # d x_hat / d x_tau = (I + (1 - alpha_bar) J_s) / sqrt(alpha_bar), J_s symmetric
    return (residual + (1.0 - alpha_bar) * score_fn.jvp(x_tau, tau, residual)) / np.sqrt(alpha_bar)


def guidance_step(
    x_prime,
    x_tau,
    observed: Observations,
    tau: int,
    cfg: GuidanceConfig,
    score_fn: ScoreFn,
    sched: NoiseSchedule,
    x_hat=None,
) -> np.ndarray:
    """
    Pull the ancestral proposal towards the measurements.

    :param x_prime: output of ancestral_step
    :param x_tau: state the proposal came from
    :param observed: revealed coordinates and values in diffusion space
    :param x_hat: denoised mean of x_tau, recomputed when omitted
    :return: x_{tau-1}
    """
    x_prime = np.asarray(x_prime, dtype=np.float64)
    coords = _checked_coordinates(observed, x_prime.shape[-1])

    if coords.size == 0 or cfg.zeta == 0.0:
        return x_prime.copy()

    if x_hat is None:
        x_hat = tweedie_denoise(x_tau, tau, score_fn, sched)

    grad = guidance_gradient(x_tau, x_hat, observed, tau, cfg, score_fn, sched)

    return x_prime - cfg.zeta * grad


def reverse_step(
    x_tau,
    x_hat,
    tau: int,
    z,
    observed: Observations,
    cfg: GuidanceConfig,
    score_fn: ScoreFn,
    sched: NoiseSchedule,
) -> np.ndarray:
    x_prime = ancestral_step(x_tau, x_hat, tau, z, sched)

    return guidance_step(x_prime, x_tau, observed, tau, cfg, score_fn, sched, x_hat=x_hat)


def reconstruct(
    observed: Observations,
    dimension: int,
    cfg: GuidanceConfig,
    score_fn: ScoreFn,
    sched: NoiseSchedule,
    rngs: list[np.random.Generator],
) -> np.ndarray:
    """
    Measurement-guided reverse diffusion for a fixed observation set.

    Each generator drives one particle: it draws the starting state and a fresh noise vector at
    every step, so particles are independent of evaluation order.

    :param rngs: one generator per particle
    :return: P x N final states x_0
    """
    x = np.stack([rng.standard_normal(dimension) for rng in rngs])

    for tau in range(sched.get_T(), 0, -1):
        x_hat = tweedie_denoise(x, tau, score_fn, sched)
        z = np.stack([rng.standard_normal(dimension) for rng in rngs])
        x = reverse_step(x, x_hat, tau, z, observed, cfg, score_fn, sched)

    return x
