import numpy as np

from atd.exc import InvalidRangeError

DEFAULT_T: int = 1000
DEFAULT_BETA_MIN: float = 1e-4
DEFAULT_BETA_MAX: float = 0.02
COSINE_OFFSET: float = 0.008
CURVES: tuple[str, ...] = ("linear", "cosine")
SIGMA_MODES: tuple[str, ...] = ("posterior", "zero")


class NoiseSchedule:
    """
    Discretized variance-preserving noise schedule.

    Every array has length T + 1 and is indexed by the reverse step tau in 1..T. Index 0 holds
    the boundary values beta = 0, alpha = alpha_bar = 1 and sigma_tilde = 0, so alpha_bar[tau - 1]
    is valid for tau = 1.
    """

    def __init__(self, beta: np.ndarray, sigma: str = "posterior"):
        beta = np.asarray(beta, dtype=np.float64)

        if beta.ndim != 1 or beta.size < 1:
            raise InvalidRangeError("beta must be a non-empty vector", key="diffusion.beta")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise InvalidRangeError("every beta must lie in (0, 1)", key="diffusion.beta")
        if sigma not in SIGMA_MODES:
            raise InvalidRangeError(f"unknown sigma mode {sigma!r}", key="diffusion.sigma")

        self.__T: int = int(beta.size)
        self.__sigma_mode: str = sigma
        self.__beta: np.ndarray = np.concatenate(([0.0], beta))
        self.__alpha: np.ndarray = 1.0 - self.__beta
        # sequential product, alpha_bar[0] = 1
        self.__alpha_bar: np.ndarray = np.cumprod(self.__alpha)

        sigma_tilde = np.zeros(self.__T + 1)
        if sigma == "posterior":
            tau = np.arange(1, self.__T + 1)
            sigma_tilde[1:] = np.sqrt(
                self.__beta[tau] * (1.0 - self.__alpha_bar[tau - 1]) / (1.0 - self.__alpha_bar[tau])
            )
        self.__sigma_tilde: np.ndarray = sigma_tilde

        for arr in (self.__beta, self.__alpha, self.__alpha_bar, self.__sigma_tilde):
            arr.setflags(write=False)

    def __str__(self) -> str:
        return (
            f"NoiseSchedule(T={self.__T}, beta=[{self.__beta[1]:.3g}..{self.__beta[-1]:.3g}], "
            f"alpha_bar_T={self.__alpha_bar[-1]:.4g}, sigma={self.__sigma_mode})"
        )

    def __repr__(self) -> str:
        return self.__str__()

    def get_T(self) -> int:
        return self.__T

    def get_sigma_mode(self) -> str:
        return self.__sigma_mode

    def get_beta(self) -> np.ndarray:
        return self.__beta

    def get_alpha(self) -> np.ndarray:
        return self.__alpha

    def get_alpha_bar(self) -> np.ndarray:
        return self.__alpha_bar

    def get_sigma_tilde(self) -> np.ndarray:
        return self.__sigma_tilde

    def check_step(self, tau: int) -> None:
        if not 1 <= tau <= self.__T:
            raise InvalidRangeError(f"reverse step {tau} outside 1..{self.__T}", key="tau")

    def ancestral_coefficients(self, tau: int) -> tuple[float, float]:
        """
        Coefficients of x_tau and of the denoised mean in the ancestral update.

        :param tau: reverse step in 1..T
        :return: (coefficient on x_tau, coefficient on x_hat); (0, 1) at tau = 1
        """
        self.check_step(tau)
        alpha_bar_prev = self.__alpha_bar[tau - 1]
        one_minus = 1.0 - self.__alpha_bar[tau]

        c_x = np.sqrt(self.__alpha[tau]) * (1.0 - alpha_bar_prev) / one_minus
        c_hat = np.sqrt(alpha_bar_prev) * self.__beta[tau] / one_minus

        return float(c_x), float(c_hat)


def _cosine_betas(T: int, beta_min: float, beta_max: float) -> np.ndarray:
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    beta = 1.0 - alpha_bar[1:] / alpha_bar[:-1]

    return np.clip(beta, beta_min, beta_max)


def make_schedule(
    T: int = DEFAULT_T,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
    curve: str = "linear",
    sigma: str = "posterior",
) -> NoiseSchedule:
    """
    Build a noise schedule.

    :param T: number of reverse steps, at least 1
    :param beta_min: smallest per-step noise level, 0 < beta_min <= beta_max
    :param beta_max: largest per-step noise level, below 1
    :param curve: "linear" interpolates beta_min..beta_max, "cosine" follows the squared-cosine
        alpha_bar curve clipped to [beta_min, beta_max]
    :param sigma: "posterior" for the ancestral posterior scale or "zero" for a deterministic sampler
    :return: the schedule
    """
    if isinstance(T, bool) or not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidRangeError(f"T must be a positive integer, got {T!r}", key="diffusion.T")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise InvalidRangeError(
            f"need 0 < beta_min <= beta_max < 1, got {beta_min} and {beta_max}",
            key="diffusion.beta_min",
        )
    if curve not in CURVES:
        raise InvalidRangeError(f"unknown curve {curve!r}", key="diffusion.curve")

    if curve == "linear":
        beta = np.linspace(beta_min, beta_max, int(T), dtype=np.float64)
    else:
        beta = _cosine_betas(int(T), beta_min, beta_max)

    return NoiseSchedule(beta, sigma=sigma)
