import json
import logging

from pathlib import Path

import jsonschema
import numpy as np

from scipy.special import logsumexp, softmax

from atd.classes.noise_schedule import NoiseSchedule
from atd.exc import DimensionMismatchError, InvalidPriorError

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE: float = 1e-12
BLOB_BACKGROUND: float = 0.1
BLOB_PEAK: float = 0.9
BLOB_RADIUS_RANGE: tuple[float, float] = (1.5, 3.5)
BLOB_COUNT_RANGE: tuple[int, int] = (1, 3)

PRIOR_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["components", "dimension"],
    "additionalProperties": False,
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["weight", "mean", "variance"],
                "additionalProperties": False,
                "properties": {
                    "weight": {"type": "number", "exclusiveMinimum": 0},
                    "mean": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    "variance": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}


class GaussianMixturePrior:
    """
    Mixture of isotropic Gaussians over N-dimensional grids.

    :param weights: K positive weights summing to 1
    :param means: K x N component means
    :param variances: K non-negative isotropic variances
    """

    def __init__(self, weights, means, variances):
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        variances = np.asarray(variances, dtype=np.float64).reshape(-1)

        if not (weights.size == means.shape[0] == variances.size) or means.ndim != 2:
            raise DimensionMismatchError(
                f"prior with {weights.size} weights, {means.shape[0]} means and "
                f"{variances.size} variances"
            )
        if np.any(weights <= 0.0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise InvalidPriorError(f"weights must be positive and sum to 1, got {weights.sum()!r}")
        if np.any(variances < 0.0) or not np.all(np.isfinite(means)):
            raise InvalidPriorError("variances must be non-negative and means finite")

        self.__weights: np.ndarray = weights
        self.__means: np.ndarray = means
        self.__variances: np.ndarray = variances

    def __str__(self) -> str:
        return f"GaussianMixturePrior(K={self.get_n_components()}, N={self.get_dimension()})"

    def __repr__(self) -> str:
        return self.__str__()

    def get_weights(self) -> np.ndarray:
        return self.__weights

    def get_means(self) -> np.ndarray:
        return self.__means

    def get_variances(self) -> np.ndarray:
        return self.__variances

    def get_dimension(self) -> int:
        return int(self.__means.shape[1])

    def get_n_components(self) -> int:
        return int(self.__weights.size)

    def to_diffusion_space(self) -> "GaussianMixturePrior":
        """
        Map a prior over [0, 1] cell values to the [-1, 1] space the diffusion runs in.
        """
        return GaussianMixturePrior(self.__weights, 2.0 * self.__means - 1.0, 4.0 * self.__variances)

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        """
        Draw a component, then a grid from it.

        :return: (sample, component index)
        """
        k = int(rng.choice(self.get_n_components(), p=self.__weights))
        noise = rng.standard_normal(self.get_dimension())

        return self.__means[k] + np.sqrt(self.__variances[k]) * noise, k

    def to_dict(self) -> dict:
        return {
            "dimension": self.get_dimension(),
            "components": [
                {"weight": float(w), "mean": m.tolist(), "variance": float(v)}
                for w, m, v in zip(self.__weights, self.__means, self.__variances)
            ],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "GaussianMixturePrior":
        try:
            jsonschema.validate(document, PRIOR_SCHEMA)
        except jsonschema.ValidationError as e:
            raise InvalidPriorError(f"invalid prior document: {e.message}") from e

        components = document["components"]
        means = [c["mean"] for c in components]
        if any(len(m) != document["dimension"] for m in means):
            raise DimensionMismatchError(
                f"component mean length differs from dimension {document['dimension']}"
            )

        return cls(
            [c["weight"] for c in components], means, [c["variance"] for c in components]
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path: str | Path) -> "GaussianMixturePrior":
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))


def empirical_prior(grids: list[np.ndarray], variance: float) -> GaussianMixturePrior:
    """
    Empirical-Bayes prior: one equally weighted component per example grid.

    :param grids: example grids, all of the same size
    :param variance: shared component variance
    """
    if not grids:
        raise InvalidPriorError("an empirical prior needs at least one example")

    means = np.stack([np.asarray(g, dtype=np.float64).reshape(-1) for g in grids])
    k = means.shape[0]

    return GaussianMixturePrior(np.full(k, 1.0 / k), means, np.full(k, float(variance)))


def standard_prior(dimension: int) -> GaussianMixturePrior:
    """
    Single broad component; standard normal once mapped to diffusion space.
    """
    return GaussianMixturePrior([1.0], np.full((1, dimension), 0.5), [0.25])


def make_blob_prior(
    rows: int,
    cols: int,
    n_components: int,
    rng: np.random.Generator,
    variance: float = 0.005,
    background: float = BLOB_BACKGROUND,
    peak: float = BLOB_PEAK,
) -> GaussianMixturePrior:
    """
    Synthetic structured prior: every component mean is a dim background with a few bright blobs.

    ALGORITHM:
        1. each component draws 1-3 blob centers uniformly over the grid and a radius per blob
        2. a blob adds a Gaussian bump of height (peak - background) around its center
        3. the mean is clipped to [background, peak]
    """
    r, c = np.mgrid[0:rows, 0:cols]
    means = np.empty((n_components, rows * cols))

    for k in range(n_components):
        mean = np.full((rows, cols), background)
        n_blobs = int(rng.integers(BLOB_COUNT_RANGE[0], BLOB_COUNT_RANGE[1] + 1))

        for _ in range(n_blobs):
            cy, cx = rng.uniform(0, rows), rng.uniform(0, cols)
            radius = rng.uniform(*BLOB_RADIUS_RANGE)
            bump = np.exp(-((r - cy) ** 2 + (c - cx) ** 2) / (2.0 * radius**2))
            mean += (peak - background) * bump

        means[k] = np.clip(mean, background, peak).reshape(-1)

    logger.debug(f"Built blob prior with {n_components} components over {rows}x{cols}")

    return GaussianMixturePrior(
        np.full(n_components, 1.0 / n_components), means, np.full(n_components, float(variance))
    )


def _as_batch(x: np.ndarray, prior: GaussianMixturePrior) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != prior.get_dimension():
        raise DimensionMismatchError(
            f"state of dimension {x.shape[-1]} against prior of dimension {prior.get_dimension()}"
        )

    return np.atleast_2d(x), x.ndim == 1


def _marginal(x: np.ndarray, tau: int, prior: GaussianMixturePrior, sched: NoiseSchedule):
    """
    tau-marginal of the prior under forward noising, evaluated at a batch of states.

    :return: (component logits P x K, mean offsets m_k - x as P x K x N, variances K)
    """
    sched.check_step(tau)
    alpha_bar = sched.get_alpha_bar()[tau]

    means = np.sqrt(alpha_bar) * prior.get_means()
    variances = alpha_bar * prior.get_variances() + (1.0 - alpha_bar)

    offsets = means[None, :, :] - x[:, None, :]
    sq = np.einsum("pkn,pkn->pk", offsets, offsets)
    n = x.shape[1]
    log_normal = -0.5 * n * np.log(2.0 * np.pi * variances) - sq / (2.0 * variances)

    return np.log(prior.get_weights()) + log_normal, offsets, variances


def gmm_log_density(x, tau: int, prior: GaussianMixturePrior, sched: NoiseSchedule):
    batch, single = _as_batch(x, prior)
    logits, _, _ = _marginal(batch, tau, prior, sched)
    value = logsumexp(logits, axis=1)

    return float(value[0]) if single else value


def gmm_score(x, tau: int, prior: GaussianMixturePrior, sched: NoiseSchedule) -> np.ndarray:
    """
    Gradient of the log-density of the tau-marginal.

    The marginal is again a mixture with means sqrt(alpha_bar) mu_k and variances
    alpha_bar v_k + 1 - alpha_bar; its score is the responsibility-weighted sum of the component
    scores, responsibilities taken in the log domain.

    :param x: state vector or P x N batch of states
    :param tau: reverse step in 1..T
    :return: score with the shape of x
    """
    batch, single = _as_batch(x, prior)
    logits, offsets, variances = _marginal(batch, tau, prior, sched)
    resp = softmax(logits, axis=1)

    score = np.einsum("pk,pkn->pn", resp / variances, offsets)

    return score[0] if single else score


def gmm_score_jvp(x, tau: int, prior: GaussianMixturePrior, sched: NoiseSchedule, v) -> np.ndarray:
    """
    Product of the score Jacobian with a vector.

    With g_k = (m_k - x) / s_k and g the score, the Jacobian is
    sum_k r_k (g_k g_k^T - I / s_k) - g g^T, which is symmetric.
    """
    batch, single = _as_batch(x, prior)
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.shape != batch.shape:
        raise DimensionMismatchError(f"direction of shape {v.shape} against states {batch.shape}")

    logits, offsets, variances = _marginal(batch, tau, prior, sched)
    resp = softmax(logits, axis=1)

    g = offsets / variances[None, :, None]
    g_bar = np.einsum("pk,pkn->pn", resp, g)
    g_dot_v = np.einsum("pkn,pn->pk", g, v)

    jvp = -(resp / variances).sum(axis=1)[:, None] * v
    jvp += np.einsum("pk,pkn->pn", resp * g_dot_v, g)
    jvp -= g_bar * np.einsum("pn,pn->p", g_bar, v)[:, None]

    return jvp[0] if single else jvp


class GmmScoreFunction:
    """
    Analytic score of a Gaussian-mixture data prior, callable as score_fn(x, tau).
    """

    def __init__(self, prior: GaussianMixturePrior, sched: NoiseSchedule):
        self.__prior: GaussianMixturePrior = prior
        self.__sched: NoiseSchedule = sched

    def __call__(self, x, tau: int) -> np.ndarray:
        return gmm_score(x, tau, self.__prior, self.__sched)

    def jvp(self, x, tau: int, v) -> np.ndarray:
        return gmm_score_jvp(x, tau, self.__prior, self.__sched, v)

    def log_density(self, x, tau: int):
        return gmm_log_density(x, tau, self.__prior, self.__sched)

    def get_prior(self) -> GaussianMixturePrior:
        return self.__prior

    def get_schedule(self) -> NoiseSchedule:
        return self.__sched
