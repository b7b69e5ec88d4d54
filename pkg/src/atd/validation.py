"""
Self-validation suites run by `atd validate`.

Each suite checks one numeric kernel against an independent oracle: closed forms, finite
differences, brute-force sums or hand-worked examples.
"""
import logging
import time

from dataclasses import dataclass
from typing import Callable

import numpy as np

from atd.classes.episode_result import EpisodeResult, StepRecord, success_rate
from atd.classes.gaussian_mixture import GaussianMixturePrior, GmmScoreFunction, gmm_log_density, gmm_score
from atd.classes.guided_diffusion import FixedObservations, GuidanceConfig, guidance_gradient, tweedie_denoise
from atd.classes.noise_schedule import make_schedule
from atd.classes.particle_batch import BeliefConfig, ParticleBatch, entropy_rank_oracle, exploration_score
from atd.classes.policy import kappa
from atd.classes.reward_net import LabeledPatch, grad_check, make_reward_net

logger = logging.getLogger(__name__)

FD_STEP: float = 1e-5
TWEEDIE_TOLERANCE: float = 1e-9
SCORE_TOLERANCE: float = 1e-6
GUIDANCE_TOLERANCE: float = 1e-6
GRAD_TOLERANCE: float = 1e-4


@dataclass(frozen=True)
class OracleOutcome:
    name: str
    passed: bool
    detail: str
    seconds: float


def random_prior(rng: np.random.Generator, dimension: int, n_components: int) -> GaussianMixturePrior:
    weights = rng.uniform(0.5, 1.5, n_components)
    return GaussianMixturePrior(
        weights / weights.sum(),
        rng.uniform(-1.0, 1.0, (n_components, dimension)),
        rng.uniform(0.2, 1.0, n_components),
    )


def check_tweedie(rng: np.random.Generator, n_pairs: int = 50) -> tuple[bool, str]:
    """
    Denoised mean of a 1-D Gaussian prior N(mu, v) against its closed-form posterior mean
    mu + sqrt(a) v / (a v + 1 - a) (x - sqrt(a) mu).
    """
    sched = make_schedule(1000, 1e-4, 0.02)
    worst = 0.0

    for _ in range(n_pairs):
        mu, v = rng.uniform(-1.0, 1.0), rng.uniform(0.1, 2.0)
        prior = GaussianMixturePrior([1.0], [[mu]], [v])
        tau = int(rng.integers(1, sched.get_T() + 1))
        a = sched.get_alpha_bar()[tau]
        x = rng.normal(size=1) * 2.0

        got = tweedie_denoise(x, tau, GmmScoreFunction(prior, sched), sched)
        expected = mu + np.sqrt(a) * v / (a * v + 1.0 - a) * (x - np.sqrt(a) * mu)
        worst = max(worst, float(np.max(np.abs(got - expected))))

    return worst < TWEEDIE_TOLERANCE, f"max abs error {worst:.2e} over {n_pairs} pairs"


def finite_difference_score(x: np.ndarray, tau: int, prior: GaussianMixturePrior, sched) -> np.ndarray:
    grad = np.empty_like(x)

    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = FD_STEP
        up = gmm_log_density(x + step, tau, prior, sched)
        down = gmm_log_density(x - step, tau, prior, sched)
        grad[i] = (up - down) / (2.0 * FD_STEP)

    return grad


def check_score(rng: np.random.Generator, n_points: int = 100) -> tuple[bool, str]:
    """
    Analytic mixture score against central differences of the analytic log-density.
    """
    sched = make_schedule(100, 1e-4, 0.02)
    worst = 0.0

    for _ in range(n_points):
        dimension = int(rng.integers(1, 9))
        prior = random_prior(rng, dimension, int(rng.integers(1, 6)))
        tau = int(rng.integers(sched.get_T() // 10, sched.get_T() + 1))
        x = rng.normal(size=dimension)

        analytic = gmm_score(x, tau, prior, sched)
        numeric = finite_difference_score(x, tau, prior, sched)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1.0)
        worst = max(worst, float(rel))

    return worst < SCORE_TOLERANCE, f"max relative error {worst:.2e} over {n_points} points"


def check_guidance(rng: np.random.Generator, n_cases: int = 20) -> tuple[bool, str]:
    """
    Exact-mode guidance gradient against central differences of the observed residual norm.
    """
    sched = make_schedule(100, 1e-4, 0.02)
    cfg = GuidanceConfig(zeta=1.0, jacobian_mode="exact")
    worst = 0.0

    for _ in range(n_cases):
        dimension = int(rng.integers(2, 7))
        prior = random_prior(rng, dimension, int(rng.integers(1, 4)))
        score_fn = GmmScoreFunction(prior, sched)
        tau = int(rng.integers(sched.get_T() // 10, sched.get_T() + 1))
        coords = rng.choice(dimension, size=int(rng.integers(1, dimension + 1)), replace=False)
        observed = FixedObservations(coords, rng.normal(size=coords.size))
        x = rng.normal(size=dimension)

        def residual(state: np.ndarray) -> float:
            x_hat = tweedie_denoise(state, tau, score_fn, sched)
            return float(np.sum((observed.get_values() - x_hat[coords]) ** 2))

        numeric = np.empty(dimension)
        for i in range(dimension):
            step = np.zeros(dimension)
            step[i] = FD_STEP
            numeric[i] = (residual(x + step) - residual(x - step)) / (2.0 * FD_STEP)

        x_hat = tweedie_denoise(x, tau, score_fn, sched)
        analytic = guidance_gradient(x, x_hat, observed, tau, cfg, score_fn, sched)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1.0)
        worst = max(worst, float(rel))

    return worst < GUIDANCE_TOLERANCE, f"max relative error {worst:.2e} over {n_cases} cases"


def random_oracle_instance(rng: np.random.Generator) -> tuple[ParticleBatch, list[int], list[int]]:
    """
    Small scalar-cell instance: up to 4 particles, 16 cells, a few already measured.
    """
    n_b = int(rng.integers(2, 5))
    dimension = 16
    denoised = rng.normal(size=(n_b, dimension))
    n_measured = int(rng.integers(0, 4))
    order = rng.permutation(dimension)

    measured = sorted(int(c) for c in order[:n_measured])
    candidates = sorted(int(c) for c in order[n_measured:])

    return ParticleBatch(denoised, denoised, 0), candidates, measured


def check_entropy_ranking(rng: np.random.Generator, n_instances: int = 200) -> tuple[bool, str]:
    """
    The exploration-score argmax must lie in the brute-force entropy maximizer's tied set.
    """
    cfg = BeliefConfig(sigma_x2=1.0)
    misses = 0

    for _ in range(n_instances):
        batch, candidates, measured = random_oracle_instance(rng)
        scores = [exploration_score(batch, q, cfg) for q in candidates]
        best = candidates[int(np.argmax(scores))]

        if best not in entropy_rank_oracle(batch, candidates, cfg, measured):
            misses += 1

    return misses == 0, f"{n_instances - misses}/{n_instances} instances agree"


def check_reward_gradients(rng: np.random.Generator) -> tuple[bool, str]:
    """
    Backpropagation of every preset: default on 1x1 patches, wide on 2x2 and deep on 4x4.
    """
    details, passed = [], True

    for preset, patch in (("default", 1), ("wide", 4), ("deep", 16)):
        net = make_reward_net(patch, preset, seed=int(rng.integers(2**31)))
        dataset = [LabeledPatch(rng.normal(size=patch), float(rng.uniform())) for _ in range(12)]
        error = grad_check(net, dataset)
        passed = passed and error < GRAD_TOLERANCE
        details.append(f"{preset}={error:.2e}")

    return passed, ", ".join(details)


def check_kappa(rng: np.random.Generator) -> tuple[bool, str]:
    values = [kappa(200, t) for t in range(201)]
    passed = (
        values[0] == 1.0
        and values[-1] == 0.0
        and all(a > b for a, b in zip(values, values[1:]))
        and kappa(200, 100) == 1.0 / 3.0
        and kappa(200, 150, 0.5) == 0.0
    )

    return passed, "boundary, monotonicity and clamp"


def _result_with(ys: list[float], budget: int, U: int) -> EpisodeResult:
    records = [StepRecord(t, 0, t, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, y, 0.0) for t, y in enumerate(ys)]
    return EpisodeResult("oracle", 0, budget, U, records)


def check_success_rate(rng: np.random.Generator) -> tuple[bool, str]:
    first = success_rate([_result_with([0.5, 1.0], 2, 3)])
    second = success_rate([_result_with([1.0, 1.0, 0.0], 3, 2)])
    third = success_rate([_result_with([0.4], 1, 1), _result_with([0.8], 1, 1)])
    passed = first == 0.75 and second == 1.0 and abs(third - 0.6) < 1e-15

    return passed, f"({first}, {second}, {third})"


SUITES: list[tuple[str, Callable[[np.random.Generator], tuple[bool, str]]]] = [
    ("tweedie", check_tweedie),
    ("score", check_score),
    ("guidance", check_guidance),
    ("entropy-ranking", check_entropy_ranking),
    ("reward-gradients", check_reward_gradients),
    ("kappa", check_kappa),
    ("success-rate", check_success_rate),
]


def run_validation(seed: int = 0) -> list[OracleOutcome]:
    """
    Run every suite with its own generator derived from seed.
    """
    outcomes = []
    streams = np.random.SeedSequence(seed).spawn(len(SUITES))

    for (name, suite), stream in zip(SUITES, streams):
        started = time.perf_counter()
        try:
            passed, detail = suite(np.random.default_rng(stream))
        except Exception as e:
            logger.error(f"Error processing suite {name}: {e}")
            passed, detail = False, repr(e)
        outcomes.append(OracleOutcome(name, passed, detail, time.perf_counter() - started))

    return outcomes
