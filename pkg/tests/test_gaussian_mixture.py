import json

import numpy as np
import pytest

from atd.classes.gaussian_mixture import (
    GaussianMixturePrior,
    GmmScoreFunction,
    empirical_prior,
    gmm_log_density,
    gmm_score,
    gmm_score_jvp,
    make_blob_prior,
    standard_prior,
)
from atd.classes.noise_schedule import make_schedule
from atd.exc import DimensionMismatchError, InvalidPriorError

STEP = 1e-5

invalid_priors = [
    ([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0]),
    ([1.0, 0.0], [[0.0], [1.0]], [1.0, 1.0]),
    ([1.0], [[0.0]], [-0.1]),
    ([1.0], [[np.inf]], [1.0]),
]

invalid_documents = [
    {},
    {"dimension": 1},
    {"dimension": 1, "components": []},
    {"dimension": 1, "components": [{"weight": 1.0, "mean": [0.0]}]},
    {"dimension": 1, "components": [{"weight": 1.0, "mean": [0.0], "variance": -1}]},
    {"dimension": 1, "components": [{"weight": 1.0, "mean": [0.0], "variance": 1, "x": 0}]},
]


def numeric_score(x, tau, prior, sched):
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = STEP
        up = gmm_log_density(x + step, tau, prior, sched)
        down = gmm_log_density(x - step, tau, prior, sched)
        grad[i] = (up - down) / (2 * STEP)

    return grad


def test_standard_normal_score_is_minus_x():
    sched = make_schedule(100)
    prior = GaussianMixturePrior([1.0], [[0.0]], [1.0])

    for tau in (1, 17, 50, 100):
        for x in (-2.0, -0.3, 0.0, 1.5):
            assert gmm_score(np.array([x]), tau, prior, sched)[0] == pytest.approx(-x, abs=1e-12)


def test_point_mass_score():
    sched = make_schedule(100)
    mu = np.array([0.3, -0.7])
    prior = GaussianMixturePrior([1.0], [mu], [0.0])
    x = np.array([1.0, 0.5])

    for tau in (1, 40, 100):
        a = sched.get_alpha_bar()[tau]
        expected = -(x - np.sqrt(a) * mu) / (1 - a)
        assert np.allclose(gmm_score(x, tau, prior, sched), expected, rtol=1e-9, atol=0)


def test_score_matches_finite_differences():
    rng = np.random.default_rng(11)
    sched = make_schedule(100)

    for _ in range(100):
        dimension = int(rng.integers(1, 6))
        k = int(rng.integers(1, 4))
        weights = rng.uniform(0.5, 1.5, k)
        prior = GaussianMixturePrior(
            weights / weights.sum(), rng.uniform(-1, 1, (k, dimension)), rng.uniform(0.2, 1.0, k)
        )
        tau = int(rng.integers(10, 101))
        x = rng.normal(size=dimension)

        analytic = gmm_score(x, tau, prior, sched)
        numeric = numeric_score(x, tau, prior, sched)
        assert np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1.0) < 1e-6


def test_two_component_score():
    sched = make_schedule(100)
    prior = GaussianMixturePrior([0.3, 0.7], [[-1.0, 0.5], [1.0, -0.5]], [0.5, 0.25])
    x = np.array([0.2, 0.1])

    for tau in (5, 60):
        analytic = gmm_score(x, tau, prior, sched)
        assert np.allclose(analytic, numeric_score(x, tau, prior, sched), rtol=1e-6, atol=1e-8)


def test_score_batch_matches_single():
    sched = make_schedule(50)
    prior = GaussianMixturePrior([0.5, 0.5], [[-1.0, 0.0, 1.0], [1.0, 0.0, -1.0]], [0.3, 0.6])
    batch = np.random.default_rng(0).normal(size=(5, 3))

    scores = gmm_score(batch, 20, prior, sched)
    assert scores.shape == (5, 3)
    for row, score in zip(batch, scores):
        assert np.allclose(gmm_score(row, 20, prior, sched), score, rtol=1e-12, atol=1e-15)


def test_score_jvp_matches_finite_differences():
    rng = np.random.default_rng(5)
    sched = make_schedule(100)
    prior = GaussianMixturePrior([0.4, 0.6], [[-0.5, 0.5, 0.0], [0.5, -0.5, 1.0]], [0.3, 0.5])
    x = rng.normal(size=3)
    v = rng.normal(size=3)

    for tau in (10, 70):
        numeric = (gmm_score(x + STEP * v, tau, prior, sched) - gmm_score(x - STEP * v, tau, prior, sched)) / (
            2 * STEP
        )
        assert np.allclose(gmm_score_jvp(x, tau, prior, sched, v), numeric, rtol=1e-6, atol=1e-8)


def test_score_function_object():
    sched = make_schedule(30)
    prior = standard_prior(4).to_diffusion_space()
    score_fn = GmmScoreFunction(prior, sched)
    x = np.array([0.1, -0.2, 0.3, 0.4])

    assert np.array_equal(score_fn(x, 12), gmm_score(x, 12, prior, sched))
    assert score_fn.log_density(x, 12) == gmm_log_density(x, 12, prior, sched)
    assert score_fn.get_prior() is prior
    assert score_fn.get_schedule() is sched


def test_score_dimension_mismatch():
    sched = make_schedule(10)
    prior = standard_prior(4)

    assert pytest.raises(DimensionMismatchError, gmm_score, np.zeros(3), 2, prior, sched)


def test_prior_raises():
    for weights, means, variances in invalid_priors:
        assert pytest.raises(InvalidPriorError, GaussianMixturePrior, weights, means, variances)

    assert pytest.raises(DimensionMismatchError, GaussianMixturePrior, [1.0], [[0.0], [1.0]], [1.0])


def test_prior_documents_raise():
    for document in invalid_documents:
        assert pytest.raises(InvalidPriorError, GaussianMixturePrior.from_dict, document)

    mismatched = {"dimension": 2, "components": [{"weight": 1.0, "mean": [0.0], "variance": 1.0}]}
    assert pytest.raises(DimensionMismatchError, GaussianMixturePrior.from_dict, mismatched)


def test_prior_save_and_load(tmp_path):
    prior = make_blob_prior(3, 4, 2, np.random.default_rng(1))
    path = tmp_path / "prior.json"
    prior.save(path)

    loaded = GaussianMixturePrior.load(path)
    assert np.array_equal(loaded.get_weights(), prior.get_weights())
    assert np.array_equal(loaded.get_means(), prior.get_means())
    assert np.array_equal(loaded.get_variances(), prior.get_variances())
    assert json.loads(path.read_text())["dimension"] == 12


def test_to_diffusion_space():
    prior = GaussianMixturePrior([1.0], [[0.0, 0.5, 1.0]], [0.01])
    mapped = prior.to_diffusion_space()

    assert np.array_equal(mapped.get_means(), [[-1.0, 0.0, 1.0]])
    assert mapped.get_variances()[0] == pytest.approx(0.04)
    assert np.allclose(standard_prior(2).to_diffusion_space().get_means(), 0.0)
    assert standard_prior(2).to_diffusion_space().get_variances()[0] == 1.0


def test_empirical_prior():
    grids = [np.zeros((2, 2)), np.ones((2, 2)), np.full((2, 2), 0.5)]
    prior = empirical_prior(grids, 0.01)

    assert prior.get_n_components() == 3
    assert np.allclose(prior.get_weights(), 1 / 3)
    assert np.array_equal(prior.get_means()[2], [0.5] * 4)
    assert pytest.raises(InvalidPriorError, empirical_prior, [], 0.01)


def test_blob_prior():
    prior = make_blob_prior(6, 5, 4, np.random.default_rng(3))
    again = make_blob_prior(6, 5, 4, np.random.default_rng(3))

    assert prior.get_dimension() == 30
    assert prior.get_n_components() == 4
    assert np.allclose(prior.get_weights(), 0.25)
    assert np.all(prior.get_means() >= 0.1) and np.all(prior.get_means() <= 0.9)
    assert np.array_equal(prior.get_means(), again.get_means())


def test_sample_component():
    prior = GaussianMixturePrior([0.5, 0.5], [[0.0, 0.0], [1.0, 1.0]], [0.0, 0.0])
    rng = np.random.default_rng(2)

    for _ in range(20):
        sample, k = prior.sample(rng)
        assert np.array_equal(sample, prior.get_means()[k])
