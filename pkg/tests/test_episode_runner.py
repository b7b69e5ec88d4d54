import numpy as np
import pandas as pd
import pytest

from atd.classes.episode_result import TRACE_COLUMNS, EpisodeResult, StepRecord, success_rate
from atd.classes.episode_runner import EpisodeRunner, build_prior, run_episode
from atd.classes.particle_batch import SCORE_FIELD_COLUMNS
from atd.exc import ConfigError, EmptyResultsError
from atd.utils.config import PriorConfig
from atd.utils.utils import episode_streams

ALL_TARGETS = {"scene.target_rule.kind": "component", "scene.target_rule.theta": 0.0}


def result_with(ys, budget, U):
    records = [StepRecord(t, 0, t, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, y, 0.0) for t, y in enumerate(ys)]
    return EpisodeResult("test", 0, budget, U, records)


def test_success_rate_examples():
    assert success_rate([result_with([0.5, 1.0], 2, 3)]) == 0.75
    assert success_rate([result_with([1.0, 1.0, 0.0], 3, 2)]) == 1.0
    assert success_rate([result_with([0.4], 1, 1), result_with([0.8], 1, 1)]) == pytest.approx(0.6, abs=1e-15)


def test_success_rate_without_targets():
    assert result_with([], 4, 0).get_sr_term() == 0.0
    assert success_rate([result_with([1.0], 1, 1), result_with([], 1, 0)]) == 0.5
    assert pytest.raises(EmptyResultsError, success_rate, [])


def test_success_rate_budget_override():
    result = result_with([1.0, 1.0], 8, 4)

    assert result.get_sr_term() == 0.5
    assert result.get_sr_term(2) == 1.0
    assert success_rate([result], 2) == 1.0


def test_measuring_everything_finds_every_target(tiny_config):
    cfg = tiny_config(budget=16, **ALL_TARGETS)
    result = run_episode(cfg, 0)

    assert result.get_U() == 16
    assert sorted(r.location for r in result.get_records()) == list(range(16))
    assert result.get_R() == pytest.approx(16.0)
    assert result.get_sr_term() == pytest.approx(1.0)


def test_budget_beyond_locations_is_capped(tiny_config):
    result = run_episode(tiny_config(budget=20), 1)

    assert len(result.get_records()) == 16
    assert result.get_budget() == 20


def test_trace_matches_scene(tiny_config):
    cfg = tiny_config(budget=6)
    runner = EpisodeRunner(cfg)
    result = runner.run(3)
    scene = runner.build_scene(episode_streams(3, cfg.belief.n_b).scene)
    targets = scene.get_location_targets()
    records = result.get_records()

    assert len(records) == 6
    assert [r.t for r in records] == list(range(6))
    assert len({r.location for r in records}) == 6
    assert all(r.y == targets[r.location] for r in records)
    assert result.get_R() <= targets.sum()
    assert result.get_U() == scene.get_U()
    assert sorted((r.tau for r in records), reverse=True) == [r.tau for r in records]
    assert {r.tau for r in records} == runner.get_measurement_steps()
    assert np.isfinite(result.get_mse())
    assert result.get_final_mean().shape == (16,)


def test_reruns_are_byte_identical(tiny_config, tmp_path):
    cfg = tiny_config(budget=5, **{"scene.noise.sigma": 0.05})

    paths = []
    for i in range(2):
        path = tmp_path / f"trace{i}.csv"
        run_episode(cfg, 7).to_csv(path)
        paths.append(path)

    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert list(pd.read_csv(paths[0]).columns) == TRACE_COLUMNS


def test_seeds_give_different_episodes(tiny_config):
    cfg = tiny_config(policy={"kind": "random"})

    a = run_episode(cfg, 0).to_frame()
    b = run_episode(cfg, 1).to_frame()
    assert not a.equals(b)


def test_fixed_kappa_reproduces_baselines(tiny_config):
    pairs = [
        ({"policy.kappa_fixed": 1.0}, {"policy.kind": "max_ent"}),
        ({"policy.kappa_fixed": 0.0}, {"policy.kind": "greedy_adaptive"}),
    ]

    for fixed, baseline in pairs:
        for seed in (0, 1):
            fixed_trace = run_episode(tiny_config(**fixed), seed).to_frame()
            baseline_trace = run_episode(tiny_config(**baseline), seed).to_frame()
            pd.testing.assert_frame_equal(fixed_trace, baseline_trace)


def test_every_policy_runs_with_blocks(tiny_config):
    for kind in ("diffatd", "random", "max_ent", "greedy_adaptive", "ucb", "eps_greedy"):
        result = run_episode(tiny_config(**{"policy.kind": kind, "scene.block": 2, "reward.preset": "wide"}), 0)

        assert len(result.get_records()) == 4
        assert sorted(r.location for r in result.get_records()) == [0, 1, 2, 3]
        assert all(0.0 <= r.y <= 1.0 for r in result.get_records())


def test_captured_score_fields(tiny_config, tmp_path):
    result = EpisodeRunner(tiny_config()).run(0, capture_scores=True)
    fields = result.get_score_fields()

    assert list(fields.columns) == SCORE_FIELD_COLUMNS
    assert fields["t"].tolist().count(0) == 16
    assert fields["t"].tolist().count(3) == 13

    path = tmp_path / "fields.csv"
    result.score_fields_to_csv(path)
    assert len(pd.read_csv(path)) == len(fields)

    plain = run_episode(tiny_config(), 0)
    assert pytest.raises(EmptyResultsError, plain.score_fields_to_csv, path)


def test_random_policy_finds_target_density(tiny_config, tmp_path):
    target = np.zeros((4, 4))
    target.reshape(-1)[[1, 4, 6, 9, 11, 14]] = 1.0
    pd.DataFrame(np.full((4, 4), 0.5)).to_csv(tmp_path / "scene.csv", header=False, index=False)
    pd.DataFrame(target).to_csv(tmp_path / "scene.target.csv", header=False, index=False)

    cfg = tiny_config(**{"scene.source": "file", "scene.path": str(tmp_path / "scene.csv"), "policy.kind": "random"})
    runner = EpisodeRunner(cfg)
    per_episode = np.array([np.mean([r.y for r in runner.run(seed).get_records()]) for seed in range(100)])

    density = 6 / 16
    standard_error = per_episode.std(ddof=1) / np.sqrt(per_episode.size)
    assert abs(per_episode.mean() - density) <= 3 * standard_error


def test_noise_does_not_change_revealed_targets(tiny_config):
    clean = run_episode(tiny_config(policy={"kind": "random"}), 4)
    noisy = run_episode(tiny_config(policy={"kind": "random"}, **{"scene.noise.sigma": 0.1}), 4)

    assert [r.location for r in clean.get_records()] == [r.location for r in noisy.get_records()]
    assert [r.y for r in clean.get_records()] == [r.y for r in noisy.get_records()]


def test_configuration_errors_surface_before_running(tiny_config, tmp_path):
    missing = tiny_config(**{"scene.source": "file", "scene.path": str(tmp_path / "missing.csv")})
    with pytest.raises(ConfigError) as e:
        EpisodeRunner(missing)
    assert e.value.key == "scene.path"

    assert pytest.raises(ConfigError, EpisodeRunner, tiny_config(prior={"kind": "file", "path": str(tmp_path / "p.json")}))


def test_build_prior():
    assert build_prior(PriorConfig(kind="standard"), 2, 3).get_dimension() == 6
    assert build_prior(PriorConfig(n_components=3), 4, 4).get_n_components() == 3


def test_file_scene_reused_across_seeds(tiny_config, tmp_path):
    pd.DataFrame(np.eye(4)).to_csv(tmp_path / "eye.csv", header=False, index=False)
    cfg = tiny_config(**{"scene.source": "file", "scene.path": str(tmp_path / "eye.csv"), "scene.target_channel": "threshold:0.5"})
    runner = EpisodeRunner(cfg)

    assert runner.build_scene(np.random.default_rng(0)) is runner.build_scene(np.random.default_rng(1))
    assert runner.run(0).get_U() == 4
