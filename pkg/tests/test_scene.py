import numpy as np
import pytest

from PIL import Image

from atd.classes.gaussian_mixture import GaussianMixturePrior
from atd.classes.measurement_log import EpisodeState, MeasurementLog, to_cell_space, to_diffusion_space
from atd.classes.query_grid import QueryGrid
from atd.classes.scene import (
    ComponentRule,
    ObservationNoise,
    Scene,
    ThresholdRule,
    gen_gmm_scene,
    load_empirical_prior,
    load_scene,
    measure,
    save_scene,
)
from atd.exc import (
    DimensionMismatchError,
    ExhaustedCandidatesError,
    InvalidRangeError,
    RepeatMeasurementError,
    SceneParseError,
    UnknownLocationError,
)

malformed_csv = [
    "0.1,0.2\n0.3\n",
    "0.1,abc\n0.3,0.4\n",
    "",
]


def test_query_grid_layout():
    grid = QueryGrid(4, 6, 2)

    assert grid.get_n_locations() == 6
    assert grid.get_patch_size() == 4
    assert grid.cells(0).tolist() == [0, 1, 6, 7]
    assert grid.cells(4).tolist() == [14, 15, 20, 21]
    assert sorted(grid.get_coordinates().reshape(-1).tolist()) == list(range(24))


def test_query_grid_neighbors_and_aggregate():
    grid = QueryGrid(3, 3)

    assert sorted(grid.neighbors(4, 1).tolist()) == list(range(9))
    assert sorted(grid.neighbors(0, 1).tolist()) == [0, 1, 3, 4]
    assert grid.neighbors(8, 0).tolist() == [8]
    assert QueryGrid(2, 2, 2).aggregate([0.0, 1.0, 1.0, 1.0]).tolist() == [0.75]


def test_query_grid_raises():
    assert pytest.raises(DimensionMismatchError, QueryGrid, 4, 5, 2)
    assert pytest.raises(DimensionMismatchError, QueryGrid, 0, 4)
    assert pytest.raises(UnknownLocationError, QueryGrid(2, 2).cells, 4)
    assert pytest.raises(DimensionMismatchError, QueryGrid(2, 2).aggregate, [1.0])


def test_measure_without_target():
    scene = Scene([[0.2, 0.4], [0.6, 0.8]], np.zeros((2, 2)))
    m = measure(scene, 2, np.random.default_rng(0))

    assert m.y == 0.0
    assert m.location == 2
    assert m.content.tolist() == [0.6]
    assert m.cells.tolist() == [2]


def test_measure_block_ratio():
    scene = Scene(np.full((2, 2), 0.5), [[1.0, 1.0], [1.0, 0.0]], block=2)

    assert measure(scene, 0, np.random.default_rng(0)).y == 0.75
    assert scene.get_U() == 1


def test_measure_noise_follows_rng():
    noise = ObservationNoise(0.1, 0.2)
    scene = Scene(np.full((2, 2), 0.5), np.ones((2, 2)), block=2, noise=noise)

    m = measure(scene, 0, np.random.default_rng(4))
    expected = 0.5 + np.random.default_rng(4).normal(0.1, 0.2, size=4)
    assert np.array_equal(m.content, expected)
    assert m.y == 1.0


def test_noiseless_measure_leaves_rng_untouched():
    scene = Scene(np.full((2, 2), 0.5), np.ones((2, 2)))
    rng = np.random.default_rng(1)
    measure(scene, 0, rng)

    assert rng.random() == np.random.default_rng(1).random()


def test_measure_raises():
    scene = Scene(np.zeros((2, 2)), np.zeros((2, 2)))

    assert pytest.raises(RepeatMeasurementError, measure, scene, 1, np.random.default_rng(0), {1})
    assert pytest.raises(UnknownLocationError, measure, scene, 4, np.random.default_rng(0))


def test_measuring_every_block_recovers_all_targets():
    target = np.random.default_rng(3).integers(0, 2, (4, 4)).astype(float)
    scene = Scene(np.full((4, 4), 0.5), target, block=2)
    rng = np.random.default_rng(0)

    ms = [measure(scene, q, rng) for q in range(4)]
    assert sum(m.y for m in ms) * 4 == target.sum()
    assert sorted(np.concatenate([m.cells for m in ms]).tolist()) == list(range(16))


def test_scene_raises():
    assert pytest.raises(DimensionMismatchError, Scene, np.zeros((2, 2)), np.zeros((2, 3)))
    assert pytest.raises(SceneParseError, Scene, [[1.5]], [[0.0]])
    assert pytest.raises(SceneParseError, Scene, [[0.5]], [[2.0]])
    assert pytest.raises(DimensionMismatchError, Scene, np.zeros((3, 3)), np.zeros((3, 3)), 2)
    assert pytest.raises(InvalidRangeError, ObservationNoise, 0.0, -0.1)


def test_gen_scene_from_point_mass():
    mean = np.array([0.1, 0.2, 0.3, 0.4, 0.45, 0.6, 0.7, 0.8, 0.9])
    prior = GaussianMixturePrior([1.0], [mean], [0.0])
    scene = gen_gmm_scene(prior, ThresholdRule(0.5), np.random.default_rng(0))

    assert scene.get_shape() == (3, 3)
    assert np.array_equal(scene.get_grid().reshape(-1), mean)
    assert scene.get_U() == 4


def test_gen_scene_without_targets():
    prior = GaussianMixturePrior([1.0], [np.full(4, 0.4)], [0.0])
    scene = gen_gmm_scene(prior, ThresholdRule(0.5), np.random.default_rng(0), shape=(1, 4))

    assert scene.get_U() == 0
    assert scene.get_shape() == (1, 4)


def test_gen_scene_component_rule():
    prior = GaussianMixturePrior([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]], [0.01, 0.01])

    for seed in range(10):
        scene = gen_gmm_scene(prior, ComponentRule(0.5), np.random.default_rng(seed), shape=(1, 2))
        assert sorted(scene.get_target().reshape(-1).tolist()) == [0.0, 1.0]

    assert pytest.raises(InvalidRangeError, ComponentRule(0.5).apply, np.zeros(2))


def test_gen_scene_mean_matches_prior():
    prior = GaussianMixturePrior([0.3, 0.7], [[0.4, 0.45, 0.5, 0.55], [0.6, 0.55, 0.5, 0.45]], [0.001, 0.002])
    rng = np.random.default_rng(17)
    grids = np.stack([gen_gmm_scene(prior, ThresholdRule(), rng).get_grid().reshape(-1) for _ in range(1000)])

    w, means, v = prior.get_weights(), prior.get_means(), prior.get_variances()
    expected = w @ means
    spread = np.sqrt(w @ (v[:, None] + means**2) - expected**2)
    assert np.all(np.abs(grids.mean(axis=0) - expected) <= 4 * spread / np.sqrt(1000))


def test_gen_scene_is_clipped():
    prior = GaussianMixturePrior([1.0], [[0.0, 1.0, 0.5, 0.5]], [0.5])
    grid = gen_gmm_scene(prior, ThresholdRule(), np.random.default_rng(2)).get_grid()

    assert np.all((grid >= 0) & (grid <= 1))
    assert pytest.raises(DimensionMismatchError, gen_gmm_scene, prior, ThresholdRule(), np.random.default_rng(0), (3, 3))


def test_load_csv_with_threshold(tmp_path):
    path = tmp_path / "scene.csv"
    path.write_text("0,1\n1,0\n")
    scene = load_scene(path, target_channel="threshold:0.5")

    assert scene.get_location_targets().tolist() == [0.0, 1.0, 1.0, 0.0]
    assert scene.get_U() == 2


def test_load_counts(tmp_path):
    path = tmp_path / "species.csv"
    path.write_text("0,2\n4,8\n")
    scene = load_scene(path, target_channel="counts")

    assert scene.get_location_targets().tolist() == [0.0, 0.25, 0.5, 1.0]
    assert scene.get_grid().max() == 1.0


def test_load_pgm(tmp_path):
    path = tmp_path / "scene.pgm"
    Image.fromarray(np.array([[0, 255], [128, 0]], dtype=np.uint8)).save(path, format="PPM")
    scene = load_scene(path, target_channel="threshold:0.9")

    assert scene.get_grid()[0, 1] == 1.0
    assert scene.get_grid()[1, 0] == pytest.approx(128 / 255)
    assert scene.get_U() == 1


def test_load_plain_pgm(tmp_path):
    path = tmp_path / "plain.pgm"
    path.write_text("P2\n2 2\n255\n0 255\n128 0\n")

    assert load_scene(path, target_channel="threshold:0.5").get_grid()[0, 1] == 1.0


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    scene = Scene(rng.uniform(size=(3, 5)), rng.integers(0, 2, (3, 5)).astype(float))
    path = tmp_path / "scene.csv"
    save_scene(scene, path)

    loaded = load_scene(path)
    assert (tmp_path / "scene.target.csv").is_file()
    assert np.array_equal(loaded.get_grid(), scene.get_grid())
    assert np.array_equal(loaded.get_target(), scene.get_target())


def test_pgm_round_trip(tmp_path):
    scene = Scene([[0.0, 0.5], [1.0, 0.25]], [[0.0, 0.0], [1.0, 0.0]])
    path = tmp_path / "scene.pgm"
    save_scene(scene, path)

    loaded = load_scene(path)
    assert np.allclose(loaded.get_grid(), scene.get_grid(), atol=1 / 255)
    assert np.array_equal(loaded.get_target(), scene.get_target())


def test_load_scene_raises(tmp_path):
    for i, text in enumerate(malformed_csv):
        path = tmp_path / f"bad{i}.csv"
        path.write_text(text)
        assert pytest.raises(SceneParseError, load_scene, path, target_channel="threshold:0.5")

    out_of_range = tmp_path / "range.csv"
    out_of_range.write_text("0,5\n1,0\n")
    assert pytest.raises(SceneParseError, load_scene, out_of_range, target_channel="threshold:0.5")

    assert pytest.raises(SceneParseError, load_scene, tmp_path / "missing.csv", target_channel="counts")
    assert pytest.raises(SceneParseError, load_scene, tmp_path / "scene.txt")
    assert pytest.raises(SceneParseError, load_scene, out_of_range, target_channel="top:3")

    no_sidecar = tmp_path / "alone.csv"
    no_sidecar.write_text("0,1\n1,0\n")
    assert pytest.raises(SceneParseError, load_scene, no_sidecar)

    broken = tmp_path / "broken.pgm"
    broken.write_bytes(b"not an image")
    assert pytest.raises(SceneParseError, load_scene, broken, target_channel="counts")


def test_load_scene_with_blocks(tmp_path):
    path = tmp_path / "scene.csv"
    path.write_text("0,1,1\n1,0,0\n")

    assert pytest.raises(DimensionMismatchError, load_scene, path, target_channel="threshold:0.5", block=2)


def test_empirical_prior_from_directory(tmp_path):
    for name, text in (("a.csv", "0,1\n1,0\n"), ("b.csv", "1,1\n0,0\n"), ("c.csv", "0.5,0.5\n0.5,0.5\n")):
        (tmp_path / name).write_text(text)
    (tmp_path / "a.target.csv").write_text("0,1\n1,0\n")

    prior = load_empirical_prior(tmp_path, 0.01)
    assert prior.get_n_components() == 3
    assert prior.get_means()[1].tolist() == [1.0, 1.0, 0.0, 0.0]


def test_value_space_maps():
    assert to_diffusion_space([0.0, 0.5, 1.0]).tolist() == [-1.0, 0.0, 1.0]
    assert to_cell_space([-1.0, 0.0, 1.0]).tolist() == [0.0, 0.5, 1.0]


def test_measurement_log():
    scene = Scene([[0.0, 0.5], [1.0, 0.25]], [[0.0, 0.0], [1.0, 0.0]])
    rng = np.random.default_rng(0)
    log = MeasurementLog()
    log.append(measure(scene, 2, rng, t=0))
    log.append(measure(scene, 1, rng, t=1))

    assert len(log) == 2
    assert log.get_locations() == [2, 1]
    assert log.get_coordinates().tolist() == [2, 1]
    assert log.get_values().tolist() == [1.0, 0.0]
    assert [d.label for d in log.dataset()] == [1.0, 0.0]


def test_episode_state():
    scene = Scene([[0.0, 0.5, 1.0]], [[0.0, 1.0, 1.0]])
    state = EpisodeState(2, 3)
    rng = np.random.default_rng(0)

    state.record(measure(scene, 1, rng, state.get_measured(), state.get_t()))
    assert state.get_candidates() == [0, 2]
    assert state.get_t() == 1 and state.get_remaining_budget() == 1
    assert state.get_reward() == 1.0
    assert pytest.raises(RepeatMeasurementError, state.record, measure(scene, 1, rng))

    state.record(measure(scene, 2, rng, state.get_measured(), state.get_t()))
    assert state.is_done()
    assert state.get_reward() == 2.0
    assert pytest.raises(ExhaustedCandidatesError, state.record, measure(scene, 0, rng))
    assert pytest.raises(InvalidRangeError, EpisodeState, 0, 3)
