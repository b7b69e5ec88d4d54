import logging
import time

import numpy as np
import pandas as pd

from tqdm import tqdm

from atd.classes.episode_result import EpisodeResult, StepRecord
from atd.classes.gaussian_mixture import (
    GaussianMixturePrior,
    GmmScoreFunction,
    make_blob_prior,
    standard_prior,
)
from atd.classes.measurement_log import EpisodeState, to_cell_space
from atd.classes.noise_schedule import make_schedule
from atd.classes.particle_batch import ParticleBatch, marginal_entropy
from atd.classes.policy import Policy, build_measurement_schedule
from atd.classes.reward_net import make_reward_net, train
from atd.classes.scene import ComponentRule, Scene, ThresholdRule, gen_gmm_scene, load_empirical_prior, load_scene, measure
from atd.exc import AtdError, ConfigError
from atd.utils.config import ExperimentConfig, PriorConfig
from atd.utils.utils import episode_streams

logger = logging.getLogger(__name__)


def build_prior(cfg: PriorConfig, rows: int, cols: int, key: str = "prior") -> GaussianMixturePrior:
    """
    Prior over [0, 1] cell values described by a prior section.
    """
    try:
        if cfg.kind == "blobs":
            prior = make_blob_prior(rows, cols, cfg.n_components, np.random.default_rng(cfg.seed), cfg.variance)
        elif cfg.kind == "file":
            prior = GaussianMixturePrior.load(cfg.path)
        elif cfg.kind == "empirical":
            prior = load_empirical_prior(cfg.directory, cfg.variance)
        else:
            prior = standard_prior(rows * cols)
    except FileNotFoundError as e:
        raise ConfigError(f"prior source not found: {e.filename}", key=key) from e
    except AtdError as e:
        raise ConfigError(str(e), key=key) from e

    if prior.get_dimension() != rows * cols:
        raise ConfigError(
            f"prior of dimension {prior.get_dimension()} for a {rows}x{cols} grid", key=key
        )

    return prior


class EpisodeRunner:
    """
    Runs episodes of one configuration.

    Construction validates everything and builds the seed-independent parts (schedule, priors,
    score function), so configuration errors surface before any computation.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.__cfg: ExperimentConfig = cfg
        scene_cfg = cfg.scene

        self.__file_scene: Scene | None = None
        if scene_cfg.source == "file":
            try:
                self.__file_scene = load_scene(
                    scene_cfg.path, scene_cfg.format, scene_cfg.target_channel, scene_cfg.block, scene_cfg.noise
                )
            except AtdError as e:
                raise ConfigError(str(e), key="scene.path") from e
            rows, cols = self.__file_scene.get_shape()
        else:
            rows, cols = scene_cfg.rows, scene_cfg.cols

        self.__scene_prior: GaussianMixturePrior = build_prior(cfg.prior, rows, cols)
        belief_prior = (
            build_prior(cfg.belief_prior, rows, cols, key="belief_prior")
            if cfg.belief_prior is not None
            else self.__scene_prior
        )

        d = cfg.diffusion
        self.__sched = make_schedule(d.T, d.beta_min, d.beta_max, d.curve, d.sigma)
        self.__score_fn: GmmScoreFunction = GmmScoreFunction(belief_prior.to_diffusion_space(), self.__sched)

        if scene_cfg.target_rule.kind == "component":
            self.__rule = ComponentRule(scene_cfg.target_rule.theta)
        else:
            self.__rule = ThresholdRule(scene_cfg.target_rule.theta)

        self.__shape: tuple[int, int] = (rows, cols)
        n_locations = (rows // scene_cfg.block) * (cols // scene_cfg.block)
        self.__budget: int = min(cfg.budget, n_locations)
        self.__measure_at: set[int] = build_measurement_schedule(
            d.T, self.__budget, cfg.schedule.mode, cfg.schedule.stride
        )
        # raises on unknown presets before the first episode
        make_reward_net(scene_cfg.block**2, cfg.reward.preset, cfg.reward.hidden)

    def get_config(self) -> ExperimentConfig:
        return self.__cfg

    def get_measurement_steps(self) -> set[int]:
        return set(self.__measure_at)

    def build_scene(self, rng: np.random.Generator) -> Scene:
        if self.__file_scene is not None:
            return self.__file_scene

        s = self.__cfg.scene
        return gen_gmm_scene(self.__scene_prior, self.__rule, rng, self.__shape, s.block, s.noise)

    def run(self, seed: int, progress: bool = False, capture_scores: bool = False) -> EpisodeResult:
        """
        One full episode: reverse diffusion with measurement guidance, a measurement at every
        scheduled step, and a reward-model update after each measurement.

        :param seed: episode seed; fixes every random draw
        :param progress: show a progress bar over reverse steps
        :param capture_scores: keep the candidate score field of every step
        """
        cfg = self.__cfg
        started = time.perf_counter()
        streams = episode_streams(seed, cfg.belief.n_b)

        scene = self.build_scene(streams.scene)
        grid = scene.get_query_grid()
        belief = cfg.belief.to_belief_config()
        policy = Policy(cfg.policy, belief, grid)
        net = make_reward_net(grid.get_patch_size(), cfg.reward.preset, cfg.reward.hidden, streams.reward_seed)

        state = EpisodeState(self.__budget, grid.get_n_locations())
        batch = ParticleBatch.initialize(scene.get_N(), streams.particles, self.__score_fn, self.__sched)
        records: list[StepRecord] = []
        fields: list[pd.DataFrame] = []
        label = cfg.policy.get_label()

        steps = tqdm(
            range(self.__sched.get_T(), 0, -1),
            desc=f"Episode {label} seed {seed}",
            disable=not progress,
            leave=False,
        )
        for tau in steps:
            batch = batch.advance(state.get_log(), cfg.guidance, self.__score_fn, self.__sched, streams.particles)

            if tau not in self.__measure_at or state.is_done():
                continue

            selection = policy.select(state, batch, net, streams.policy)
            t = state.get_t()
            measurement = measure(scene, selection.location, streams.noise, state.get_measured(), t=t)
            state.record(measurement)
            train(net, state.get_log().dataset(), cfg.reward.epochs, cfg.reward.lr)

            field = selection.field
            idx = field.index_of(selection.location)
            records.append(
                StepRecord(
                    t=t,
                    tau=tau,
                    location=selection.location,
                    kappa=selection.kappa,
                    expl=float(field.expl[idx]),
                    likeli=float(field.likeli[idx]),
                    reward=float(field.reward[idx]),
                    exploit=float(field.exploit[idx]),
                    combined=float(field.combined[idx]) if field.combined is not None else float("nan"),
                    y=measurement.y,
                    entropy=marginal_entropy(batch, belief),
                )
            )
            if capture_scores:
                fields.append(field.to_frame(t))

        final_mean = to_cell_space(batch.mean())
        mse = float(np.mean((final_mean - scene.get_grid().reshape(-1)) ** 2))
        runtime = time.perf_counter() - started

        logger.debug(f"Episode {label} seed {seed}: R={state.get_reward():.4g}, U={scene.get_U()}, {runtime:.2f}s")
        if scene.get_U() == 0:
            logger.warning(f"Scene of {label} seed {seed} holds no target")

        return EpisodeResult(
            label=label,
            seed=seed,
            budget=cfg.budget,
            U=scene.get_U(),
            records=records,
            runtime=runtime,
            final_mean=final_mean,
            mse=mse,
            score_fields=pd.concat(fields, ignore_index=True) if fields else None,
        )


def run_episode(
    cfg: ExperimentConfig, seed: int, progress: bool = False, capture_scores: bool = False
) -> EpisodeResult:
    return EpisodeRunner(cfg).run(seed, progress=progress, capture_scores=capture_scores)
