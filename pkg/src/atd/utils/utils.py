import logging

from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

CSV_FLOAT_FORMAT: str = "%.17g"


class EpisodeStreams(NamedTuple):
    scene: np.random.Generator
    noise: np.random.Generator
    policy: np.random.Generator
    reward_seed: int
    particles: list[np.random.Generator]


def episode_streams(seed: int, n_b: int) -> EpisodeStreams:
    """
    Split one episode seed into independent named random streams.

    Each particle gets its own stream, so a particle's trajectory does not depend on how many
    others run beside it or in which order they are evaluated.

    :param seed: episode seed
    :param n_b: number of particles
    """
    scene, noise, policy, reward, particles = np.random.SeedSequence(seed).spawn(5)

    return EpisodeStreams(
        scene=np.random.default_rng(scene),
        noise=np.random.default_rng(noise),
        policy=np.random.default_rng(policy),
        reward_seed=int(reward.generate_state(1)[0]),
        particles=[np.random.default_rng(s) for s in particles.spawn(n_b)],
    )


def write_frame(df: pd.DataFrame, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
