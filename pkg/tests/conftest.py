import json

from pathlib import Path

import numpy as np
import pytest

from atd.classes.particle_batch import ParticleBatch
from atd.utils.config import apply_overrides, build_config

CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"

TINY = {
    "name": "tiny",
    "scene": {"source": "gmm", "rows": 4, "cols": 4, "block": 1},
    "prior": {"kind": "blobs", "n_components": 3, "seed": 0, "variance": 0.005},
    "diffusion": {"T": 20},
    "guidance": {"zeta": 0.5},
    "belief": {"n_b": 4},
    "budget": 4,
    "seeds": [0],
    "suite": {"policies": ["diffatd"]},
}


def tiny_document(**overrides) -> dict:
    return apply_overrides(TINY, overrides)


@pytest.fixture
def tiny_config():
    def _make(**overrides):
        return build_config(tiny_document(**overrides))

    return _make


@pytest.fixture
def config_file(tmp_path):
    def _write(name: str = "c.json", **overrides) -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(tiny_document(**overrides)))
        return path

    return _write


def batch_of(values) -> ParticleBatch:
    """
    Fully denoised batch whose particles are the given rows.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    return ParticleBatch(values, values, 0)


def constant_reward(value: float):
    def _reward(patches):
        return np.full(len(patches), value)

    return _reward
