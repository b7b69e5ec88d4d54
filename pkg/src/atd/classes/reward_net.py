import json
import logging

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from packaging.version import InvalidVersion, Version
from scipy.special import expit

from atd.exc import DimensionMismatchError, EmptyDatasetError, InvalidRangeError

logger = logging.getLogger(__name__)

LEAKY_SLOPE: float = 0.01
PROB_EPS: float = 1e-15
GRAD_CHECK_STEP: float = 1e-5
GRAD_CHECK_FLOOR: float = 1e-4
CHECKPOINT_VERSION: str = "1.0"

# hidden widths; "deep" is the full dense stack for 4x4 patches, "wide" drops its narrow first layer
PRESETS: dict[str, tuple[int, ...]] = {
    "default": (16, 8),
    "wide": (32, 16, 8),
    "deep": (4, 32, 16, 8),
}


@dataclass(frozen=True)
class LabeledPatch:
    patch: np.ndarray
    label: float

    def __post_init__(self):
        if not 0.0 <= self.label <= 1.0:
            raise InvalidRangeError(f"label must lie in [0, 1], got {self.label}", key="label")


def _leaky(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, LEAKY_SLOPE * z)


def _leaky_slope(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, LEAKY_SLOPE)


class RewardNet:
    """
    Dense network mapping a flattened patch to the probability that it holds target content.

    Hidden layers use a leaky rectifier, the output a sigmoid. Weights are drawn uniformly in
    +-1/sqrt(fan_in) from the seed, biases start at zero.

    :param input_dim: patch area
    :param hidden: hidden layer widths, may be empty
    :param seed: initialization seed
    """

    def __init__(self, input_dim: int, hidden: tuple[int, ...] = PRESETS["default"], seed: int = 0):
        if input_dim < 1 or any(h < 1 for h in hidden):
            raise InvalidRangeError(f"invalid layer sizes {input_dim}, {hidden}", key="reward.hidden")

        self.__input_dim: int = int(input_dim)
        self.__hidden: tuple[int, ...] = tuple(int(h) for h in hidden)
        self.__seed: int = int(seed)

        rng = np.random.default_rng(self.__seed)
        sizes = (self.__input_dim, *self.__hidden, 1)
        self.__layers: list[tuple[np.ndarray, np.ndarray]] = []

        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.__layers.append((rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)))

    def __str__(self) -> str:
        return f"RewardNet(sizes={self.get_sizes()}, seed={self.__seed})"

    def __repr__(self) -> str:
        return self.__str__()

    def get_input_dim(self) -> int:
        return self.__input_dim

    def get_hidden(self) -> tuple[int, ...]:
        return self.__hidden

    def get_seed(self) -> int:
        return self.__seed

    def get_sizes(self) -> tuple[int, ...]:
        return (self.__input_dim, *self.__hidden, 1)

    def get_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(w.copy(), b.copy()) for w, b in self.__layers]

    def set_layers(self, layers: list[tuple[np.ndarray, np.ndarray]]) -> None:
        if len(layers) != len(self.__layers):
            raise DimensionMismatchError(f"{len(layers)} layers for a {len(self.__layers)}-layer net")

        new_layers = []
        for (w, b), (w_old, b_old) in zip(layers, self.__layers):
            w, b = np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)
            if w.shape != w_old.shape or b.shape != b_old.shape:
                raise DimensionMismatchError(f"layer {w.shape}/{b.shape} for {w_old.shape}/{b_old.shape}")
            new_layers.append((w.copy(), b.copy()))

        self.__layers = new_layers

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in self.__layers)

    def _inputs(self, patches) -> tuple[np.ndarray, bool]:
        x = np.asarray(patches, dtype=np.float64)
        single = x.ndim <= 1
        x = x.reshape(1, -1) if single else x

        if x.shape[1] != self.__input_dim:
            raise DimensionMismatchError(f"patch of size {x.shape[1]} for input {self.__input_dim}")

        return x, single

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        """
        :return: (output logits, layer inputs, hidden pre-activations)
        """
        inputs, pre = [], []
        h = x

        for w, b in self.__layers[:-1]:
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = _leaky(z)

        w, b = self.__layers[-1]
        inputs.append(h)

        return (h @ w + b)[:, 0], inputs, pre

    def logits(self, patches) -> np.ndarray:
        x, _ = self._inputs(patches)
        return self._forward(x)[0]

    def predict(self, patches):
        """
        :param patches: one flattened patch, or M x input_dim patches
        :return: probability, or M probabilities
        """
        x, single = self._inputs(patches)
        p = np.clip(expit(self._forward(x)[0]), PROB_EPS, 1.0 - PROB_EPS)

        return float(p[0]) if single else p

    def __call__(self, patches):
        return self.predict(patches)

    def gradients(self, patches, labels) -> list[tuple[np.ndarray, np.ndarray]]:
        """
        Gradient of the summed binary cross-entropy with respect to every layer.
        """
        x, _ = self._inputs(patches)
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        z_out, inputs, pre = self._forward(x)

        delta = (expit(z_out) - labels)[:, None]
        grads = []

        for i in range(len(self.__layers) - 1, -1, -1):
            w, _ = self.__layers[i]
            grads.append((inputs[i].T @ delta, delta.sum(axis=0)))
            if i > 0:
                delta = (delta @ w.T) * _leaky_slope(pre[i - 1])

        return grads[::-1]

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": {"input_dim": self.__input_dim, "hidden": list(self.__hidden)},
            "seed": self.__seed,
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in self.__layers],
        }

    @classmethod
    def from_dict(cls, document: dict) -> "RewardNet":
        try:
            version = Version(str(document.get("version", CHECKPOINT_VERSION)))
        except InvalidVersion as e:
            raise DimensionMismatchError(f"unreadable checkpoint version: {e}") from e
        if version.major != Version(CHECKPOINT_VERSION).major:
            raise DimensionMismatchError(f"checkpoint version {version} is not supported")

        config = document["config"]
        net = cls(config["input_dim"], tuple(config["hidden"]), document["seed"])
        net.set_layers([(layer["w"], layer["b"]) for layer in document["layers"]])

        return net

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path: str | Path) -> "RewardNet":
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))


def make_reward_net(
    input_dim: int, preset: str = "default", hidden: tuple[int, ...] | None = None, seed: int = 0
) -> RewardNet:
    if hidden is None:
        if preset not in PRESETS:
            raise InvalidRangeError(f"unknown preset {preset!r}", key="reward.preset")
        hidden = PRESETS[preset]

    return RewardNet(input_dim, tuple(hidden), seed)


def _as_arrays(dataset: list[LabeledPatch]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise EmptyDatasetError("the reward dataset is empty")

    patches = np.stack([np.asarray(d.patch, dtype=np.float64).reshape(-1) for d in dataset])
    labels = np.array([d.label for d in dataset], dtype=np.float64)

    return patches, labels


def bce_loss(net: RewardNet, dataset: list[LabeledPatch]) -> float:
    """
    Summed binary cross-entropy -(y log p + (1 - y) log(1 - p)), evaluated from the logits as
    log(1 + e^z) - y z. Soft labels are accepted.
    """
    patches, labels = _as_arrays(dataset)
    z = net.logits(patches)

    return float(np.sum(np.logaddexp(0.0, z) - labels * z))


def train(net: RewardNet, dataset: list[LabeledPatch], epochs: int = 3, lr: float = 0.01) -> RewardNet:
    """
    Full-batch gradient descent on the summed cross-entropy, in place.

    :return: the same net
    """
    patches, labels = _as_arrays(dataset)

    for _ in range(epochs):
        grads = net.gradients(patches, labels)
        net.set_layers([(w - lr * dw, b - lr * db) for (w, b), (dw, db) in zip(net.get_layers(), grads)])

    return net


def grad_check(net: RewardNet, dataset: list[LabeledPatch], h: float = GRAD_CHECK_STEP) -> float:
    """
    Compare backpropagated gradients with central differences of the loss.

    :return: max over parameters of |analytic - numeric| / max(|analytic| + |numeric|, 1e-4)
    """
    patches, labels = _as_arrays(dataset)
    analytic = net.gradients(patches, labels)
    layers = net.get_layers()
    worst = 0.0

    for i, (w, b) in enumerate(layers):
        for param, grad in ((w, analytic[i][0]), (b, analytic[i][1])):
            for idx in np.ndindex(param.shape):
                original = param[idx]
                losses = []

                for step in (h, -h):
                    param[idx] = original + step
                    net.set_layers(layers)
                    losses.append(bce_loss(net, dataset))

                param[idx] = original
                numeric = (losses[0] - losses[1]) / (2.0 * h)
                rel = abs(grad[idx] - numeric) / max(abs(grad[idx]) + abs(numeric), GRAD_CHECK_FLOOR)
                worst = max(worst, rel)

    net.set_layers(layers)
    logger.debug(f"Gradient check over {net.n_parameters()} parameters: {worst:.3e}")

    return worst
