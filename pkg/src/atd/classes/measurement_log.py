import numpy as np

from atd.classes.reward_net import LabeledPatch
from atd.classes.scene import Measurement
from atd.exc import ExhaustedCandidatesError, InvalidRangeError, RepeatMeasurementError


def to_diffusion_space(values) -> np.ndarray:
    """
    Affine map of [0, 1] cell values onto the [-1, 1] range the diffusion runs in.
    """
    return 2.0 * np.asarray(values, dtype=np.float64) - 1.0


def to_cell_space(values) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) + 1.0) / 2.0


class MeasurementLog:
    """
    Ordered measurements of one episode. Revealed content is kept both as measured and mapped to
    diffusion space, where guidance compares it with the particles.
    """

    def __init__(self):
        self.__measurements: list[Measurement] = []
        self.__coordinates: np.ndarray = np.empty(0, dtype=np.int64)
        self.__values: np.ndarray = np.empty(0, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.__measurements)

    def __str__(self) -> str:
        return f"MeasurementLog(locations={self.get_locations()})"

    def __repr__(self) -> str:
        return self.__str__()

    def append(self, measurement: Measurement) -> None:
        self.__measurements.append(measurement)
        self.__coordinates = np.concatenate((self.__coordinates, measurement.cells))
        self.__values = np.concatenate((self.__values, to_diffusion_space(measurement.content)))

    def get_measurements(self) -> list[Measurement]:
        return list(self.__measurements)

    def get_locations(self) -> list[int]:
        return [m.location for m in self.__measurements]

    def get_coordinates(self) -> np.ndarray:
        return self.__coordinates

    def get_values(self) -> np.ndarray:
        return self.__values

    def dataset(self) -> list[LabeledPatch]:
        return [LabeledPatch(to_diffusion_space(m.content), m.y) for m in self.__measurements]


class EpisodeState:
    """
    Budget bookkeeping of one episode. Single writer: only record() mutates it.

    :param budget: total measurement budget B
    :param n_locations: number of query locations; every location starts as a candidate
    """

    def __init__(self, budget: int, n_locations: int):
        if budget < 1:
            raise InvalidRangeError(f"must be >= 1, got {budget}", key="budget")

        self.__budget: int = budget
        self.__candidates: list[int] = list(range(n_locations))
        self.__measured: set[int] = set()
        self.__log: MeasurementLog = MeasurementLog()
        self.__reward: float = 0.0

    def __str__(self) -> str:
        return (
            f"EpisodeState(B={self.__budget}, t={self.get_t()}, "
            f"candidates={len(self.__candidates)}, R={self.__reward})"
        )

    def __repr__(self) -> str:
        return self.__str__()

    def get_budget(self) -> int:
        return self.__budget

    def get_t(self) -> int:
        return len(self.__log)

    def get_remaining_budget(self) -> int:
        return self.__budget - self.get_t()

    def get_candidates(self) -> list[int]:
        """
        Unmeasured locations in increasing order.
        """
        return list(self.__candidates)

    def get_measured(self) -> set[int]:
        return set(self.__measured)

    def get_log(self) -> MeasurementLog:
        return self.__log

    def get_reward(self) -> float:
        return self.__reward

    def is_done(self) -> bool:
        return self.get_remaining_budget() == 0 or not self.__candidates

    def record(self, measurement: Measurement) -> None:
        if self.get_remaining_budget() == 0:
            raise ExhaustedCandidatesError(f"budget of {self.__budget} measurements spent")
        if measurement.location in self.__measured:
            raise RepeatMeasurementError(f"location {measurement.location} already measured")

        self.__candidates.remove(measurement.location)
        self.__measured.add(measurement.location)
        self.__log.append(measurement)
        self.__reward += measurement.y
