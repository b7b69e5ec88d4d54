from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from atd.exc import EmptyResultsError
from atd.utils.utils import write_frame


@dataclass(frozen=True)
class StepRecord:
    t: int
    tau: int
    location: int
    kappa: float
    expl: float
    likeli: float
    reward: float
    exploit: float
    combined: float
    y: float
    entropy: float


TRACE_COLUMNS: list[str] = [f.name for f in fields(StepRecord)]


class EpisodeResult:
    """
    Outcome of one episode: the step trace plus what the success rate needs.

    :param label: policy label
    :param seed: episode seed
    :param budget: configured budget B
    :param U: number of locations holding target
    :param records: one record per measurement, in order
    :param runtime: wall time in seconds, excluded from every metric
    :param final_mean: mean of the final particles in cell space
    :param mse: mean squared error of final_mean to the ground-truth grid
    :param score_fields: candidate score fields per step, when captured
    """

    def __init__(
        self,
        label: str,
        seed: int,
        budget: int,
        U: int,
        records: list[StepRecord],
        runtime: float = 0.0,
        final_mean: np.ndarray | None = None,
        mse: float = float("nan"),
        score_fields: pd.DataFrame | None = None,
    ):
        self.__label: str = label
        self.__seed: int = seed
        self.__budget: int = budget
        self.__U: int = U
        self.__records: list[StepRecord] = list(records)
        self.__runtime: float = runtime
        self.__final_mean: np.ndarray | None = final_mean
        self.__mse: float = mse
        self.__score_fields: pd.DataFrame | None = score_fields

    def __str__(self) -> str:
        return (
            f"EpisodeResult(label={self.__label}, seed={self.__seed}, B={self.__budget}, "
            f"U={self.__U}, steps={len(self.__records)}, R={self.get_R():.4g})"
        )

    def __repr__(self) -> str:
        return self.__str__()

    def get_label(self) -> str:
        return self.__label

    def get_seed(self) -> int:
        return self.__seed

    def get_budget(self) -> int:
        return self.__budget

    def get_U(self) -> int:
        return self.__U

    def get_records(self) -> list[StepRecord]:
        return list(self.__records)

    def get_runtime(self) -> float:
        return self.__runtime

    def get_final_mean(self) -> np.ndarray | None:
        return self.__final_mean

    def get_mse(self) -> float:
        return self.__mse

    def get_score_fields(self) -> pd.DataFrame | None:
        return self.__score_fields

    def get_R(self) -> float:
        return float(sum(r.y for r in self.__records))

    def get_sr_term(self, budget: int | None = None) -> float:
        """
        R / min(B, U), 0 for a scene without targets.
        """
        denominator = min(budget if budget is not None else self.__budget, self.__U)
        return self.get_R() / denominator if denominator > 0 else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.__records], columns=TRACE_COLUMNS)

    def to_csv(self, path: str | Path) -> None:
        write_frame(self.to_frame(), path)

    def score_fields_to_csv(self, path: str | Path) -> None:
        if self.__score_fields is None:
            raise EmptyResultsError("score fields were not captured for this episode")

        write_frame(self.__score_fields, path)


def success_rate(results: list[EpisodeResult], B: int | None = None) -> float:
    """
    Mean over tasks of sum(y) / min(B, U).

    :param B: budget, each result's own budget when omitted
    """
    if not results:
        raise EmptyResultsError("success rate of an empty result list")

    return float(np.mean([r.get_sr_term(B) for r in results]))
