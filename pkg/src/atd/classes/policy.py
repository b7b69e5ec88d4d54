import logging

from dataclasses import dataclass

import numpy as np

from atd.classes.measurement_log import EpisodeState
from atd.classes.particle_batch import BeliefConfig, ParticleBatch, RewardFn, ScoreField, score_field
from atd.classes.query_grid import QueryGrid
from atd.exc import BudgetExceedsStepsError, ExhaustedCandidatesError, InvalidRangeError

logger = logging.getLogger(__name__)

POLICY_KINDS: tuple[str, ...] = (
    "diffatd",
    "random",
    "max_ent",
    "greedy_adaptive",
    "ucb",
    "eps_greedy",
)
COMBINE_MODES: tuple[str, ...] = ("exploit", "likeli")
NORMALIZE_MODES: tuple[str, ...] = ("minmax", "none")
TIE_BREAKS: tuple[str, ...] = ("lowest_index", "seeded_random")
SCHEDULE_MODES: tuple[str, ...] = ("count", "stride")
UCB_PRIOR_MEAN: float = 1.0


@dataclass(frozen=True)
class PolicyConfig:
    """
    :param kind: selection rule
    :param alpha: budget scaling of the exploration weight
    :param kappa_fixed: constant exploration weight replacing the budget schedule
    :param ucb_radius: Chebyshev radius of the neighborhood a bandit arm pools rewards over
    :param label: name reported in suite tables, the kind when None
    """

    kind: str = "diffatd"
    alpha: float = 1.0
    combine_mode: str = "exploit"
    normalize: str = "minmax"
    tie_break: str = "lowest_index"
    ucb_c: float = float(np.sqrt(2.0))
    ucb_radius: int = 1
    epsilon: float = 0.1
    kappa_fixed: float | None = None
    label: str | None = None

    def __post_init__(self):
        for key, value, allowed in (
            ("kind", self.kind, POLICY_KINDS),
            ("combine_mode", self.combine_mode, COMBINE_MODES),
            ("normalize", self.normalize, NORMALIZE_MODES),
            ("tie_break", self.tie_break, TIE_BREAKS),
        ):
            if value not in allowed:
                raise InvalidRangeError(f"{value!r} not in {allowed}", key=f"policy.{key}")

        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise InvalidRangeError(f"must be > 0, got {self.alpha}", key="policy.alpha")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidRangeError(f"must lie in [0, 1], got {self.epsilon}", key="policy.epsilon")
        if self.ucb_c < 0 or self.ucb_radius < 0:
            raise InvalidRangeError("bandit parameters must be non-negative", key="policy.ucb_c")
        if self.kappa_fixed is not None and not 0.0 <= self.kappa_fixed <= 1.0:
            raise InvalidRangeError(
                f"must lie in [0, 1], got {self.kappa_fixed}", key="policy.kappa_fixed"
            )

    def get_label(self) -> str:
        return self.label or self.kind


@dataclass(frozen=True)
class Selection:
    location: int
    field: ScoreField
    kappa: float


def kappa(B: int, t: int, alpha: float = 1.0) -> float:
    """
    Exploration weight max(0, (alpha B - t) / (alpha B + t)).

    :param B: total budget
    :param t: measurements taken so far
    """
    if B < 1 or not 0 <= t <= B:
        raise InvalidRangeError(f"need B >= 1 and 0 <= t <= B, got B={B}, t={t}", key="budget")
    if alpha <= 0:
        raise InvalidRangeError(f"must be > 0, got {alpha}", key="policy.alpha")

    scaled = alpha * B

    return max(0.0, (scaled - t) / (scaled + t))


def _minmax(values: np.ndarray) -> np.ndarray:
    low, high = values.min(), values.max()
    if not high > low:
        return np.zeros_like(values)

    return (values - low) / (high - low)


def combined_score(
    field: ScoreField, kappa_val: float, combine_mode: str = "exploit", normalize: str = "minmax"
) -> np.ndarray:
    """
    kappa * exploration + (1 - kappa) * exploitation (or likelihood), per candidate.

    In minmax mode each component is rescaled to [0, 1] over the candidates first; a constant
    component becomes 0.
    """
    if len(field) == 0:
        raise ExhaustedCandidatesError("no candidate locations left")

    second = field.exploit if combine_mode == "exploit" else field.likeli
    expl = np.asarray(field.expl, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)

    if normalize == "minmax":
        expl, second = _minmax(expl), _minmax(second)

    return kappa_val * expl + (1.0 - kappa_val) * second


def _argmax(scores: np.ndarray, tie_break: str, rng: np.random.Generator) -> int:
    tied = np.flatnonzero(scores == scores.max())
    if tie_break == "seeded_random" and tied.size > 1:
        return int(rng.choice(tied))

    return int(tied[0])


class Policy:
    """
    Measurement selection over the unmeasured locations of an episode.

    Every rule scores the full candidate field, so traces carry the same columns whatever rule
    picked the location.
    """

    def __init__(self, cfg: PolicyConfig, belief: BeliefConfig, grid: QueryGrid):
        self.__cfg: PolicyConfig = cfg
        self.__belief: BeliefConfig = belief
        self.__grid: QueryGrid = grid

    def __str__(self) -> str:
        return f"Policy(kind={self.__cfg.kind}, label={self.__cfg.get_label()})"

    def __repr__(self) -> str:
        return self.__str__()

    def get_config(self) -> PolicyConfig:
        return self.__cfg

    def __neighborhood_means(self, state: EpisodeState, locations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Mean observed y and number of measurements in each location's neighborhood; unobserved
        neighborhoods get the optimistic prior mean.
        """
        observed = {m.location: m.y for m in state.get_log().get_measurements()}
        means = np.full(locations.size, UCB_PRIOR_MEAN)
        counts = np.zeros(locations.size)

        for i, location in enumerate(locations):
            ys = [observed[n] for n in self.__grid.neighbors(int(location), self.__cfg.ucb_radius) if n in observed]
            if ys:
                means[i] = float(np.mean(ys))
                counts[i] = len(ys)

        return means, counts

    def select(
        self,
        state: EpisodeState,
        batch: ParticleBatch,
        reward_net: RewardFn,
        rng: np.random.Generator,
    ) -> Selection:
        cfg = self.__cfg
        candidates = state.get_candidates()
        if not candidates or state.get_remaining_budget() == 0:
            raise ExhaustedCandidatesError(f"nothing left to select in {state}")

        field = score_field(batch, candidates, self.__belief, reward_net, self.__grid)
        locations = field.locations

        if cfg.kind in ("diffatd", "max_ent", "greedy_adaptive"):
            if cfg.kind == "max_ent":
                k = 1.0
            elif cfg.kind == "greedy_adaptive":
                k = 0.0
            elif cfg.kappa_fixed is not None:
                k = cfg.kappa_fixed
            else:
                k = kappa(state.get_budget(), state.get_t(), cfg.alpha)

            field = field.with_combined(combined_score(field, k, cfg.combine_mode, cfg.normalize))

            if cfg.kind == "max_ent":
                scores = field.expl
            elif cfg.kind == "greedy_adaptive":
                scores = field.exploit if cfg.combine_mode == "exploit" else field.likeli
            else:
                scores = field.combined

            idx = _argmax(scores, cfg.tie_break, rng)
            return Selection(int(locations[idx]), field, float(k))

        if cfg.kind == "random":
            idx = int(rng.integers(locations.size))
            return Selection(int(locations[idx]), field, float("nan"))

        means, counts = self.__neighborhood_means(state, locations)

        if cfg.kind == "ucb":
            index = means + cfg.ucb_c * np.sqrt(np.log(state.get_t() + 1.0) / (counts + 1.0))
            field = field.with_combined(index)
            idx = _argmax(index, cfg.tie_break, rng)
            return Selection(int(locations[idx]), field, float("nan"))

        field = field.with_combined(means)
        if rng.random() < cfg.epsilon:
            idx = int(rng.integers(locations.size))
        else:
            idx = _argmax(means, cfg.tie_break, rng)

        return Selection(int(locations[idx]), field, float("nan"))


def select(
    cfg: PolicyConfig,
    state: EpisodeState,
    batch: ParticleBatch,
    belief: BeliefConfig,
    reward_net: RewardFn,
    rng: np.random.Generator,
    grid: QueryGrid,
) -> int:
    return Policy(cfg, belief, grid).select(state, batch, reward_net, rng).location


def build_measurement_schedule(T: int, B: int, mode: str = "count", stride: int | None = None) -> set[int]:
    """
    Reverse steps after which a measurement is taken.

    In count mode the j-th measurement follows ceil(T j / B) reverse steps, so it happens at
    tau = T - ceil(T j / B) + 1 and the last one at tau = 1. In stride mode it follows stride * j
    steps.

    :return: set of B reverse steps
    """
    if B < 1 or T < 1:
        raise InvalidRangeError(f"need T >= 1 and B >= 1, got T={T}, B={B}", key="budget")
    if B > T:
        raise BudgetExceedsStepsError(f"budget {B} exceeds {T} reverse steps", key="budget")
    if mode not in SCHEDULE_MODES:
        raise InvalidRangeError(f"unknown mode {mode!r}", key="schedule.mode")

    if mode == "count":
        steps_done = [-(-T * j // B) for j in range(1, B + 1)]
    else:
        if stride is None or stride < 1 or stride * B > T:
            raise BudgetExceedsStepsError(
                f"stride {stride} with budget {B} does not fit {T} reverse steps", key="schedule.stride"
            )
        steps_done = [stride * j for j in range(1, B + 1)]

    return {T - done + 1 for done in steps_done}
