"""
Multi-seed experiment suites: policies x budgets (x variants) x seeds, aggregated to one row per
(policy, budget) with the mean and standard deviation of the success rate over seeds.
"""
import logging

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from tqdm import tqdm

from atd.classes.episode_result import success_rate
from atd.classes.episode_runner import EpisodeRunner
from atd.utils.config import ExperimentConfig
from atd.utils.utils import write_frame

logger = logging.getLogger(__name__)

SAVE_FREQUENCY: int = 10  # episodes finished between two checkpoint writes
RESULTS_FILE: str = "results.csv"
EPISODES_FILE: str = "episodes.csv"
FAILURES_FILE: str = "failures.csv"
TRACES_DIR: str = "traces"
EPISODE_COLUMNS: list[str] = ["policy", "B", "seed", "config_hash", "sr_term", "R", "U", "runtime", "mse"]
TABLE_COLUMNS: list[str] = ["policy", "B", "mean_SR", "std_SR", "n_seeds", "mean_runtime"]
FAILURE_COLUMNS: list[str] = ["policy", "B", "seed", "error"]


@dataclass(frozen=True)
class SuiteCell:
    label: str
    budget: int
    cfg: ExperimentConfig

    def key(self, seed: int) -> tuple[str, int, int, str]:
        return self.label, self.budget, seed, self.cfg.fingerprint()


def expand_cells(cfg: ExperimentConfig) -> list[SuiteCell]:
    """
    Configurations of every (variant, policy, budget) cell. Invalid variants raise here, before
    any episode runs.
    """
    budgets = cfg.suite.budgets or (cfg.budget,)
    variants = ([None] if cfg.suite.include_base else []) + list(cfg.suite.variants)
    cells = []

    for variant in variants:
        for kind in cfg.suite.policies:
            for budget in budgets:
                label = kind if variant is None else f"{kind}[{variant.label}]"
                overrides = {"policy.kind": kind, "policy.label": label, "budget": budget}
                if variant is not None:
                    overrides.update(variant.overrides)
                cells.append(SuiteCell(label, budget, cfg.with_overrides(overrides)))

    return cells


def get_checkpoint(path: Path) -> pd.DataFrame:
    """
    Episodes finished by an earlier run, so they are not run again. Rows written without a
    configuration hash never match a cell.
    """
    if not path.is_file():
        return pd.DataFrame(columns=EPISODE_COLUMNS)

    done = pd.read_csv(path, float_precision="round_trip", dtype={"config_hash": str})
    logger.info(f"Resuming from {path}: {len(done)} episodes already done")

    return done.reindex(columns=EPISODE_COLUMNS)


def _run_job(cell: SuiteCell, seed: int, trace_dir: str | None) -> tuple[bool, dict]:
    try:
        result = EpisodeRunner(cell.cfg).run(seed)
        if trace_dir is not None:
            result.to_csv(Path(trace_dir) / f"{cell.label}_B{cell.budget}_seed{seed}.csv")

        return True, {
            "policy": cell.label,
            "B": cell.budget,
            "seed": seed,
            "config_hash": cell.cfg.fingerprint(),
            "sr_term": success_rate([result], cell.budget),
            "R": result.get_R(),
            "U": result.get_U(),
            "runtime": result.get_runtime(),
            "mse": result.get_mse(),
        }
    except Exception as e:
        logger.error(f"Error processing {cell.label} B={cell.budget} seed {seed}: {e}")
        return False, {"policy": cell.label, "B": cell.budget, "seed": seed, "error": repr(e)}


def aggregate(episodes: pd.DataFrame) -> pd.DataFrame:
    """
    One row per (policy, B), sorted by that key; std over seeds is the population deviation.
    """
    if episodes.empty:
        return pd.DataFrame(columns=TABLE_COLUMNS)

    ordered = episodes.sort_values(["policy", "B", "seed"], kind="mergesort")
    grouped = ordered.groupby(["policy", "B"], sort=True)
    table = grouped.agg(
        mean_SR=("sr_term", "mean"),
        std_SR=("sr_term", lambda s: s.std(ddof=0)),
        n_seeds=("seed", "count"),
        mean_runtime=("runtime", "mean"),
    ).reset_index()

    return table[TABLE_COLUMNS]


def run_suite(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    traces: bool = False,
    progress: bool = True,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Run every cell of the suite for every seed.

    Failed episodes are logged and reported, never fatal. Results do not depend on the execution
    order or on the number of jobs.

    :param out_dir: where results.csv, episodes.csv, failures.csv and traces/ go; nothing is
        written when None
    :param jobs: number of worker processes
    :param traces: write one step-trace CSV per episode
    :return: (results table, failures)
    """
    cells = expand_cells(cfg)
    out = Path(out_dir) if out_dir is not None else None
    trace_dir = None

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if traces:
            trace_dir = out / TRACES_DIR
            trace_dir.mkdir(exist_ok=True)

    done = get_checkpoint(out / EPISODES_FILE) if out is not None else pd.DataFrame(columns=EPISODE_COLUMNS)
    wanted = {c.key(s) for c in cells for s in cfg.seeds}
    episodes = []

    # a finished row is reused only when its configuration hash matches the cell
    for row in done.to_dict("records"):
        key = (row["policy"], int(row["B"]), int(row["seed"]), str(row["config_hash"]))
        if key in wanted:
            episodes.append(row)
            wanted.discard(key)

    if len(episodes) < len(done):
        logger.info(f"{len(done) - len(episodes)} checkpointed episodes do not match the current suite")

    pending = [(c, s) for c in cells for s in cfg.seeds if c.key(s) in wanted]
    failures: list[dict] = []
    logger.info(f"Suite {cfg.name}: {len(cells)} cells x {len(cfg.seeds)} seeds, {len(pending)} episodes to run")

    def _collect(ok: bool, row: dict) -> None:
        (episodes if ok else failures).append(row)
        if out is not None and ok and len(episodes) % SAVE_FREQUENCY == 0:
            write_frame(pd.DataFrame(episodes, columns=EPISODE_COLUMNS), out / EPISODES_FILE)

    trace_arg = str(trace_dir) if trace_dir is not None else None
    bar = tqdm(total=len(pending), desc=f"Suite analysis({cfg.name})", disable=not progress)

    if jobs <= 1:
        for cell, seed in pending:
            _collect(*_run_job(cell, seed, trace_arg))
            bar.update()
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_job, cell, seed, trace_arg) for cell, seed in pending]
            for future in as_completed(futures):
                _collect(*future.result())
                bar.update()
    bar.close()

    episodes_df = pd.DataFrame(episodes, columns=EPISODE_COLUMNS)
    episodes_df = episodes_df.sort_values(["policy", "B", "seed"], kind="mergesort").reset_index(drop=True)
    failures_df = pd.DataFrame(failures, columns=FAILURE_COLUMNS)
    failures_df = failures_df.sort_values(["policy", "B", "seed"], kind="mergesort").reset_index(drop=True)
    table = aggregate(episodes_df)

    if out is not None:
        write_frame(episodes_df, out / EPISODES_FILE)
        write_frame(table, out / RESULTS_FILE)
        if not failures_df.empty:
            write_frame(failures_df, out / FAILURES_FILE)

    if not failures_df.empty:
        logger.warning(f"{len(failures_df)} episodes failed: {failures_df[['policy', 'B', 'seed']].to_dict('records')}")

    return table, failures_df
