import argparse
import logging
import sys

from pathlib import Path

import jsonschema

from tqdm.contrib.logging import logging_redirect_tqdm

from atd import __version__
from atd.classes.episode_runner import EpisodeRunner
from atd.classes.experiment_suite import run_suite
from atd.classes.scene import save_scene
from atd.exc import ConfigError, SceneParseError
from atd.utils.config import load_config
from atd.utils.utils import configure_logging, episode_streams
from atd.validation import run_validation

logger = logging.getLogger("atd.cli")

EXIT_OK: int = 0
EXIT_CONFIG: int = 1
EXIT_RUNTIME: int = 2


def create_argparser():
    parser = argparse.ArgumentParser(
        prog="atd",
        description="Active target discovery with diffusion-based belief tracking",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr.")

    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-scene", help="Sample a scene and write it as csv or pgm.")
    gen.add_argument("--config", required=True, help="Experiment configuration (json or toml).")
    gen.add_argument("--seed", type=int, default=0, help="Episode seed the scene is drawn with.")
    gen.add_argument("--out", required=True, help="Scene file; a .target.csv sidecar is written next to it.")

    run = subparsers.add_parser("run", help="Run one episode and write its step trace.")
    run.add_argument("--config", required=True, help="Experiment configuration (json or toml).")
    run.add_argument("--seed", type=int, default=0, help="Episode seed.")
    run.add_argument("--out", required=True, help="Step trace csv.")
    run.add_argument("--policy", help="Override policy.kind.")
    run.add_argument("--budget", type=int, help="Override budget.")
    run.add_argument("--trace", help="Also write every step's candidate score field to this csv.")

    suite = subparsers.add_parser("suite", help="Run policies x budgets x seeds and aggregate.")
    suite.add_argument("--config", required=True, help="Experiment configuration (json or toml).")
    suite.add_argument("--out", help="Output directory, output_dir of the config by default.")
    suite.add_argument("--jobs", type=int, default=1, help="Worker processes.")
    suite.add_argument("--policy", help="Run only this policy.")
    suite.add_argument("--budget", type=int, help="Run only this budget.")
    suite.add_argument("--seed", type=int, help="Run only this seed.")
    suite.add_argument("--trace", action="store_true", help="Write one step trace per episode.")

    scores = subparsers.add_parser("scores", help="Run one episode and dump its score fields.")
    scores.add_argument("--config", required=True, help="Experiment configuration (json or toml).")
    scores.add_argument("--seed", type=int, default=0, help="Episode seed.")
    scores.add_argument("--out", required=True, help="Score field csv.")
    scores.add_argument("--policy", help="Override policy.kind.")
    scores.add_argument("--budget", type=int, help="Override budget.")

    validate = subparsers.add_parser("validate", help="Run the numeric oracle suites.")
    validate.add_argument("--seed", type=int, default=0, help="Seed of the random instances.")

    return parser


def _overrides(args) -> dict:
    overrides = {}
    if getattr(args, "policy", None):
        overrides["policy.kind"] = args.policy
        if args.command == "suite":
            overrides["suite.policies"] = [args.policy]
    if getattr(args, "budget", None) is not None:
        overrides["budget"] = args.budget
        if args.command == "suite":
            overrides["suite.budgets"] = [args.budget]
    if args.command == "suite" and args.seed is not None:
        overrides["seeds"] = [args.seed]

    return overrides


def _gen_scene(args) -> int:
    cfg = load_config(args.config)
    runner = EpisodeRunner(cfg)
    scene = runner.build_scene(episode_streams(args.seed, cfg.belief.n_b).scene)

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_scene(scene, args.out)
    logger.info(f"Wrote {scene} to {args.out}")

    return EXIT_OK


def _run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    result = EpisodeRunner(cfg).run(args.seed, progress=True, capture_scores=args.trace is not None)

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    result.to_csv(args.out)
    if args.trace is not None:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        result.score_fields_to_csv(args.trace)

    logger.info(
        f"{result.get_label()} seed {args.seed}: R={result.get_R():.4g}, "
        f"SR term={result.get_sr_term():.4f}, {result.get_runtime():.2f}s"
    )

    return EXIT_OK


def _suite(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = args.out or cfg.output_dir
    table, failures = run_suite(cfg, out_dir=out, jobs=args.jobs, traces=args.trace)

    for row in table.itertuples(index=False):
        logger.info(f"{row.policy} B={row.B}: SR {row.mean_SR:.4f} +- {row.std_SR:.4f} ({row.n_seeds} seeds)")

    if not failures.empty:
        logger.error(f"{len(failures)} episodes failed, see {Path(out) / 'failures.csv'}")
        return EXIT_RUNTIME

    return EXIT_OK


def _scores(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    result = EpisodeRunner(cfg).run(args.seed, progress=True, capture_scores=True)

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    result.score_fields_to_csv(args.out)
    logger.info(f"Wrote {len(result.get_records())} score fields to {args.out}")

    return EXIT_OK


def _validate(args) -> int:
    outcomes = run_validation(args.seed)

    for outcome in outcomes:
        status = "PASS" if outcome.passed else "FAIL"
        print(f"{status} {outcome.name}: {outcome.detail} ({outcome.seconds:.2f}s)", file=sys.stderr)

    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_RUNTIME


COMMANDS = {
    "gen-scene": _gen_scene,
    "run": _run,
    "suite": _suite,
    "scores": _scores,
    "validate": _validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = create_argparser()

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK

    configure_logging(args.verbose)

    try:
        with logging_redirect_tqdm():
            return COMMANDS[args.command](args)
    except (ConfigError, SceneParseError, jsonschema.ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"Error processing {args.command}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
