"""
Experiment configuration.

An experiment is one JSON or TOML document mirroring ExperimentConfig. Missing keys take the values
in DEFAULTS, unknown keys are rejected, and every error names the dotted key it concerns.
"""
import copy
import hashlib
import json
import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import tomli

from atd.classes.guided_diffusion import JACOBIAN_MODES, GuidanceConfig
from atd.classes.noise_schedule import CURVES, SIGMA_MODES
from atd.classes.particle_batch import BeliefConfig
from atd.classes.policy import (
    COMBINE_MODES,
    NORMALIZE_MODES,
    POLICY_KINDS,
    SCHEDULE_MODES,
    TIE_BREAKS,
    PolicyConfig,
)
from atd.classes.reward_net import PRESETS
from atd.classes.scene import ObservationNoise, SCENE_FORMATS
from atd.exc import AtdError, BudgetExceedsStepsError, ConfigError, DuplicateSeedError

logger = logging.getLogger(__name__)

PRIOR_KINDS: tuple[str, ...] = ("blobs", "file", "empirical", "standard")
SCENE_SOURCES: tuple[str, ...] = ("gmm", "file")
TARGET_RULES: tuple[str, ...] = ("threshold", "component")
RUN_KEYS: tuple[str, ...] = ("name", "seeds", "output_dir", "suite")
FINGERPRINT_LENGTH: int = 16

DEFAULT_PRIOR: dict = {
    "kind": "blobs",
    "n_components": 8,
    "seed": 0,
    "variance": 0.005,
    "path": None,
    "directory": None,
}

DEFAULTS: dict = {
    "name": "experiment",
    "scene": {
        "source": "gmm",
        "rows": 16,
        "cols": 16,
        "block": 1,
        "target_rule": {"kind": "threshold", "theta": 0.5},
        "noise": {"mu": 0.0, "sigma": 0.0},
        "path": None,
        "format": None,
        "target_channel": "sidecar",
    },
    "prior": DEFAULT_PRIOR,
    "belief_prior": None,
    "diffusion": {"T": 200, "beta_min": 1e-4, "beta_max": 0.02, "curve": "linear", "sigma": "posterior"},
    "guidance": {"zeta": 1.0, "jacobian_mode": "scaled-identity"},
    "belief": {"n_b": 8, "sigma_x2": 1.0},
    "budget": 32,
    "schedule": {"mode": "count", "stride": None},
    "policy": {
        "kind": "diffatd",
        "alpha": 1.0,
        "combine_mode": "exploit",
        "normalize": "minmax",
        "tie_break": "lowest_index",
        "ucb_c": 1.4142135623730951,
        "ucb_radius": 1,
        "epsilon": 0.1,
        "kappa_fixed": None,
        "label": None,
    },
    "reward": {"preset": "default", "hidden": None, "epochs": 3, "lr": 0.01},
    "seeds": [0],
    "output_dir": "results",
    "suite": {"policies": ["diffatd"], "budgets": [], "variants": [], "include_base": True},
}

_NUMBER: dict = {"type": "number"}
_NULLABLE_STRING: dict = {"type": ["string", "null"]}


def _obj(properties: dict, required: list[str] | None = None) -> dict:
    schema = {"type": "object", "additionalProperties": False, "properties": properties}
    if required:
        schema["required"] = required
    return schema


_PRIOR_SCHEMA: dict = _obj(
    {
        "kind": {"enum": list(PRIOR_KINDS)},
        "n_components": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "variance": {"type": "number", "minimum": 0},
        "path": _NULLABLE_STRING,
        "directory": _NULLABLE_STRING,
    }
)

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    **_obj(
        {
            "name": {"type": "string"},
            "scene": _obj(
                {
                    "source": {"enum": list(SCENE_SOURCES)},
                    "rows": {"type": "integer", "minimum": 1},
                    "cols": {"type": "integer", "minimum": 1},
                    "block": {"type": "integer", "minimum": 1},
                    "target_rule": _obj({"kind": {"enum": list(TARGET_RULES)}, "theta": _NUMBER}),
                    "noise": _obj({"mu": _NUMBER, "sigma": {"type": "number", "minimum": 0}}),
                    "path": _NULLABLE_STRING,
                    "format": {"enum": [*SCENE_FORMATS, None]},
                    "target_channel": {"type": "string"},
                }
            ),
            "prior": _PRIOR_SCHEMA,
            "belief_prior": {"oneOf": [{"type": "null"}, _PRIOR_SCHEMA]},
            "diffusion": _obj(
                {
                    "T": {"type": "integer", "minimum": 1},
                    "beta_min": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "beta_max": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "curve": {"enum": list(CURVES)},
                    "sigma": {"enum": list(SIGMA_MODES)},
                }
            ),
            "guidance": _obj(
                {
                    "zeta": {"type": "number", "minimum": 0},
                    "jacobian_mode": {"enum": list(JACOBIAN_MODES)},
                }
            ),
            "belief": _obj(
                {
                    "n_b": {"type": "integer", "minimum": 2},
                    "sigma_x2": {"type": "number", "exclusiveMinimum": 0},
                }
            ),
            "budget": {"type": "integer", "minimum": 1},
            "schedule": _obj(
                {
                    "mode": {"enum": list(SCHEDULE_MODES)},
                    "stride": {"type": ["integer", "null"], "minimum": 1},
                }
            ),
            "policy": _obj(
                {
                    "kind": {"enum": list(POLICY_KINDS)},
                    "alpha": {"type": "number", "exclusiveMinimum": 0},
                    "combine_mode": {"enum": list(COMBINE_MODES)},
                    "normalize": {"enum": list(NORMALIZE_MODES)},
                    "tie_break": {"enum": list(TIE_BREAKS)},
                    "ucb_c": {"type": "number", "minimum": 0},
                    "ucb_radius": {"type": "integer", "minimum": 0},
                    "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                    "kappa_fixed": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                    "label": _NULLABLE_STRING,
                }
            ),
            "reward": _obj(
                {
                    "preset": {"enum": list(PRESETS)},
                    "hidden": {
                        "type": ["array", "null"],
                        "items": {"type": "integer", "minimum": 1},
                    },
                    "epochs": {"type": "integer", "minimum": 0},
                    "lr": {"type": "number", "minimum": 0},
                }
            ),
            "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
            "output_dir": {"type": "string"},
            "suite": _obj(
                {
                    "policies": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"enum": list(POLICY_KINDS)},
                    },
                    "budgets": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    "variants": {
                        "type": "array",
                        "items": _obj(
                            {"label": {"type": "string", "minLength": 1}, "overrides": {"type": "object"}},
                            required=["label", "overrides"],
                        ),
                    },
                    "include_base": {"type": "boolean"},
                }
            ),
        }
    ),
}


@dataclass(frozen=True)
class TargetRuleConfig:
    kind: str = "threshold"
    theta: float = 0.5


@dataclass(frozen=True)
class SceneConfig:
    source: str = "gmm"
    rows: int = 16
    cols: int = 16
    block: int = 1
    target_rule: TargetRuleConfig = field(default_factory=TargetRuleConfig)
    noise: ObservationNoise = field(default_factory=ObservationNoise)
    path: str | None = None
    format: str | None = None
    target_channel: str = "sidecar"


@dataclass(frozen=True)
class PriorConfig:
    kind: str = "blobs"
    n_components: int = 8
    seed: int = 0
    variance: float = 0.005
    path: str | None = None
    directory: str | None = None


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.02
    curve: str = "linear"
    sigma: str = "posterior"


@dataclass(frozen=True)
class BeliefSettings:
    n_b: int = 8
    sigma_x2: float = 1.0

    def to_belief_config(self) -> BeliefConfig:
        return BeliefConfig(sigma_x2=self.sigma_x2)


@dataclass(frozen=True)
class ScheduleConfig:
    mode: str = "count"
    stride: int | None = None


@dataclass(frozen=True)
class RewardConfig:
    preset: str = "default"
    hidden: tuple[int, ...] | None = None
    epochs: int = 3
    lr: float = 0.01


@dataclass(frozen=True)
class VariantConfig:
    label: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SuiteConfig:
    policies: tuple[str, ...] = ("diffatd",)
    budgets: tuple[int, ...] = ()
    variants: tuple[VariantConfig, ...] = ()
    include_base: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything an episode or a suite needs. raw keeps the merged document, so suite cells can be
    derived by dotted overrides and re-validated.
    """

    name: str
    scene: SceneConfig
    prior: PriorConfig
    belief_prior: PriorConfig | None
    diffusion: DiffusionConfig
    guidance: GuidanceConfig
    belief: BeliefSettings
    budget: int
    schedule: ScheduleConfig
    policy: PolicyConfig
    reward: RewardConfig
    seeds: tuple[int, ...]
    output_dir: str
    suite: SuiteConfig
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        return build_config(apply_overrides(self.raw, overrides))

    def fingerprint(self) -> str:
        """
        Digest of every setting that shapes a single episode; the run bookkeeping keys are left out.
        """
        episode = {k: v for k, v in self.raw.items() if k not in RUN_KEYS}
        text = json.dumps(episode, sort_keys=True, default=str)

        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:FINGERPRINT_LENGTH]


def _deep_merge(base: dict, update: dict) -> dict:
    merged = copy.deepcopy(base)

    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)

    return merged


def apply_overrides(raw: dict, overrides: dict[str, Any]) -> dict:
    """
    Set dotted keys, e.g. {"policy.alpha": 0.5}, on a copy of a configuration document.
    """
    updated = copy.deepcopy(raw)

    for dotted, value in overrides.items():
        *parents, leaf = dotted.split(".")
        node = updated
        for part in parents:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
            if not isinstance(node, dict):
                raise ConfigError("cannot override inside a scalar value", key=dotted)
        node[leaf] = copy.deepcopy(value)

    return updated


def _schema_errors(document: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(document))

    if error is not None:
        key = ".".join(str(p) for p in error.absolute_path) or "<root>"
        raise ConfigError(error.message, key=key)


def _cross_checks(document: dict) -> None:
    seeds = document["seeds"]
    if len(set(seeds)) != len(seeds):
        raise DuplicateSeedError(f"seeds must be distinct, got {seeds}", key="seeds")

    diffusion = document["diffusion"]
    if diffusion["beta_min"] > diffusion["beta_max"]:
        raise ConfigError("must not exceed diffusion.beta_max", key="diffusion.beta_min")

    T = diffusion["T"]
    budgets = [("budget", document["budget"])]
    budgets += [("suite.budgets", b) for b in document["suite"]["budgets"]]
    for key, budget in budgets:
        if budget > T:
            raise BudgetExceedsStepsError(f"budget {budget} exceeds {T} reverse steps", key=key)

        schedule = document["schedule"]
        if schedule["mode"] == "stride":
            stride = schedule["stride"]
            if stride is None or stride * budget > T:
                raise BudgetExceedsStepsError(
                    f"stride {stride} with budget {budget} does not fit {T} reverse steps",
                    key="schedule.stride",
                )

    scene = document["scene"]
    if scene["source"] == "file" and not scene["path"]:
        raise ConfigError("a file scene needs a path", key="scene.path")
    if scene["rows"] % scene["block"] or scene["cols"] % scene["block"]:
        raise ConfigError("must divide scene.rows and scene.cols", key="scene.block")

    for section in ("prior", "belief_prior"):
        prior = document[section]
        if prior is None:
            continue
        if prior["kind"] == "file" and not prior["path"]:
            raise ConfigError("a file prior needs a path", key=f"{section}.path")
        if prior["kind"] == "empirical" and not prior["directory"]:
            raise ConfigError("an empirical prior needs a directory", key=f"{section}.directory")

    if scene["source"] == "gmm" and document["prior"]["kind"] == "standard":
        raise ConfigError("synthetic scenes need a structured prior", key="prior.kind")


def _resolve_paths(document: dict, base_dir: Path) -> dict:
    resolved = copy.deepcopy(document)
    slots = [("scene", "path")]
    slots += [(s, k) for s in ("prior", "belief_prior") for k in ("path", "directory")]

    for section, key in slots:
        node = resolved.get(section)
        if isinstance(node, dict) and node.get(key):
            path = Path(node[key])
            node[key] = str(path if path.is_absolute() else (base_dir / path).resolve())

    return resolved


def build_config(document: dict, base_dir: str | Path | None = None) -> ExperimentConfig:
    """
    Merge a document over DEFAULTS, validate it and build the configuration.

    :param base_dir: directory relative paths in the document are resolved against
    """
    if not isinstance(document, dict):
        raise ConfigError("a configuration document must be a mapping")

    merged = _deep_merge(DEFAULTS, document)
    if isinstance(document.get("belief_prior"), dict):
        merged["belief_prior"] = _deep_merge(DEFAULT_PRIOR, document["belief_prior"])

    _schema_errors(merged)
    _cross_checks(merged)
    if base_dir is not None:
        merged = _resolve_paths(merged, Path(base_dir))

    try:
        scene = merged["scene"]
        reward = merged["reward"]
        suite = merged["suite"]

        return ExperimentConfig(
            name=merged["name"],
            scene=SceneConfig(
                source=scene["source"],
                rows=scene["rows"],
                cols=scene["cols"],
                block=scene["block"],
                target_rule=TargetRuleConfig(**scene["target_rule"]),
                noise=ObservationNoise(**scene["noise"]),
                path=scene["path"],
                format=scene["format"],
                target_channel=scene["target_channel"],
            ),
            prior=PriorConfig(**merged["prior"]),
            belief_prior=PriorConfig(**merged["belief_prior"]) if merged["belief_prior"] else None,
            diffusion=DiffusionConfig(**merged["diffusion"]),
            guidance=GuidanceConfig(**merged["guidance"]),
            belief=BeliefSettings(**merged["belief"]),
            budget=merged["budget"],
            schedule=ScheduleConfig(**merged["schedule"]),
            policy=PolicyConfig(**merged["policy"]),
            reward=RewardConfig(
                preset=reward["preset"],
                hidden=tuple(reward["hidden"]) if reward["hidden"] is not None else None,
                epochs=reward["epochs"],
                lr=reward["lr"],
            ),
            seeds=tuple(merged["seeds"]),
            output_dir=merged["output_dir"],
            suite=SuiteConfig(
                policies=tuple(suite["policies"]),
                budgets=tuple(suite["budgets"]),
                variants=tuple(VariantConfig(v["label"], dict(v["overrides"])) for v in suite["variants"]),
                include_base=suite["include_base"],
            ),
            raw=merged,
        )
    except ConfigError:
        raise
    except AtdError as e:
        raise ConfigError(str(e)) from e


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")

    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomli.load(f)
        with open(path, "r") as f:
            return json.load(f)
    except (json.JSONDecodeError, tomli.TOMLDecodeError) as e:
        raise ConfigError(f"Error parsing {path}: {e}") from e


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """
    Read, override and validate an experiment file.

    :param overrides: dotted keys set after reading, e.g. from command-line flags
    """
    document = read_config_file(path)
    if overrides:
        document = apply_overrides(document, overrides)

    config = build_config(document, base_dir=Path(path).parent)
    logger.debug(f"Loaded config {config.name} from {path}")

    return config
