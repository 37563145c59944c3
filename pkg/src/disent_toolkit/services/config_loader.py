"""Training configuration: profiles, config files, dotted CLI overrides."""

from __future__ import annotations

import copy
import json
import logging
import os
from collections.abc import Mapping, Sequence
from io import StringIO
from pathlib import Path
from typing import Any

from pydantic import ValidationError
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import MetricConfig, ModelSpec, TrainConfig
from disent_toolkit.nn.network import model_profile
from disent_toolkit.services.loss_terms import objective_spec_from_config
from disent_toolkit.services.synth_data import FactorDataset

logger = logging.getLogger(__name__)

SEED_ENV = "DISENT_SEED"
RESOLVED_NAME = "config.resolved.json"

# Keys whose override always becomes a list, even with a single value.
LIST_KEYS = frozenset(
    {"loss_terms", "factorvae.disc_hidden", "cvae.condition_factors", "ifcvae.classifier_hidden"}
)

PROFILES: dict[str, dict[str, Any]] = {
    "default": {
        "seed": 0,
        "loss_terms": ["VAE"],
        "model": "shapes5_conv",
        "latent_dim": 10,
        "max_iters": 5000,
        "batch_size": 64,
    },
    "btcvae_paper": {
        "seed": 0,
        "loss_terms": ["BTCVAE"],
        "btc": {"alpha": 1.0, "beta": 2.0, "gamma": 1.0, "capacity": True},
        "capacity": {"c_start": 0.0, "c_max": 25.0},
        "optimizer": {"lr": 0.001},
        "plateau": {"enabled": True, "factor": 0.95},
        "model": "paper_conv64",
        "latent_dim": 20,
        "batch_size": 64,
        "max_iters": 90000,
    },
}


def format_validation_error(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigLoader:
    """Builds a :class:`TrainConfig` from a profile, a file and CLI overrides."""

    def __init__(self) -> None:
        """Initialize the YAML parser (JSON files parse as YAML 1.2)."""
        self._yaml = YAML(typ="safe")

    def load_file(self, path: Path) -> dict[str, Any]:
        """Parse a JSON or YAML config file that must hold a mapping."""
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = self._yaml.load(path.read_text(encoding="utf-8"))
        except YAMLError as e:
            raise ConfigError(f"invalid config file {path}: {e}") from e
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain an object, got {type(data).__name__}")
        return data

    def parse_scalar(self, token: str) -> Any:
        """Interpret one override value: numbers, booleans and null as YAML would."""
        try:
            value = self._yaml.load(StringIO(token))
        except YAMLError:
            return token
        if isinstance(value, (dict, list)):
            return token
        if value is None and token.strip() not in ("null", "~"):
            return token
        return value

    def parse_overrides(self, tokens: Sequence[str]) -> dict[str, Any]:
        """Turn ``["--btc.beta", "2", "--loss_terms", "A", "B"]`` into a nested dict.

        A key without values is set to ``true``.
        """
        overrides: dict[str, Any] = {}
        key: str | None = None
        values: list[str] = []

        def flush() -> None:
            if key is None:
                return
            parsed = [self.parse_scalar(v) for v in values]
            if key in LIST_KEYS:
                value: Any = parsed
            elif not parsed:
                value = True
            elif len(parsed) == 1:
                value = parsed[0]
            else:
                value = parsed
            node = overrides
            *parents, leaf = key.split(".")
            for part in parents:
                child = node.setdefault(part, {})
                if not isinstance(child, dict):
                    raise ConfigError(f"override --{key} conflicts with an earlier override")
                node = child
            node[leaf] = value

        for token in tokens:
            if token.startswith("--") and len(token) > 2:
                flush()
                key, values = token[2:].replace("-", "_"), []
            elif key is None:
                raise ConfigError(f"override value {token!r} has no --key before it")
            else:
                values.append(token)
        flush()
        return overrides

    def resolve(
        self,
        config_path: Path | None = None,
        overrides: Sequence[str] = (),
        profile: str = "default",
        env: Mapping[str, str] | None = None,
        base: Mapping[str, Any] | None = None,
    ) -> TrainConfig:
        """Merge profile < file < overrides < DISENT_SEED and validate.

        ``base`` replaces the profile, e.g. the config stored in a checkpoint.

        Raises:
            ConfigError: On unknown keys, invalid values, unknown or conflicting loss terms.
        """
        if base is not None:
            data = copy.deepcopy(dict(base))
        elif profile in PROFILES:
            data = copy.deepcopy(PROFILES[profile])
        else:
            raise ConfigError(f"unknown profile {profile!r}; valid profiles: {', '.join(PROFILES)}")
        if config_path is not None:
            data = deep_merge(data, self.load_file(config_path))
        data = deep_merge(data, self.parse_overrides(overrides))

        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                data["seed"] = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None

        try:
            config = TrainConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {format_validation_error(e)}") from e
        objective_spec_from_config(config)
        logger.debug("Resolved config: %s", config.model_dump(mode="json"))
        return config


def parse_config(
    config_path: Path | None = None,
    overrides: Sequence[str] = (),
    profile: str = "default",
    env: Mapping[str, str] | None = None,
) -> TrainConfig:
    """Resolve a TrainConfig (see :meth:`ConfigLoader.resolve`)."""
    return ConfigLoader().resolve(config_path, overrides, profile, env)


def write_resolved(config: TrainConfig, output_dir: Path) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / RESOLVED_NAME
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def resolve_model_spec(config: TrainConfig, dataset: FactorDataset, condition_factors: Sequence[str] = ()) -> ModelSpec:
    """Named profile or inline spec, checked against the dataset and conditioning.

    Raises:
        ConfigError: If image shape, latent size or condition width disagree.
    """
    condition_dim = dataset.condition_dim(condition_factors) if condition_factors else 0
    if isinstance(config.model, str):
        spec = model_profile(config.model, config.latent_dim, condition_dim)
    else:
        spec = config.model
        if spec.latent_dim != config.latent_dim:
            raise ConfigError(f"model latent_dim {spec.latent_dim} != config latent_dim {config.latent_dim}")
        if spec.condition_dim != condition_dim:
            raise ConfigError(f"model condition_dim {spec.condition_dim} != {condition_dim} required by CVAE")
    if tuple(spec.image_shape) != dataset.image_shape:
        raise ConfigError(
            f"model expects images {tuple(spec.image_shape)} but dataset {config.dataset} yields "
            f"{dataset.image_shape}; choose a matching --model"
        )
    return spec


def parse_metric_config(overrides: Sequence[str] = (), config_path: Path | None = None) -> MetricConfig:
    """MetricConfig from an optional file plus ``--num_points 2000``-style overrides."""
    loader = ConfigLoader()
    data = loader.load_file(config_path) if config_path is not None else {}
    data = deep_merge(data, loader.parse_overrides(overrides))
    try:
        return MetricConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid metric configuration: {format_validation_error(e)}") from e
