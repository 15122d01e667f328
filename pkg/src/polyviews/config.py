"""Pipeline configuration, config files and seed derivation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .adherence import GridConfig
from .clustering import ClusterConfig
from .errors import ConfigError, FileAccessError
from .fileutils import PathOrSimilar, abs_filename
from .ingest import CorpusFormat
from .models import ModelConfig
from .segmented import FitConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_RMSE_THRESHOLD = 0.01

_SECTIONS = {
    "fit": FitConfig,
    "cluster": ClusterConfig,
    "model": ModelConfig,
    "grid": GridConfig,
}

# flat keys (CLI flag names) that live inside a section
_FLAT_ALIASES = {
    "max_breakpoints": "fit.max_breakpoints",
    "k": "cluster.k",
    "min_size_fraction": "cluster.min_size_fraction",
    "standardize": "cluster.standardize",
    "bins_univariate": "model.bins_univariate",
    "bins_alpha": "model.bins_alpha",
    "bins_l": "model.bins_l",
    "samples": "model.samples_per_model",
    "samples_per_model": "model.samples_per_model",
    "within_bin": "model.within_bin",
}

_TOP_LEVEL = {
    "input",
    "format",
    "rmse_threshold",
    "seed",
    "out",
    "control",
    "h_max",
    "check_oracle",
    "workers",
    "grid",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run depends on."""

    input: Path | None = None
    format: CorpusFormat | None = None
    rmse_threshold: float = DEFAULT_RMSE_THRESHOLD
    fit: FitConfig = field(default_factory=FitConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    seed: int = 0
    out: Path = Path("polyviews-out")
    control: bool = False
    h_max: int | None = None
    check_oracle: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.rmse_threshold > 0:
            raise ConfigError(
                f"rmse_threshold must be > 0, got {self.rmse_threshold}."
            )
        if self.format not in (None, "csv", "json"):
            raise ConfigError(f"Unknown corpus format '{self.format}'.")
        if self.h_max is not None and self.h_max < 1:
            raise ConfigError(f"h_max must be >= 1, got {self.h_max}.")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}.")

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        data["input"] = None if self.input is None else str(self.input)
        data["out"] = str(self.out)
        return data

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the config."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def derive_seed(master: int, label: str) -> int:
    """
    64-bit seed of one stream, derived from the master seed and a label such
    as ``"control"`` or ``"model/3/markov1_multi"``.
    """
    digest = hashlib.blake2b(f"{master}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _key(name: str) -> str:
    return name.strip().replace("-", "_")


def _grid_value(value: Any) -> GridConfig:
    if isinstance(value, GridConfig):
        return value
    if isinstance(value, int) and not isinstance(value, bool):
        return GridConfig(value, value)
    if isinstance(value, str):
        parts = value.lower().split("x")
        try:
            sizes = [int(p) for p in parts]
        except ValueError as e:
            raise ConfigError(
                f"Grid must look like '20' or '20x20', got '{value}'."
            ) from e
        if len(sizes) == 1:
            return GridConfig(sizes[0], sizes[0])
        if len(sizes) == 2:
            return GridConfig(sizes[0], sizes[1])
    raise ConfigError(f"Grid must look like '20' or '20x20', got {value!r}.")


def _section_key(section: str, name: str) -> str:
    if section not in _SECTIONS or name not in {
        f.name for f in dataclasses.fields(_SECTIONS[section])
    }:
        raise ConfigError(f"Unknown config key '{section}.{name}'.")
    return f"{section}.{name}"


def flatten_overrides(values: Mapping[str, Any]) -> dict[str, Any]:
    """
    Normalize overrides to dotted keys (``"fit.max_breakpoints"``), accepting
    flag names with dashes and ``[section]`` tables.

    :raises ~polyviews.errors.ConfigError: for unknown keys
    """
    flat: dict[str, Any] = {}
    for raw_key, value in values.items():
        key = _key(raw_key)
        if key in _SECTIONS and isinstance(value, Mapping):
            for sub_key, sub_value in value.items():
                flat[_section_key(key, _key(sub_key))] = sub_value
        elif "." in key:
            section, _, name = key.partition(".")
            flat[_section_key(section, name)] = value
        elif key in _FLAT_ALIASES:
            flat[_FLAT_ALIASES[key]] = value
        elif key in _TOP_LEVEL:
            flat[key] = value
        else:
            raise ConfigError(f"Unknown config key '{raw_key}'.")
    return flat


def apply_overrides(
    config: PipelineConfig, values: Mapping[str, Any]
) -> PipelineConfig:
    """Return ``config`` with ``values`` applied; ``None`` values are ignored."""
    flat = {k: v for k, v in flatten_overrides(values).items() if v is not None}
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if name:
            sections.setdefault(section, {})[name] = value
        elif key == "grid":
            top["grid"] = _grid_value(value)
        elif key in ("input", "out"):
            top[key] = Path(value)
        else:
            top[key] = value
    try:
        for section, changes in sections.items():
            current = top.get(section, getattr(config, section))
            top[section] = dataclasses.replace(current, **changes)
        return dataclasses.replace(config, **top)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration value: {e}") from e


def load_config(path: PathOrSimilar) -> dict[str, Any]:
    """
    Read overrides from a TOML file.

    Keys are the command line flag names, either flat or grouped in
    ``[fit]``, ``[cluster]``, ``[model]`` and ``[grid]`` tables.

    :raises ~polyviews.errors.FileAccessError: if the file cannot be read
    :raises ~polyviews.errors.ConfigError: for invalid TOML or unknown keys
    """
    target = abs_filename(path)
    try:
        with target.open("rb") as file:
            data = tomllib.load(file)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Config file '{target}' is not valid TOML: {e}") from e
    except (PermissionError, OSError) as e:
        raise FileAccessError(f"Cannot read config file '{target}': {e}") from e
    return flatten_overrides(data)


def build_config(
    cli_values: Mapping[str, Any], config_file: PathOrSimilar | None = None
) -> PipelineConfig:
    """Defaults, then command line values, then config file values."""
    config = apply_overrides(PipelineConfig(), cli_values)
    if config_file is not None:
        config = apply_overrides(config, load_config(config_file))
    return config
