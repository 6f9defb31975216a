"""TOML run configuration with command-line overrides.

Schema (every key optional)::

    [adapt]
    population_size = 50
    max_iterations = 20
    sigma0 = 0.1
    seed = 0
    parallel_eval_width = 0

    [adapt.early_stop]
    min_delta = 0.001
    patience = 3

    [loss]
    alpha = 1.0
    beta = 2.0
    h_min = 0.0
    h_max = 5.0
    c_max = 2.0
    epsilon = 1e-8
    use_token = true

    [ema]
    mode = "t_ema"        # t_ema | reset | continuous
    gamma = 0.9

    [inputs]              # paths, relative to the config file
    model = "model.bin"
    stats = "stats.bin"
    corpus = "target.bin"
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adapt import AdaptConfig
from .errors import InvalidArgument
from .losses import LossConfig

_SECTIONS = {
    "adapt": {"population_size", "max_iterations", "sigma0", "seed", "parallel_eval_width", "early_stop"},
    "early_stop": {"min_delta", "patience"},
    "loss": set(LossConfig.__dataclass_fields__),
    "ema": {"mode", "gamma"},
    "inputs": {"model", "stats", "corpus", "source"},
}


class ConfigError(InvalidArgument):
    """Malformed or inconsistent configuration."""


def _check_keys(section: str, table: dict) -> None:
    unknown = set(table) - _SECTIONS[section]
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Parse and validate the raw TOML tables; ``None`` yields an empty config."""
    if path is None:
        return {}
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(raw) - {"adapt", "loss", "ema", "inputs"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    for section in ("adapt", "loss", "ema", "inputs"):
        _check_keys(section, raw.get(section, {}))
    _check_keys("early_stop", raw.get("adapt", {}).get("early_stop", {}))
    inputs = raw.get("inputs", {})
    raw["inputs"] = {k: str((path.parent / v).resolve()) for k, v in inputs.items()}
    return raw


def adapt_config(raw: dict[str, Any], overrides: dict[str, Any] | None = None) -> AdaptConfig:
    """Build an :class:`AdaptConfig`; non-``None`` ``overrides`` win over file values.

    Override keys are flat: ``population_size``, ``max_iterations``,
    ``sigma0``, ``seed``, ``parallel_eval_width``, ``min_delta``,
    ``patience``, ``ema_mode``, ``gamma`` and any :class:`LossConfig` field.
    """
    adapt = dict(raw.get("adapt", {}))
    early = adapt.pop("early_stop", {})
    ema = raw.get("ema", {})
    values: dict[str, Any] = {**adapt, **early}
    if "mode" in ema:
        values["ema_mode"] = ema["mode"]
    if "gamma" in ema:
        values["gamma"] = ema["gamma"]
    loss = dict(raw.get("loss", {}))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in LossConfig.__dataclass_fields__:
            loss[key] = value
        else:
            values[key] = value
    try:
        return AdaptConfig(loss=LossConfig(**loss), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
