"""Key-value run-configuration files for the CLI.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Every key is optional and falls back to a documented default; unknown keys
are rejected by name. Per-modality fields (feature_dims and the shift
severities) accept either a scalar, broadcast to all modalities, or a
comma-separated list with one entry per modality.

Value precedence everywhere: command-line flag, then config file, then the
BOOMDA_SEED environment variable (seed only), then the built-in default.
"""

from __future__ import annotations

import os
from pathlib import Path

from .synthdata import DatasetSpec, ShiftSpec
from .trainer import SOLVER_MODES, TrainConfig


class ConfigError(Exception):
    """A configuration file or value failed validation."""


DATASET_KEYS = ("modalities", "classes", "feature_dims", "source_samples",
                "target_samples", "seed", "noise_sigma", "rotation_angle",
                "mask_fraction")

TRAIN_KEYS = ("beta", "alpha1", "alpha2", "min_votes", "learning_rate",
              "iterations", "epochs", "batch_size", "solver", "seed",
              "hidden_width", "rep_dim", "var_floor", "prob_floor",
              "diag_floor", "fw_max_iter", "fw_tol", "ca_grad_domains")


def parse_kv_file(path, allowed_keys) -> dict:
    """Parse `key = value` lines; values returned as raw strings."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                            start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name} line {n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed_keys:
            raise ConfigError(f"unknown key '{key}' ({path.name} line {n})")
        if key in values:
            raise ConfigError(f"duplicate key '{key}' ({path.name} line {n})")
        values[key] = value
    return values


def _parse_int(values, key, default):
    if key not in values:
        return default
    try:
        return int(values[key])
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected integer, "
                          f"got {values[key]!r}") from exc


def _parse_float(values, key, default):
    if key not in values:
        return default
    try:
        return float(values[key])
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected number, "
                          f"got {values[key]!r}") from exc


def _parse_str(values, key, default, choices=None):
    value = values.get(key, default)
    if choices is not None and value not in choices:
        raise ConfigError(f"key '{key}': expected one of {choices}, "
                          f"got {value!r}")
    return value


def _parse_number_list(values, key, count, default, cast):
    """Scalar broadcast or comma list of exactly `count` entries."""
    if key not in values:
        return [default] * count
    parts = [p.strip() for p in values[key].split(",")]
    try:
        nums = [cast(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected {cast.__name__} list, "
                          f"got {values[key]!r}") from exc
    if len(nums) == 1:
        return nums * count
    if len(nums) != count:
        raise ConfigError(f"key '{key}': expected 1 or {count} entries, "
                          f"got {len(nums)}")
    return nums


def env_seed() -> int | None:
    """BOOMDA_SEED, the last-resort seed default."""
    raw = os.environ.get("BOOMDA_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"BOOMDA_SEED must be an integer, got {raw!r}") from exc


def _resolve_seed(values, override, default=0) -> int:
    if override is not None:
        return int(override)
    if "seed" in values:
        return _parse_int(values, "seed", default)
    from_env = env_seed()
    return from_env if from_env is not None else default


def dataset_spec_from_file(path=None, seed_override=None) -> DatasetSpec:
    """Build a DatasetSpec from a config file (or defaults if path is None)."""
    values = parse_kv_file(path, DATASET_KEYS) if path is not None else {}
    modalities = _parse_int(values, "modalities", 3)
    if modalities < 1:
        raise ConfigError("key 'modalities': must be >= 1")
    dims = _parse_number_list(values, "feature_dims", modalities, 8, int)
    noise = _parse_number_list(values, "noise_sigma", modalities, 0.0, float)
    angle = _parse_number_list(values, "rotation_angle", modalities, 0.0, float)
    mask = _parse_number_list(values, "mask_fraction", modalities, 0.0, float)
    spec = DatasetSpec(
        modalities=modalities,
        classes=_parse_int(values, "classes", 4),
        feature_dims=tuple(dims),
        source_samples=_parse_int(values, "source_samples", 600),
        target_samples=_parse_int(values, "target_samples", 600),
        seed=_resolve_seed(values, seed_override),
        shifts=tuple(ShiftSpec(noise_sigma=n, rotation_angle=a, mask_fraction=f)
                     for n, a, f in zip(noise, angle, mask)),
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def train_config_from_file(path=None, seed_override=None, solver_override=None,
                           iterations_override=None, epochs_override=None):
    """Build a TrainConfig plus the optional epochs request.

    Returns (config, epochs): when epochs is not None the caller converts it
    to iterations once the dataset size is known.
    """
    values = parse_kv_file(path, TRAIN_KEYS) if path is not None else {}
    if iterations_override is not None and epochs_override is not None:
        raise ConfigError("specify either 'iterations' or 'epochs', not both")
    if iterations_override is not None:
        iterations, epochs = iterations_override, None
    elif epochs_override is not None:
        iterations, epochs = None, epochs_override
    else:
        iterations = _parse_int(values, "iterations", None)
        epochs = _parse_int(values, "epochs", None)
        if iterations is not None and epochs is not None:
            raise ConfigError(
                "specify either 'iterations' or 'epochs', not both")
    solver = (solver_override if solver_override is not None
              else _parse_str(values, "solver", "closed_form",
                              choices=SOLVER_MODES))
    config = TrainConfig(
        beta=_parse_float(values, "beta", 5e-4),
        alpha1=_parse_float(values, "alpha1", 0.5),
        alpha2=_parse_float(values, "alpha2", 0.1),
        min_votes=_parse_int(values, "min_votes", 3),
        learning_rate=_parse_float(values, "learning_rate", 1e-3),
        iterations=iterations if iterations is not None else 2000,
        batch_size=_parse_int(values, "batch_size", 48),
        solver_mode=solver,
        seed=_resolve_seed(values, seed_override),
        hidden_width=_parse_int(values, "hidden_width", 32),
        rep_dim=_parse_int(values, "rep_dim", 16),
        var_floor=_parse_float(values, "var_floor", 1e-8),
        prob_floor=_parse_float(values, "prob_floor", 1e-12),
        diag_floor=_parse_float(values, "diag_floor", 1e-12),
        fw_max_iter=_parse_int(values, "fw_max_iter", 50),
        fw_tol=_parse_float(values, "fw_tol", 1e-8),
        ca_grad_domains=_parse_str(values, "ca_grad_domains", "both",
                                   choices=("both", "source")),
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config, epochs
