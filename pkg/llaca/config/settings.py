"""
Default configuration settings for LLaCA.

This module defines the default configuration settings used throughout
the application. These settings can be overridden by providing a custom
configuration dictionary, an INI-style configuration file, or CLI flags.
"""

import configparser
import math
import os

from pydantic import ValidationError

from llaca.exceptions import ConfigError
from llaca.models import NetSpec, RunConfig, TaskConfig

# Default configuration for a continual run
DEFAULT_CONFIG = {
    # === TASK SETTINGS ===
    "TASK_KIND": "rotated_gaussians",   # rotated_gaussians, permuted_features oder split_classes
    "NUM_TASKS": 6,                     # Anzahl sequentieller Tasks
    "TRAIN_SAMPLES": 2000,              # Trainingsbeispiele pro Task
    "TEST_SAMPLES": 500,                # Testbeispiele pro Task
    "INPUT_DIM": 16,                    # Merkmalsdimension
    "NUM_CLASSES": 4,                   # Klassen insgesamt
    "TASK_SEED": None,                  # None = RUN_SEED
    "DRIFT": math.pi / 6,               # Rotationsschritt pro Task (Radiant)
    "CLUSTER_RADIUS": 3.0,              # Abstand der Klassenzentren vom Ursprung
    "NOISE_STD": 1.0,                   # Standardabweichung des Rauschens

    # === NETWORK SETTINGS ===
    "HIDDEN_SIZES": [32],               # Versteckte Schichten
    "ACTIVATION": "relu",               # relu oder tanh
    "INIT_SEED": None,                  # None = RUN_SEED

    # === TRAINING SETTINGS ===
    "LR": 0.05,                         # Konstante Lernrate (kein Scheduler)
    "BATCH_SIZE": 16,
    "EPOCHS_PER_TASK": 1,               # eine Epoche pro Datensatz
    "RUN_SEED": 0,                      # Quelle aller Zufallszahlen

    # === EMA POLICY SETTINGS ===
    "POLICY": "llaca",                  # plain, fixed_ema oder llaca
    "EMA_BETA": 0.99,                   # Gewicht der fixed_ema-Variante
    "CLAMP_VALUE": 0.99,                # Ersatzgewicht ausserhalb von (0, 1)
    "BETA_REDUCTION": "ratio_of_norms", # ratio_of_norms oder elementwise_mean
    "HANDOFF": True,                    # theta* initialisiert den naechsten Task
    "EVALUATE_ON": "deployed",          # deployed, live oder both
    "TRACE_AUDIT_NORMS": False,         # Gradientennormen im Beta-Trace mitschreiben

    # === OUTPUT SETTINGS ===
    "OUTPUT_DIR": "runs/latest",        # Ausgabeverzeichnis
    "SAVE_CHECKPOINTS": True,           # Checkpoints pro Task speichern
    "ABLATE_WORKERS": 1,                # >1 = Ablations-Arme parallel

    # === LOGGING AND DEBUG SETTINGS ===
    "SHOW_STATUS": True,                # Statusmeldungen und Fortschrittsbalken
    "DEBUG": False,                     # Debug-Logging (Clamp-Ereignisse)
}

# Sections of the INI-style configuration file
CONFIG_SECTIONS = {
    "tasks": ["TASK_KIND", "NUM_TASKS", "TRAIN_SAMPLES", "TEST_SAMPLES", "INPUT_DIM",
              "NUM_CLASSES", "TASK_SEED", "DRIFT", "CLUSTER_RADIUS", "NOISE_STD"],
    "net": ["HIDDEN_SIZES", "ACTIVATION", "INIT_SEED"],
    "training": ["LR", "BATCH_SIZE", "EPOCHS_PER_TASK", "RUN_SEED"],
    "policy": ["POLICY", "EMA_BETA", "CLAMP_VALUE", "BETA_REDUCTION", "HANDOFF",
               "EVALUATE_ON", "TRACE_AUDIT_NORMS"],
    "output": ["OUTPUT_DIR", "SAVE_CHECKPOINTS", "ABLATE_WORKERS"],
    "logging": ["SHOW_STATUS", "DEBUG"],
}

POLICY_ALIASES = {"plain": "plain", "fixed": "fixed_ema", "fixed_ema": "fixed_ema", "llaca": "llaca"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(raw):
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"'{raw}' is not a boolean")


def _parse_optional_int(raw):
    return None if raw.strip().lower() in ("", "none") else int(raw)


def _parse_int_list(raw):
    return [int(part) for part in raw.replace(";", ",").split(",") if part.strip()]


_PARSERS = {
    "TASK_SEED": _parse_optional_int,
    "INIT_SEED": _parse_optional_int,
    "HIDDEN_SIZES": _parse_int_list,
}


def parse_value(key, raw):
    """Convert a raw string to the type of the key's default."""
    if key in _PARSERS:
        return _PARSERS[key](raw)
    default = DEFAULT_CONFIG[key]
    if isinstance(default, bool):
        return _parse_bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def get_config(user_config=None):
    """
    Get a configuration dictionary with user overrides applied.

    Args:
        user_config: Optional user configuration dictionary to override defaults

    Returns:
        A configuration dictionary with user overrides applied to defaults
    """
    config = DEFAULT_CONFIG.copy()
    config["HIDDEN_SIZES"] = list(DEFAULT_CONFIG["HIDDEN_SIZES"])

    if user_config:
        unknown = sorted(set(user_config) - set(DEFAULT_CONFIG))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        config.update(user_config)

    # Output directory falls back to the environment (e.g. from .env)
    if not user_config or "OUTPUT_DIR" not in user_config:
        config["OUTPUT_DIR"] = os.environ.get("LLACA_OUTPUT_DIR", config["OUTPUT_DIR"])

    return config


def load_config_file(path):
    """
    Read an INI-style configuration file.

    Args:
        path: Path to the file; sections and keys as in CONFIG_SECTIONS (lower case)

    Returns:
        (overrides, defaulted) - dict of parsed upper-case keys and the sorted list
        of keys the file did not set

    Raises:
        ConfigError: unreadable file, unknown section/key, or unparsable value
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"Cannot read config '{path}': {e}") from e

    overrides = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"Unknown section [{section}] in {path}")
        allowed = CONFIG_SECTIONS[section]
        for key, raw in parser.items(section):
            upper = key.upper()
            if upper not in allowed:
                raise ConfigError(f"Unknown key '{key}' in section [{section}] of {path}")
            try:
                overrides[upper] = parse_value(upper, raw)
            except ValueError as e:
                raise ConfigError(f"Bad value for '{key}' in [{section}]: {e}") from e

    defaulted = sorted(set(DEFAULT_CONFIG) - set(overrides))
    return overrides, defaulted


def build_run_config(config):
    """
    Turn a flat configuration dictionary into a validated RunConfig.

    Raises:
        ConfigError: on any validation failure
    """
    policy = POLICY_ALIASES.get(str(config["POLICY"]))
    if policy is None:
        raise ConfigError(f"Unknown policy '{config['POLICY']}' (plain, fixed, llaca)")
    run_seed = int(config["RUN_SEED"])
    task_seed = run_seed if config.get("TASK_SEED") is None else config["TASK_SEED"]
    init_seed = run_seed if config.get("INIT_SEED") is None else config["INIT_SEED"]
    try:
        task_config = TaskConfig(
            kind=config["TASK_KIND"],
            num_tasks=config["NUM_TASKS"],
            train_samples=config["TRAIN_SAMPLES"],
            test_samples=config["TEST_SAMPLES"],
            input_dim=config["INPUT_DIM"],
            num_classes=config["NUM_CLASSES"],
            seed=task_seed,
            drift=config["DRIFT"],
            cluster_radius=config["CLUSTER_RADIUS"],
            noise_std=config["NOISE_STD"],
        )
        net_spec = NetSpec(
            layer_sizes=[task_config.input_dim] + list(config["HIDDEN_SIZES"]) + [task_config.output_classes],
            activation=config["ACTIVATION"],
            init_seed=init_seed,
        )
        return RunConfig(
            task_config=task_config,
            net_spec=net_spec,
            lr=config["LR"],
            batch_size=config["BATCH_SIZE"],
            epochs_per_task=config["EPOCHS_PER_TASK"],
            policy=policy,
            ema_beta=config["EMA_BETA"],
            clamp_value=config["CLAMP_VALUE"],
            beta_reduction=config["BETA_REDUCTION"],
            handoff=config["HANDOFF"],
            evaluate_on=config["EVALUATE_ON"],
            trace_audit_norms=config["TRACE_AUDIT_NORMS"],
            run_seed=run_seed,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
