# config_manager.py
import copy
import json
import logging
import os

from dataset import SynthConfig
from encoder import EncoderConfig
from errors import CETransformerError, ConfigError
from trainer import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.dirname(os.path.abspath(__file__))
SETTINGS_PATH = os.path.join(CONFIG_DIR, 'settings.json')
SETTINGS_EXAMPLE_PATH = os.path.join(CONFIG_DIR, 'settings.example.json')

DEFAULT_SETTINGS = {
    "train": {
        "alpha": 1.0,
        "beta": 1.0,
        "gamma": 1.0,
        "epochs": 100,
        "batch_size": 64,
        "lr": 1e-3,
        "critic_lr": 5e-5,
        "n_critic": 5,
        "clip": 0.01,
        "critic_reg": "clip",
        "gp_weight": 10.0,
        "warmup_epochs": 5,
        "patience": 20,
        "adv_flow": "both",
        "ablation": "full",
        "seed": 0,
        "optimizer": "adam",
        "dtype": "float64",
        "decoder_layers": 2,
        "standardize_covariates": True,
        "standardize_outcome": True
    },
    "encoder": {
        "n_blocks": 2,
        "n_heads": 2,
        "d_model": 32,
        "d_ff": 64,
        "pooling": "mean"
    },
    "synth": {
        "n": 1000,
        "d": 10,
        "bias_strength": 0.0,
        "effect_fn": "constant",
        "tau": 3.0,
        "noise_sd": 1.0,
        "seed": 0
    },
    "eval": {
        "threshold": 0.0,
        "k": 5,
        "ratio": [61, 27, 10]
    }
}

SECTIONS = tuple(DEFAULT_SETTINGS)


def create_example_file():
    """Create settings.example.json if it doesn't exist."""
    if not os.path.exists(SETTINGS_EXAMPLE_PATH):
        try:
            with open(SETTINGS_EXAMPLE_PATH, 'w') as f:
                json.dump(DEFAULT_SETTINGS, f, indent=2)
            logger.info(f"Created {SETTINGS_EXAMPLE_PATH}")
        except OSError as e:
            logger.error(f"Error creating {SETTINGS_EXAMPLE_PATH}: {e}")


def load_default_settings():
    """Returns the default settings without any user customizations."""
    return copy.deepcopy(DEFAULT_SETTINGS)


def merge_settings(base, override):
    """Update ``base`` with ``override`` section by section; nested dictionaries are merged, not replaced."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_settings(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_settings(path=None):
    """Loads user settings, merging them over the defaults.

    Args:
        path (str, optional): settings file, defaults to settings.json next to this module

    Returns:
        dict: merged settings
    """
    if path is None:
        create_example_file()
        path = SETTINGS_PATH
    settings = load_default_settings()
    try:
        with open(path, 'r') as f:
            user_settings = json.load(f)
    except FileNotFoundError:
        logger.warning(f"{path} not found. Using default settings.")
        return settings
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error decoding {path}: {e}")

    if not isinstance(user_settings, dict):
        raise ConfigError(f"{path} is not properly formatted (not a dictionary)")
    for section, values in user_settings.items():
        if section in SECTIONS and not isinstance(values, dict):
            raise ConfigError(f"section '{section}' in {path} must be a dictionary")
    settings = merge_settings(settings, user_settings)
    logger.info(f"Loaded settings from {path}")
    return settings


def _override(section, overrides):
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def train_config_from_settings(settings, encoder_overrides=None, **overrides) -> TrainConfig:
    """TrainConfig from the ``train`` and ``encoder`` sections; non-None overrides win."""
    train = _override(settings.get('train', {}), overrides)
    train['encoder'] = _override(settings.get('encoder', {}), encoder_overrides or {})
    return TrainConfig.from_dict(train)


def synth_config_from_settings(settings, **overrides) -> SynthConfig:
    section = _override(settings.get('synth', {}), overrides)
    unknown = sorted(set(section) - set(DEFAULT_SETTINGS['synth']))
    if unknown:
        raise ConfigError(f"unknown synth settings: {unknown}")
    return SynthConfig(**section)


def validate_settings(settings):
    """Check every section; returns a list of problems (empty when the settings are usable)."""
    problems = []
    for section in settings:
        if section not in SECTIONS:
            problems.append(f"unknown section '{section}'")
    for section in SECTIONS:
        if not isinstance(settings.get(section, {}), dict):
            problems.append(f"section '{section}' must be a dictionary")
    if problems:
        return problems

    checks = (
        ('train', lambda: train_config_from_settings(settings)),
        ('encoder', lambda: EncoderConfig.from_dict(settings.get('encoder', {}))),
        ('synth', lambda: synth_config_from_settings(settings)),
    )
    for section, build in checks:
        try:
            build()
        except (CETransformerError, TypeError, ValueError) as e:
            problems.append(f"{section}: {e}")

    evaluation = settings.get('eval', {})
    ratio = evaluation.get('ratio', DEFAULT_SETTINGS['eval']['ratio'])
    if not isinstance(ratio, list) or len(ratio) != 3 or any(not isinstance(p, (int, float)) or p <= 0 for p in ratio) \
            or sum(ratio) > 100:
        problems.append(f"eval: ratio must be three positive percentages summing to <= 100, got {ratio}")
    if not isinstance(evaluation.get('k', 5), int) or evaluation.get('k', 5) < 1:
        problems.append(f"eval: k must be a positive integer, got {evaluation.get('k')}")
    if not isinstance(evaluation.get('threshold', 0.0), (int, float)):
        problems.append(f"eval: threshold must be a number, got {evaluation.get('threshold')}")

    for message in problems:
        logger.warning(f"Settings: {message}")
    return problems
