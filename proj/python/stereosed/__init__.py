"""Python interface to the stereosed sound event detection toolkit."""

import json as _json

from ._stereosed import (
    DataError,
    Error,
    TrainingError,
    UsageError,
    ablation_combinations,
    combination_width,
    combine_folds,
    default_config,
    extract_features,
    extract_tdoa,
    gradient_check,
    make_folds,
    pitch_peaks,
    rasterize,
    read_annotations,
    read_wav,
    score,
    synth_dataset,
    tau_max,
    write_wav,
)
from . import _stereosed


def _config_text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def config(**overrides):
    """Default run configuration as a dict, with top-level keys replaced."""
    c = _json.loads(default_config())
    c.update(overrides)
    return c


def extract(config, verbose=False):
    _stereosed.extract(_config_text(config), verbose)


def train(config, verbose=False):
    return _stereosed.train(_config_text(config), verbose)


def evaluate(config, verbose=False):
    return _stereosed.evaluate(_config_text(config), verbose)


def ablate(config, verbose=False):
    return _stereosed.ablate(_config_text(config), verbose)


def detect(checkpoint, audio, threshold=0.5):
    return _stereosed.detect(str(checkpoint), str(audio), threshold)
