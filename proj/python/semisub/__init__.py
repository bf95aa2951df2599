"""Bayesian semi-structured subspace inference."""

import json

from . import _semisub
from ._semisub import (
    Checkpoint,
    ConfigError,
    Dataset,
    NumericError,
    RunConfig,
    Samples,
    auc,
    credible_interval,
    hdi,
    lppd,
    wilson_interval,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Dataset",
    "NumericError",
    "RunConfig",
    "Samples",
    "auc",
    "config",
    "coverage_study",
    "credible_interval",
    "evaluate",
    "hdi",
    "load_dataset",
    "lppd",
    "sample",
    "train_subspace",
    "wilson_interval",
]


def config(cfg=None, **sections):
    """Build a RunConfig from a dict (or JSON text) plus keyword sections."""
    if isinstance(cfg, RunConfig):
        return cfg
    if isinstance(cfg, str):
        cfg = json.loads(cfg)
    merged = dict(cfg or {})
    merged.update(sections)
    return _semisub.parse_config(json.dumps(merged))


def load_dataset(cfg):
    return _semisub.load_dataset(config(cfg))


def train_subspace(cfg, data=None):
    cfg = config(cfg)
    return _semisub.train_subspace(cfg, data if data is not None else _semisub.load_dataset(cfg))


def sample(cfg, data, checkpoint=None, *, full_space=False, naive=False, chains=None, keep=None):
    return _semisub.sample(config(cfg), checkpoint, data, full_space, naive, chains, keep)


def evaluate(cfg, samples, data, checkpoint=None):
    """Test-split diagnostics as a dict."""
    return json.loads(_semisub.evaluate(config(cfg), samples, checkpoint, data))


def coverage_study(cfg):
    """Coverage, moment-difference, timing and status tables as CSV text."""
    return _semisub.coverage_study(config(cfg))
