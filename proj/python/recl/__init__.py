"""Continual learning with data reconstruction from trained models."""

import json as _json

from recl._core import (
    ConfigError,
    ContractError,
    NumericError,
    ParseError,
    ShapeError,
    acc_bwt,
    config_fingerprint,
    forward,
    init_mlp,
    load_checkpoint,
    loss_full,
    loss_lambda,
    loss_prior,
    match_nearest,
    parse_config,
    reconstruct,
    save_checkpoint,
    ssim,
)
from recl._core import run_experiment as _run_experiment


def run_experiment(config_text):
    """Run a config and return the parsed summary as a dict."""
    return _json.loads(_run_experiment(config_text))


__all__ = [
    "ConfigError",
    "ContractError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "acc_bwt",
    "config_fingerprint",
    "forward",
    "init_mlp",
    "load_checkpoint",
    "loss_full",
    "loss_lambda",
    "loss_prior",
    "match_nearest",
    "parse_config",
    "reconstruct",
    "run_experiment",
    "save_checkpoint",
    "ssim",
]
