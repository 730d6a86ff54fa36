"""Memory-efficient 3D U-net cascade: phantoms, losses, networks, fusion and the memory ledger."""

import json as _json

from ._core import (
    ConfigError,
    DataError,
    Net,
    ShapeError,
    class_weights,
    combined_loss,
    dice,
    ensemble,
    expanded_edge,
    phantom,
    read_volume,
    soft_dice_loss,
    split_cases,
    weighted_cross_entropy,
    write_volume,
)
from . import _core


def ledger_estimate(config):
    """Modeled training memory for a ledger config dict."""
    return _json.loads(_core.ledger_estimate(_json.dumps(config)))


def ledger_compare(a, b):
    return _json.loads(_core.ledger_compare(_json.dumps(a), _json.dumps(b)))


def run_cascade(config, out):
    """Stage-1 branches, stage 2 and a U-net baseline on phantoms; returns the summary."""
    return _json.loads(_core.run_cascade(_json.dumps(config), str(out)))


__all__ = [
    "ConfigError",
    "DataError",
    "Net",
    "ShapeError",
    "class_weights",
    "combined_loss",
    "dice",
    "ensemble",
    "expanded_edge",
    "ledger_compare",
    "ledger_estimate",
    "phantom",
    "read_volume",
    "run_cascade",
    "soft_dice_loss",
    "split_cases",
    "weighted_cross_entropy",
    "write_volume",
]
