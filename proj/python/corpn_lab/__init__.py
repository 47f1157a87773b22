"""Cooperating RPN few-shot detection laboratory."""

from ._core import (
    ConfigError,
    canonical_config,
    config_hash,
    gradcheck,
    iou,
    nms,
    run_seed,
    runs_csv,
    score_box,
    select_rpn,
)

__all__ = [
    "ConfigError",
    "canonical_config",
    "config_hash",
    "gradcheck",
    "iou",
    "nms",
    "run_seed",
    "runs_csv",
    "score_box",
    "select_rpn",
]
