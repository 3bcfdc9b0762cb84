"""Operational shell around the library: strict JSON configuration,
lossless checkpoints, the command-line interface, and SVG plot emission."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, RunConfig, config_hash, load_config, parse_config

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "PRESETS",
    "RunConfig",
    "config_hash",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "save_checkpoint",
]
