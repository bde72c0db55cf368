"""Experiment orchestration: configs, run directories, and the command line."""

from pfedhpo.harness.config import ConfigError, ExperimentConfig, build_config, load_config, parse_config

__all__ = ["ConfigError", "ExperimentConfig", "build_config", "load_config", "parse_config"]
