"""Benchmark scenes, run orchestration, snapshots and the ``dem`` CLI."""

from .config import RunConfig, load_config, parse_config
from .runner import Comparison, RunReport, compare_models, run
from .scenes import Scene, build_scene

__all__ = ["Comparison", "RunConfig", "RunReport", "Scene", "build_scene", "compare_models", "load_config",
           "parse_config", "run"]
