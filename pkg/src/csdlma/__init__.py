"""Carrier-sense deep-reinforcement-learning multiple access on a minislot channel simulator."""

from .agent import Agent, Hyperparams
from .harness import ScenarioConfig, load_config, run_experiment, summarize

__all__ = ["Agent", "Hyperparams", "ScenarioConfig", "load_config", "run_experiment", "summarize"]
__version__ = "0.1.0"
