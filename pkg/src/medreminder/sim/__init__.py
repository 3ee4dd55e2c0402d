from .generate import generate_scenario, generate_scenario_dict
from .oracle import oracle_replay
from .runner import run_scenario
from .scenario import Scenario, load_scenario, parse_scenario

__all__ = [
    "Scenario",
    "generate_scenario",
    "generate_scenario_dict",
    "load_scenario",
    "oracle_replay",
    "parse_scenario",
    "run_scenario",
]
