"""Repeated two-player games between scripted and LLM-backed agents, with bias scoring."""

__version__ = "0.1.0"

from .config import (  # noqa: E402
    GameConfig,
    GameSetup,
    ValidationReport,
    enumerate_game_setups,
    expand_agent_permutations,
    parse_config,
    validate_config,
)
from .engine import GameHistory, Termination, instantiate_games, run_game, run_round  # noqa: E402
from .payoffs import PRESETS, compute_payoff, dilemma_strength_gap, preset_matrix  # noqa: E402
from .templates import load_templates, render_prompt, validate_templates  # noqa: E402

__all__ = [
    "GameConfig",
    "GameHistory",
    "GameSetup",
    "PRESETS",
    "Termination",
    "ValidationReport",
    "compute_payoff",
    "dilemma_strength_gap",
    "enumerate_game_setups",
    "expand_agent_permutations",
    "instantiate_games",
    "load_templates",
    "parse_config",
    "preset_matrix",
    "render_prompt",
    "run_game",
    "run_round",
    "validate_config",
    "validate_templates",
]
