from __future__ import annotations

import copy
import json
from pathlib import Path

import pytest

from gamearena.config import config_from_dict, enumerate_game_setups
from gamearena.engine import default_agent_factory, instantiate_games
from gamearena.templates import load_templates

ROOT = Path(__file__).resolve().parent.parent
CAMPAIGNS = ROOT / "campaigns"

EN_TEMPLATE = (
    "You are playing {game_name}.\n"
    "{personality}\n"
    "{opponent_personality}\n"
    "{round_info}\n"
    "Options: {strategies}.\n"
    "{payoff_description}\n"
    "{history}\n"
)

PD_DOC = {
    "name": "pd",
    "nRounds": 10,
    "nRoundsIsKnown": True,
    "llm": "scripted:always_a",
    "languages": ["en"],
    "allAgentPermutations": False,
    "agents": {
        "names": ["agent1", "agent2"],
        "personalities": {"en": {"cooperative": "cooperative", "selfish": "selfish"}},
        "opponentPersonalityProb": [0, 0],
    },
    "payoffMatrix": {
        "weights": {"w1": 6, "w2": 0, "w3": 10, "w4": 2},
        "strategies": {"en": {"A": "Option A", "B": "Option B"}},
        "combinations": ["AA", "AB", "BA", "BB"],
        "matrix": {"AA": ["w1", "w1"], "AB": ["w2", "w3"], "BA": ["w3", "w2"], "BB": ["w4", "w4"]},
    },
    "stopGameWhen": [],
    "agentsCommunicate": False,
}


def pd_doc(**overrides) -> dict:
    doc = copy.deepcopy(PD_DOC)
    for key, value in overrides.items():
        doc[key] = value
    return doc


def pd_config(**overrides):
    return config_from_dict(pd_doc(**overrides))


def pd_text(**overrides) -> str:
    return json.dumps(pd_doc(**overrides))


def play(policies: str, *, n_rounds: int = 10, variant: str = "pd_conventional", stop=(), seed: int = 0,
         communicate: bool = False, template: str = EN_TEMPLATE):
    """One scripted game; ``policies`` is the ``scripted:`` spec without its prefix."""
    from gamearena.engine import run_game

    config = pd_config(nRounds=n_rounds, llm=f"scripted:{policies}", stopGameWhen=list(stop),
                       agentsCommunicate=communicate)
    templates = load_templates({"en": template})
    setup = enumerate_game_setups(config, [variant], 1)[0]
    [game] = instantiate_games(config, templates, [setup], default_agent_factory(config), seed=seed)
    return run_game(game)


@pytest.fixture
def en_templates():
    return load_templates({"en": EN_TEMPLATE})


def make_history(moves, *, variant="pd_conventional", language="en", personalities=("cooperative", "selfish"),
                 llm="m", termination=None, repetition=0, rounds_known=True, disclosed=(False, False)):
    """GameHistory from a move string like ``"AA AB BB"``, scored with the variant's preset."""
    from gamearena.config import AgentAssignment, AgentSpec, GameSetup
    from gamearena.engine import GameHistory, RoundRecord, Termination
    from gamearena.payoffs import compute_payoff, parse_variant, preset_matrix

    matrix = preset_matrix(parse_variant(variant).matrix)
    records = tuple(
        RoundRecord(i, tuple(m), compute_payoff(matrix, tuple(m)))
        for i, m in enumerate(moves.split(), start=1)
    )
    agents = tuple(AgentSpec(f"agent{i + 1}", p, d, 1.0 if d else 0.0)
                   for i, (p, d) in enumerate(zip(personalities, disclosed)))
    setup = GameSetup(AgentAssignment(agents), language, variant, repetition)
    return GameHistory(setup, records, termination or Termination.COMPLETED, "pd", llm,
                       len(records), rounds_known, matrix.orientation, matrix.strategy_ids, 0)
