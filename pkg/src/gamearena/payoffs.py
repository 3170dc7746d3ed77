"""Payoff matrices, built-in presets and variant ids.

A variant id selects the matrix a game is played with and, optionally, pins
whether the horizon is disclosed::

    pd_harsh            preset matrix, nRoundsIsKnown taken from the config
    pd_harsh:unknown    preset matrix, horizon withheld
    config:known        the config's own matrix, horizon disclosed

Presets are 2x2 and are laid onto the config's strategies by declaration
position: the first declared strategy is "Option A".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .config import GameConfig, combination_label, combination_table

CONFIG_MATRIX = "config"


@dataclass(frozen=True)
class PayoffMatrix:
    strategy_ids: tuple[str, ...]
    scores: dict[tuple[str, ...], tuple[float, ...]]
    orientation: str = "penalty"

    @property
    def n_players(self) -> int:
        return len(next(iter(self.scores)))

    def label(self, combo: Sequence[str]) -> str:
        return combination_label(combo)


# Rows/columns are (Option A, Option B); entries are (player 1, player 2).
PRESETS: dict[str, tuple[str, tuple[tuple[tuple[float, float], ...], ...]]] = {
    "pd_conventional": ("penalty", (((6, 6), (0, 10)), ((10, 0), (2, 2)))),
    "pd_harsh": ("penalty", (((8, 8), (0, 10)), ((10, 0), (5, 5)))),
    "pd_mild": ("penalty", (((8, 8), (0, 10)), ((10, 0), (2, 2)))),
    "battle_of_sexes": ("reward", (((10, 7), (0, 0)), ((0, 0), (7, 10)))),
}


@dataclass(frozen=True)
class Variant:
    variant_id: str
    matrix: str
    rounds_known: bool | None

    def effective_rounds_known(self, config: GameConfig) -> bool:
        return config.n_rounds_is_known if self.rounds_known is None else self.rounds_known


def parse_variant(variant_id: str) -> Variant:
    matrix, sep, knowledge = variant_id.partition(":")
    if matrix != CONFIG_MATRIX and matrix not in PRESETS:
        raise ValueError(f"unknown variant matrix {matrix!r}; expected 'config' or one of {sorted(PRESETS)}")
    rounds_known = None
    if sep:
        if knowledge not in ("known", "unknown"):
            raise ValueError(f"variant {variant_id!r}: suffix must be ':known' or ':unknown'")
        rounds_known = knowledge == "known"
    return Variant(variant_id, matrix, rounds_known)


def preset_matrix(name: str, strategy_ids: Sequence[str] = ("A", "B")) -> PayoffMatrix:
    orientation, rows = PRESETS[name]
    if len(strategy_ids) != 2:
        raise ValueError(f"preset {name!r} needs exactly 2 strategies, got {len(strategy_ids)}")
    scores = {
        (strategy_ids[i], strategy_ids[j]): tuple(float(x) for x in rows[i][j])
        for i in range(2) for j in range(2)
    }
    return PayoffMatrix(tuple(strategy_ids), scores, orientation)


def matrix_from_config(config: GameConfig) -> PayoffMatrix:
    pm = config.payoff_matrix
    ids = pm.strategy_ids()
    table = combination_table(ids, config.n_players)
    scores = {
        table[label]: tuple(pm.weights[w] for w in pm.matrix[label])
        for label in pm.combinations
    }
    return PayoffMatrix(tuple(ids), scores, pm.orientation)


def resolve_matrix(config: GameConfig, variant: Variant | str) -> PayoffMatrix:
    if isinstance(variant, str):
        variant = parse_variant(variant)
    if variant.matrix == CONFIG_MATRIX:
        return matrix_from_config(config)
    if config.n_players != 2:
        raise ValueError(f"preset {variant.matrix!r} is a two-player matrix")
    return preset_matrix(variant.matrix, config.payoff_matrix.strategy_ids())


def compute_payoff(matrix: PayoffMatrix, combination: Sequence[str]) -> tuple[float, ...]:
    key = tuple(combination)
    assert key in matrix.scores, f"unknown combination {key!r}"
    return matrix.scores[key]


def dilemma_strength_gap(matrix: PayoffMatrix) -> float:
    """Mutual-reward minus mutual-punishment, with payoffs as negated penalties.

    Option A is defection, Option B cooperation. The conventional prisoner's
    dilemma gives -2 - (-6) = 4.
    """
    if len(matrix.strategy_ids) != 2 or matrix.n_players != 2:
        raise ValueError("dilemma strength needs a 2x2 two-player matrix")
    if matrix.orientation != "penalty":
        raise ValueError("dilemma strength is defined for penalty matrices")
    defect, cooperate = matrix.strategy_ids
    reward = -matrix.scores[(cooperate, cooperate)][0]
    punishment = -matrix.scores[(defect, defect)][0]
    return reward - punishment
