"""Game configuration: parsing, validation and campaign enumeration.

The on-disk format is a JSON document using the camelCase field names of the
original tool (``nRounds``, ``payoffMatrix`` ...). Two extension fields are
accepted under an ``x-`` prefix so they cannot collide with upstream names:
``x-orientation`` (``penalty`` | ``reward``, default ``penalty``) and
``x-variantId`` (default variant used when the caller does not sweep any).
Agents may also carry ``x-assignment``, the personality-id per agent used
when ``allAgentPermutations`` is false.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

NO_PERSONALITY = "none"
ORIENTATIONS = ("penalty", "reward")


class ConfigError(ValueError):
    """Raised when a configuration document cannot be turned into a GameConfig."""

    def __init__(self, message: str, path: str = "", line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        elif path:
            where = f" at {path}"
        super().__init__(f"{message}{where}")


class ConfigSyntaxError(ConfigError):
    pass


class MissingFieldError(ConfigError):
    def __init__(self, name: str, path: str):
        self.field = name
        super().__init__(f"missing required field {name!r}", path)


class FieldTypeError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        lines = "; ".join(f"{f.code} at {f.path}: {f.message}" for f in report.findings)
        super().__init__(f"invalid configuration: {lines}")


@dataclass(frozen=True)
class Finding:
    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} {self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    @property
    def codes(self) -> list[str]:
        return [f.code for f in self.findings]

    def __add__(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(self.findings + other.findings)

    def __len__(self) -> int:
        return len(self.findings)


@dataclass(frozen=True)
class AgentsBlock:
    names: tuple[str, ...]
    # language -> personality-id -> localized text
    personalities: dict[str, dict[str, str]]
    opponent_personality_prob: tuple[float, ...]
    assignment: tuple[str, ...] | None = None

    def personality_ids(self) -> list[str]:
        for by_id in self.personalities.values():
            return list(by_id)
        return []


@dataclass(frozen=True)
class PayoffMatrixSpec:
    weights: dict[str, float]
    # language -> strategy-id -> localized label
    strategies: dict[str, dict[str, str]]
    combinations: tuple[str, ...]
    matrix: dict[str, tuple[str, ...]]
    orientation: str = "penalty"

    def strategy_ids(self) -> list[str]:
        for by_id in self.strategies.values():
            return list(by_id)
        return []


@dataclass(frozen=True)
class GameConfig:
    name: str
    n_rounds: int
    n_rounds_is_known: bool
    llm: str
    languages: tuple[str, ...]
    all_agent_permutations: bool
    agents: AgentsBlock
    payoff_matrix: PayoffMatrixSpec
    stop_game_when: tuple[str, ...] = ()
    agents_communicate: bool = False
    variant_id: str | None = None

    @property
    def n_players(self) -> int:
        return len(self.agents.names)


@dataclass(frozen=True)
class AgentSpec:
    name: str
    personality: str
    disclosed: bool
    disclosure_prob: float


@dataclass(frozen=True)
class AgentAssignment:
    agents: tuple[AgentSpec, ...]

    @property
    def personalities(self) -> tuple[str, ...]:
        return tuple(a.personality for a in self.agents)

    @property
    def key(self) -> str:
        return ",".join(self.personalities)


@dataclass(frozen=True)
class GameSetup:
    assignment: AgentAssignment
    language: str
    variant_id: str
    repetition: int

    @property
    def key(self) -> str:
        return f"{self.assignment.key}|{self.language}|{self.variant_id}|r{self.repetition}"


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_MISSING = object()


def _get(obj: dict, name: str, path: str, default: Any = _MISSING) -> Any:
    if name in obj:
        return obj[name]
    if default is _MISSING:
        raise MissingFieldError(name, path or "$")
    return default


def _expect(value: Any, kind: type | tuple[type, ...], path: str, what: str) -> Any:
    # bool is an int subclass; never accept it where a number is wanted
    if isinstance(value, bool) and kind is not bool and (kind == (int, float) or kind is int):
        raise FieldTypeError(f"expected {what}, got boolean", path)
    if not isinstance(value, kind):
        raise FieldTypeError(f"expected {what}, got {type(value).__name__}", path)
    return value


def _number(value: Any, path: str) -> float:
    _expect(value, (int, float), path, "number")
    if not math.isfinite(value):
        raise FieldTypeError("expected a finite number", path)
    return float(value)


def _str_list(value: Any, path: str) -> tuple[str, ...]:
    _expect(value, list, path, "list")
    out = []
    for i, item in enumerate(value):
        if isinstance(item, int) and not isinstance(item, bool):
            item = str(item)  # names are documented as integers upstream
        out.append(_expect(item, str, f"{path}[{i}]", "string"))
    return tuple(out)


def _localized(value: Any, path: str) -> dict[str, dict[str, str]]:
    _expect(value, dict, path, "object")
    out: dict[str, dict[str, str]] = {}
    for lang, by_id in value.items():
        _expect(by_id, dict, f"{path}.{lang}", "object")
        inner = {}
        for key, text in by_id.items():
            if text is None:
                text = ""
            inner[key] = _expect(text, str, f"{path}.{lang}.{key}", "string")
        out[lang] = inner
    return out


def config_from_dict(doc: Any) -> GameConfig:
    """Build a GameConfig from an already-decoded JSON value (types only, no invariants)."""
    _expect(doc, dict, "$", "object")
    agents_doc = _expect(_get(doc, "agents", "$"), dict, "$.agents", "object")
    pm_doc = _expect(_get(doc, "payoffMatrix", "$"), dict, "$.payoffMatrix", "object")

    probs_raw = _expect(_get(agents_doc, "opponentPersonalityProb", "$.agents"), list,
                        "$.agents.opponentPersonalityProb", "list")
    assignment = agents_doc.get("x-assignment")
    agents = AgentsBlock(
        names=_str_list(_get(agents_doc, "names", "$.agents"), "$.agents.names"),
        personalities=_localized(_get(agents_doc, "personalities", "$.agents"), "$.agents.personalities"),
        opponent_personality_prob=tuple(
            _number(p, f"$.agents.opponentPersonalityProb[{i}]") for i, p in enumerate(probs_raw)
        ),
        assignment=None if assignment is None else _str_list(assignment, "$.agents.x-assignment"),
    )

    weights_doc = _expect(_get(pm_doc, "weights", "$.payoffMatrix"), dict, "$.payoffMatrix.weights", "object")
    matrix_doc = _expect(_get(pm_doc, "matrix", "$.payoffMatrix"), dict, "$.payoffMatrix.matrix", "object")
    orientation = doc.get("x-orientation", pm_doc.get("x-orientation", "penalty"))
    _expect(orientation, str, "$.x-orientation", "string")
    payoff = PayoffMatrixSpec(
        weights={k: _number(v, f"$.payoffMatrix.weights.{k}") for k, v in weights_doc.items()},
        strategies=_localized(_get(pm_doc, "strategies", "$.payoffMatrix"), "$.payoffMatrix.strategies"),
        combinations=_str_list(_get(pm_doc, "combinations", "$.payoffMatrix"), "$.payoffMatrix.combinations"),
        matrix={k: _str_list(v, f"$.payoffMatrix.matrix.{k}") for k, v in matrix_doc.items()},
        orientation=orientation,
    )

    n_rounds = _expect(_get(doc, "nRounds", "$"), int, "$.nRounds", "integer")
    variant = doc.get("x-variantId")
    if variant is not None:
        _expect(variant, str, "$.x-variantId", "string")
    return GameConfig(
        name=_expect(_get(doc, "name", "$"), str, "$.name", "string"),
        n_rounds=n_rounds,
        n_rounds_is_known=_expect(_get(doc, "nRoundsIsKnown", "$"), bool, "$.nRoundsIsKnown", "boolean"),
        llm=_expect(_get(doc, "llm", "$"), str, "$.llm", "string"),
        languages=_str_list(_get(doc, "languages", "$"), "$.languages"),
        all_agent_permutations=_expect(_get(doc, "allAgentPermutations", "$"), bool,
                                       "$.allAgentPermutations", "boolean"),
        agents=agents,
        payoff_matrix=payoff,
        stop_game_when=_str_list(_get(doc, "stopGameWhen", "$", []), "$.stopGameWhen"),
        agents_communicate=_expect(_get(doc, "agentsCommunicate", "$", False), bool,
                                   "$.agentsCommunicate", "boolean"),
        variant_id=variant,
    )


def parse_config(text: str | bytes, *, validate: bool = True) -> GameConfig:
    """Parse a JSON configuration document.

    With ``validate=True`` (the default) the invariants are checked as well
    and any finding raises :class:`ConfigValidationError`.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigSyntaxError(f"config is not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    config = config_from_dict(doc)
    if validate:
        report = validate_config(config)
        if not report.ok:
            raise ConfigValidationError(report)
    return config


def config_to_dict(config: GameConfig) -> dict[str, Any]:
    agents: dict[str, Any] = {
        "names": list(config.agents.names),
        "personalities": config.agents.personalities,
        "opponentPersonalityProb": list(config.agents.opponent_personality_prob),
    }
    if config.agents.assignment is not None:
        agents["x-assignment"] = list(config.agents.assignment)
    pm = config.payoff_matrix
    doc: dict[str, Any] = {
        "name": config.name,
        "nRounds": config.n_rounds,
        "nRoundsIsKnown": config.n_rounds_is_known,
        "llm": config.llm,
        "languages": list(config.languages),
        "allAgentPermutations": config.all_agent_permutations,
        "agents": agents,
        "payoffMatrix": {
            "weights": pm.weights,
            "strategies": pm.strategies,
            "combinations": list(pm.combinations),
            "matrix": {k: list(v) for k, v in pm.matrix.items()},
        },
        "stopGameWhen": list(config.stop_game_when),
        "agentsCommunicate": config.agents_communicate,
        "x-orientation": pm.orientation,
    }
    if config.variant_id is not None:
        doc["x-variantId"] = config.variant_id
    return doc


def serialize_config(config: GameConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, ensure_ascii=False)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def combination_table(strategy_ids: Sequence[str], n_players: int) -> dict[str, tuple[str, ...]]:
    """Map every combination label to its joint strategy tuple."""
    return {"".join(combo): combo for combo in itertools.product(strategy_ids, repeat=n_players)}


def combination_label(combo: Iterable[str]) -> str:
    return "".join(combo)


def validate_config(config: GameConfig) -> ValidationReport:
    """Check every structural invariant. Never raises; problems become findings."""
    out: list[Finding] = []

    def add(code: str, path: str, message: str) -> None:
        out.append(Finding(code, path, message))

    if config.n_rounds < 1:
        add("N_ROUNDS_INVALID", "$.nRounds", "n_rounds ≥ 1 violated")
    if not config.languages:
        add("EMPTY_LANGUAGES", "$.languages", "at least one language is required")
    if len(set(config.languages)) != len(config.languages):
        add("DUPLICATE_LANGUAGE", "$.languages", "languages must be duplicate-free")

    agents = config.agents
    if len(agents.names) < 2:
        add("TOO_FEW_AGENTS", "$.agents.names", "at least two agents are required")
    if len(set(agents.names)) != len(agents.names):
        add("DUPLICATE_AGENT", "$.agents.names", "agent names must be duplicate-free")
    if len(agents.opponent_personality_prob) != len(agents.names):
        add("PROB_COUNT_MISMATCH", "$.agents.opponentPersonalityProb",
            f"expected {len(agents.names)} values, got {len(agents.opponent_personality_prob)}")
    for i, p in enumerate(agents.opponent_personality_prob):
        if not 0.0 <= p <= 1.0:
            add("PROB_OUT_OF_RANGE", f"$.agents.opponentPersonalityProb[{i}]", f"{p} not in [0, 1]")

    _check_localized(config.languages, agents.personalities, "$.agents.personalities",
                     "MISSING_LANGUAGE_PERSONALITIES", "PERSONALITY_SET_MISMATCH", add)
    personality_ids = agents.personality_ids()
    if config.languages and agents.personalities and not personality_ids:
        add("NO_PERSONALITIES", "$.agents.personalities", "at least one personality-id is required")
    if agents.assignment is not None:
        if len(agents.assignment) != len(agents.names):
            add("ASSIGNMENT_COUNT_MISMATCH", "$.agents.x-assignment",
                f"expected {len(agents.names)} personality-ids")
        for i, pid in enumerate(agents.assignment):
            if pid not in personality_ids:
                add("UNKNOWN_PERSONALITY", f"$.agents.x-assignment[{i}]", f"{pid!r} is not a personality-id")
    elif not config.all_agent_permutations and personality_ids and len(personality_ids) != len(agents.names):
        add("AMBIGUOUS_ASSIGNMENT", "$.agents",
            "without allAgentPermutations, give x-assignment or one personality per agent")

    pm = config.payoff_matrix
    if pm.orientation not in ORIENTATIONS:
        add("UNKNOWN_ORIENTATION", "$.x-orientation", f"{pm.orientation!r} not in {ORIENTATIONS}")
    _check_localized(config.languages, pm.strategies, "$.payoffMatrix.strategies",
                     "MISSING_LANGUAGE_STRATEGIES", "STRATEGY_SET_MISMATCH", add)
    strategy_ids = pm.strategy_ids()
    if len(strategy_ids) < 2:
        add("TOO_FEW_STRATEGIES", "$.payoffMatrix.strategies", "at least two strategies are required")

    n_players = len(agents.names)
    expected = combination_table(strategy_ids, n_players) if strategy_ids and n_players else {}
    if len(expected) != len(strategy_ids) ** n_players:
        add("AMBIGUOUS_STRATEGY_IDS", "$.payoffMatrix.strategies",
            "strategy-ids do not concatenate into distinct combination labels")
    if len(set(pm.combinations)) != len(pm.combinations):
        add("DUPLICATE_COMBINATION", "$.payoffMatrix.combinations", "combinations must be duplicate-free")
    for i, label in enumerate(pm.combinations):
        if label not in expected:
            add("UNKNOWN_COMBINATION", f"$.payoffMatrix.combinations[{i}]",
                f"{label!r} is not a joint strategy")
    missing = [label for label in expected if label not in pm.combinations]
    if missing:
        add("INCOMPLETE_COMBINATIONS", "$.payoffMatrix.combinations", f"missing {missing}")

    for label in pm.combinations:
        if label not in pm.matrix:
            add("MISSING_MATRIX_ENTRY", f"$.payoffMatrix.matrix.{label}", "combination has no payoff entry")
    for label, weight_ids in pm.matrix.items():
        path = f"$.payoffMatrix.matrix.{label}"
        if label not in pm.combinations:
            add("UNKNOWN_COMBINATION", path, f"{label!r} is not a listed combination")
        if len(weight_ids) != n_players:
            add("MATRIX_ARITY", path, f"expected {n_players} weight-ids, got {len(weight_ids)}")
        for wid in weight_ids:
            if wid not in pm.weights:
                add("UNKNOWN_WEIGHT", path, f"weight-id {wid!r} is not defined")

    for i, label in enumerate(config.stop_game_when):
        if label not in pm.combinations:
            add("UNKNOWN_COMBINATION", f"$.stopGameWhen[{i}]", f"{label!r} is not a listed combination")

    return ValidationReport(tuple(out))


def _check_localized(languages, table, path, missing_code, mismatch_code, add) -> None:
    reference: list[str] | None = None
    for lang in languages:
        if lang not in table:
            add(missing_code, f"{path}.{lang}", f"nothing defined for language {lang!r}")
            continue
        ids = sorted(table[lang])
        if reference is None:
            reference = ids
        elif ids != reference:
            add(mismatch_code, f"{path}.{lang}", f"ids {ids} differ from {reference}")


# --------------------------------------------------------------------------
# Campaign enumeration
# --------------------------------------------------------------------------

def _assignment(config: GameConfig, personalities: Sequence[str]) -> AgentAssignment:
    probs = config.agents.opponent_personality_prob
    return AgentAssignment(tuple(
        AgentSpec(name=name, personality=pid, disclosed=probs[i] > 0, disclosure_prob=probs[i])
        for i, (name, pid) in enumerate(zip(config.agents.names, personalities))
    ))


def expand_agent_permutations(config: GameConfig, *, dedupe: bool = True) -> list[AgentAssignment]:
    """Agent personality assignments to play.

    With ``all_agent_permutations`` this is the Cartesian product of
    personality-ids over agents; ``dedupe`` collapses orderings of the same
    multiset (cooperative/selfish == selfish/cooperative), keeping the sorted
    ordering as the representative.
    """
    agents = config.agents
    if not config.all_agent_permutations:
        literal = agents.assignment if agents.assignment is not None else tuple(agents.personality_ids())
        return [_assignment(config, literal)]
    ids = agents.personality_ids()
    combos = itertools.product(ids, repeat=len(agents.names))
    if dedupe:
        # product() over sorted ids yields each multiset's sorted form exactly once
        combos = itertools.combinations_with_replacement(sorted(ids), len(agents.names))
    return [_assignment(config, combo) for combo in combos]


def enumerate_game_setups(
    config: GameConfig,
    variants: Sequence[str],
    repetitions: int,
    *,
    dedupe: bool = True,
) -> list[GameSetup]:
    """Every concrete game of a campaign, assignment-major then language, variant, repetition."""
    if not variants:
        raise ValueError("at least one variant is required")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    return [
        GameSetup(assignment, language, variant, rep)
        for assignment in expand_agent_permutations(config, dedupe=dedupe)
        for language in config.languages
        for variant in variants
        for rep in range(repetitions)
    ]
