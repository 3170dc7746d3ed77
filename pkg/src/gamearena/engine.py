"""Game instantiation and the round loop.

Rounds are simultaneous-move: every agent's prompt in round r is rendered
from the history as it stood when round r began, so nobody sees a
same-round decision. When agents communicate, each agent first writes one
message from that same snapshot and the messages are handed to the
opponents' decision prompts.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .agents import (
    DEFAULT_RETRY_BUDGET,
    AgentHandle,
    DecisionFailure,
    DecisionRequest,
    HistoryView,
    LLMBackend,
    ScriptedPolicy,
    compose_message,
    decide,
)
from .config import NO_PERSONALITY, AgentSpec, GameConfig, GameSetup, combination_label
from .gateway import Gateway
from .payoffs import PayoffMatrix, Variant, compute_payoff, parse_variant, resolve_matrix
from .templates import (
    PromptTemplate,
    RoundContext,
    TemplateSet,
    describe_payoffs,
    render_history,
    render_prompt,
    substitute,
)

log = logging.getLogger(__name__)

SCRIPTED_PREFIX = "scripted:"


class Termination(str, enum.Enum):
    COMPLETED = "completed_all_rounds"
    STOP_CONDITION = "stop_condition"
    AGENT_FAILURE = "agent_failure"


class GameCreationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    strategies: tuple[str, ...]
    scores: tuple[float, ...]
    messages: tuple[str, ...] | None = None
    replies: tuple[str | None, ...] | None = None

    @property
    def combination(self) -> str:
        return combination_label(self.strategies)


@dataclass(frozen=True)
class GameHistory:
    setup: GameSetup
    records: tuple[RoundRecord, ...]
    termination: Termination
    game_name: str = ""
    llm: str = ""
    n_rounds: int = 0
    rounds_known: bool = True
    orientation: str = "penalty"
    strategy_ids: tuple[str, ...] = ()
    seed: int = 0
    failure: str | None = None

    @property
    def key(self) -> str:
        return self.setup.key

    @property
    def agent_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.setup.assignment.agents)


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class GameInstance:
    setup: GameSetup
    config: GameConfig
    variant: Variant
    matrix: PayoffMatrix
    agents: list[AgentHandle]
    template: PromptTemplate
    seed: int = 0
    retry_budget: int = DEFAULT_RETRY_BUDGET
    records: list[RoundRecord] = field(default_factory=list)
    _payoff_text: dict[int, str] = field(default_factory=dict, repr=False, compare=False)

    def payoff_description(self, player: int) -> str:
        # fixed for the whole game, so render once per seat
        if player not in self._payoff_text:
            self._payoff_text[player] = describe_payoffs(self.template, self.matrix.scores, self.labels, player,
                                                         self.matrix.orientation)
        return self._payoff_text[player]

    @property
    def n_rounds(self) -> int:
        return self.config.n_rounds

    @property
    def rounds_known(self) -> bool:
        return self.variant.effective_rounds_known(self.config)

    @property
    def labels(self) -> dict[str, str]:
        return dict(self.config.payoff_matrix.strategies[self.setup.language])

    def history(self, termination: Termination, failure: str | None = None) -> GameHistory:
        return GameHistory(
            setup=self.setup,
            records=tuple(self.records),
            termination=termination,
            game_name=self.config.name,
            llm=self.config.llm,
            n_rounds=self.n_rounds,
            rounds_known=self.rounds_known,
            orientation=self.matrix.orientation,
            strategy_ids=self.matrix.strategy_ids,
            seed=self.seed,
            failure=failure,
        )


AgentFactory = Callable[[AgentSpec, str, int], AgentHandle]


def parse_scripted_llm(llm: str) -> list[tuple[str | None, str, str | None]]:
    """Decode ``scripted:`` model ids into ``(personality or None, policy, opening)`` entries.

    ``scripted:tit_for_tat,always_a`` assigns policies by agent position (a
    single policy applies to every agent); ``scripted:cooperative=tit_for_tat,selfish=always_a``
    assigns them by personality. ``best_response@A`` fixes a first move.
    """
    entries = []
    for item in llm[len(SCRIPTED_PREFIX):].split(","):
        item = item.strip()
        if not item:
            continue
        personality, eq, policy = item.rpartition("=")
        policy, at, opening = policy.partition("@")
        entries.append((personality if eq else None, policy, opening if at else None))
    if not entries:
        raise ValueError(f"{llm!r}: no scripted policy given")
    return entries


def default_agent_factory(config: GameConfig, gateway: Gateway | None = None,
                          max_output_tokens: int | None = None) -> AgentFactory:
    """Build agents from ``config.llm``: a ``scripted:`` spec or a gateway profile id."""
    if config.llm.startswith(SCRIPTED_PREFIX):
        entries = parse_scripted_llm(config.llm)
        by_personality = {p: (pol, op) for p, pol, op in entries if p is not None}
        positional = [(pol, op) for p, pol, op in entries if p is None]
        names = list(config.agents.names)

        def scripted(spec: AgentSpec, language: str, seed: int) -> AgentHandle:
            if spec.personality in by_personality:
                policy, opening = by_personality[spec.personality]
            elif positional:
                policy, opening = positional[min(names.index(spec.name), len(positional) - 1)]
            else:
                raise ValueError(f"no scripted policy for personality {spec.personality!r}")
            return AgentHandle(spec.name, spec.personality, language,
                               ScriptedPolicy(policy, derive_seed(seed, spec.name), opening))

        return scripted

    if gateway is None:
        raise ValueError(f"model profile {config.llm!r} needs an LLM gateway")
    profile = gateway.profile(config.llm)

    def llm_agent(spec: AgentSpec, language: str, seed: int) -> AgentHandle:
        return AgentHandle(spec.name, spec.personality, language,
                           LLMBackend(gateway, profile, max_output_tokens))

    return llm_agent


def instantiate_games(
    config: GameConfig,
    templates: TemplateSet,
    setups: Sequence[GameSetup],
    agent_factory: AgentFactory,
    *,
    seed: int = 0,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
) -> list[GameInstance]:
    """One fresh GameInstance per setup, in setup order."""
    if config.n_players != 2:
        raise GameCreationError("only two-player games are supported")
    games = []
    for setup in setups:
        assert setup.language in templates, f"no template for {setup.language!r} (validate templates first)"
        game_seed = derive_seed(seed, setup.key)
        try:
            variant = parse_variant(setup.variant_id)
            matrix = resolve_matrix(config, variant)
            agents = [agent_factory(spec, setup.language, game_seed) for spec in setup.assignment.agents]
        except Exception as exc:
            raise GameCreationError(f"setup {setup.key}: {exc}") from exc
        games.append(GameInstance(setup, config, variant, matrix, agents, templates[setup.language],
                                  game_seed, retry_budget))
    return games


def check_stop_condition(history: GameHistory | Sequence[RoundRecord], stop_game_when: Sequence[str]) -> bool:
    records = history.records if isinstance(history, GameHistory) else history
    return bool(records) and records[-1].combination in stop_game_when


class AgentFailure(RuntimeError):
    def __init__(self, agent: str, cause: DecisionFailure):
        self.agent = agent
        self.cause = cause
        super().__init__(f"agent {agent}: {cause}")


def _context(game: GameInstance, snapshot: Sequence[RoundRecord], player: int,
             incoming: str | None) -> RoundContext:
    config, lang = game.config, game.setup.language
    labels = game.labels
    specs = game.setup.assignment.agents
    me, other = specs[player], specs[1 - player]
    texts = config.agents.personalities[lang]

    def text_of(pid: str) -> str:
        return "" if pid == NO_PERSONALITY else texts.get(pid, "")

    return RoundContext(
        game_name=config.name,
        n_rounds=game.n_rounds,
        current_round=len(snapshot) + 1,
        n_rounds_is_known=game.rounds_known,
        personality_text=text_of(me.personality),
        opponent_personality_text=text_of(other.personality) if me.disclosed else "",
        opponent_personality_prob=me.disclosure_prob,
        strategies=tuple(labels.values()),
        payoff_description=game.payoff_description(player),
        history_text=render_history(game.template, ((r.strategies, r.scores) for r in snapshot), labels, player),
        incoming_message=incoming,
    )


def run_round(game: GameInstance) -> RoundRecord:
    snapshot = tuple(game.records)
    round_index = len(snapshot) + 1
    template = game.template
    labels = game.labels
    n = len(game.agents)

    messages: tuple[str, ...] | None = None
    if game.config.agents_communicate:
        sent = []
        for i, agent in enumerate(game.agents):
            prompt = render_prompt(template, _context(game, snapshot, i, ""))
            prompt += "\n\n" + template.phrase("message_instruction")
            try:
                sent.append(compose_message(agent, prompt, game.retry_budget))
            except DecisionFailure as exc:
                raise AgentFailure(agent.name, exc) from exc
        messages = tuple(sent)

    instruction = substitute(template.phrase("answer_instruction"),
                             {"options": template.phrase("list_separator").join(labels.values())})
    choices: list[str] = []
    replies: list[str | None] = []
    for i, agent in enumerate(game.agents):
        incoming = None
        if messages is not None:
            incoming = "\n".join(m for j, m in enumerate(messages) if j != i and m)
        prompt = render_prompt(template, _context(game, snapshot, i, incoming)) + "\n\n" + instruction
        view = HistoryView(
            round_index=round_index,
            own=tuple(r.strategies[i] for r in snapshot),
            opponent=tuple(r.strategies[1 - i] for r in snapshot),
            strategy_ids=game.matrix.strategy_ids,
            player=i,
            matrix=game.matrix,
        )
        request = DecisionRequest(prompt, labels, game.retry_budget, template.phrase("retry_notice"))
        try:
            decision = decide(agent, request, view)
        except DecisionFailure as exc:
            raise AgentFailure(agent.name, exc) from exc
        choices.append(decision.strategy)
        replies.append(decision.reply)

    strategies = tuple(choices)
    record = RoundRecord(
        round_index=round_index,
        strategies=strategies,
        scores=tuple(float(s) for s in compute_payoff(game.matrix, strategies)),
        messages=messages,
        replies=None if all(r is None for r in replies) else tuple(replies),
    )
    assert len(record.strategies) == n
    game.records.append(record)
    return record


def run_game(game: GameInstance) -> GameHistory:
    """Play rounds until the round cap or a stop combination; failures end the game early."""
    assert not game.records, "run_game needs a fresh instance"
    stop = game.config.stop_game_when
    while len(game.records) < game.n_rounds:
        try:
            run_round(game)
        except AgentFailure as exc:
            log.warning("%s: %s", game.setup.key, exc)
            return game.history(Termination.AGENT_FAILURE, str(exc))
        if check_stop_condition(game.records, stop):
            return game.history(Termination.STOP_CONDITION)
    return game.history(Termination.COMPLETED)


def run_games(games: Sequence[GameInstance]) -> list[GameHistory]:
    return [run_game(g) for g in games]
