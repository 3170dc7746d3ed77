"""Agents: scripted strategy policies and LLM-backed players behind one interface.

For two-strategy games the first declared strategy is "Option A" and the
second "Option B"; in the prisoner's dilemma presets A is defection and B
cooperation, which is the reading the policy names below use.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .gateway import CompletionRequest, Gateway, GatewayError, MalformedResponseError, ModelProfile
from .payoffs import PayoffMatrix

log = logging.getLogger(__name__)

DEFAULT_RETRY_BUDGET = 3

POLICIES = ("always_a", "always_b", "tit_for_tat", "grim_trigger", "random_uniform", "alternator", "best_response")
STOCHASTIC_POLICIES = frozenset({"random_uniform", "best_response"})


class ParseError(ValueError):
    pass


class NoMatchError(ParseError):
    pass


class AmbiguousMatchError(ParseError):
    def __init__(self, message: str, candidates: Sequence[str]):
        self.candidates = tuple(candidates)
        super().__init__(message)


class DecisionFailure(RuntimeError):
    """An agent could not produce a usable answer within its retry budget."""

    def __init__(self, message: str, attempts: int = 0, replies: Sequence[str] = ()):
        self.attempts = attempts
        self.replies = tuple(replies)
        super().__init__(message)


@dataclass(frozen=True)
class HistoryView:
    """What a scripted policy may see: past moves only, from its own seat."""

    round_index: int
    own: tuple[str, ...]
    opponent: tuple[str, ...]
    strategy_ids: tuple[str, ...]
    player: int = 0
    matrix: PayoffMatrix | None = None


@dataclass(frozen=True)
class DecisionRequest:
    prompt: str
    options: dict[str, str]  # strategy-id -> localized label
    retry_budget: int = DEFAULT_RETRY_BUDGET
    retry_notice: str = "Your previous answer was not a valid option."

    def __post_init__(self) -> None:
        if len(self.options) < 2:
            raise ValueError("a decision needs at least two strategies")


@dataclass(frozen=True)
class Decision:
    strategy: str
    reply: str | None = None
    attempts: int = 1


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptedPolicy:
    policy_id: str
    seed: int | None = None
    opening: str | None = None  # best_response only: fixed first move

    def __post_init__(self) -> None:
        if self.policy_id not in POLICIES:
            raise ValueError(f"unknown scripted policy {self.policy_id!r}; expected one of {POLICIES}")
        needs_seed = self.policy_id == "random_uniform" or (self.policy_id == "best_response" and self.opening is None)
        if needs_seed and self.seed is None:
            raise ValueError(f"policy {self.policy_id!r} needs a seed")

    def _rng(self, round_index: int) -> random.Random:
        return random.Random(f"{self.seed}:{round_index}")

    def choose(self, view: HistoryView) -> str:
        ids = view.strategy_ids
        option_a, option_b = ids[0], ids[1]
        p = self.policy_id
        if p == "always_a":
            return option_a
        if p == "always_b":
            return option_b
        if p == "tit_for_tat":
            return view.opponent[-1] if view.opponent else option_b
        if p == "grim_trigger":
            return option_a if option_a in view.opponent else option_b
        if p == "alternator":
            return option_a if view.round_index % 2 == 1 else option_b
        if p == "random_uniform":
            return self._rng(view.round_index).choice(ids)
        # best_response: minimize own penalty (maximize reward) against the opponent's last move
        if not view.opponent:
            return self.opening if self.opening is not None else self._rng(view.round_index).choice(ids)
        if view.matrix is None:
            raise ValueError("best_response needs the payoff matrix")
        return _best_response(view.matrix, view.player, view.opponent[-1])


def _best_response(matrix: PayoffMatrix, player: int, opponent_move: str) -> str:
    sign = -1 if matrix.orientation == "penalty" else 1
    best, best_value = None, None
    for mine in matrix.strategy_ids:
        combo = [opponent_move] * 2
        combo[player] = mine
        value = sign * matrix.scores[tuple(combo)][player]
        if best_value is None or value > best_value:
            best, best_value = mine, value
    return best


@dataclass
class LLMBackend:
    gateway: Gateway
    profile: ModelProfile
    max_output_tokens: int | None = None


@dataclass
class AgentHandle:
    name: str
    personality: str
    language: str
    backend: ScriptedPolicy | LLMBackend

    @property
    def is_scripted(self) -> bool:
        return isinstance(self.backend, ScriptedPolicy)


# --------------------------------------------------------------------------
# Reply parsing
# --------------------------------------------------------------------------

def _normalize(text: str) -> str:
    return text.strip().strip("\"'`*").rstrip(".!").strip()


def parse_strategy_response(reply: str, options: Mapping[str, str]) -> str:
    """Map a free-text reply onto one strategy-id.

    Tries, in order: the whole trimmed reply equal to an id or label; then a
    unique strategy mentioned in the reply, where labels match as
    case-insensitive substrings and ids only as case-sensitive whole words.
    A reply naming two different strategies is ambiguous, never a guess.
    """
    if not reply or not reply.strip():
        raise NoMatchError("empty reply")
    trimmed = reply.strip()
    for candidate in (trimmed, _normalize(trimmed)):
        for sid, label in options.items():
            if candidate == sid or candidate == label:
                return sid
    folded = _normalize(trimmed).casefold()
    for sid, label in options.items():
        if folded == label.casefold():
            return sid

    lowered = trimmed.casefold()
    spans: list[tuple[int, int, str]] = []
    for sid, label in options.items():
        needle = label.casefold()
        if needle:
            start = lowered.find(needle)
            while start != -1:
                spans.append((start, start + len(needle), sid))
                start = lowered.find(needle, start + 1)
        for m in re.finditer(rf"(?<!\w){re.escape(sid)}(?!\w)", trimmed):
            spans.append((m.start(), m.end(), sid))
    # a match nested inside a longer match of another label does not count
    kept = {
        sid for (s, e, sid) in spans
        if not any(s2 <= s and e <= e2 and (e2 - s2) > (e - s) for (s2, e2, _) in spans)
    }
    if len(kept) == 1:
        return kept.pop()
    if not kept:
        raise NoMatchError(f"no strategy found in reply {trimmed[:80]!r}")
    raise AmbiguousMatchError(f"reply names several strategies: {sorted(kept)}", sorted(kept))


# --------------------------------------------------------------------------
# Decisions and messages
# --------------------------------------------------------------------------

def _ask(backend: LLMBackend, prompt: str) -> str:
    result = backend.gateway.complete(
        backend.profile, CompletionRequest(prompt, backend.max_output_tokens, backend.profile.profile_id))
    return result.text


def decide(agent: AgentHandle, request: DecisionRequest, history_view: HistoryView) -> Decision:
    backend = agent.backend
    if isinstance(backend, ScriptedPolicy):
        return Decision(backend.choose(history_view))

    replies: list[str] = []
    for attempt in range(request.retry_budget + 1):
        prompt = request.prompt if attempt == 0 else f"{request.prompt}\n{request.retry_notice}"
        try:
            reply = _ask(backend, prompt)
        except MalformedResponseError as exc:
            # an empty or shapeless reply counts as one bad answer
            log.info("%s: %s, attempt %d", agent.name, exc, attempt + 1)
            replies.append("")
            continue
        except GatewayError as exc:
            raise DecisionFailure(f"{agent.name}: {exc}", attempt + 1, replies) from exc
        replies.append(reply)
        try:
            return Decision(parse_strategy_response(reply, request.options), reply, attempt + 1)
        except ParseError as exc:
            log.info("%s: unusable reply (%s), attempt %d", agent.name, exc, attempt + 1)
    raise DecisionFailure(f"{agent.name}: no valid strategy after {len(replies)} attempts",
                          len(replies), replies)


def compose_message(agent: AgentHandle, prompt: str, retry_budget: int = DEFAULT_RETRY_BUDGET) -> str:
    """One free-text message for the other agent; scripted agents stay silent."""
    backend = agent.backend
    if isinstance(backend, ScriptedPolicy):
        return ""
    for attempt in range(retry_budget + 1):
        try:
            text = _ask(backend, prompt).strip()
        except MalformedResponseError:
            continue
        except GatewayError as exc:
            raise DecisionFailure(f"{agent.name}: {exc}", attempt + 1) from exc
        if text:
            return text
    raise DecisionFailure(f"{agent.name}: empty message after {retry_budget + 1} attempts", retry_budget + 1)
