"""Per-language prompt templates.

Templates are plain UTF-8 text with single-brace placeholders, e.g.::

    You are playing {game_name}.
    {personality}
    {round_info}
    Your options are: {strategies}.
    {payoff_description}
    {history}

``{{`` and ``}}`` produce literal braces; any other brace is an error.

A line holding ``{personality}``, ``{opponent_personality}``, ``{history}`` or
``{incoming_message}`` is dropped entirely when that value is empty, so a
template never shows half a sentence.

The fixed sentences the renderer produces (round information, payoff and
history lines, the answer instruction ...) come from a small phrasebook.
A template can override any phrase with header lines of the form::

    #! round_unknown: Tour {current_round}. Le nombre total de tours est inconnu.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .config import NO_PERSONALITY, Finding, GameConfig, ValidationReport

PLACEHOLDERS = frozenset({
    "game_name", "n_rounds", "current_round", "round_info", "personality",
    "opponent_personality", "strategies", "payoff_description", "history",
    "incoming_message",
})
REQUIRED_PLACEHOLDERS = frozenset({"strategies", "payoff_description", "round_info"})
# lines carrying one of these vanish when its value is empty
LINE_OPTIONAL = frozenset({"personality", "opponent_personality", "history", "incoming_message"})

# phrase key -> fields it may reference
PHRASE_FIELDS: dict[str, frozenset[str]] = {
    "round_known": frozenset({"current_round", "n_rounds"}),
    "round_unknown": frozenset({"current_round"}),
    "unknown_total": frozenset(),
    "personality": frozenset({"personality"}),
    "opponent_certain": frozenset({"personality"}),
    "opponent_probable": frozenset({"personality", "probability"}),
    "payoff_penalty": frozenset({"mine", "theirs", "my_score", "their_score"}),
    "payoff_reward": frozenset({"mine", "theirs", "my_score", "their_score"}),
    "history_header": frozenset(),
    "history_line": frozenset({"round", "mine", "theirs", "my_score", "their_score"}),
    "answer_instruction": frozenset({"options"}),
    "retry_notice": frozenset(),
    "message_instruction": frozenset(),
    "list_separator": frozenset(),
}

PHRASEBOOK: dict[str, dict[str, str]] = {
    "en": {
        "round_known": "This is round {current_round} of {n_rounds}.",
        "round_unknown": "This is round {current_round}. The total number of rounds is unknown.",
        "unknown_total": "an unknown number",
        "personality": "Your personality is: {personality}.",
        "opponent_certain": "The other agent's personality is: {personality}.",
        "opponent_probable": "With probability {probability}, the other agent's personality is: {personality}.",
        "payoff_penalty": ("If you choose {mine} and the other agent chooses {theirs}, "
                           "you receive a penalty of {my_score} and the other agent receives a penalty of {their_score}."),
        "payoff_reward": ("If you choose {mine} and the other agent chooses {theirs}, "
                          "your payoff is {my_score} and the other agent's payoff is {their_score}."),
        "history_header": "Previous rounds:",
        "history_line": ("Round {round}: you chose {mine}, the other agent chose {theirs}. "
                         "Your score: {my_score}; the other agent's score: {their_score}."),
        "answer_instruction": "Answer with exactly one of: {options}.",
        "retry_notice": "Your previous answer was not a valid option.",
        "message_instruction": ("Before deciding, write one short message to the other agent. "
                                "Reply with the message only."),
        "list_separator": ", ",
    },
    "fr": {
        "round_known": "Ceci est le tour {current_round} sur {n_rounds}.",
        "round_unknown": "Ceci est le tour {current_round}. Le nombre total de tours est inconnu.",
        "unknown_total": "un nombre inconnu",
        "personality": "Votre personnalité est : {personality}.",
        "opponent_certain": "La personnalité de l'autre agent est : {personality}.",
        "opponent_probable": "Avec une probabilité de {probability}, la personnalité de l'autre agent est : {personality}.",
        "payoff_penalty": ("Si vous choisissez {mine} et que l'autre agent choisit {theirs}, "
                           "vous recevez une pénalité de {my_score} et l'autre agent une pénalité de {their_score}."),
        "payoff_reward": ("Si vous choisissez {mine} et que l'autre agent choisit {theirs}, "
                          "votre gain est de {my_score} et celui de l'autre agent de {their_score}."),
        "history_header": "Tours précédents :",
        "history_line": ("Tour {round} : vous avez choisi {mine}, l'autre agent a choisi {theirs}. "
                         "Votre score : {my_score} ; score de l'autre agent : {their_score}."),
        "answer_instruction": "Répondez avec exactement une des options : {options}.",
        "retry_notice": "Votre réponse précédente n'était pas une option valide.",
        "message_instruction": ("Avant de décider, écrivez un court message à l'autre agent. "
                                "Répondez uniquement avec le message."),
        "list_separator": ", ",
    },
}
DEFAULT_LANGUAGE = "en"

_TOKEN = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}|[{}]")
_DIRECTIVE = re.compile(r"^#!\s*([A-Za-z_]+)\s*:\s?(.*)$")


class TemplateError(ValueError):
    pass


class UnknownPlaceholderError(TemplateError):
    def __init__(self, name: str, offset: int, language: str = ""):
        self.name = name
        self.offset = offset
        self.language = language
        super().__init__(f"unknown placeholder {{{name}}} at offset {offset}" + (f" in {language!r} template" if language else ""))


class MissingPlaceholderError(TemplateError):
    def __init__(self, names: Iterable[str], language: str = ""):
        self.names = sorted(names)
        super().__init__(f"template {language!r} lacks required placeholder(s): "
                         + ", ".join(f"{{{n}}}" for n in self.names))


class MissingTemplateError(TemplateError):
    def __init__(self, languages: Iterable[str]):
        self.languages = sorted(languages)
        super().__init__(f"no template for language(s): {', '.join(self.languages)}")


class RenderError(TemplateError):
    pass


def scan_placeholders(text: str, allowed: frozenset[str], language: str = "") -> list[tuple[str, int]]:
    """Return ``(name, offset)`` for every placeholder; reject unknown names and stray braces."""
    found = []
    for m in _TOKEN.finditer(text):
        tok = m.group(0)
        if tok in ("{{", "}}"):
            continue
        name = m.group(1)
        if name is None:
            raise TemplateError(f"unmatched {tok!r} at offset {m.start()}" + (f" in {language!r} template" if language else ""))
        if name not in allowed:
            raise UnknownPlaceholderError(name, m.start(), language)
        found.append((name, m.start()))
    return found


def substitute(text: str, values: Mapping[str, str]) -> str:
    def repl(m: re.Match) -> str:
        tok = m.group(0)
        if tok == "{{":
            return "{"
        if tok == "}}":
            return "}"
        name = m.group(1)
        if name is None or name not in values:
            raise RenderError(f"no value for {tok!r}")
        return values[name]

    return _TOKEN.sub(repl, text)


@dataclass(frozen=True)
class PromptTemplate:
    language: str
    body: str
    phrases: dict[str, str] = field(default_factory=dict)

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(name for name, _ in scan_placeholders(self.body, PLACEHOLDERS, self.language))

    def phrase(self, key: str) -> str:
        if key in self.phrases:
            return self.phrases[key]
        book = PHRASEBOOK.get(self.language, PHRASEBOOK[DEFAULT_LANGUAGE])
        return book.get(key, PHRASEBOOK[DEFAULT_LANGUAGE][key])


TemplateSet = dict[str, PromptTemplate]


def parse_template(language: str, source: str) -> PromptTemplate:
    lines = source.splitlines(keepends=True)
    phrases: dict[str, str] = {}
    start = 0
    for start, line in enumerate(lines):
        m = _DIRECTIVE.match(line.rstrip("\r\n"))
        if not m:
            break
        key, value = m.group(1), m.group(2)
        if key not in PHRASE_FIELDS:
            raise TemplateError(f"unknown phrase {key!r} in {language!r} template")
        scan_placeholders(value, PHRASE_FIELDS[key], language)
        phrases[key] = value
    else:
        start = len(lines)
    body = "".join(lines[start:])
    names = {name for name, _ in scan_placeholders(body, PLACEHOLDERS, language)}
    missing = REQUIRED_PLACEHOLDERS - names
    if missing:
        raise MissingPlaceholderError(missing, language)
    return PromptTemplate(language, body, phrases)


def load_templates(sources: Mapping[str, str], languages: Sequence[str] | None = None) -> TemplateSet:
    """Parse one template per language. ``languages``, when given, must all be covered."""
    if languages is not None:
        missing = [lang for lang in languages if lang not in sources]
        if missing:
            raise MissingTemplateError(missing)
    return {lang: parse_template(lang, text) for lang, text in sources.items()}


def template_path(directory: str | Path, config_name: str, language: str) -> Path:
    return Path(directory) / f"{config_name}_{language}.txt"


def read_template_dir(directory: str | Path, config_name: str, languages: Sequence[str]) -> dict[str, str]:
    """Read ``<config-name>_<language>.txt`` files for the languages present on disk."""
    sources = {}
    for lang in languages:
        path = template_path(directory, config_name, lang)
        if path.is_file():
            sources[lang] = path.read_text(encoding="utf-8")
    return sources


def validate_templates(templates: TemplateSet, config: GameConfig) -> ValidationReport:
    out: list[Finding] = []
    personality_ids = config.agents.personality_ids()
    has_personality = any(pid != NO_PERSONALITY for pid in personality_ids)
    # disclosure probability is an experiment knob, so a template may keep the
    # opponent line for runs where it is 0; it only needs some personality text
    satisfiable = {
        "personality": has_personality,
        "opponent_personality": has_personality,
        "incoming_message": config.agents_communicate,
    }
    for lang in config.languages:
        if lang not in templates:
            out.append(Finding("MISSING_TEMPLATE", f"templates.{lang}", f"no template for language {lang!r}"))
            continue
        for name, offset in scan_placeholders(templates[lang].body, PLACEHOLDERS, lang):
            if not satisfiable.get(name, True):
                out.append(Finding("UNSATISFIABLE_PLACEHOLDER", f"templates.{lang}@{offset}",
                                   f"{{{name}}} can never receive a value under this config"))
    return ValidationReport(tuple(out))


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundContext:
    game_name: str
    n_rounds: int
    current_round: int
    n_rounds_is_known: bool
    personality_text: str
    opponent_personality_text: str
    strategies: tuple[str, ...]
    payoff_description: str
    history_text: str
    incoming_message: str | None = None
    opponent_personality_prob: float = 1.0


def format_number(x: float) -> str:
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return repr(x)


def describe_payoffs(template: PromptTemplate, scores: Mapping[tuple[str, ...], Sequence[float]],
                     labels: Mapping[str, str], player: int, orientation: str) -> str:
    """One sentence per joint strategy, from ``player``'s point of view (two players)."""
    phrase = template.phrase("payoff_reward" if orientation == "reward" else "payoff_penalty")
    other = 1 - player
    ids = list(labels)
    lines = []
    for mine in ids:
        for theirs in ids:
            combo = [None, None]
            combo[player], combo[other] = mine, theirs
            score = scores[tuple(combo)]
            lines.append(substitute(phrase, {
                "mine": labels[mine], "theirs": labels[theirs],
                "my_score": format_number(score[player]), "their_score": format_number(score[other]),
            }))
    return "\n".join(lines)


def render_history(template: PromptTemplate, rounds: Iterable[tuple[Sequence[str], Sequence[float]]],
                   labels: Mapping[str, str], player: int) -> str:
    """Transcript of finished rounds, oldest first, one newline-terminated line each."""
    phrase = template.phrase("history_line")
    other = 1 - player
    out = []
    for index, (strategies, scores) in enumerate(rounds, start=1):
        out.append(substitute(phrase, {
            "round": str(index),
            "mine": labels[strategies[player]], "theirs": labels[strategies[other]],
            "my_score": format_number(scores[player]), "their_score": format_number(scores[other]),
        }) + "\n")
    return "".join(out)


def render_prompt(template: PromptTemplate, ctx: RoundContext) -> str:
    if not 1 <= ctx.current_round <= ctx.n_rounds:
        raise RenderError(f"current_round {ctx.current_round} outside 1..{ctx.n_rounds}")
    if not ctx.strategies:
        raise RenderError("no strategies to present")
    rounds = {"current_round": str(ctx.current_round), "n_rounds": str(ctx.n_rounds)}
    if ctx.n_rounds_is_known:
        round_info = substitute(template.phrase("round_known"), rounds)
        n_rounds = str(ctx.n_rounds)
    else:
        round_info = substitute(template.phrase("round_unknown"), rounds)
        n_rounds = template.phrase("unknown_total")

    personality = ""
    if ctx.personality_text:
        personality = substitute(template.phrase("personality"), {"personality": ctx.personality_text})
    opponent = ""
    if ctx.opponent_personality_text and ctx.opponent_personality_prob > 0:
        if ctx.opponent_personality_prob >= 1:
            opponent = substitute(template.phrase("opponent_certain"),
                                  {"personality": ctx.opponent_personality_text})
        else:
            opponent = substitute(template.phrase("opponent_probable"), {
                "personality": ctx.opponent_personality_text,
                "probability": format_number(ctx.opponent_personality_prob),
            })
    history = ""
    if ctx.history_text:
        history = template.phrase("history_header") + "\n" + ctx.history_text.rstrip("\n")

    values = {
        "game_name": ctx.game_name,
        "n_rounds": n_rounds,
        "current_round": str(ctx.current_round),
        "round_info": round_info,
        "personality": personality,
        "opponent_personality": opponent,
        "strategies": template.phrase("list_separator").join(ctx.strategies),
        "payoff_description": ctx.payoff_description,
        "history": history,
    }
    if ctx.incoming_message is not None:
        values["incoming_message"] = ctx.incoming_message

    kept = []
    for line in template.body.splitlines(keepends=True):
        names = {m.group(1) for m in _TOKEN.finditer(line) if m.group(1)}
        if any(n in LINE_OPTIONAL and values.get(n, None) == "" for n in names):
            continue
        kept.append(line)
    return substitute("".join(kept), values)
