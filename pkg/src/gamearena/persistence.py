"""Run artifacts: ``histories.jsonl``, the optional reply sidecar and ``manifest.json``.

Each history line is self-contained (setup, agents, matrix orientation,
strategy ids, every round) so analytics can replay it without the config.
Raw LLM replies are stored as SHA-256 digests; the full text goes to
``replies.jsonl`` only when asked for.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .config import AgentAssignment, AgentSpec, GameSetup
from .engine import GameHistory, RoundRecord, Termination

log = logging.getLogger(__name__)

HISTORIES_FILE = "histories.jsonl"
REPLIES_FILE = "replies.jsonl"
MANIFEST_FILE = "manifest.json"


def sha256_text(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()


def history_to_record(history: GameHistory) -> dict[str, Any]:
    setup = history.setup
    rounds = []
    for r in history.records:
        item: dict[str, Any] = {"round": r.round_index, "strategies": list(r.strategies), "scores": list(r.scores)}
        if r.messages is not None:
            item["messages"] = list(r.messages)
        if r.replies is not None:
            item["reply_digests"] = [None if t is None else sha256_text(t) for t in r.replies]
        rounds.append(item)
    record = {
        "key": setup.key,
        "game": history.game_name,
        "llm": history.llm,
        "language": setup.language,
        "variant": setup.variant_id,
        "repetition": setup.repetition,
        "rounds_known": history.rounds_known,
        "n_rounds": history.n_rounds,
        "orientation": history.orientation,
        "strategy_ids": list(history.strategy_ids),
        "seed": history.seed,
        "agents": [
            {"name": a.name, "personality": a.personality, "disclosed": a.disclosed,
             "disclosure_prob": a.disclosure_prob}
            for a in setup.assignment.agents
        ],
        "rounds": rounds,
        "termination": history.termination.value,
    }
    if history.failure:
        record["failure"] = history.failure
    return record


def history_from_record(record: dict[str, Any]) -> GameHistory:
    agents = tuple(
        AgentSpec(a["name"], a["personality"], bool(a["disclosed"]), float(a.get("disclosure_prob", 0.0)))
        for a in record["agents"]
    )
    setup = GameSetup(AgentAssignment(agents), record["language"], record["variant"], int(record["repetition"]))
    records = tuple(
        RoundRecord(
            round_index=r["round"],
            strategies=tuple(r["strategies"]),
            scores=tuple(float(s) for s in r["scores"]),
            messages=tuple(r["messages"]) if "messages" in r else None,
        )
        for r in record["rounds"]
    )
    return GameHistory(
        setup=setup,
        records=records,
        termination=Termination(record["termination"]),
        game_name=record.get("game", ""),
        llm=record.get("llm", ""),
        n_rounds=int(record.get("n_rounds", len(records))),
        rounds_known=bool(record.get("rounds_known", True)),
        orientation=record.get("orientation", "penalty"),
        strategy_ids=tuple(record.get("strategy_ids", ())),
        seed=int(record.get("seed", 0)),
        failure=record.get("failure"),
    )


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"


def repair_jsonl(path: str | Path) -> int:
    """Drop a torn final line left by a crash. Returns the number of intact lines."""
    path = Path(path)
    if not path.exists():
        return 0
    data = path.read_bytes()
    keep = data.rfind(b"\n") + 1
    tail = data[keep:]
    if tail:
        log.warning("%s: discarding partial final line (%d bytes)", path, len(tail))
        with open(path, "r+b") as fh:
            fh.truncate(keep)
    good = 0
    for line in data[:keep].splitlines():
        if line.strip():
            json.loads(line)
            good += 1
    return good


def iter_records(path: str | Path) -> Iterator[dict[str, Any]]:
    """Yield complete JSON lines; a final line without its newline is ignored."""
    with open(path, "rb") as fh:
        for raw in fh:
            if not raw.endswith(b"\n"):
                log.warning("%s: ignoring partial final line", path)
                break
            if raw.strip():
                yield json.loads(raw)


def read_histories(path: str | Path) -> list[GameHistory]:
    return [history_from_record(r) for r in iter_records(path)]


def persisted_keys(path: str | Path) -> set[str]:
    if not Path(path).exists():
        return set()
    return {r["key"] for r in iter_records(path)}


class HistoryWriter:
    """Single serialized sink for history lines (plus the optional reply sidecar)."""

    def __init__(self, out_dir: str | Path, *, save_replies: bool = False):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.out_dir / HISTORIES_FILE
        repair_jsonl(self.path)
        self.save_replies = save_replies
        if save_replies:
            repair_jsonl(self.out_dir / REPLIES_FILE)
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8", newline="\n")
        self._replies = open(self.out_dir / REPLIES_FILE, "a", encoding="utf-8", newline="\n") if save_replies else None

    def write(self, history: GameHistory) -> None:
        with self._lock:
            if self._replies is not None:
                for r in history.records:
                    for i, text in enumerate(r.replies or ()):
                        if text is not None:
                            self._replies.write(dumps_line({
                                "key": history.key, "round": r.round_index,
                                "agent": history.agent_names[i], "digest": sha256_text(text), "text": text,
                            }))
                self._replies.flush()
            self._fh.write(dumps_line(history_to_record(history)))
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()
        if self._replies is not None:
            self._replies.close()

    def __enter__(self) -> "HistoryWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


@dataclass
class RunManifest:
    config_digest: str
    template_digests: dict[str, str]
    profiles_digest: str | None
    variants: list[str]
    repetitions: int
    seed: int
    tool_version: str
    started_at: str
    finished_at: str | None = None
    games_total: int = 0
    games_run: int = 0
    games_skipped: int = 0
    decisions: int = 0
    failures: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / MANIFEST_FILE
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path


def count_decisions(histories: Iterable[GameHistory]) -> int:
    return sum(len(r.strategies) for h in histories for r in h.records)
