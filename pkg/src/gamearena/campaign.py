"""Campaign orchestration: enumerate, instantiate, run concurrently, persist in order."""

from __future__ import annotations

import logging
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .engine import AgentFactory, GameHistory, GameInstance, Termination, instantiate_games, run_game
from .config import GameConfig, GameSetup
from .persistence import (
    HISTORIES_FILE,
    HistoryWriter,
    RunManifest,
    count_decisions,
    persisted_keys,
    read_histories,
    repair_jsonl,
)
from .templates import TemplateSet

log = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class CampaignResult:
    manifest: RunManifest
    histories: list[GameHistory]

    @property
    def failures(self) -> int:
        return self.manifest.failures


def run_campaign(
    config: GameConfig,
    templates: TemplateSet,
    setups: Sequence[GameSetup],
    agent_factory: AgentFactory,
    out_dir: str | Path,
    *,
    seed: int = 0,
    concurrency: int = 1,
    resume: bool = False,
    save_replies: bool = False,
    retry_budget: int = 3,
    manifest: RunManifest | None = None,
) -> CampaignResult:
    """Run every setup not yet persisted and append its history to ``histories.jsonl``.

    Lines are written in setup order whatever the completion order, so a
    seeded scripted campaign produces the same bytes at any concurrency.
    Without ``resume`` an existing histories file is an error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / HISTORIES_FILE
    if path.exists() and path.stat().st_size and not resume:
        raise FileExistsError(f"{path} already exists; pass resume=True to continue it")
    repair_jsonl(path)
    done = persisted_keys(path) if resume else set()
    todo = [s for s in setups if s.key not in done]
    # instantiate everything first so a bad profile or policy aborts before any game runs
    games = instantiate_games(config, templates, todo, agent_factory, seed=seed, retry_budget=retry_budget)

    if manifest is None:
        manifest = RunManifest("", {}, None, [], 0, seed, __version__, _now())
    manifest.started_at = manifest.started_at or _now()
    manifest.games_total = len(setups)
    manifest.games_skipped = len(setups) - len(todo)

    fresh: list[GameHistory] = []
    with HistoryWriter(out_dir, save_replies=save_replies) as writer:
        for history in _run_ordered(games, max(1, concurrency)):
            writer.write(history)
            fresh.append(history)
            if len(fresh) % 50 == 0:
                log.info("%d/%d games done", len(fresh), len(games))

    everything = read_histories(path)
    manifest.games_run = len(fresh)
    manifest.extra["games_persisted"] = len(everything)
    manifest.decisions = count_decisions(everything)
    manifest.failures = sum(h.termination == Termination.AGENT_FAILURE for h in everything)
    manifest.finished_at = _now()
    manifest.write(out_dir)
    return CampaignResult(manifest, fresh)


def _run_ordered(games: Sequence[GameInstance], concurrency: int):
    """Yield histories in input order while running up to ``concurrency`` games at once."""
    if concurrency == 1:
        for g in games:
            yield run_game(g)
        return
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        pending: dict[int, Future] = {}
        ready: dict[int, GameHistory] = {}
        next_submit = next_emit = 0
        while next_emit < len(games):
            while next_submit < len(games) and len(pending) + len(ready) < 2 * concurrency:
                pending[next_submit] = pool.submit(run_game, games[next_submit])
                next_submit += 1
            finished, _ = wait(pending.values(), return_when=FIRST_COMPLETED)
            for idx in [i for i, f in pending.items() if f in finished]:
                ready[idx] = pending.pop(idx).result()
            while next_emit in ready:
                yield ready.pop(next_emit)
                next_emit += 1
