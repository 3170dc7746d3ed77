"""Aggregation and scoring of game histories.

Conventions:

* final scores are per-agent sums of round scores;
* the action encoding maps Option A (first declared strategy) to +1 and
  Option B to -1; the coordination encoding maps a mismatched round to +1
  and a matched one to -1;
* every variance in the four metrics is a population variance (divide by N);
  only the 95% interval uses the sample standard deviation;
* internal variability and cross-language inconsistency are computed on final
  scores, payoff sensitivity and round variability on the action encoding.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .engine import GameHistory, Termination
from .payoffs import parse_variant

Z_95 = 1.96
METRICS = ("I_V", "C_I", "S_P", "V_R")
GROUP_KEYS = ("model", "language", "personalities", "disclosure", "rounds_known", "variant")


def fmt(x: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def pvariance(xs: Sequence[float]) -> float:
    m = _mean(xs)
    return math.fsum((x - m) ** 2 for x in xs) / len(xs)


# --------------------------------------------------------------------------
# Final scores and confidence intervals
# --------------------------------------------------------------------------

def final_scores(history: GameHistory) -> tuple[float, ...]:
    n = len(history.setup.assignment.agents) or 2
    totals = [0.0] * n
    for record in history.records:
        for i, s in enumerate(record.scores):
            totals[i] += s
    return tuple(totals)


@dataclass(frozen=True)
class AggregateCell:
    key: tuple
    n: int
    mean: float
    ci95: float


def ci95(values: Sequence[float]) -> float:
    """Normal-approximation half-width, 1.96 * s / sqrt(n); zero for a single value."""
    n = len(values)
    if n < 2:
        return 0.0
    m = _mean(values)
    s = math.sqrt(math.fsum((v - m) ** 2 for v in values) / (n - 1))
    return Z_95 * s / math.sqrt(n)


def aggregate(cells: Mapping[Hashable, Sequence[float]]) -> list[AggregateCell]:
    out = []
    for key in sorted(cells, key=lambda k: tuple(map(str, k)) if isinstance(k, tuple) else (str(k),)):
        values = list(cells[key])
        if not values:
            raise ValueError(f"group {key!r} is empty")
        # sort so the float sum does not depend on input order
        values.sort()
        out.append(AggregateCell(key if isinstance(key, tuple) else (key,), len(values), _mean(values), ci95(values)))
    return out


def history_fields(history: GameHistory, model: str | None = None) -> dict[str, str]:
    setup = history.setup
    return {
        "model": model if model is not None else history.llm,
        "language": setup.language,
        "personalities": setup.assignment.key,
        "disclosure": ",".join("1" if a.disclosed else "0" for a in setup.assignment.agents),
        "rounds_known": "true" if history.rounds_known else "false",
        "variant": setup.variant_id,
    }


def usable(histories: Iterable[GameHistory]) -> list[GameHistory]:
    """Histories that can enter statistics: anything not cut short by an agent failure."""
    return [h for h in histories if h.termination != Termination.AGENT_FAILURE]


def group_final_scores(histories: Iterable[GameHistory], keys: Sequence[str] = GROUP_KEYS,
                       model: str | None = None) -> dict[tuple, list[float]]:
    unknown = set(keys) - set(GROUP_KEYS)
    if unknown:
        raise ValueError(f"unknown grouping key(s) {sorted(unknown)}; choose from {GROUP_KEYS}")
    groups: dict[tuple, list[float]] = defaultdict(list)
    for h in usable(histories):
        f = history_fields(h, model)
        groups[tuple(f[k] for k in keys)].extend(final_scores(h))
    return dict(groups)


# --------------------------------------------------------------------------
# Trajectory encodings
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedRun:
    game_id: str
    values: tuple[int, ...]
    encoding: str


def encode_runs(histories: Iterable[GameHistory], encoding: str = "action") -> list[EncodedRun]:
    """``action``: one run per agent; ``coordination``: one run per game."""
    out = []
    for h in histories:
        option_a = h.strategy_ids[0] if h.strategy_ids else "A"
        if encoding == "action":
            for i, name in enumerate(h.agent_names):
                values = tuple(1 if r.strategies[i] == option_a else -1 for r in h.records)
                out.append(EncodedRun(f"{h.key}#{name}", values, encoding))
        elif encoding == "coordination":
            values = tuple(-1 if len(set(r.strategies)) == 1 else 1 for r in h.records)
            out.append(EncodedRun(h.key, values, encoding))
        else:
            raise ValueError(f"unknown encoding {encoding!r}")
    return out


def average_trajectory(runs: Sequence[EncodedRun] | Sequence[Sequence[int]]) -> list[float]:
    series = [r.values if isinstance(r, EncodedRun) else tuple(r) for r in runs]
    if not series:
        raise ValueError("no runs to average")
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise ValueError(f"runs have mixed lengths {sorted(lengths)}; filter to one length first")
    return [math.fsum(col) / len(col) for col in zip(*series)]


def complete_runs(histories: Iterable[GameHistory]) -> list[GameHistory]:
    return [h for h in histories if h.termination == Termination.COMPLETED]


def trajectories(histories: Iterable[GameHistory], encoding: str = "action") -> dict[str, list[float]]:
    """Per-variant mean encoded series over games that played every round."""
    by_variant: dict[str, list[GameHistory]] = defaultdict(list)
    for h in complete_runs(histories):
        by_variant[h.setup.variant_id].append(h)
    return {v: average_trajectory(encode_runs(hs, encoding)) for v, hs in sorted(by_variant.items())}


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def metric_internal_variability(results: Sequence[float]) -> float:
    if len(results) < 2:
        raise ValueError("internal variability needs at least two results")
    return pvariance(sorted(results))


def metric_cross_language_inconsistency(rows: Iterable[tuple[Hashable, Hashable, Hashable, float]]) -> float:
    """``rows`` are ``(language, personality combo, rounds known, value)``.

    Mean over (combo, rounds-known) cells of the variance across languages of
    the per-language mean value.
    """
    cells: dict[tuple, dict[Hashable, list[float]]] = defaultdict(lambda: defaultdict(list))
    for language, combo, known, value in rows:
        cells[(combo, known)][language].append(value)
    if not cells:
        raise ValueError("no results")
    per_cell = []
    for key in sorted(cells, key=repr):
        by_lang = cells[key]
        means = sorted(_mean(sorted(v)) for v in by_lang.values())
        per_cell.append(pvariance(means))
    return _mean(sorted(per_cell))


def metric_payoff_sensitivity(harsh: Sequence[float], mild: Sequence[float]) -> float:
    if len(harsh) != len(mild):
        raise ValueError(f"harsh and mild series differ in length ({len(harsh)} vs {len(mild)})")
    if not harsh:
        raise ValueError("empty series")
    return math.fsum(abs(h - m) for h, m in zip(harsh, mild)) / len(harsh)


def metric_round_variability(series_by_variant: Mapping[Hashable, Sequence[float]]) -> float:
    if not series_by_variant:
        raise ValueError("no variants")
    per_variant = []
    for key, series in series_by_variant.items():
        if len(series) < 2:
            raise ValueError(f"variant {key!r} needs at least two rounds")
        per_variant.append(pvariance(series))
    return _mean(sorted(per_variant))


def raw_metrics(histories: Iterable[GameHistory], harsh: str = "pd_harsh", mild: str = "pd_mild") -> dict[str, float]:
    """All computable raw metrics for one model's histories.

    S_P is left out unless both the ``harsh`` and ``mild`` variant matrices
    were played; V_R is left out when no game played every round.
    """
    hs = usable(histories)
    if not hs:
        raise ValueError("no histories")
    scores: list[float] = []
    rows = []
    for h in hs:
        f = history_fields(h)
        for s in final_scores(h):
            scores.append(s)
            rows.append((f["language"], (f["personalities"], f["disclosure"]), f["rounds_known"], s))
    out = {
        "I_V": metric_internal_variability(scores),
        "C_I": metric_cross_language_inconsistency(rows),
    }
    by_matrix: dict[str, list[GameHistory]] = defaultdict(list)
    for h in complete_runs(hs):
        by_matrix[parse_variant(h.setup.variant_id).matrix].append(h)
    series = {m: average_trajectory(encode_runs(group)) for m, group in sorted(by_matrix.items())}
    if harsh in series and mild in series:
        out["S_P"] = metric_payoff_sensitivity(series[harsh], series[mild])
    long_enough = {m: s for m, s in series.items() if len(s) >= 2}
    if long_enough:
        out["V_R"] = metric_round_variability(long_enough)
    return out


# --------------------------------------------------------------------------
# Scorecard
# --------------------------------------------------------------------------

@dataclass
class ModelScores:
    raw: dict[str, float] = field(default_factory=dict)
    normalized: dict[str, float] = field(default_factory=dict)


@dataclass
class Scorecard:
    models: dict[str, ModelScores]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": [m for m in METRICS if any(m in s.raw for s in self.models.values())],
            "models": {
                name: {"raw": {k: s.raw[k] for k in METRICS if k in s.raw},
                       "normalized": {k: s.normalized[k] for k in METRICS if k in s.normalized}}
                for name, s in self.models.items()
            },
        }


def build_scorecard(raw: Mapping[str, Mapping[str, float]]) -> Scorecard:
    """Divide each metric by its maximum over the given models (all zeros stay zero).

    A metric missing for some models is normalized over the models that have it.
    """
    if not raw:
        raise ValueError("at least one model is required")
    models = {name: ModelScores(raw=dict(values)) for name, values in raw.items()}
    for metric in METRICS:
        present = {name: s.raw[metric] for name, s in models.items() if metric in s.raw}
        if not present:
            continue
        if any(v < 0 for v in present.values()):
            raise ValueError(f"{metric} values must be nonnegative")
        top = max(present.values())
        for name, value in present.items():
            models[name].normalized[metric] = 0.0 if top == 0 else value / top
    return Scorecard(models)


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------

def write_aggregates_csv(path: str | Path, cells: Sequence[AggregateCell], keys: Sequence[str] = GROUP_KEYS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*keys, "n", "mean", "ci95"])
        for cell in cells:
            w.writerow([*cell.key, cell.n, fmt(cell.mean), fmt(cell.ci95)])


def write_trajectories_csv(path: str | Path, series: Mapping[str, Sequence[float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "round", "mean_encoded"])
        for variant, values in series.items():
            for i, v in enumerate(values, start=1):
                w.writerow([variant, i, fmt(v)])


def dumps_json(value: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite number")
        return fmt(value)
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = [f"{pad}{dumps_json(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_scorecard_json(path: str | Path, scorecard: Scorecard) -> None:
    Path(path).write_text(dumps_json(scorecard.to_dict()) + "\n", encoding="utf-8")
