from __future__ import annotations

import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamearena.analytics import (
    aggregate,
    average_trajectory,
    build_scorecard,
    ci95,
    dumps_json,
    encode_runs,
    final_scores,
    fmt,
    group_final_scores,
    metric_cross_language_inconsistency,
    metric_internal_variability,
    metric_payoff_sensitivity,
    metric_round_variability,
    raw_metrics,
    trajectories,
)
from gamearena.engine import Termination

from conftest import make_history
import oracles

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_final_scores_sum_rounds():
    assert final_scores(make_history("AB AA BB")) == (8.0, 18.0)
    assert final_scores(make_history("")) == (0.0, 0.0)


def test_aggregate_single_cell():
    [cell] = aggregate({("k",): [60.0] * 10})
    assert (cell.n, cell.mean, cell.ci95) == (10, 60.0, 0.0)


def test_aggregate_ci():
    [cell] = aggregate({"k": [0.0, 10.0]})
    assert cell.mean == 5.0
    assert cell.ci95 == pytest.approx(9.8, abs=1e-12)
    assert ci95([3.0]) == 0.0


def test_aggregate_rejects_empty_group():
    with pytest.raises(ValueError):
        aggregate({"k": []})


def test_group_by_keys():
    hs = [make_history("AA", language="en"), make_history("BB", language="fr"),
          make_history("AB", language="en", termination=Termination.AGENT_FAILURE)]
    groups = group_final_scores(hs, ["language"])
    assert groups == {("en",): [6.0, 6.0], ("fr",): [2.0, 2.0]}
    with pytest.raises(ValueError):
        group_final_scores(hs, ["colour"])


def test_action_and_coordination_encodings():
    h = make_history("AA AB BB")
    runs = encode_runs([h], "action")
    assert [r.values for r in runs] == [(1, 1, -1), (1, -1, -1)]
    [coord] = encode_runs([h], "coordination")
    assert coord.values == (-1, 1, -1)
    with pytest.raises(ValueError):
        encode_runs([h], "mood")


def test_trajectories_use_complete_runs_only():
    hs = [make_history("AA AA"), make_history("BB BB"),
          make_history("AB", termination=Termination.STOP_CONDITION)]
    assert trajectories(hs) == {"pd_conventional": [0.0, 0.0]}


def test_average_rejects_mixed_lengths():
    with pytest.raises(ValueError):
        average_trajectory([(1, 1), (1,)])


@pytest.mark.parametrize("values, expected", [([0, 2], 1.0), ([0, 0, 6], 8.0), ([5, 5, 5], 0.0)])
def test_internal_variability(values, expected):
    assert metric_internal_variability(values) == expected


def test_internal_variability_needs_two():
    with pytest.raises(ValueError):
        metric_internal_variability([1.0])


def test_cross_language_inconsistency():
    rows = [("en", "c", True, 10), ("fr", "c", True, 20),
            ("en", "s", True, 4), ("fr", "s", True, 4), ("fr", "s", True, 4)]
    # cell c: means 10 and 20 -> 25; cell s: equal means -> 0
    assert metric_cross_language_inconsistency(rows) == 12.5
    assert metric_cross_language_inconsistency([("en", "c", True, 3)]) == 0.0


def test_payoff_sensitivity():
    assert metric_payoff_sensitivity([1, 1], [-1, 0]) == 1.5
    with pytest.raises(ValueError):
        metric_payoff_sensitivity([1], [1, 1])


def test_round_variability():
    assert metric_round_variability({"a": [1, -1], "b": [1, 1]}) == 0.5
    with pytest.raises(ValueError):
        metric_round_variability({"a": [1]})


def test_raw_metrics_on_histories():
    hs = [make_history("AA AA", variant="pd_harsh"), make_history("BB BB", variant="pd_mild"),
          make_history("AB BA", variant="pd_mild:unknown", rounds_known=False)]
    raw = raw_metrics(hs)
    assert set(raw) == {"I_V", "C_I", "S_P", "V_R"}
    # both mild runs share a matrix, so they are pooled into one series
    mild = average_trajectory([(-1, -1), (-1, -1), (1, -1), (-1, 1)])
    assert raw["S_P"] == metric_payoff_sensitivity([1, 1], mild)


def test_raw_metrics_without_harsh_mild_pair():
    hs = [make_history("AA BB", variant="battle_of_sexes"), make_history("BB BB", variant="battle_of_sexes")]
    assert "S_P" not in raw_metrics(hs)


def test_scorecard_normalization():
    card = build_scorecard({"m1": {"V_R": 1.0, "I_V": 0.0}, "m2": {"V_R": 2.0, "I_V": 0.0}})
    assert card.models["m1"].normalized == {"V_R": 0.5, "I_V": 0.0}
    assert card.models["m2"].normalized == {"V_R": 1.0, "I_V": 0.0}
    assert card.to_dict()["metrics"] == ["I_V", "V_R"]


def test_scorecard_partial_metric():
    card = build_scorecard({"a": {"S_P": 2.0, "I_V": 4.0}, "b": {"I_V": 1.0}})
    assert "S_P" not in card.models["b"].normalized
    assert card.models["a"].normalized["S_P"] == 1.0


def test_scorecard_needs_models():
    with pytest.raises(ValueError):
        build_scorecard({})


def test_float_formatting():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(60.0) == "60"
    text = dumps_json({"x": 0.1, "y": [1, True, None]})
    assert json.loads(text) == {"x": 0.1, "y": [1, True, None]}


# ---- properties and oracle agreement --------------------------------------

@given(xs=st.lists(finite, min_size=2, max_size=30), seed=st.integers())
def test_internal_variability_permutation_invariant(xs, seed):
    shuffled = xs[:]
    random.Random(seed).shuffle(shuffled)
    assert metric_internal_variability(xs) == metric_internal_variability(shuffled)
    assert metric_internal_variability(xs) >= 0


@given(xs=st.lists(st.floats(-1000, 1000), min_size=2, max_size=30), c=st.floats(-100, 100))
def test_internal_variability_scaling(xs, c):
    base = metric_internal_variability(xs)
    assert math.isclose(metric_internal_variability([c * x for x in xs]), c * c * base, rel_tol=1e-6, abs_tol=1e-6)
    assert math.isclose(metric_internal_variability([x + c for x in xs]), base, rel_tol=1e-6, abs_tol=1e-6)


@given(xs=st.lists(st.floats(-1000, 1000), min_size=2, max_size=30))
def test_internal_variability_matches_oracle(xs):
    assert math.isclose(metric_internal_variability(xs), oracles.ref_internal_variability(xs), rel_tol=1e-9, abs_tol=1e-9)


rows = st.lists(st.tuples(st.sampled_from(["en", "fr", "ar"]), st.sampled_from(["c", "s"]), st.booleans(),
                          st.floats(-100, 100)), min_size=1, max_size=30)


@given(rows=rows, seed=st.integers())
def test_cross_language_matches_oracle_and_ignores_order(rows, seed):
    shuffled = rows[:]
    random.Random(seed).shuffle(shuffled)
    a = metric_cross_language_inconsistency(rows)
    assert a == metric_cross_language_inconsistency(shuffled)
    assert math.isclose(a, oracles.ref_cross_language(rows), rel_tol=1e-9, abs_tol=1e-9)


@given(data=st.data(), n=st.integers(1, 8))
def test_payoff_sensitivity_matches_oracle(data, n):
    run = st.lists(st.sampled_from([1, -1]), min_size=n, max_size=n)
    harsh = data.draw(st.lists(run, min_size=1, max_size=5))
    mild = data.draw(st.lists(run, min_size=1, max_size=5))
    value = metric_payoff_sensitivity(average_trajectory(harsh), average_trajectory(mild))
    assert math.isclose(value, oracles.ref_payoff_sensitivity(harsh, mild), rel_tol=1e-12, abs_tol=1e-12)
    assert 0 <= value <= 2
    assert metric_payoff_sensitivity(average_trajectory(harsh), average_trajectory(harsh)) == 0


@given(data=st.data(), n=st.integers(2, 8))
def test_round_variability_matches_oracle(data, n):
    run = st.lists(st.sampled_from([1, -1]), min_size=n, max_size=n)
    by_variant = data.draw(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.lists(run, min_size=1, max_size=4),
                                           min_size=1))
    value = metric_round_variability({k: average_trajectory(v) for k, v in by_variant.items()})
    assert math.isclose(value, oracles.ref_round_variability(by_variant), rel_tol=1e-12, abs_tol=1e-12)
    assert 0 <= value <= 1


@given(values=st.lists(st.floats(-1000, 1000), min_size=1, max_size=30))
def test_ci_matches_oracle(values):
    [cell] = aggregate({"k": values})
    assert math.isclose(cell.ci95, oracles.ref_ci95(values), rel_tol=1e-9, abs_tol=1e-9)


@given(raw=st.dictionaries(st.text(min_size=1, max_size=4),
                           st.fixed_dictionaries({}, optional={m: st.floats(0, 100) for m in ("I_V", "C_I", "S_P", "V_R")}),
                           min_size=1, max_size=5))
@settings(max_examples=60)
def test_scorecard_in_unit_interval_with_a_one(raw):
    card = build_scorecard(raw)
    for metric in ("I_V", "C_I", "S_P", "V_R"):
        values = [s.normalized[metric] for s in card.models.values() if metric in s.normalized]
        assert all(0 <= v <= 1 for v in values)
        present = [r[metric] for r in raw.values() if metric in r]
        if present and max(present) > 0:
            assert 1.0 in values
