from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadebench.calibration import (DEFAULT_GRID, DevPoint, RiskWeights, ThresholdTable, choose_threshold,
                                      decide, freeze_thresholds, parse_grid, risk_score)
from cascadebench.domain import DraftBundle, Route, TaskFamily, TaskKey
from cascadebench.errors import ConfigError, EmptyGrid, ThresholdMissing


def brute_force_tau(points, floor, grid):
    """Grid value maximizing dev acceptance subject to the floor; larger tau wins ties; 0 if no data."""
    if not points:
        return 0.0
    best = (0, 0.0)
    for tau in grid:
        acc = [p.q for p in points if p.risk < tau]
        if acc and sum(acc) / len(acc) < floor:
            continue
        best = max(best, (len(acc), tau))
    return best[1]


def test_zero_risk_case():
    b = DraftBundle("x", TaskFamily.PLANNING, 1.0, {"schema_ok": True, "language_ok": True})
    assert risk_score(b, TaskFamily.PLANNING) == 0.0


def test_unparsed_mismatch_case():
    assert risk_score(DraftBundle.unparsed(), TaskFamily.PLANNING) == pytest.approx(0.4 + 0.0 + 0.2 + 0.2)


def test_single_term_case():
    b = DraftBundle("x", TaskFamily.PLANNING, 0.5, {})
    assert risk_score(b, TaskFamily.PLANNING, RiskWeights(1, 0, 0, 0)) == 0.5


def test_flag_share_term():
    b = DraftBundle("x", TaskFamily.REASONING, 1.0, {"a": True, "b": False, "c": False, "d": True})
    assert risk_score(b, TaskFamily.REASONING) == pytest.approx(0.2 * 0.5)


def test_weights_validated():
    with pytest.raises(ConfigError):
        RiskWeights(0.5, 0.5, 0.5, 0.0)
    with pytest.raises(ConfigError):
        RiskWeights(1.2, -0.2, 0, 0)
    assert RiskWeights.parse("0.25,0.25,0.25,0.25") == RiskWeights(0.25, 0.25, 0.25, 0.25)


@given(st.floats(0, 1), st.floats(0, 1), st.dictionaries(st.text(max_size=3), st.booleans(), max_size=4),
       st.sampled_from(list(TaskFamily)), st.sampled_from(list(TaskFamily)))
def test_risk_monotone_in_confidence(c1, c2, flags, pred, fam):
    lo, hi = sorted((c1, c2))
    r_lo = risk_score(DraftBundle("x", pred, lo, flags), fam)
    r_hi = risk_score(DraftBundle("x", pred, hi, flags), fam)
    assert 0.0 <= r_hi <= r_lo <= 1.0


def test_all_correct_takes_max_grid():
    pts = [DevPoint(TaskKey.QA, r, 1) for r in (0.1, 0.5, 0.9)]
    assert choose_threshold(pts, 0.6, DEFAULT_GRID) == max(DEFAULT_GRID)


def test_three_point_hand_evaluation():
    pts = [DevPoint(TaskKey.IP, 0.1, 1), DevPoint(TaskKey.IP, 0.2, 0), DevPoint(TaskKey.IP, 0.3, 1)]
    assert choose_threshold(pts, 0.6, (0.15, 0.25, 0.35)) == 0.35


def test_absent_task_never_accepts():
    table = freeze_thresholds([DevPoint(TaskKey.QA, 0.1, 1)], 0.6, DEFAULT_GRID)
    assert table[TaskKey.QG] == 0.0
    assert decide(0.0, TaskKey.QG, table).route is Route.ESCALATE_7B


def test_decide_examples():
    table = ThresholdTable({TaskKey.QA: 0.5})
    assert decide(0.3, TaskKey.QA, table).route is Route.ACCEPT_1B
    assert decide(0.5, TaskKey.QA, table).route is Route.ESCALATE_7B
    with pytest.raises(ThresholdMissing):
        decide(0.1, TaskKey.IP, table)


def test_empty_grid():
    with pytest.raises(EmptyGrid):
        freeze_thresholds([], 0.6, ())


def test_table_round_trip(tmp_path):
    table = freeze_thresholds([DevPoint(TaskKey.QA, 0.1, 1)], 0.6, DEFAULT_GRID, dev_digest="abc",
                              created_at="2026-01-01T00:00:00+00:00")
    table.save(tmp_path / "t.json")
    assert ThresholdTable.load(tmp_path / "t.json") == table


def test_parse_grid():
    assert parse_grid(None) == DEFAULT_GRID
    assert parse_grid("0.3,0.1") == (0.1, 0.3)
    assert DEFAULT_GRID[0] == 0.05 and DEFAULT_GRID[-1] == 0.95 and len(DEFAULT_GRID) == 19


dev_points = st.lists(st.builds(DevPoint, st.sampled_from([TaskKey.QA, TaskKey.IP, TaskKey.QG]),
                                st.floats(0, 1), st.integers(0, 1)), max_size=50)


@given(dev_points, st.floats(0, 1))
def test_freeze_matches_brute_force(points, floor):
    table = freeze_thresholds(points, floor, DEFAULT_GRID)
    for task in TaskKey:
        pts = [p for p in points if p.task is task]
        assert table[task] == brute_force_tau(pts, floor, DEFAULT_GRID)


@given(dev_points, st.floats(0, 1), st.floats(0, 1))
def test_raising_floor_never_raises_tau(points, f1, f2):
    lo, hi = sorted((f1, f2))
    a, b = freeze_thresholds(points, lo), freeze_thresholds(points, hi)
    assert all(b[t] <= a[t] for t in TaskKey)


@given(dev_points)
def test_freeze_is_pure(points):
    assert freeze_thresholds(points, 0.6) == freeze_thresholds(list(points), 0.6)
