import math
import random

import numpy as np
import pytest

from vrrw_lab.ledger import compensator_track, right_step_compensator
from vrrw_lab.localization import (CheckpointRow, aggregate, detect_trap, estimates_at,
                                   event_estimates, replicate_rows, tail_range, upsilon_candidates,
                                   upsilon_tail)
from vrrw_lab.rng import UniformTable, replicate_seed
from vrrw_lab.walk import VRRW, run, with_window_starts


class Bouncer:
    """Deterministic walk: head right from the start, then sweep [lo, hi] forever."""

    def __init__(self, lo, hi):
        self.lo, self.hi = lo, hi
        self.direction = 1

    def right_prob(self, state):
        x = state.position
        if x <= self.lo:
            self.direction = 1
        elif x >= self.hi:
            self.direction = -1
        return 1.0 if self.direction > 0 else 0.0


def bounce_record(lo, hi, horizon=1000, window=0.1, checkpoints=(100, 500, 1000)):
    return run(Bouncer(lo, hi), horizon, UniformTable(0),
               with_window_starts(list(checkpoints), window), full_path=True)


@pytest.fixture(scope="module")
def long_runs():
    sched = with_window_starts([10 ** 4, 10 ** 5, 5 * 10 ** 5, 10 ** 6], 0.1)
    return [run(VRRW(), 10 ** 6, UniformTable(replicate_seed(31, r)), sched) for r in range(24)]


def test_whole_run_window_is_the_visited_range():
    rec = run(VRRW(), 5000, UniformTable(2), [5000], v0=3)
    assert tail_range(rec, 1.0) == rec.final.visited()
    assert 3 in tail_range(rec, 1.0)


def test_ping_pong_fixture():
    rec = bounce_record(0, 1)
    assert tail_range(rec, 0.1) == [0, 1]
    assert set(rec.path.tolist()) == {0, 1}


def test_window_validation():
    rec = bounce_record(0, 1)
    with pytest.raises(ValueError):
        tail_range(rec, 1.5)
    with pytest.raises(ValueError):
        tail_range(rec, 0.25)          # no snapshot at step 750


def test_five_site_trap_fixture():
    rec = bounce_record(3, 7)
    trap = detect_trap(rec, 0.1)
    assert tail_range(rec, 0.1) == [3, 4, 5, 6, 7]
    assert trap.localized and trap.center == 5 and trap.range_size == 5
    assert trap.window == (900, 1000)
    counts = [rec.final.count(x) for x in range(3, 8)]
    assert trap.argmax_center == 3 + counts.index(max(counts))
    assert trap.centers_agree == (trap.argmax_center == 5)


def test_seven_site_range_is_not_localized():
    trap = detect_trap(bounce_record(1, 7), 0.1)
    assert not trap.localized and trap.range_size == 7
    assert trap.center == trap.argmax_center


def test_estimates_follow_their_formulas():
    rec = bounce_record(3, 7)
    snap = rec.final
    e = estimates_at(snap, 5)
    n = 1000
    z = snap.count
    assert e.center_density == z(5) / n
    assert e.neighbor_density_sum == (z(4) + z(6)) / n
    assert e.alpha_left == math.log(z(3)) / math.log(n)
    assert e.alpha_right_complement == 1 - math.log(z(7)) / math.log(n)
    assert e.C1_hat == pytest.approx(1.0, rel=1e-12)     # z(k-2) / n ** (ln z(k-2) / ln n)
    assert e.C2_hat == pytest.approx(z(3) * z(7) / n, rel=1e-12)
    a = z(4) / (z(4) + z(6))
    assert e.C1_density == z(3) / n ** a and e.C2_density == z(7) / n ** (1 - a)
    assert e.borders_visited
    assert [x.n for x in event_estimates(rec, 5)] == sorted(c for c in rec.checkpoints if c >= 2)


def test_unvisited_border_is_flagged():
    rec = bounce_record(0, 1)
    e = estimates_at(rec.final, 1)         # k + 2 = 3 never visited
    assert not e.borders_visited
    assert e.alpha_right_complement == 1.0


def test_localized_runs_satisfy_count_level_facts(long_runs):
    for rec in long_runs:
        trap = detect_trap(rec, 0.1)
        end, start = rec.final, rec.at(trap.window[0])
        full = end.visited()
        assert set(tail_range(rec, 0.1)) <= set(full)
        if not trap.localized:
            continue
        k, n = trap.center, end.step
        for x in range(end.lo, end.hi + 1):
            if abs(x - k) > 2:
                assert end.count(x) == start.count(x)
        e = estimates_at(end, k)
        assert 0.0 <= e.center_density <= 1 + 2 / n
        assert 0.0 <= e.neighbor_density_sum <= 1 + 2 / n
        slack = 2 / math.log(n)
        assert -slack <= e.alpha_left <= 1 + slack
        assert -slack <= e.alpha_right_complement <= 1 + slack
        # every step adds one visit; each site carries one extra initial unit
        assert sum(end.count(x) for x in full) == n + 1 + len(full)
        mass = e.center_density + e.neighbor_density_sum + (end.count(k - 2) + end.count(k + 2)) / n
        assert mass <= (n + 1 + len(full)) / n
        assert e.C1_hat > 0 and e.C2_hat > 0
        # the log-ratio series is exactly alpha_left / (1 - alpha_right_complement)
        ratio = math.log(end.count(k - 2)) / math.log(end.count(k + 2))
        assert ratio == pytest.approx(e.alpha_left / (1 - e.alpha_right_complement), rel=1e-12)


def test_upsilon_tail_frozen_site_is_zero():
    rec = bounce_record(3, 7, checkpoints=(400, 500, 1000))
    assert upsilon_tail(rec.at(400), rec.final, 1) == 0.0
    with pytest.raises(ValueError):
        upsilon_tail(rec.at(500), rec.at(900), 5)


def test_upsilon_tail_matches_harmonic_replay():
    rec = run(VRRW(), 40000, UniformTable(3), [20000, 40000], full_path=True)
    k = detect_trap(rec, 1.0).argmax_center
    _, y = compensator_track(right_step_compensator(k), rec)      # phi* is Y(k)
    inc = upsilon_tail(rec.at(20000), rec.final, k)
    assert inc == pytest.approx(y[40000] - y[20000], rel=1e-10)


def test_upsilon_profile_on_localized_runs(long_runs):
    border_small = border_total = 0
    for rec in long_runs:
        trap = detect_trap(rec, 0.1)
        if not trap.localized:
            continue
        k = trap.center
        early, late = rec.at(5 * 10 ** 5), rec.final
        flags = upsilon_candidates(early, late, range(k - 3, k + 4))
        assert not flags[k - 1] and not flags[k] and not flags[k + 1]
        assert flags[k - 3] and flags[k + 3]
        # centre: departures ~ n/2 at rate ~ 2/n give ln(n2/n1)
        assert upsilon_tail(early, late, k) == pytest.approx(math.log(2), rel=0.1)
        border_small += flags[k - 2] + flags[k + 2]
        border_total += 2
    assert border_total and border_small / border_total >= 0.8


def row(rep, n, loc, cd=0.5, al=0.4):
    return CheckpointRow(rep, n, loc, 0, 5 if loc else 7, cd, 0.5, al, 0.6, 1.0, 2.0)


def test_aggregate_single_report():
    s = aggregate([row(0, 100, True)])
    assert s.localized_fraction == {100: 1.0}
    assert aggregate([row(0, 100, False)]).localized_fraction == {100: 0.0}


def test_aggregate_hand_computed():
    rows = [row(0, 10, True, cd=0.4, al=0.2), row(1, 10, True, cd=0.6, al=0.5),
            row(2, 10, False, cd=0.9, al=0.9)]
    s = aggregate(rows)
    assert s.replicates == 3
    assert s.localized_fraction[10] == pytest.approx(2 / 3)
    assert s.conditional_means[10]["center_density"] == pytest.approx(0.5)
    assert s.conditional_sd[10]["center_density"] == pytest.approx(math.sqrt(0.02))
    assert sum(s.alpha_left_histogram[10]) == 2


def test_aggregate_is_order_free(long_runs):
    rows = [r for i, rec in enumerate(long_runs[:8]) for r in replicate_rows(i, rec, 0.1)]
    shuffled = rows[:]
    random.Random(0).shuffle(shuffled)
    assert aggregate(rows) == aggregate(shuffled)
    with pytest.raises(ValueError):
        aggregate([])


def test_replicate_rows_step_filter(long_runs):
    rows = replicate_rows(0, long_runs[0], 0.1, [10 ** 4, 10 ** 6])
    assert [r.n for r in rows] == [10 ** 4, 10 ** 6]
    assert all(isinstance(r.localized, bool) for r in rows)
