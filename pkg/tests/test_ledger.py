import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrrw_lab.ledger import (PRESETS, CompensatorSpec, FunctionalLedger, PathIndex, alpha, beta,
                             check_r_identities, compensator_track, count_series, identity_baseline,
                             hitting_time, ledger_update, log_count_martingale, preset,
                             r_identity_check, r_value, right_step_compensator,
                             stabilization_report, threshold_time, threshold_times)
from vrrw_lab.rng import UniformTable, replicate_seed
from vrrw_lab.walk import LEDGER_NAMES, VRRW, WalkState, log_schedule, run, step

from test_walk import FixedProb, FixedUniform, walk_path


def nn_paths(max_len=300):
    """Arbitrary nearest-neighbour paths: start site plus a list of +-1 moves."""
    return st.tuples(st.integers(-6, 8),
                     st.lists(st.sampled_from([-1, 1]), min_size=0, max_size=max_len)).map(
        lambda t: np.cumsum([t[0]] + t[1]))


def test_first_step_summands():
    led = FunctionalLedger()
    pre = WalkState.initial(0)
    ledger_update(led, 0, 1, pre)
    assert led.value("Y", 0) == 0.5
    assert led.value("Y+", 0) == 1.0
    assert led.value("Yt-", 1) == 1.0 / pre.count(0)
    assert led.value("Y-", 0) == 0.0


def test_step_elsewhere_leaves_other_sites_alone():
    pre = walk_path([0, 1, 2, 3, 4, 5])
    led = FunctionalLedger()
    ledger_update(led, 5, 4, pre)
    assert led.value("Y+", 0) == 0.0
    assert led.sites() <= {4, 5, 6}


def test_arrival_terms_sum_to_inverse_count():
    pre = walk_path([0, 1, 0, -1])
    led = FunctionalLedger()
    ledger_update(led, -1, 0, pre)
    z_after = pre.count(0) + 1
    assert led.value("Yb+", 0) + led.value("Yb-", 0) == pytest.approx(1.0 / z_after, rel=1e-15)


def test_non_neighbour_move_rejected():
    with pytest.raises(ValueError):
        ledger_update(FunctionalLedger(), 0, 2, WalkState.initial(0))


@given(seed=st.integers(0, 2 ** 64 - 1), horizon=st.integers(1, 200))
@settings(max_examples=40)
def test_increment_locality_and_indicators(seed, horizon):
    s = WalkState.initial(0)
    t = UniformTable(seed)
    led = FunctionalLedger()
    for _ in range(horizon):
        before = led.snapshot()
        pre = s.copy()
        step(s, VRRW(), t, inplace=True)
        frm, to = pre.position, s.position
        ledger_update(led, frm, to, pre)
        after = led.snapshot()
        for name in LEDGER_NAMES:
            for x, v in after[name].items():
                old = before[name].get(x, 0.0)
                assert v >= old
                if v != old:
                    assert x in {frm - 1, frm, frm + 1, to}
                    if name == "Y+":
                        assert (frm, to) == (x, x + 1)
                    if name == "Yt+":
                        assert (frm, to) == (x + 1, x)
                    if name in ("Yb+", "Yb-"):
                        assert x == to


@given(z=st.dictionaries(st.integers(-3, 3), st.integers(1, 10 ** 6), max_size=7),
       x=st.integers(-2, 2))
def test_ratio_identities(z, x):
    s = WalkState(0, 0, z, {}, {}, 0, {})
    assert alpha(s, x, +1) + alpha(s, x, -1) == pytest.approx(1.0, abs=1e-15)
    if s.count(x) <= s.count(x - 1) + s.count(x + 1):
        assert alpha(s, x, -1) <= beta(s, x, -1)


def test_preset_site_combinations():
    assert (PRESETS["s51"].plus_sites, PRESETS["s51"].minus_sites) == ((2, 4), (1, 3))
    assert (PRESETS["s52"].plus_sites, PRESETS["s52"].minus_sites) == ((5, 7), (1, 3))
    assert (PRESETS["s53"].plus_sites, PRESETS["s53"].minus_sites) == ((6, 8), (1, 3))
    assert r_value(lambda x: {2: 5, 4: 2, 1: 3, 3: 1}.get(x, 1)) == 3
    with pytest.raises(ValueError):
        preset("s54")


def test_identity_baseline_at_time_zero():
    s = WalkState.initial(0)
    direct, via2, equal = r_identity_check(s)
    assert direct == 0 and equal
    assert identity_baseline(s) == 1          # constant 1/2, carried doubled
    with pytest.raises(ValueError):
        r_identity_check(s, "s52")


@given(nn_paths())
@settings(max_examples=200)
def test_crossing_identity_holds_on_any_path(path):
    rep = check_r_identities(path)
    assert rep.full_failures == 0
    assert rep.restricted_failures == 0


@given(nn_paths(), st.dictionaries(st.integers(-2, 6), st.integers(1, 9), max_size=4))
@settings(max_examples=100)
def test_crossing_identity_with_weight_overrides(path, weights):
    assert check_r_identities(path, weights=weights).full_failures == 0


def test_restricted_identity_constant_from_zero():
    # net right-crossings of edge (0,1) are 1 and of edge (4,5) are 0 whenever
    # a walk from 0 has just stepped 2 -> 3, hence R = Z+(4) - Z-(1) - 1.
    seen = 0
    for r in range(50):
        rec = run(VRRW(), 3000, UniformTable(replicate_seed(5, r)), [3000], full_path=True)
        rep = check_r_identities(rec.path)
        assert rep.full_failures == 0 and rep.restricted_failures == 0
        if rep.restricted_checked:
            assert rep.restricted_constant == -1
            seen += 1
    assert seen > 0


def test_hitting_time_examples():
    path = [0, 1, 2, 1, 2, 3]
    assert hitting_time(path, 2, 2) == 2
    assert hitting_time(path, 3, 2) == 4
    assert hitting_time(path, 0, 7) is None
    assert hitting_time(path, 5, 0) is None


@given(nn_paths(200), st.integers(0, 250), st.integers(-8, 10))
def test_hitting_time_matches_linear_scan(path, n, x):
    scan = next((m for m in range(n, len(path)) if path[m] == x), None)
    assert PathIndex(path).hitting_time(n, x) == scan


def test_hitting_time_requires_stored_path():
    rec = run(VRRW(), 10, UniformTable(1), [10])
    with pytest.raises(ValueError):
        hitting_time(rec, 0, 0)


def linear_threshold(path, spec, level):
    state = WalkState.initial(int(path[0]))
    for m in range(len(path)):
        if m:
            frm, to = int(path[m - 1]), int(path[m])
            if to > frm:
                state.z_plus[frm] = state.plus(frm) + 1
            else:
                state.z_minus[frm] = state.minus(frm) + 1
            state.z[to] = state.count(to) + 1
        c = {"z": state.count, "z+": state.plus}[spec.counter](spec.counter_site)
        if (c >= level) if spec.comparison == ">=" else (c == level):
            return m
    return None


@given(nn_paths(300), st.sampled_from(sorted(PRESETS)), st.integers(0, 12))
@settings(max_examples=150)
def test_threshold_time_matches_linear_scan(path, name, level):
    assert threshold_time(path, name, level) == linear_threshold(path, PRESETS[name], level)


def test_threshold_times_start_and_increase():
    rec = run(VRRW(), 20000, UniformTable(3), [20000], v0=2, full_path=True)
    assert threshold_time(rec, "s51", 0) == 0
    for name in PRESETS:
        times = [t for t in threshold_times(rec, name, range(1, 60)) if t is not None]
        assert all(b > a for a, b in zip(times, times[1:]))


def test_count_series_kinds():
    path = [0, 1, 0, 1, 2]
    np.testing.assert_array_equal(count_series(path, 1, "z"), [1, 2, 2, 3, 3])
    np.testing.assert_array_equal(count_series(path, 0, "z+"), [0, 1, 1, 2, 2])
    np.testing.assert_array_equal(count_series(path, 1, "z-"), [0, 0, 1, 1, 1])
    with pytest.raises(ValueError):
        count_series(path, 0, "zz")


def test_zero_weight_compensator_is_identically_zero():
    rec = run(VRRW(), 200, UniformTable(2), [200], full_path=True)
    spec = CompensatorSpec(event=lambda s, a, b: True, weight=lambda s: 0.0, prob=lambda s: 0.5)
    phi, phi_star = compensator_track(spec, rec)
    assert not phi.any() and not phi_star.any()


def test_right_step_compensator_is_the_ledger_pair():
    rec = run(VRRW(), 3000, UniformTable(6), [3000], full_path=True)
    for x in (-1, 0, 1):
        phi, phi_star = compensator_track(right_step_compensator(x), rec)
        assert np.all(np.diff(phi) >= 0) and np.all(np.diff(phi_star) >= 0)
        np.testing.assert_allclose(phi[-1], rec.final.functional("Y+", x), rtol=1e-12)
        np.testing.assert_allclose(phi_star[-1], rec.final.functional("Y", x), rtol=1e-12)


def test_compensated_difference_is_centred():
    # Y+(0) - Y(0) is a martingale started at 0: replicate mean within 4 sigma
    d = np.array([(lambda s: s.functional("Y+", 0) - s.functional("Y", 0))(
        run(VRRW(), 10 ** 5, UniformTable(replicate_seed(77, r)), [10 ** 5]).final)
        for r in range(400)])
    assert abs(d.mean()) <= 4 * d.std(ddof=1) / math.sqrt(len(d))


def test_stabilization_report():
    rep = stabilization_report([1, 10, 100], [2.0, 2.0, 2.0], 0.9)
    assert rep.oscillation == 0.0 and rep.last == 2.0
    rep = stabilization_report([10, 50, 95, 100], [0.0, 1.0, 0.3, 0.5], 0.1)
    assert rep.points == 2 and rep.oscillation == pytest.approx(0.2)
    with pytest.raises(ValueError):
        stabilization_report([1, 2], [0.0, 0.0], 0.5)
    with pytest.raises(ValueError):
        stabilization_report([1, 2, 3], [0.0, 0.0, 0.0], 0.0)


def test_log_count_martingale_settles_on_a_long_run():
    steps = [c for c in log_schedule(10 ** 6, 20) if c >= 10 ** 5]
    rec = run(VRRW(), 10 ** 6, UniformTable(replicate_seed(2024, 0)), steps)
    k = int(np.argmax(rec.final.z)) + rec.final.lo
    rep = stabilization_report(steps, [log_count_martingale(rec.at(c), k) for c in steps], 0.9)
    assert rep.oscillation <= 0.05
