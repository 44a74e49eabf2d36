"""Weighted visit functionals of a walk and the identities built from them.

The ledger keeps, per site ``x``,

=========  ==========================================================
``Y``      sum over departures from x of 1 / (z(x-1) + z(x+1))
``Y+``     sum over steps x -> x+1 of 1 / z(x+1)
``Y-``     sum over steps x -> x-1 of 1 / z(x-1)
``Yt+``    sum over steps x+1 -> x of 1 / z(x+1)
``Yt-``    sum over steps x-1 -> x of 1 / z(x-1)
``Yb+``    sum over arrivals at x of alpha+(x) / z(x)
``Yb-``    sum over arrivals at x of alpha-(x) / z(x)
=========  ==========================================================

Departure and crossing terms use the counts *before* the step; the arrival
terms use the counts *after* it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .walk import LEDGER_NAMES, RunRecord, WalkState


class FunctionalLedger:
    """Sparse per-site running sums with compensated accumulation."""

    def __init__(self):
        self._sums = {name: {} for name in LEDGER_NAMES}

    def add(self, name: str, x: int, v: float) -> None:
        cell = self._sums[name].get(x)
        if cell is None:
            self._sums[name][x] = [v, 0.0]
            return
        s = cell[0]
        t = s + v
        if abs(s) >= abs(v):
            cell[1] += (s - t) + v
        else:
            cell[1] += (v - t) + s
        cell[0] = t

    def value(self, name: str, x: int) -> float:
        cell = self._sums[name].get(x)
        return 0.0 if cell is None else cell[0] + cell[1]

    def sites(self) -> set:
        out = set()
        for d in self._sums.values():
            out.update(d)
        return out

    def snapshot(self) -> dict:
        return {name: {x: self.value(name, x) for x in d} for name, d in self._sums.items()}


def alpha(state: WalkState, x: int, sign: int) -> float:
    left, right = state.count(x - 1), state.count(x + 1)
    return (right if sign > 0 else left) / (left + right)


def beta(state: WalkState, x: int, sign: int) -> float:
    return state.count(x + sign) / state.count(x)


def ledger_update(ledger: FunctionalLedger, frm: int, to: int, pre: WalkState) -> FunctionalLedger:
    """Add the summands of one transition ``frm -> to``; ``pre`` is the state before it."""
    if abs(frm - to) != 1:
        raise ValueError(f"not a nearest-neighbour move: {frm} -> {to}")
    zl, zr, zf = pre.count(frm - 1), pre.count(frm + 1), pre.count(frm)
    ledger.add("Y", frm, 1.0 / (zl + zr))
    if to == frm + 1:
        ledger.add("Y+", frm, 1.0 / zr)
        ledger.add("Yt-", to, 1.0 / zf)
    else:
        ledger.add("Y-", frm, 1.0 / zl)
        ledger.add("Yt+", to, 1.0 / zf)
    # post-step: only the count at `to` changed
    z_to = pre.count(to) + 1
    bl, br = pre.count(to - 1), pre.count(to + 1)
    ledger.add("Yb+", to, br / (bl + br) / z_to)
    ledger.add("Yb-", to, bl / (bl + br) / z_to)
    return ledger


# --------------------------------------------------------------------------
# R_n series


@dataclass(frozen=True)
class RSeriesSpec:
    """Signed count combination ``R = sum(+plus) - sum(minus)`` and its threshold time."""

    name: str
    plus_sites: tuple
    minus_sites: tuple
    counter: str          # "z+" or "z"
    counter_site: int
    comparison: str       # ">=" or "=="


PRESETS = {
    "s51": RSeriesSpec("s51", (2, 4), (1, 3), "z+", 2, ">="),
    "s52": RSeriesSpec("s52", (5, 7), (1, 3), "z", 4, ">="),
    "s53": RSeriesSpec("s53", (6, 8), (1, 3), "z+", 4, "=="),
}


def preset(name) -> RSeriesSpec:
    if isinstance(name, RSeriesSpec):
        return name
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def r_value(counts: Callable[[int], int], spec="s51") -> int:
    spec = preset(spec)
    return sum(counts(x) for x in spec.plus_sites) - sum(counts(x) for x in spec.minus_sites)


def _indicator_doubled(position: int) -> int:
    # (1{X=2 or X>=4} - 1{X<=1 or X=3}); the two events partition Z
    return 1 if position == 2 or position >= 4 else -1


def identity_baseline(initial: WalkState) -> int:
    """Twice the constant of the R_n identity, measured from the time-0 state."""
    if initial.n != 0:
        raise ValueError("the baseline is measured at n = 0")
    direct = r_value(initial.count, "s51")
    return 2 * direct - 2 * (initial.minus(5) - initial.plus(0)) - _indicator_doubled(initial.position)


def r_identity_check(state: WalkState, spec="s51", baseline2: int | None = None):
    """Compare R_n with Z-(5) - Z+(0) + indicator/2 + constant.

    Half-integers are carried doubled.  Returns ``(direct, via_identity_doubled, equal)``.
    """
    if preset(spec).name != "s51":
        raise ValueError("the crossing identity is stated for the s51 combination only")
    if baseline2 is None:
        baseline2 = identity_baseline(WalkState.initial(state.v0, state.weights))
    direct = r_value(state.count, "s51")
    via2 = 2 * (state.minus(5) - state.plus(0)) + _indicator_doubled(state.position) + baseline2
    return direct, via2, 2 * direct == via2


@dataclass(frozen=True)
class IdentityReport:
    steps_checked: int
    full_failures: int
    restricted_checked: int
    restricted_failures: int
    restricted_constant: int | None


def check_r_identities(path, v0: int | None = None, weights: dict | None = None) -> IdentityReport:
    """Replay ``path`` and check the R_n identity at every step and its
    restriction ``R = Z+(4) - Z-(1) + const`` at every time the walk
    completes a step 2 -> 3 (the constant is measured at the first such time)."""
    path = np.asarray(path)
    v0 = int(path[0]) if v0 is None else v0
    state = WalkState.initial(v0, weights)
    base2 = identity_baseline(state)
    fails = 0
    restricted_checked = restricted_fails = 0
    restricted_c = None
    if not r_identity_check(state, "s51", base2)[2]:
        fails += 1
    for m in range(1, len(path)):
        frm, to = int(path[m - 1]), int(path[m])
        if to == frm + 1:
            state.z_plus[frm] = state.plus(frm) + 1
        elif to == frm - 1:
            state.z_minus[frm] = state.minus(frm) + 1
        else:
            raise ValueError(f"path is not nearest-neighbour at step {m}")
        state.z[to] = state.count(to) + 1
        state.position = to
        state.n = m
        direct, _, ok = r_identity_check(state, "s51", base2)
        fails += not ok
        if frm == 2 and to == 3:
            val = direct - (state.plus(4) - state.minus(1))
            if restricted_c is None:
                restricted_c = val
            restricted_checked += 1
            restricted_fails += val != restricted_c
    return IdentityReport(len(path), fails, restricted_checked, restricted_fails, restricted_c)


# --------------------------------------------------------------------------
# stopping times on stored paths


class PathIndex:
    """Per-site sorted visit times of a stored path, for O(log n) hitting times."""

    def __init__(self, path):
        self.path = np.asarray(path, dtype=np.int64)
        order = np.argsort(self.path, kind="stable")
        sites = self.path[order]
        self._sites, starts = np.unique(sites, return_index=True)
        bounds = list(starts) + [len(order)]
        self._times = {int(s): order[bounds[t]:bounds[t + 1]] for t, s in enumerate(self._sites)}

    def visit_times(self, x: int) -> np.ndarray:
        return self._times.get(int(x), np.empty(0, np.int64))

    def hitting_time(self, n: int, x: int):
        times = self.visit_times(x)
        t = np.searchsorted(times, n, side="left")
        return int(times[t]) if t < len(times) else None


def _path_of(record_or_path) -> np.ndarray:
    if isinstance(record_or_path, RunRecord):
        if record_or_path.path is None:
            raise ValueError("record was produced without full-path mode")
        return record_or_path.path
    return np.asarray(record_or_path, dtype=np.int64)


def hitting_time(record, n: int, x: int):
    """First m >= n with X_m = x, or None within the horizon."""
    return PathIndex(_path_of(record)).hitting_time(n, x)


def count_series(path, x: int, kind: str, weight: int = 1) -> np.ndarray:
    """Counter value at every time 0..N: ``z`` (with weight), ``z+`` or ``z-``."""
    path = np.asarray(path, dtype=np.int64)
    if kind == "z":
        return weight + np.cumsum(path == x)
    out = np.zeros(len(path), np.int64)
    d = 1 if kind == "z+" else -1
    if kind not in ("z+", "z-"):
        raise ValueError(kind)
    hits = (path[:-1] == x) & (path[1:] == x + d)
    out[1:] = np.cumsum(hits)
    return out


def threshold_time(record, spec, level: int):
    times = threshold_times(record, spec, [level])
    return times[0]


def threshold_times(record, spec, levels, weights: dict | None = None) -> list:
    """First step at which the preset's counter reaches each level (None if never)."""
    spec = preset(spec)
    path = _path_of(record)
    w = (weights or {}).get(spec.counter_site, 1)
    series = count_series(path, spec.counter_site, spec.counter, w)
    out = []
    for level in levels:
        if spec.comparison == ">=":
            t = int(np.searchsorted(series, level, side="left"))
            out.append(t if t < len(series) else None)
        else:
            hit = np.nonzero(series == level)[0]
            out.append(int(hit[0]) if len(hit) else None)
    return out


# --------------------------------------------------------------------------
# compensators


@dataclass(frozen=True)
class CompensatorSpec:
    """Increasing process sum xi * 1{event} and its predictable part sum xi * p.

    All three callables see the state *before* the transition.
    """

    event: Callable[[WalkState, int, int], bool]
    weight: Callable[[WalkState], float]
    prob: Callable[[WalkState], float]


def right_step_compensator(x: int) -> CompensatorSpec:
    """Steps x -> x+1 weighted by 1/z(x+1): the process is Y+(x), its compensator Y(x)."""
    return CompensatorSpec(
        event=lambda s, a, b: a == x and b == x + 1,
        weight=lambda s: 1.0 / s.count(x + 1),
        prob=lambda s: alpha(s, x, +1) if s.position == x else 0.0,
    )


def left_step_compensator(x: int) -> CompensatorSpec:
    return CompensatorSpec(
        event=lambda s, a, b: a == x and b == x - 1,
        weight=lambda s: 1.0 / s.count(x - 1),
        prob=lambda s: alpha(s, x, -1) if s.position == x else 0.0,
    )


def compensator_track(spec: CompensatorSpec, record, v0: int | None = None,
                      weights: dict | None = None):
    """Return arrays (phi, phi_star) indexed by n = 0..N along the stored path."""
    path = _path_of(record)
    v0 = int(path[0]) if v0 is None else v0
    state = WalkState.initial(v0, weights)
    phi = np.zeros(len(path))
    phi_star = np.zeros(len(path))
    acc = acc_star = 0.0
    for m in range(1, len(path)):
        frm, to = int(path[m - 1]), int(path[m])
        xi = spec.weight(state)
        acc_star = math.fsum((acc_star, xi * spec.prob(state)))
        if spec.event(state, frm, to):
            acc = math.fsum((acc, xi))
        if to == frm + 1:
            state.z_plus[frm] = state.plus(frm) + 1
        else:
            state.z_minus[frm] = state.minus(frm) + 1
        state.z[to] = state.count(to) + 1
        state.position = to
        state.n = m
        phi[m], phi_star[m] = acc, acc_star
    return phi, phi_star


# --------------------------------------------------------------------------
# stabilisation


@dataclass(frozen=True)
class StabilizationReport:
    last: float
    oscillation: float
    points: int


def stabilization_report(steps, values, window: float) -> StabilizationReport:
    """sup - inf of ``values`` over checkpoints with step >= (1 - window) * last step."""
    steps = np.asarray(steps, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(steps) < 3:
        raise ValueError("stabilization needs at least 3 checkpoints")
    if not 0.0 < window <= 1.0:
        raise ValueError("window must be a fraction in (0, 1]")
    sel = steps >= (1.0 - window) * steps[-1]
    tail = values[sel]
    return StabilizationReport(float(values[-1]), float(tail.max() - tail.min()), int(sel.sum()))


def log_count_martingale(snapshot, x: int) -> float:
    """ln z(x) - Y+(x-1) - Y-(x+1); converges as z(x) grows."""
    return math.log(snapshot.count(x)) - snapshot.functional("Y+", x - 1) - snapshot.functional("Y-", x + 1)
