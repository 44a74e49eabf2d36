"""Finite-horizon trap detection and limit-quantity estimates.

The set of sites visited infinitely often is approximated by the sites whose
count grows during a trailing window of the run.  A run counts as localized
at a checkpoint when that set is five consecutive sites.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .walk import RunRecord, Snapshot, with_window_starts

UPSILON_THRESHOLD = 1e-2


@dataclass(frozen=True)
class TrapReport:
    localized: bool
    center: int
    range_size: int
    window: tuple
    argmax_center: int
    centers_agree: bool


@dataclass(frozen=True)
class EventEstimates:
    n: int
    k: int
    center_density: float
    neighbor_density_sum: float
    alpha_left: float
    alpha_right_complement: float
    alpha_density: float
    C1_hat: float
    C2_hat: float
    C1_density: float
    C2_density: float
    borders_visited: bool


def window_start(step: int, window_fraction: float) -> int:
    return int(math.floor((1.0 - window_fraction) * step))


def _baseline_count(record: RunRecord, start: int, x: int) -> int:
    if start == 0:
        return record.final._weight(x)     # window covers time 0 as well
    return record.at(start).count(x)


def tail_range(record: RunRecord, window_fraction: float = 0.1, at: int | None = None) -> list:
    """Sites whose count grows in the trailing ``window_fraction`` of [0, at]."""
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window must be a fraction of the horizon in (0, 1]")
    end_step = record.horizon if at is None else at
    start = window_start(end_step, window_fraction)
    end = record.at(end_step)
    if start != 0 and start not in record.snapshots:
        raise ValueError(f"no snapshot at window start {start}; schedule it with with_window_starts")
    return [x for x in range(end.lo, end.hi + 1) if end.count(x) > _baseline_count(record, start, x)]


def _argmax_leftmost(snap: Snapshot, sites) -> int:
    best, best_c = None, -1
    for x in sorted(sites):
        c = snap.count(x)
        if c > best_c:
            best, best_c = x, c
    return best


def detect_trap(record: RunRecord, window_fraction: float = 0.1, at: int | None = None) -> TrapReport:
    end_step = record.horizon if at is None else at
    sites = tail_range(record, window_fraction, end_step)
    snap = record.at(end_step)
    arg = _argmax_leftmost(snap, sites) if sites else snap.position
    localized = len(sites) == 5 and sites[-1] - sites[0] == 4
    center = sites[2] if localized else arg
    return TrapReport(localized, center, len(sites), (window_start(end_step, window_fraction), end_step),
                      arg, center == arg)


def estimates_at(snap: Snapshot, k: int) -> EventEstimates:
    """Limit-quantity estimates around center ``k`` at the snapshot's step.

    ``C1_hat`` divides by ``n ** alpha_left`` and is therefore identically 1
    (up to rounding); ``C2_hat`` then equals Z(k-2) Z(k+2) / n.  The
    ``*_density`` variants use the exponent alpha_n^-(k) instead, which is a
    non-degenerate estimate of each constant separately.
    """
    n = snap.step
    z = snap.count
    ln_n = math.log(n) if n >= 2 else float("nan")
    alpha_left = math.log(z(k - 2)) / ln_n
    alpha_right_c = 1.0 - math.log(z(k + 2)) / ln_n
    alpha_density = z(k - 1) / (z(k - 1) + z(k + 1))
    return EventEstimates(
        n=n,
        k=k,
        center_density=z(k) / n,
        neighbor_density_sum=(z(k - 1) + z(k + 1)) / n,
        alpha_left=alpha_left,
        alpha_right_complement=alpha_right_c,
        alpha_density=alpha_density,
        C1_hat=z(k - 2) / n ** alpha_left,
        C2_hat=z(k + 2) / n ** (1.0 - alpha_left),
        C1_density=z(k - 2) / n ** alpha_density,
        C2_density=z(k + 2) / n ** (1.0 - alpha_density),
        borders_visited=snap.visits(k - 2) > 0 and snap.visits(k + 2) > 0,
    )


def event_estimates(record: RunRecord, k: int) -> list:
    """Estimates at every checkpoint with n >= 2 for a fixed trap center k."""
    return [estimates_at(record.at(c), k) for c in record.checkpoints if c >= 2]


def upsilon_tail(early: Snapshot, late: Snapshot, x: int) -> float:
    """Increment of Y(x) between two checkpoints with late.step >= 2 * early.step."""
    if late.step < 2 * early.step:
        raise ValueError("need n2 >= 2 n1")
    return late.functional("Y", x) - early.functional("Y", x)


def upsilon_candidates(early: Snapshot, late: Snapshot, sites, threshold: float = UPSILON_THRESHOLD) -> dict:
    """Proxy flag per site: True when the tail increment of Y(x) is below threshold."""
    return {x: upsilon_tail(early, late, x) < threshold for x in sites}


# --------------------------------------------------------------------------
# per-replicate rows and aggregation

CSV_COLUMNS = ("replicate", "n", "localized", "k", "range_size", "center_density",
               "neighbor_density_sum", "alpha_left", "alpha_right_complement", "C1_hat", "C2_hat")


@dataclass(frozen=True)
class CheckpointRow:
    replicate: int
    n: int
    localized: bool
    k: int
    range_size: int
    center_density: float
    neighbor_density_sum: float
    alpha_left: float
    alpha_right_complement: float
    C1_hat: float
    C2_hat: float

    def as_dict(self) -> dict:
        return asdict(self)


def replicate_rows(replicate: int, record: RunRecord, window_fraction: float = 0.1,
                   steps=None) -> list:
    """One row per checkpoint with n >= 2.

    By default every checkpoint whose window start was also snapshotted is
    reported; ``steps`` overrides the selection.
    """
    if steps is None:
        steps = [c for c in record.checkpoints
                 if window_start(c, window_fraction) in record.snapshots
                 or window_start(c, window_fraction) == 0]
    rows = []
    for c in steps:
        if c < 2:
            continue
        trap = detect_trap(record, window_fraction, c)
        est = estimates_at(record.at(c), trap.center)
        rows.append(CheckpointRow(replicate, c, trap.localized, trap.center, trap.range_size,
                                  est.center_density, est.neighbor_density_sum, est.alpha_left,
                                  est.alpha_right_complement, est.C1_hat, est.C2_hat))
    return rows


@dataclass(frozen=True)
class MonteCarloSummary:
    replicates: int
    checkpoints: tuple
    localized_fraction: dict
    conditional_means: dict
    conditional_sd: dict
    alpha_left_quantiles: dict
    alpha_left_histogram: dict

    def to_dict(self) -> dict:
        return asdict(self)


_ESTIMATES = ("center_density", "neighbor_density_sum", "alpha_left", "alpha_right_complement",
              "C1_hat", "C2_hat")


def aggregate(rows) -> MonteCarloSummary:
    """Fold per-checkpoint rows into fractions, conditional means and deviations.

    Order-free: the rows are regrouped by (n, replicate) before any arithmetic.
    """
    rows = sorted(rows, key=lambda r: (r.n, r.replicate))
    if not rows:
        raise ValueError("nothing to aggregate")
    steps = sorted({r.n for r in rows})
    reps = sorted({r.replicate for r in rows})
    frac, means, sds, quant, hist = {}, {}, {}, {}, {}
    edges = np.linspace(0.0, 1.0, 11)
    for n in steps:
        at_n = [r for r in rows if r.n == n]
        loc = [r for r in at_n if r.localized]
        frac[n] = len(loc) / len(at_n)
        means[n], sds[n] = {}, {}
        for name in _ESTIMATES:
            vals = np.array([getattr(r, name) for r in loc], dtype=float)
            means[n][name] = float(vals.mean()) if len(vals) else None
            sds[n][name] = float(vals.std(ddof=1)) if len(vals) > 1 else None
        al = np.array([r.alpha_left for r in loc], dtype=float)
        quant[n] = ({q: float(np.quantile(al, q)) for q in (0.1, 0.5, 0.9)} if len(al) else {})
        hist[n] = [int(c) for c in np.histogram(np.clip(al, 0.0, 1.0), bins=edges)[0]]
    return MonteCarloSummary(len(reps), tuple(steps), frac, means, sds, quant, hist)


def checkpoints_with_windows(checkpoints, window_fraction: float) -> list:
    return with_window_starts(checkpoints, window_fraction)
