"""Perturbed walks, shared-randomness coupling and the dominance audit.

The perturbed walk damps the leftward probability at one site ``x`` by a
factor ``1 - gamma`` during a window that opens at step ``k`` and closes at
``min(U, V)``, where ``U`` is the first step at which ``z(x)`` or
``alpha-(x)`` exceeds ``M`` times its value at ``k``.  ``gamma`` is frozen
at step ``k``::

    gamma = g / sqrt(z_k(x) * alpha-_k(x))

and the perturbation only switches on when ``gamma < 1`` and
``alpha-_k(x) < 1 / (4 M)``.

Both walks read the same uniform table, each at its own (visit index, site)
cells, so the coupled pair is a deterministic function of the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .ledger import PRESETS, preset
from .rng import UniformTable
from .walk import (KIND_LEFT_BIASED, KIND_MODIFIED, KIND_RIGHT_BIASED, VRRW, RunRecord, WalkState,
                   vrrw_transition_prob, run)


@dataclass(frozen=True)
class ModifiedWalkParams:
    x: int
    M: float
    g: float
    k: int
    V: int

    def __post_init__(self):
        if not self.M > 1:
            raise ValueError("M must exceed 1")
        if not self.g > 0:
            raise ValueError("g must be positive")
        if self.k < 0 or self.V < self.k:
            raise ValueError("need 0 <= k <= V")


@dataclass
class Activation:
    """What the perturbed walk knows about its window at the current step."""

    gamma: float | None = None      # None: gate failed or not yet evaluated
    z_k: float | None = None
    alpha_k: float | None = None
    evaluated: bool = False
    U: int | None = None            # set once the exit condition has fired


def gamma_k(state: WalkState, params: ModifiedWalkParams):
    """Damping factor frozen at step k, or None when the perturbation stays off."""
    a = state.alpha_minus(params.x)
    if a == 0.0:
        return None
    gam = params.g / math.sqrt(state.count(params.x) * a)
    if gam >= 1.0 or a >= 1.0 / (4.0 * params.M):
        return None
    return gam


def modified_transition_prob(state: WalkState, params: ModifiedWalkParams, act: Activation) -> float:
    """Rightward probability of the perturbed walk; never below the VRRW value."""
    q = vrrw_transition_prob(state)
    n = state.n
    if (act.gamma is not None and state.position == params.x and params.k <= n <= params.V
            and (act.U is None or n <= act.U)):
        x = state.position
        left = state.count(x - 1)
        q = q + (left / (left + state.count(x + 1))) * act.gamma
    return q


class ModifiedVRRW:
    """Perturbed walk as a stepping model.  Holds per-walk state: one instance per walk."""

    kind = KIND_MODIFIED

    def __init__(self, params: ModifiedWalkParams):
        self.params = params
        self.activation = Activation()

    def right_prob(self, state: WalkState) -> float:
        p, act = self.params, self.activation
        if not act.evaluated and state.n >= p.k:
            act.evaluated = True
            act.z_k = float(state.count(p.x))
            act.alpha_k = state.alpha_minus(p.x)
            act.gamma = gamma_k(state, p)
        if act.gamma is not None and act.U is None:
            if state.count(p.x) > p.M * act.z_k or state.alpha_minus(p.x) > p.M * act.alpha_k:
                act.U = state.n
        return modified_transition_prob(state, p, act)

    def kernel_spec(self):
        p = self.params
        return (KIND_MODIFIED, p.x, p.M, p.g, p.k, p.V, 0.0)

    def describe(self) -> dict:
        p = self.params
        return {"kind": "modified", "x": p.x, "M": p.M, "g": p.g, "k": p.k, "V": p.V}


class LeftBiasedVRRW:
    """Negative control: multiplies the rightward probability at ``x`` by ``1 - damp``
    on steps k..V.  It violates the dominance hypothesis by construction."""

    kind = KIND_LEFT_BIASED
    label = "left-biased"

    def __init__(self, x: int, damp: float, k: int, V: int):
        if not 0.0 < damp < 1.0:
            raise ValueError("damp must lie in (0, 1)")
        self.x, self.damp, self.k, self.V = x, damp, k, V

    def _bias(self, q: float) -> float:
        return q * (1.0 - self.damp)

    def right_prob(self, state: WalkState) -> float:
        q = vrrw_transition_prob(state)
        if state.position == self.x and self.k <= state.n <= self.V:
            q = self._bias(q)
        return q

    def kernel_spec(self):
        return (self.kind, self.x, 0.0, 0.0, self.k, self.V, self.damp)

    def describe(self) -> dict:
        return {"kind": self.label, "x": self.x, "damp": self.damp, "k": self.k, "V": self.V}


class RightBiasedVRRW(LeftBiasedVRRW):
    """Positive control: moves the rightward probability at ``x`` a fraction
    ``damp`` of the way towards 1.  Satisfies the dominance hypothesis."""

    kind = KIND_RIGHT_BIASED
    label = "right-biased"

    def _bias(self, q: float) -> float:
        return q + (1.0 - q) * self.damp


def stopping_U(path, x: int, k: int, M: float, weights: dict | None = None) -> int:
    """First n >= k with z_n(x) > M z_k(x) or alpha-_n(x) > M alpha-_k(x).

    Returns ``len(path)`` (one past the horizon) when the box is never left.
    """
    path = np.asarray(path, dtype=np.int64)
    w = weights or {}
    if k >= len(path):
        return len(path)
    zx = w.get(x, 1) + np.cumsum(path == x)
    zl = w.get(x - 1, 1) + np.cumsum(path == x - 1)
    zr = w.get(x + 1, 1) + np.cumsum(path == x + 1)
    alpha = zl / (zl + zr)
    hit = (zx[k:] > M * zx[k]) | (alpha[k:] > M * alpha[k])
    idx = np.nonzero(hit)[0]
    return int(k + idx[0]) if len(idx) else len(path)


def run_coupled(horizon: int, seed: int, model, *, v0: int = 0, weights: dict | None = None,
                checkpoints=None, ledger: bool = False, full_path: bool = True):
    """Run the VRRW and a perturbed walk on one uniform table.

    ``model`` is a :class:`ModifiedWalkParams` (wrapped into the perturbed
    walk) or any model object.  Returns ``(base_record, primed_record)``.
    """
    table = UniformTable(seed)
    primed_model = ModifiedVRRW(model) if isinstance(model, ModifiedWalkParams) else model
    chk = checkpoints if checkpoints is not None else [horizon]
    kw = dict(v0=v0, weights=weights, ledger=ledger, full_path=full_path)
    base = run(VRRW(), horizon, table, chk, **kw)
    primed = run(primed_model, horizon, table, chk, **kw)
    return base, primed


# --------------------------------------------------------------------------
# dominance audit


@nb.njit(cache=True)
def _visit_table(path, lo, size):
    """For each time n: visit rank i of path[n], and z_n at path[n] +/- 1."""
    z = np.ones(size, np.int64)
    n_steps = path.shape[0]
    rank = np.empty(n_steps, np.int64)
    right = np.empty(n_steps, np.int64)
    left = np.empty(n_steps, np.int64)
    for n in range(n_steps):
        j = path[n] - lo
        z[j] += 1
        rank[n] = z[j] - 1
        right[n] = z[j + 1]
        left[n] = z[j - 1]
    return rank, right, left


def visit_table(path):
    path = np.asarray(path, dtype=np.int64)
    lo = int(path.min()) - 1
    size = int(path.max()) - lo + 2
    rank, right, left = _visit_table(path, lo, size)
    return rank, path, right, left


@dataclass(frozen=True)
class MonotonicityReport:
    cells_checked: int
    vacuous: int
    violations: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"cells_checked": self.cells_checked, "vacuous": self.vacuous,
                "verdict": self.verdict, "violations": self.violations}


def verify_partial_order(rec_a, rec_b, max_listed: int = 100) -> MonotonicityReport:
    """Check that walk B dominates walk A cell by cell.

    For every (i, j) reached by both walks within the horizon, at their
    respective i-th visits to j: z_B(j+1) >= z_A(j+1) and z_B(j-1) <= z_A(j-1).
    Cells reached by only one walk hold vacuously and are counted separately.
    Counts are compared as visit numbers; with equal weight overrides on both
    walks (the coupled setting) this is the same comparison.
    """
    pa = rec_a.path if isinstance(rec_a, RunRecord) else np.asarray(rec_a)
    pb = rec_b.path if isinstance(rec_b, RunRecord) else np.asarray(rec_b)
    if pa is None or pb is None:
        raise ValueError("both records need full-path mode")
    ia, ja, ra, la = visit_table(pa)
    ib, jb, rb, lb = visit_table(pb)
    lo = min(ja.min(), jb.min())
    width = max(len(pa), len(pb)) + 2
    ka = (ja - lo) * width + ia
    kb = (jb - lo) * width + ib
    common, xa, xb = np.intersect1d(ka, kb, assume_unique=True, return_indices=True)
    bad = np.nonzero((rb[xb] < ra[xa]) | (lb[xb] > la[xa]))[0]
    violations = []
    for t in bad[:max_listed]:
        a, b = xa[t], xb[t]
        violations.append({"i": int(ia[a]), "j": int(ja[a]),
                           "right_a": int(ra[a]), "right_b": int(rb[b]),
                           "left_a": int(la[a]), "left_b": int(lb[b])})
    if len(bad) > max_listed:
        violations.append({"truncated": int(len(bad) - max_listed)})
    vacuous = len(ka) + len(kb) - 2 * len(common)
    return MonotonicityReport(int(len(common)), int(vacuous), violations)


# --------------------------------------------------------------------------
# diagnostic series


@nb.njit(cache=True)
def _stream_series(path, code, levels_max):
    # code 0: s51, 1: s52, 2: s53.  Tracks counts at sites 0..9 only.
    z = np.ones(12, np.int64)      # index s+1 holds site s, s in -1..10
    zp = np.zeros(12, np.int64)
    zm = np.zeros(12, np.int64)
    t_out = np.full(levels_max + 1, -1, np.int64)
    r_out = np.zeros(levels_max + 1, np.int64)
    cnt = np.zeros((levels_max + 1, 10), np.int64)
    zp4 = np.zeros(levels_max + 1, np.int64)
    zm1 = np.zeros(levels_max + 1, np.int64)
    level = 0
    n_steps = path.shape[0]
    for m in range(n_steps):
        x = path[m]
        if m > 0:
            prev = path[m - 1]
            if -1 <= prev <= 10:
                if x == prev + 1:
                    zp[prev + 1] += 1
                else:
                    zm[prev + 1] += 1
        if -1 <= x <= 10:
            z[x + 1] += 1
        if code == 0:
            counter = zp[3]
        elif code == 1:
            counter = z[5]
        else:
            counter = zp[5]
        while level <= levels_max and counter >= level:
            if code == 2 and counter != level:
                break
            t_out[level] = m
            for s in range(10):
                cnt[level, s] = z[s + 1]
            zp4[level] = zp[5]
            zm1[level] = zm[2]
            level += 1
    return t_out, cnt, zp4, zm1


@dataclass(frozen=True)
class DiagnosticSeries:
    preset: str
    n: np.ndarray
    t: np.ndarray          # -1 where the threshold was never reached
    z: np.ndarray
    y: np.ndarray
    r: np.ndarray
    z_plus_4: np.ndarray
    z_minus_1: np.ndarray

    def rows(self):
        for k in range(len(self.n)):
            t = int(self.t[k])
            yield int(self.n[k]), (t if t >= 0 else None), float(self.z[k]), float(self.y[k])


def series_from_counts(name: str, level: int, c) -> tuple:
    """(z_n, y_n, R) from counts ``c(site)`` at the threshold time of ``level``."""
    spec = preset(name)
    r = sum(c(s) for s in spec.plus_sites) - sum(c(s) for s in spec.minus_sites)
    if name == "s51":
        return math.log(c(3) / c(2)), r / (c(2) * c(3)), r
    if name == "s52":
        return math.log(c(6) / c(2)), r / (level * (c(3) + c(5))), r
    return math.log(c(7) / c(2)), r / (c(4) * c(5)), r


def diagnostic_series(record, name: str = "s51", levels_max: int | None = None) -> DiagnosticSeries:
    """Stream (n, t_n, z_n, y_n) for n = 1..levels_max along a stored path.

    Unreached levels are zero-filled.  Default ``levels_max`` is one past the
    last level reached, so the tail entry shows the convention.
    """
    spec = preset(name)
    path = record.path if isinstance(record, RunRecord) else np.asarray(record, dtype=np.int64)
    if path is None:
        raise ValueError("diagnostic series need full-path mode")
    code = list(PRESETS).index(spec.name)
    if levels_max is None:
        from .ledger import count_series
        levels_max = int(count_series(path, spec.counter_site, spec.counter)[-1]) + 1
    t_out, cnt, zp4, zm1 = _stream_series(path, code, levels_max)
    n = np.arange(1, levels_max + 1)
    zs = np.zeros(levels_max)
    ys = np.zeros(levels_max)
    rs = np.zeros(levels_max, np.int64)
    for idx, level in enumerate(n):
        if t_out[level] >= 0:
            row = cnt[level]
            zs[idx], ys[idx], rs[idx] = series_from_counts(spec.name, int(level), lambda s: int(row[s]))
    return DiagnosticSeries(spec.name, n, t_out[1:], zs, ys, rs, zp4[1:], zm1[1:])


def matched_consequences(base: DiagnosticSeries, primed: DiagnosticSeries) -> dict:
    """Count violations of the pathwise consequences of dominance at matched levels."""
    m = min(len(base.n), len(primed.n))
    b = {f: getattr(base, f)[:m] for f in ("t", "z_plus_4", "z_minus_1", "r")}
    p = {f: getattr(primed, f)[:m] for f in ("t", "z_plus_4", "z_minus_1", "r")}
    ok = (b["t"] >= 0) & (p["t"] >= 0)
    return {
        "levels": int(ok.sum()),
        "z_plus_4": int(np.sum(p["z_plus_4"][ok] < b["z_plus_4"][ok])),
        "z_minus_1": int(np.sum(p["z_minus_1"][ok] > b["z_minus_1"][ok])),
        "r": int(np.sum(p["r"][ok] < b["r"][ok])),
    }
