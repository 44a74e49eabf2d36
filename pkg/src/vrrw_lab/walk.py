"""Vertex-reinforced random walk on the integer line.

Two execution paths share one step rule:

* :func:`step` works on a :class:`WalkState` of sparse dictionaries and any
  model exposing ``right_prob(state)``.  It is slow and is the reference.
* :func:`run` drives a numba kernel over dense, growable count arrays.  Models
  that can be expressed in the kernel (plain VRRW and the two perturbed walks
  of :mod:`vrrw_lab.coupling`) return a parameter tuple from
  ``kernel_spec()``; anything else falls back to :func:`step`.

Counts follow the "+1" convention: ``z(x) = w(x) + #visits to x up to time n``
with ``w(x) = 1`` unless overridden, so ``z(v0) = w(v0) + 1`` at time 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .rng import DERIVATION_VERSION, UniformTable, nb_uniform

__version__ = "0.1.0"

# Row order of the functional ledger arrays.
Y, Y_PLUS, Y_MINUS, YT_PLUS, YT_MINUS, YB_PLUS, YB_MINUS = range(7)
LEDGER_NAMES = ("Y", "Y+", "Y-", "Yt+", "Yt-", "Yb+", "Yb-")

KIND_VRRW = 0
KIND_MODIFIED = 1
KIND_LEFT_BIASED = 2
KIND_RIGHT_BIASED = 3

# modifier bookkeeping: int slots (phase, U) and float slots (gamma, Z_k(x), alpha_k^-(x))
PHASE_PENDING, PHASE_ACTIVE, PHASE_INACTIVE = 0, 1, 2
NO_STEP = -1

MAX_SITES = 1 << 26


class ResourceExhausted(RuntimeError):
    """The walk outgrew the site budget; no partial record is returned."""


@dataclass
class WalkState:
    position: int
    n: int
    z: dict
    z_plus: dict
    z_minus: dict
    v0: int = 0
    weights: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, v0: int = 0, weights: dict | None = None) -> "WalkState":
        weights = dict(weights or {})
        for site, w in weights.items():
            if int(w) < 1:
                raise ValueError(f"initial weight at {site} must be >= 1")
        z = {v0: weights.get(v0, 1) + 1}
        return cls(position=v0, n=0, z=z, z_plus={}, z_minus={}, v0=v0, weights=weights)

    def weight(self, x: int) -> int:
        return self.weights.get(x, 1)

    def count(self, x: int) -> int:
        return self.z.get(x, self.weights.get(x, 1))

    def visits(self, x: int) -> int:
        return self.count(x) - self.weight(x)

    def plus(self, x: int) -> int:
        return self.z_plus.get(x, 0)

    def minus(self, x: int) -> int:
        return self.z_minus.get(x, 0)

    def alpha_minus(self, x: int) -> float:
        left, right = self.count(x - 1), self.count(x + 1)
        return left / (left + right)

    def alpha_plus(self, x: int) -> float:
        left, right = self.count(x - 1), self.count(x + 1)
        return right / (left + right)

    def copy(self) -> "WalkState":
        return WalkState(self.position, self.n, dict(self.z), dict(self.z_plus),
                         dict(self.z_minus), self.v0, dict(self.weights))

    def check_invariants(self) -> None:
        excess = sum(c - self.weight(x) for x, c in self.z.items())
        assert excess == self.n + 1, (excess, self.n)
        for x, c in self.z.items():
            assert c >= self.weight(x) >= 1
            # departures from x equal visits to x before the present time
            prior = self.visits(x) - (1 if x == self.position else 0)
            assert self.plus(x) + self.minus(x) == prior, x


def vrrw_transition_prob(state: WalkState) -> float:
    """Probability of stepping right: z(x+1) / (z(x-1) + z(x+1))."""
    x = state.position
    right = state.count(x + 1)
    return right / (state.count(x - 1) + right)


def visit_index(state: WalkState) -> int:
    """Row of the uniform table consumed by the pending departure.

    Equals the number of visits made to the current site so far, which is
    ``z(position) - 1`` under the default unit weights.
    """
    return state.visits(state.position)


class VRRW:
    """The unperturbed reinforced walk."""

    kind = KIND_VRRW

    def right_prob(self, state: WalkState) -> float:
        return vrrw_transition_prob(state)

    def kernel_spec(self):
        return (KIND_VRRW, 0, 0.0, 0.0, 0, 0, 0.0)

    def describe(self) -> dict:
        return {"kind": "vrrw"}


def step(state: WalkState, model, uniforms: UniformTable, inplace: bool = False) -> WalkState:
    """Advance one step with the shared-uniform rule: right iff omega <= q."""
    s = state if inplace else state.copy()
    q = model.right_prob(s)
    x = s.position
    omega = uniforms.uniform_at(visit_index(s), x)
    if omega <= q:
        s.z_plus[x] = s.plus(x) + 1
        nxt = x + 1
    else:
        s.z_minus[x] = s.minus(x) + 1
        nxt = x - 1
    s.z[nxt] = s.count(nxt) + 1
    s.position = nxt
    s.n += 1
    return s


# --------------------------------------------------------------------------
# numba kernel


@nb.njit(inline="always")
def _acc(led, comp, row, idx, v):
    # Neumaier compensated addition; reported value is led + comp.
    s = led[row, idx]
    t = s + v
    if abs(s) >= abs(v):
        comp[row, idx] += (s - t) + v
    else:
        comp[row, idx] += (v - t) + s
    led[row, idx] = t


@nb.njit(nogil=True, cache=True)
def _advance(key, pos, n, target, lo, z, w0, zp, zm, led, comp, track_ledger,
             path, track_path, kind, mx, mM, mg, mk, mV, mdamp, mi, mf):
    cap = z.shape[0]
    while n < target:
        ip = pos - lo
        if ip < 2 or ip > cap - 3:
            return pos, n, 1
        zl = z[ip - 1]
        zr = z[ip + 1]
        s = zl + zr
        q = zr / s
        if kind == 1:
            ix = mx - lo
            if mi[0] == 0 and n >= mk:
                # activation is decided once, from the state at step k
                zk = np.float64(z[ix])
                ak = z[ix - 1] / np.float64(z[ix - 1] + z[ix + 1])
                mf[1] = zk
                mf[2] = ak
                if ak > 0.0:
                    gam = mg / math.sqrt(zk * ak)
                    mf[0] = gam
                    if gam < 1.0 and ak < 1.0 / (4.0 * mM):
                        mi[0] = 1
                    else:
                        mi[0] = 2
                else:
                    mi[0] = 2
            if mi[0] == 1:
                if mi[1] < 0:
                    an = z[ix - 1] / np.float64(z[ix - 1] + z[ix + 1])
                    if z[ix] > mM * mf[1] or an > mM * mf[2]:
                        mi[1] = n
                if pos == mx and n <= mV and (mi[1] < 0 or n <= mi[1]):
                    q = q + (zl / s) * mf[0]
        elif kind == 2:
            if pos == mx and n >= mk and n <= mV:
                q = q * (1.0 - mdamp)
        elif kind == 3:
            if pos == mx and n >= mk and n <= mV:
                q = q + (1.0 - q) * mdamp
        i = z[ip] - w0[ip]
        u = nb_uniform(key, i, pos)
        if u <= q:
            nxt = pos + 1
            ib = ip + 1
            zp[ip] += 1
            if track_ledger:
                _acc(led, comp, 0, ip, 1.0 / s)
                _acc(led, comp, 1, ip, 1.0 / zr)
                _acc(led, comp, 4, ib, 1.0 / z[ip])
        else:
            nxt = pos - 1
            ib = ip - 1
            zm[ip] += 1
            if track_ledger:
                _acc(led, comp, 0, ip, 1.0 / s)
                _acc(led, comp, 2, ip, 1.0 / zl)
                _acc(led, comp, 3, ib, 1.0 / z[ip])
        z[ib] += 1
        if track_ledger:
            bl = z[ib - 1]
            br = z[ib + 1]
            inv = 1.0 / (z[ib] * np.float64(bl + br))
            _acc(led, comp, 5, ib, br * inv)
            _acc(led, comp, 6, ib, bl * inv)
        pos = nxt
        n += 1
        if track_path:
            path[n] = pos
    return pos, n, 0


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class Snapshot:
    """Counts (and optionally ledger sums) over sites ``lo .. lo+len-1`` at one step."""

    step: int
    position: int
    lo: int
    z: np.ndarray
    z_plus: np.ndarray
    z_minus: np.ndarray
    ledger: np.ndarray | None
    weights: tuple = ()

    @property
    def hi(self) -> int:
        return self.lo + self.z.shape[0] - 1

    def _weight(self, x: int) -> int:
        return dict(self.weights).get(x, 1)

    def count(self, x: int) -> int:
        if self.lo <= x <= self.hi:
            return int(self.z[x - self.lo])
        return self._weight(x)

    def visits(self, x: int) -> int:
        return self.count(x) - self._weight(x)

    def plus(self, x: int) -> int:
        return int(self.z_plus[x - self.lo]) if self.lo <= x <= self.hi else 0

    def minus(self, x: int) -> int:
        return int(self.z_minus[x - self.lo]) if self.lo <= x <= self.hi else 0

    def functional(self, name: str, x: int) -> float:
        if self.ledger is None:
            raise ValueError("run was made without the functional ledger")
        row = LEDGER_NAMES.index(name)
        return float(self.ledger[row, x - self.lo]) if self.lo <= x <= self.hi else 0.0

    def alpha_minus(self, x: int) -> float:
        left, right = self.count(x - 1), self.count(x + 1)
        return left / (left + right)

    def alpha_plus(self, x: int) -> float:
        left, right = self.count(x - 1), self.count(x + 1)
        return right / (left + right)

    def visited(self) -> list:
        w = np.array([self._weight(x) for x in range(self.lo, self.hi + 1)])
        return [int(x) for x in np.nonzero(self.z > w)[0] + self.lo]

    def z_map(self) -> dict:
        return {self.lo + t: int(c) for t, c in enumerate(self.z)}

    def to_state(self, v0: int) -> WalkState:
        weights = dict(self.weights)
        z = {x: c for x, c in self.z_map().items() if c != weights.get(x, 1)}
        zp = {self.lo + t: int(c) for t, c in enumerate(self.z_plus) if c}
        zm = {self.lo + t: int(c) for t, c in enumerate(self.z_minus) if c}
        return WalkState(self.position, self.step, z, zp, zm, v0, weights)

    def to_dict(self) -> dict:
        d = {
            "step": self.step,
            "position": self.position,
            "lo": self.lo,
            "z": self.z.tolist(),
            "z_plus": self.z_plus.tolist(),
            "z_minus": self.z_minus.tolist(),
        }
        if self.ledger is not None:
            d["ledger"] = {name: [float(v) for v in self.ledger[r]]
                           for r, name in enumerate(LEDGER_NAMES)}
        return d


@dataclass(frozen=True)
class RunRecord:
    config: dict
    checkpoints: tuple
    snapshots: dict
    final: Snapshot
    path: np.ndarray | None = None
    modifier: dict | None = None

    @property
    def horizon(self) -> int:
        return self.final.step

    def at(self, step: int) -> Snapshot:
        return self.snapshots[step]

    def checkpoint_snapshots(self) -> list:
        return [self.snapshots[c] for c in self.checkpoints]

    def to_json(self) -> str:
        body = {
            "tool_version": __version__,
            "rng": DERIVATION_VERSION,
            "config": self.config,
            "checkpoints": list(self.checkpoints),
            "snapshots": [self.snapshots[s].to_dict() for s in sorted(self.snapshots)],
            "modifier": self.modifier,
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def csv_rows(self) -> list:
        """One row per checkpoint: step, position, lo, hi, counts from lo to hi."""
        rows = []
        for s in self.checkpoint_snapshots():
            rows.append([s.step, s.position, s.lo, s.hi, " ".join(str(int(c)) for c in s.z)])
        return rows


# --------------------------------------------------------------------------
# schedules


def geometric_schedule(horizon: int, factor: int = 10) -> list:
    if factor < 2:
        raise ValueError("geometric factor must be >= 2")
    out, c = [], 1
    while c <= horizon:
        out.append(c)
        c *= factor
    if horizon not in out:
        out.append(horizon)
    return out


def log_schedule(horizon: int, per_decade: int) -> list:
    """Roughly ``per_decade`` log-spaced steps per factor 10, always ending at horizon."""
    if horizon < 1:
        return [horizon]
    top = math.log10(horizon)
    pts = {int(round(10 ** (j / per_decade))) for j in range(int(top * per_decade) + 1)}
    pts.add(horizon)
    return sorted(p for p in pts if 1 <= p <= horizon)


def parse_schedule(spec: str, horizon: int) -> list:
    kind, _, arg = spec.partition(":")
    if kind == "geometric":
        return geometric_schedule(horizon, int(arg or 10))
    if kind == "log":
        return log_schedule(horizon, int(arg or 10))
    if kind == "list":
        pts = sorted({int(a) for a in arg.split(",") if a.strip()})
        if pts and (pts[0] < 0 or pts[-1] > horizon):
            raise ValueError("checkpoint list must lie within [0, horizon]")
        return pts
    raise ValueError(f"unknown checkpoint schedule {spec!r}")


def with_window_starts(checkpoints, window: float) -> list:
    """Add the start step of the trailing window ending at each checkpoint."""
    extra = {int(math.floor((1.0 - window) * c)) for c in checkpoints}
    return sorted(set(checkpoints) | extra)


# --------------------------------------------------------------------------
# driver


class _Arrays:
    def __init__(self, lo, hi, weights, ledger):
        self.weights = weights
        self.lo = lo
        size = hi - lo + 1
        self.w0 = self._weights(lo, size)
        self.z = self.w0.copy()
        self.zp = np.zeros(size, np.int64)
        self.zm = np.zeros(size, np.int64)
        rows = 7 if ledger else 1
        self.led = np.zeros((rows, size))
        self.comp = np.zeros((rows, size))

    def _weights(self, lo, size):
        w = np.ones(size, np.int64)
        for site, val in self.weights.items():
            if lo <= site < lo + size:
                w[site - lo] = val
        return w

    def grow(self, pos):
        size = self.z.shape[0]
        new_size = 2 * size
        if new_size > MAX_SITES:
            raise ResourceExhausted(f"walk range exceeded {MAX_SITES} sites")
        shift = size // 2
        new_lo = self.lo - shift
        w0 = self._weights(new_lo, new_size)
        z = w0.copy()
        z[shift:shift + size] = self.z
        zp = np.zeros(new_size, np.int64)
        zp[shift:shift + size] = self.zp
        zm = np.zeros(new_size, np.int64)
        zm[shift:shift + size] = self.zm
        led = np.zeros((self.led.shape[0], new_size))
        led[:, shift:shift + size] = self.led
        comp = np.zeros_like(led)
        comp[:, shift:shift + size] = self.comp
        self.lo, self.w0, self.z, self.zp, self.zm, self.led, self.comp = new_lo, w0, z, zp, zm, led, comp

    def snapshot(self, step, pos, ledger):
        touched = np.nonzero((self.z != self.w0) | (self.zp != 0) | (self.zm != 0))[0]
        a = max(int(touched.min()) - 1, 0)
        b = min(int(touched.max()) + 1, self.z.shape[0] - 1)
        led = (self.led[:, a:b + 1] + self.comp[:, a:b + 1]) if ledger else None
        return Snapshot(step, pos, self.lo + a, self.z[a:b + 1].copy(), self.zp[a:b + 1].copy(),
                        self.zm[a:b + 1].copy(), led,
                        tuple(sorted(self.weights.items())))


def run(model, horizon: int, uniforms: UniformTable, checkpoints=None, *, v0: int = 0,
        weights: dict | None = None, ledger: bool = True, full_path: bool = False,
        config: dict | None = None) -> RunRecord:
    """Step ``horizon`` times, snapshotting at every index in ``checkpoints``.

    The final step is always snapshotted.  The result is a pure function of
    (model, horizon, table seed, v0, weights).
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    checkpoints = sorted(set(checkpoints if checkpoints is not None else geometric_schedule(horizon)))
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > horizon):
        raise ValueError("checkpoints must lie within [0, horizon]")
    weights = {int(k): int(v) for k, v in (weights or {}).items()}
    if any(v < 1 for v in weights.values()):
        raise ValueError("initial weights must be >= 1")
    spec = model.kernel_spec() if hasattr(model, "kernel_spec") else None
    config = dict(config or {})
    config.setdefault("model", model.describe() if hasattr(model, "describe") else repr(model))
    config.setdefault("horizon", horizon)
    config.setdefault("v0", v0)
    config.setdefault("seed", uniforms.seed)
    if spec is None:
        return _run_python(model, horizon, uniforms, checkpoints, v0, weights, ledger, full_path, config)

    kind, mx, mM, mg, mk, mV, mdamp = spec
    lo = min(v0, mx if kind else v0) - 64
    hi = max(v0, mx if kind else v0) + 64
    arr = _Arrays(lo, hi, weights, ledger)
    arr.z[v0 - arr.lo] += 1
    path = np.empty(horizon + 1 if full_path else 1, np.int64)
    path[0] = v0
    mi = np.array([PHASE_PENDING, NO_STEP], np.int64)
    mf = np.zeros(3)
    key = np.uint64(uniforms.key)
    pos, n = v0, 0
    snaps = {}
    targets = sorted(set(checkpoints) | {horizon})
    for target in targets:
        while n < target:
            pos, n, status = _advance(key, pos, n, target, arr.lo, arr.z, arr.w0, arr.zp, arr.zm,
                                      arr.led, arr.comp, ledger, path, full_path,
                                      kind, mx, float(mM), float(mg), mk, mV, float(mdamp), mi, mf)
            if status == 1:
                arr.grow(pos)
        snaps[target] = arr.snapshot(n, pos, ledger)
    modifier = None
    if kind == KIND_MODIFIED:
        modifier = {
            "phase": ("pending", "active", "inactive")[int(mi[0])],
            "gamma": float(mf[0]),
            "z_k": float(mf[1]),
            "alpha_k": float(mf[2]),
            "U": None if mi[1] < 0 else int(mi[1]),
        }
    return RunRecord(config, tuple(c for c in checkpoints), snaps, snaps[horizon],
                     path if full_path else None, modifier)


def _run_python(model, horizon, uniforms, checkpoints, v0, weights, ledger, full_path, config):
    from .ledger import FunctionalLedger, ledger_update

    state = WalkState.initial(v0, weights)
    led = FunctionalLedger() if ledger else None
    path = np.empty(horizon + 1 if full_path else 1, np.int64)
    path[0] = v0
    snaps = {}
    targets = set(checkpoints) | {horizon}

    def snap():
        return snapshot_from_state(state, led)

    if 0 in targets:
        snaps[0] = snap()
    while state.n < horizon:
        pre = state.copy() if ledger else None
        step(state, model, uniforms, inplace=True)
        if ledger:
            ledger_update(led, pre.position, state.position, pre)
        if full_path:
            path[state.n] = state.position
        if state.n in targets:
            snaps[state.n] = snap()
    return RunRecord(config, tuple(checkpoints), snaps, snaps[horizon], path if full_path else None, None)


def snapshot_from_state(state: WalkState, ledger=None) -> Snapshot:
    sites = set(state.z) | set(state.z_plus) | set(state.z_minus)
    lo, hi = min(sites) - 1, max(sites) + 1
    xs = range(lo, hi + 1)
    z = np.array([state.count(x) for x in xs], np.int64)
    zp = np.array([state.plus(x) for x in xs], np.int64)
    zm = np.array([state.minus(x) for x in xs], np.int64)
    led = None
    if ledger is not None:
        led = np.array([[ledger.value(name, x) for x in xs] for name in LEDGER_NAMES])
    weights = tuple(sorted(state.weights.items()))
    return Snapshot(state.n, state.position, lo, z, zp, zm, led, weights)
