"""Two-colour urns: the Pólya urn and a Friedman-type urn with geometric batches.

Draw ``t`` (1-based) of a run with seed ``s`` reads its colour uniform from
cell ``(t, 0)`` and its batch-size uniform from cell ``(t, 1)`` of
``UniformTable(s)``.  With ``alpha = 1`` every batch has size one, so the
Friedman urn reproduces the Pólya urn draw for draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .rng import nb_uniform, replicate_seed, table_key


@dataclass(frozen=True)
class UrnState:
    a: int
    b: int
    draws: int

    @property
    def fraction(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class FriedmanParams:
    alpha: float
    a0: int = 1
    b0: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.a0 < 1 or self.b0 < 1:
            raise ValueError("initial counts must be >= 1")


@nb.njit(nogil=True, cache=True)
def _urn(key, a, b, draws, alpha):
    log_fail = math.log1p(-alpha) if alpha < 1.0 else 0.0
    for t in range(1, draws + 1):
        u = nb_uniform(key, t, 0)
        if u * (a + b) < a:
            a += 1
        elif alpha >= 1.0:
            b += 1
        else:
            v = nb_uniform(key, t, 1)
            b += 1 + np.int64(math.floor(math.log1p(-v) / log_fail))
    return a, b


@nb.njit(nogil=True, cache=True)
def _urn_batch(keys, a0, b0, draws, alpha):
    out = np.empty((keys.shape[0], 2), np.int64)
    for r in range(keys.shape[0]):
        a, b = _urn(keys[r], np.int64(a0), np.int64(b0), draws, alpha)
        out[r, 0] = a
        out[r, 1] = b
    return out


def _check_counts(a0, b0):
    if a0 < 1 or b0 < 1:
        raise ValueError("initial counts must be >= 1")


def polya_run(a0: int, b0: int, draws: int, seed: int) -> float:
    """Terminal left fraction a / (a + b) after ``draws`` single-ball reinforcements."""
    _check_counts(a0, b0)
    a, b = _urn(np.uint64(table_key(seed)), np.int64(a0), np.int64(b0), draws, 1.0)
    return a / (a + b)


def friedman_run(params: FriedmanParams, draws: int, seed: int) -> UrnState:
    a, b = _urn(np.uint64(table_key(seed)), np.int64(params.a0), np.int64(params.b0),
                draws, float(params.alpha))
    return UrnState(int(a), int(b), draws)


def urn_replicates(master: int, replicates: int, draws: int, a0: int, b0: int,
                   alpha: float = 1.0) -> np.ndarray:
    """Final (a, b) for replicates 0..R-1 seeded by ``replicate_seed(master, r)``."""
    _check_counts(a0, b0)
    keys = np.array([table_key(replicate_seed(master, r)) for r in range(replicates)], np.uint64)
    return _urn_batch(keys, a0, b0, draws, float(alpha))


# --------------------------------------------------------------------------
# Beta law and Kolmogorov-Smirnov distance


def beta_cdf(x, a: int, b: int):
    """Regularised incomplete beta I_x(a, b) for integer a, b >= 1 (binomial tail sum)."""
    if int(a) != a or int(b) != b or a < 1 or b < 1:
        raise ValueError("closed form needs integer parameters >= 1")
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    m = a + b - 1
    total = np.zeros_like(x)
    for j in range(a, m + 1):
        total = total + math.comb(m, j) * x ** j * (1.0 - x) ** (m - j)
    return total


def beta_inverse_cdf(u, a: int, b: int, iters: int = 60):
    """Bisection inverse of :func:`beta_cdf`."""
    u = np.asarray(u, dtype=float)
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = beta_cdf(mid, a, b) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def ks_statistic(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance sup |F_N - F|."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = cdf(x)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def beta_limit_test(samples, a0: int, b0: int) -> float:
    """KS distance between terminal fractions and Beta(a0, b0)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 100:
        raise ValueError("need at least 100 samples")
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0 or np.ptp(x) == 0.0:
        raise ValueError("degenerate sample list")
    return ks_statistic(x, lambda t: beta_cdf(t, a0, b0))


