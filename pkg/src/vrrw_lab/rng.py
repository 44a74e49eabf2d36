"""Keyed, stateless uniform source indexed by (visit index, site).

Every cell of the table is a pure function of ``(seed, i, j)``, so two walks
that read the same cell in a different order, or at different times, see the
same value.  Derivation rule (version ``DERIVATION_VERSION``)::

    key  = mix64(seed ^ 0x5851F42D4C957F2D)
    h    = mix64(key + i * 0x9E3779B97F4A7C15)
    h    = mix64(h + zigzag(j) * 0xC2B2AE3D27D4EB4F)
    u    = (h >> 11) * 2**-53                       # u in [0, 1)

where ``mix64`` is the SplitMix64 finalizer (a bijection on 64-bit words),
all arithmetic is modulo 2**64 and ``zigzag(j) = 2j`` for ``j >= 0``,
``-2j - 1`` otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

DERIVATION_VERSION = "vrrw-keyed-splitmix64/1"

MASK64 = (1 << 64) - 1
_SALT = 0x5851F42D4C957F2D
_GOLDEN = 0x9E3779B97F4A7C15
_SITE_MULT = 0xC2B2AE3D27D4EB4F
_REPLICATE_SALT = 0xD1B54A32D192ED03
_INV_2_53 = 1.0 / 9007199254740992.0


def _mix64_py(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def zigzag(j: int) -> int:
    """Signed site -> nonnegative key (0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ...)."""
    return 2 * j if j >= 0 else -2 * j - 1


def table_key(seed: int) -> int:
    return _mix64_py(seed ^ _SALT)


def cell_bits(key: int, i: int, j: int) -> int:
    """Pure-Python reference of the 64-bit cell hash (used as an oracle)."""
    h = _mix64_py(key + i * _GOLDEN)
    return _mix64_py(h + zigzag(j) * _SITE_MULT)


def cell_uniform(key: int, i: int, j: int) -> float:
    return (cell_bits(key, i, j) >> 11) * _INV_2_53


# numba twins of the functions above; all operands kept in uint64.

@nb.njit(inline="always")
def mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@nb.njit(inline="always")
def nb_uniform(key, i, j):
    if j >= 0:
        zz = np.uint64(2 * j)
    else:
        zz = np.uint64(-2 * j - 1)
    h = mix64(key + np.uint64(i) * np.uint64(_GOLDEN))
    h = mix64(h + zz * np.uint64(_SITE_MULT))
    return np.float64(h >> np.uint64(11)) * _INV_2_53


@nb.njit(cache=True)
def uniform_block(key, i_values, j_values):
    out = np.empty(i_values.shape[0], dtype=np.float64)
    for t in range(i_values.shape[0]):
        out[t] = nb_uniform(key, i_values[t], j_values[t])
    return out


def parse_seed(text: str | int) -> int:
    """Accept a decimal or ``0x``-prefixed hexadecimal seed in [0, 2**64)."""
    if isinstance(text, int):
        value = text
    else:
        s = text.strip().lower()
        value = int(s, 16) if s.startswith("0x") else int(s, 10)
    if not 0 <= value <= MASK64:
        raise ValueError(f"seed must lie in [0, 2**64), got {text!r}")
    return value


def replicate_seed(master: int, r: int) -> int:
    """Seed for replicate ``r``; injective in ``r`` for a fixed master seed."""
    if r < 0:
        raise ValueError("replicate index must be >= 0")
    # r -> master + (r+1)*odd is injective mod 2**64 and mix64 is a bijection.
    return _mix64_py((master ^ _REPLICATE_SALT) + (r + 1) * _GOLDEN)


@dataclass(frozen=True)
class UniformTable:
    """The array of uniforms omega[i, j], i >= 1 the visit index, j the site."""

    seed: int

    def __post_init__(self):
        parse_seed(self.seed)

    @property
    def key(self) -> int:
        return table_key(self.seed)

    def uniform_at(self, i: int, j: int) -> float:
        if i < 1:
            raise ValueError(f"visit index must be >= 1, got {i}")
        return cell_uniform(self.key, i, j)

    def block(self, i_values, j_values) -> np.ndarray:
        """Vectorised evaluation of many cells at once."""
        i_arr = np.asarray(i_values, dtype=np.int64)
        j_arr = np.asarray(j_values, dtype=np.int64)
        if i_arr.size and i_arr.min() < 1:
            raise ValueError("visit index must be >= 1")
        return uniform_block(np.uint64(self.key), i_arr, j_arr)


def uniform_at(table: UniformTable, i: int, j: int) -> float:
    return table.uniform_at(i, j)
