"""Datasets, interval geometry and the gap error metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Tolerance applied before flooring q*n so that exact multiples are stable.
FLOOR_TOL = 1e-9


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


class ConfigError(ValueError):
    """Raised for invalid parameters or configuration."""


class ReleaseError(RuntimeError):
    """Raised when a mechanism cannot produce an output."""


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """Deterministic generator from a 64-bit seed (or a tuple of ints)."""
    if isinstance(seed, (int, np.integer)):
        seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def sub_seed(seed: int, *keys: int) -> int:
    """Derive a 64-bit child seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def floor_qn(q: float, n: int) -> int:
    return int(math.floor(q * n + FLOOR_TOL))


class SortedDataset:
    """Strictly increasing sample.

    Args:
        values: numbers in any order.
        tie_jitter: when 0 (default) ties raise ``DataError``; otherwise the
            k-th repeat of a value is shifted up by ``k * tie_jitter``.
    """

    __slots__ = ("values",)

    def __init__(self, values, tie_jitter: float = 0.0, *, _trusted: bool = False):
        if _trusted:
            self.values = values
            return
        arr = np.sort(np.asarray(values, dtype=float).ravel())
        if arr.size and not np.all(np.isfinite(arr)):
            raise DataError("dataset contains non-finite values")
        if arr.size > 1:
            dup = np.diff(arr) <= 0
            if dup.any():
                if tie_jitter <= 0:
                    v = arr[1:][dup][0]
                    raise DataError(f"tied value {v!r}; set a tie jitter to perturb ties")
                arr = _spread_ties(arr, tie_jitter)
        arr.setflags(write=False)
        self.values = arr

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"SortedDataset(n={self.n})"

    def count_below(self, o: float) -> int:
        """#{i : x_i < o}."""
        return int(np.searchsorted(self.values, o, side="left"))


def _spread_ties(arr: np.ndarray, delta: float) -> np.ndarray:
    out = arr.copy()
    run = 0
    for i in range(1, arr.size):
        run = run + 1 if arr[i] == arr[i - 1] else 0
        out[i] = arr[i] + run * delta
    if np.any(np.diff(out) <= 0):
        raise DataError("tie jitter too large: perturbed values collide")
    return out


@dataclass(frozen=True)
class Interval:
    """Half-open interval (lo, hi]; open on the right when hi is +inf."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval ({self.lo}, {self.hi}]")

    def contains(self, o: float) -> bool:
        return self.lo < o <= self.hi


@dataclass(frozen=True)
class QuantileList:
    qs: tuple

    def __init__(self, qs):
        qs = tuple(float(q) for q in qs)
        if not qs:
            raise ConfigError("need at least one quantile")
        if any(not 0.0 < q < 1.0 for q in qs):
            raise ConfigError("quantiles must lie in (0, 1)")
        if any(b < a for a, b in zip(qs, qs[1:])):
            raise ConfigError("quantiles must be ascending")
        object.__setattr__(self, "qs", qs)

    @property
    def m(self) -> int:
        return len(self.qs)

    @classmethod
    def uniform(cls, m: int) -> "QuantileList":
        return cls([i / (m + 1) for i in range(1, m + 1)])

    def __iter__(self):
        return iter(self.qs)

    def __len__(self):
        return len(self.qs)

    def __getitem__(self, i):
        return self.qs[i]


def gap(x: SortedDataset, q: float, o: float) -> int:
    """|#{i : x_i < o} - floor(q n)|."""
    return abs(x.count_below(o) - floor_qn(q, x.n))


def interval_edges(x: SortedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Left and right endpoints of I_0..I_n."""
    lo = np.concatenate(([-np.inf], x.values))
    hi = np.concatenate((x.values, [np.inf]))
    return lo, hi


def interval_gaps(x: SortedDataset, q: float) -> np.ndarray:
    """Gap on each of the n+1 intervals (gap on I_k is |k - floor(qn)|)."""
    return np.abs(np.arange(x.n + 1) - floor_qn(q, x.n))


def optimal_interval(x: SortedDataset, q: float) -> Interval:
    k = floor_qn(q, x.n)
    lo = -np.inf if k == 0 else float(x.values[k - 1])
    hi = np.inf if k == x.n else float(x.values[k])
    return Interval(lo, hi)


def restrict(x: SortedDataset, a: float, b: float) -> tuple[SortedDataset, int]:
    """Points strictly inside (a, b) plus the count of points <= a.

    ``a >= b`` is tolerated and yields an empty dataset; this happens when a
    node's output lands exactly on an atom shared with its parent bound.
    """
    offset = int(np.searchsorted(x.values, a, side="right"))
    end = int(np.searchsorted(x.values, b, side="left"))
    end = max(end, offset)
    return SortedDataset(x.values[offset:end], _trusted=True), offset


def min_separation(x: SortedDataset) -> float:
    if x.n < 2:
        raise DataError("separation undefined for fewer than two points")
    return float(np.min(np.diff(x.values)))


def max_gap(x: SortedDataset, qs: Sequence[float], outputs: Sequence[float]) -> int:
    if len(qs) != len(outputs):
        raise ValueError(f"{len(qs)} quantiles but {len(outputs)} outputs")
    return max(gap(x, q, o) for q, o in zip(qs, outputs))


def gaps(x: SortedDataset, qs: Sequence[float], outputs: Sequence[float]) -> list[int]:
    if len(qs) != len(outputs):
        raise ValueError(f"{len(qs)} quantiles but {len(outputs)} outputs")
    return [gap(x, q, o) for q, o in zip(qs, outputs)]
