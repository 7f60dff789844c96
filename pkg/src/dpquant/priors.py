"""Base measures for the exponential mechanism.

Every prior exposes vectorised interval masses over half-open intervals
(lo, hi], their logarithms (computed tail-safely so far-away priors do not
underflow to zero), a density, and conditional inverse-CDF sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from dpquant.core import ConfigError, Interval, ReleaseError

LN2 = math.log(2.0)
# Keep tangent arguments this far from +-pi/2.
ANGLE_CLAMP = 1e-12


def _arr(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


def _log(v):
    with np.errstate(divide="ignore"):
        return np.log(v)


class Prior:
    """Abstract prior. Subclasses are immutable dataclasses."""

    family: str = ""

    def masses(self, lo, hi) -> np.ndarray:
        raise NotImplementedError

    def log_masses(self, lo, hi) -> np.ndarray:
        return _log(np.maximum(self.masses(lo, hi), 0.0))

    def density(self, o) -> np.ndarray:
        raise NotImplementedError

    def _sample(self, lo: float, hi: float, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sample_in(self, lo: float, hi: float, rng: np.random.Generator, size: int | None = None):
        """Draw from the prior conditioned on (lo, hi]."""
        if not np.isfinite(self.log_masses(lo, hi)):
            raise ReleaseError(f"{self.family} prior has zero mass on ({lo}, {hi}]")
        out = self._sample(float(lo), float(hi), rng, 1 if size is None else int(size))
        return float(out[0]) if size is None else out

    def cdf(self, t) -> np.ndarray:
        return self.masses(-np.inf, t)

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


# ---------------------------------------------------------------- uniform


@dataclass(frozen=True)
class Uniform(Prior):
    a: float
    b: float
    family = "uniform"

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
            raise ConfigError(f"uniform needs finite a < b, got ({self.a}, {self.b})")

    def masses(self, lo, hi):
        lo = np.clip(_arr(lo), self.a, self.b)
        hi = np.clip(_arr(hi), self.a, self.b)
        return np.maximum(hi - lo, 0.0) / (self.b - self.a)

    def density(self, o):
        o = _arr(o)
        return np.where((o >= self.a) & (o <= self.b), 1.0 / (self.b - self.a), 0.0)

    def _sample(self, lo, hi, rng, size):
        lo, hi = max(lo, self.a), min(hi, self.b)
        return lo + (hi - lo) * rng.random(size)

    def to_dict(self):
        return {"family": self.family, "a": float(self.a), "b": float(self.b)}


# ---------------------------------------------------------------- Cauchy


def _upper_tail_angle(z):
    # pi * P(Z > z) for a standard Cauchy, accurate for large z.
    return np.arctan2(1.0, z)


def _cauchy_std_mass(zl, zh):
    """Standard Cauchy mass of (zl, zh], elementwise, without tail cancellation."""
    zl, zh = np.broadcast_arrays(_arr(zl), _arr(zh))
    out = np.zeros(zl.shape)
    with np.errstate(invalid="ignore"):
        right = zl >= 0
        left = zh <= 0
        # Same-side intervals: difference of tail angles.
        r = _upper_tail_angle(zl) - _upper_tail_angle(zh)
        fin = np.isfinite(zh) & np.isfinite(zl)
        r = np.where(fin & right, np.arctan2(zh - zl, 1.0 + zl * zh), r)
        lft = _upper_tail_angle(-zh) - _upper_tail_angle(-zl)
        lft = np.where(fin & left, np.arctan2(zh - zl, 1.0 + zl * zh), lft)
        m = np.pi - _upper_tail_angle(-zl) - _upper_tail_angle(zh)
    out = np.where(right, r, np.where(left, lft, m)) / np.pi
    return np.maximum(out, 0.0)


def _cauchy_std_sample(zl: float, zh: float, rng, size) -> np.ndarray:
    """Inverse-CDF draw from the standard Cauchy restricted to (zl, zh]."""
    u = rng.random(size)
    if zl >= 0 or zh <= 0:
        # One-sided: sample the tail angle beta = arctan2(1, |z|) so that far
        # tails keep full relative precision; z = tan(pi/2 - beta).
        sign = 1.0 if zl >= 0 else -1.0
        near, far = (zl, zh) if zl >= 0 else (-zh, -zl)
        b_near = float(_upper_tail_angle(near))
        b_far = float(_upper_tail_angle(far))
        beta = b_far + (b_near - b_far) * u
        beta = np.clip(beta, min(ANGLE_CLAMP, 0.5 * b_near), np.pi / 2)
        z = 1.0 / np.tan(beta)
        return sign * np.clip(z, near, far)
    al, ah = math.atan(zl), math.atan(zh)
    ang = al + (ah - al) * u
    ang = np.clip(ang, -np.pi / 2 + ANGLE_CLAMP, np.pi / 2 - ANGLE_CLAMP)
    return np.clip(np.tan(ang), zl, zh)


@dataclass(frozen=True)
class Cauchy(Prior):
    loc: float
    scale: float
    family = "cauchy"

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale) and np.isfinite(self.loc)):
            raise ConfigError(f"cauchy needs finite location and scale > 0, got {self}")

    def masses(self, lo, hi):
        return _cauchy_std_mass((_arr(lo) - self.loc) / self.scale, (_arr(hi) - self.loc) / self.scale)

    def density(self, o):
        z = (_arr(o) - self.loc) / self.scale
        return 1.0 / (np.pi * self.scale * (1.0 + z * z))

    def _sample(self, lo, hi, rng, size):
        zl, zh = (lo - self.loc) / self.scale, (hi - self.loc) / self.scale
        return self.loc + self.scale * _cauchy_std_sample(zl, zh, rng, size)

    def to_dict(self):
        return {"family": self.family, "loc": float(self.loc), "scale": float(self.scale)}


@dataclass(frozen=True)
class HalfCauchy(Prior):
    """Cauchy(0, scale) folded onto [0, inf)."""

    scale: float
    family = "halfcauchy"

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ConfigError(f"half-cauchy needs scale > 0, got {self.scale}")

    def masses(self, lo, hi):
        zl = np.maximum(_arr(lo), 0.0) / self.scale
        zh = np.maximum(_arr(hi), 0.0) / self.scale
        return np.minimum(2.0 * _cauchy_std_mass(zl, zh), 1.0)

    def density(self, o):
        o = _arr(o)
        z = o / self.scale
        return np.where(o >= 0, 2.0 / (np.pi * self.scale * (1.0 + z * z)), 0.0)

    def _sample(self, lo, hi, rng, size):
        zl, zh = max(lo, 0.0) / self.scale, max(hi, 0.0) / self.scale
        return self.scale * _cauchy_std_sample(zl, zh, rng, size)

    def to_dict(self):
        return {"family": self.family, "scale": float(self.scale)}


# ---------------------------------------------------------------- Laplace


def _laplace_std_log_mass(zl, zh):
    zl, zh = np.broadcast_arrays(_arr(zl), _arr(zh))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        width = zh - zl
        seg = _log(-np.expm1(-width))  # log(1 - e^{-(zh - zl)})
        right = -LN2 - zl + seg
        left = -LN2 + zh + seg
        mid = _log(-0.5 * (np.expm1(zl) + np.expm1(-zh)))
    out = np.where(zl >= 0, right, np.where(zh <= 0, left, mid))
    return np.where(width > 0, out, -np.inf)


def _laplace_std_sample(zl: float, zh: float, rng, size) -> np.ndarray:
    def right_tail(a, b, u):
        # Exponential on [a, b], a >= 0.
        return a - np.log1p(u * np.expm1(-(b - a)))

    u = rng.random(size)
    if zl >= 0:
        return np.clip(right_tail(zl, zh, u), zl, zh)
    if zh <= 0:
        return np.clip(-right_tail(-zh, -zl, u), zl, zh)
    m_left = -0.5 * math.expm1(zl)
    m_right = -0.5 * math.expm1(-zh)
    go_right = rng.random(size) * (m_left + m_right) < m_right
    out = np.where(go_right, right_tail(0.0, zh, u), -right_tail(0.0, -zl, u))
    return np.clip(out, zl, zh)


@dataclass(frozen=True)
class Laplace(Prior):
    loc: float
    scale: float
    family = "laplace"

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale) and np.isfinite(self.loc)):
            raise ConfigError(f"laplace needs finite location and scale > 0, got {self}")

    def log_masses(self, lo, hi):
        return _laplace_std_log_mass((_arr(lo) - self.loc) / self.scale, (_arr(hi) - self.loc) / self.scale)

    def masses(self, lo, hi):
        return np.exp(self.log_masses(lo, hi))

    def density(self, o):
        return np.exp(-np.abs(_arr(o) - self.loc) / self.scale) / (2.0 * self.scale)

    def _sample(self, lo, hi, rng, size):
        zl, zh = (lo - self.loc) / self.scale, (hi - self.loc) / self.scale
        return self.loc + self.scale * _laplace_std_sample(zl, zh, rng, size)

    def to_dict(self):
        return {"family": self.family, "loc": float(self.loc), "scale": float(self.scale)}


# ---------------------------------------------------------------- piecewise constant


@dataclass(frozen=True)
class PiecewiseConstant(Prior):
    """Histogram prior on [a, b] with d equal-width bins."""

    a: float
    b: float
    weights: tuple
    family = "piecewise"

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "weights", w)
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
            raise ConfigError("piecewise prior needs finite a < b")
        if not w or min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError("piecewise weights must be nonnegative and sum to 1")

    @property
    def d(self) -> int:
        return len(self.weights)

    def _cum(self):
        c = np.concatenate(([0.0], np.cumsum(self.weights)))
        return c / c[-1]

    def cdf(self, t):
        w = np.asarray(self.weights) / np.sum(self.weights)
        cum = self._cum()
        u = np.clip((_arr(t) - self.a) / (self.b - self.a) * self.d, 0.0, self.d)
        j = np.minimum(np.floor(u).astype(int), self.d - 1)
        return np.minimum(cum[j] + (u - j) * w[j], 1.0)

    def masses(self, lo, hi):
        return np.maximum(self.cdf(hi) - self.cdf(lo), 0.0)

    def density(self, o):
        o = _arr(o)
        w = np.asarray(self.weights) / np.sum(self.weights)
        j = np.clip(np.floor((o - self.a) / (self.b - self.a) * self.d).astype(int), 0, self.d - 1)
        inside = (o >= self.a) & (o <= self.b)
        return np.where(inside, w[j] * self.d / (self.b - self.a), 0.0)

    def _sample(self, lo, hi, rng, size):
        w = np.asarray(self.weights) / np.sum(self.weights)
        cum = self._cum()
        c_lo, c_hi = float(self.cdf(lo)), float(self.cdf(hi))
        c = c_lo + (c_hi - c_lo) * rng.random(size)
        j = np.clip(np.searchsorted(cum[1:], c, side="right"), 0, self.d - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(w[j] > 0, (c - cum[j]) / w[j], 0.0)
        t = self.a + (j + np.clip(frac, 0.0, 1.0)) * (self.b - self.a) / self.d
        return np.clip(t, max(lo, self.a), min(hi, self.b))

    def to_dict(self):
        return {"family": self.family, "a": float(self.a), "b": float(self.b), "weights": list(self.weights)}


# ---------------------------------------------------------------- composites


@dataclass(frozen=True)
class Mixture(Prior):
    """(1 - lam) * predicted + lam * robust."""

    lam: float
    predicted: Prior
    robust: Prior
    family = "mixture"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"mixing coefficient must lie in [0, 1], got {self.lam}")

    def masses(self, lo, hi):
        return (1.0 - self.lam) * self.predicted.masses(lo, hi) + self.lam * self.robust.masses(lo, hi)

    def _log_weights(self):
        with np.errstate(divide="ignore"):
            return math.log1p(-self.lam) if self.lam < 1 else -np.inf, math.log(self.lam) if self.lam > 0 else -np.inf

    def log_masses(self, lo, hi):
        lp, lr = self._log_weights()
        return np.logaddexp(lp + self.predicted.log_masses(lo, hi), lr + self.robust.log_masses(lo, hi))

    def density(self, o):
        return (1.0 - self.lam) * self.predicted.density(o) + self.lam * self.robust.density(o)

    def _sample(self, lo, hi, rng, size):
        lp, lr = self._log_weights()
        a = lp + float(self.predicted.log_masses(lo, hi))
        b = lr + float(self.robust.log_masses(lo, hi))
        p_robust = math.exp(b - np.logaddexp(a, b))
        pick = rng.random(size) < p_robust
        out = np.empty(size)
        k = int(pick.sum())
        if k:
            out[pick] = self.robust._sample(lo, hi, rng, k)
        if size - k:
            out[~pick] = self.predicted._sample(lo, hi, rng, size - k)
        return out

    def to_dict(self):
        return {
            "family": self.family,
            "lam": float(self.lam),
            "predicted": self.predicted.to_dict(),
            "robust": self.robust.to_dict(),
        }


@dataclass(frozen=True)
class EdgeAdapted(Prior):
    """Base density on (lo, hi) plus point masses at lo and hi."""

    base: Prior
    lo: float
    hi: float
    atom_lo: float
    atom_hi: float
    family = "edge"

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigError("edge adaptation needs lo <= hi")

    def _interior(self, lo, hi):
        l = np.maximum(_arr(lo), self.lo)
        h = np.minimum(_arr(hi), self.hi)
        return l, h, h > l

    def masses(self, lo, hi):
        lo, hi = _arr(lo), _arr(hi)
        l, h, ok = self._interior(lo, hi)
        inner = np.where(ok, self.base.masses(l, np.where(ok, h, l)), 0.0)
        at_lo = np.where((lo < self.lo) & (self.lo <= hi), self.atom_lo, 0.0)
        at_hi = np.where((lo < self.hi) & (self.hi <= hi), self.atom_hi, 0.0)
        return inner + at_lo + at_hi

    def log_masses(self, lo, hi):
        lo, hi = _arr(lo), _arr(hi)
        l, h, ok = self._interior(lo, hi)
        inner = np.where(ok, self.base.log_masses(l, np.where(ok, h, l)), -np.inf)
        at_lo = np.where((lo < self.lo) & (self.lo <= hi), _log(self.atom_lo), -np.inf)
        at_hi = np.where((lo < self.hi) & (self.hi <= hi), _log(self.atom_hi), -np.inf)
        return np.logaddexp(np.logaddexp(inner, at_lo), at_hi)

    def density(self, o):
        o = _arr(o)
        return np.where((o > self.lo) & (o < self.hi), self.base.density(o), 0.0)

    def _sample(self, lo, hi, rng, size):
        l, h, ok = self._interior(lo, hi)
        parts = np.array(
            [
                float(self.base.log_masses(float(l), float(h))) if ok else -np.inf,
                float(_log(self.atom_lo)) if lo < self.lo <= hi else -np.inf,
                float(_log(self.atom_hi)) if lo < self.hi <= hi else -np.inf,
            ]
        )
        p = np.exp(parts - np.logaddexp.reduce(parts))
        which = rng.choice(3, size=size, p=p / p.sum())
        out = np.where(which == 1, self.lo, self.hi).astype(float)
        k = int(np.sum(which == 0))
        if k:
            out[which == 0] = self.base._sample(float(l), float(h), rng, k)
        return out

    def to_dict(self):
        return {
            "family": self.family,
            "base": self.base.to_dict(),
            "lo": float(self.lo),
            "hi": float(self.hi),
            "atom_lo": float(self.atom_lo),
            "atom_hi": float(self.atom_hi),
        }


@dataclass(frozen=True)
class Conditional(Prior):
    """Base prior renormalised to [lo, hi]."""

    base: Prior
    lo: float
    hi: float
    family = "conditional"

    def _log_norm(self) -> float:
        return float(self.base.log_masses(self.lo, self.hi))

    def masses(self, lo, hi):
        return np.exp(self.log_masses(lo, hi))

    def log_masses(self, lo, hi):
        l = np.maximum(_arr(lo), self.lo)
        h = np.minimum(_arr(hi), self.hi)
        ok = h > l
        inner = np.where(ok, self.base.log_masses(l, np.where(ok, h, l)), -np.inf)
        return inner - self._log_norm()

    def density(self, o):
        o = _arr(o)
        inside = (o >= self.lo) & (o <= self.hi)
        return np.where(inside, self.base.density(o) * math.exp(-self._log_norm()), 0.0)

    def _sample(self, lo, hi, rng, size):
        return self.base._sample(max(lo, self.lo), min(hi, self.hi), rng, size)

    def to_dict(self):
        return {"family": self.family, "base": self.base.to_dict(), "lo": float(self.lo), "hi": float(self.hi)}


# ---------------------------------------------------------------- operations


def mass(p: Prior, interval: Interval) -> float:
    return float(p.masses(interval.lo, interval.hi))


def sample_in(p: Prior, interval: Interval, rng: np.random.Generator, size: int | None = None):
    return p.sample_in(interval.lo, interval.hi, rng, size)


def adapt_conditional(p: Prior, lo: float, hi: float) -> Prior:
    """Restrict ``p`` to [lo, hi] and renormalise."""
    if lo == -np.inf and hi == np.inf:
        return p
    if not np.isfinite(float(p.log_masses(lo, hi))):
        raise ReleaseError(f"prior has zero mass on [{lo}, {hi}]")
    if isinstance(p, Uniform):
        return Uniform(max(p.a, lo), min(p.b, hi))
    return Conditional(p, float(lo), float(hi))


def adapt_edge(p: Prior, lo: float, hi: float) -> Prior:
    """Keep the density on (lo, hi); move outside mass to atoms at lo and hi."""
    if lo == -np.inf and hi == np.inf:
        return p
    atom_lo = float(p.masses(-np.inf, lo)) if lo > -np.inf else 0.0
    atom_hi = float(p.masses(hi, np.inf)) if hi < np.inf else 0.0
    return EdgeAdapted(p, float(lo), float(hi), atom_lo, atom_hi)


def mix(predicted: Prior, robust: Prior, lam: float) -> Mixture:
    return Mixture(float(lam), predicted, robust)


def laplace_from_params(theta: float, phi: float) -> Laplace:
    """Laplace(theta / phi, 1 / phi) from location-scale coordinates."""
    if not phi > 0:
        raise ConfigError(f"phi must be positive, got {phi}")
    return Laplace(theta / phi, 1.0 / phi)


# ---------------------------------------------------------------- serialization


def prior_from_dict(d: dict[str, Any]) -> Prior:
    fam = d.get("family")
    try:
        if fam == "uniform":
            return Uniform(float(d["a"]), float(d["b"]))
        if fam == "cauchy":
            return Cauchy(float(d["loc"]), float(d["scale"]))
        if fam == "halfcauchy":
            return HalfCauchy(float(d["scale"]))
        if fam == "laplace":
            return Laplace(float(d["loc"]), float(d["scale"]))
        if fam == "piecewise":
            return PiecewiseConstant(float(d["a"]), float(d["b"]), tuple(d["weights"]))
        if fam == "mixture":
            return Mixture(float(d["lam"]), prior_from_dict(d["predicted"]), prior_from_dict(d["robust"]))
        if fam == "edge":
            return EdgeAdapted(
                prior_from_dict(d["base"]), float(d["lo"]), float(d["hi"]), float(d["atom_lo"]), float(d["atom_hi"])
            )
        if fam == "conditional":
            return Conditional(prior_from_dict(d["base"]), float(d["lo"]), float(d["hi"]))
    except KeyError as e:
        raise ConfigError(f"{fam} prior missing field {e.args[0]!r}") from None
    raise ConfigError(f"unknown prior family {fam!r}")


def dumps(p: Prior) -> str:
    return json.dumps(p.to_dict(), sort_keys=True)


def loads(text: str) -> Prior:
    return prior_from_dict(json.loads(text))
