"""Online learners for prior parameters: COCOB, OGD, and DP-FTRL."""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from dpquant.core import ConfigError
from dpquant.mechanisms import ceil_log


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


# ---------------------------------------------------------------- formulas


def noise_scale(eps: float, delta: float, T: int) -> float:
    """Gaussian noise multiplier making tree-aggregated DP-FTRL (eps, delta)-DP."""
    if not eps > 0 or not 0 < delta < 1:
        raise ConfigError("need eps > 0 and delta in (0, 1)")
    if eps > 2.0 * math.log(1.0 / delta):
        raise ConfigError(f"eps={eps} exceeds 2 log(1/delta)={2 * math.log(1 / delta):.4g}")
    levels = max(1, ceil_log(2, T))
    return math.sqrt(2.0 * levels * math.log(1.0 / delta)) / eps


def eps_tilde(eps_list) -> float:
    eps_list = list(eps_list)
    return (2.0 if len(eps_list) > 1 else 1.0) * max(eps_list)


def sensitivity_discrete(d: int, gamma: float, eps_t: float) -> float:
    """l2 sensitivity of the piecewise-constant loss gradient on gamma-robust priors."""
    if not 0 < gamma <= 1 or d < 1:
        raise ConfigError("need gamma in (0, 1] and d >= 1")
    return d / gamma * min(2.0, math.expm1(eps_t))


# ---------------------------------------------------------------- tree aggregation


class TreeAggregator:
    """Binary-tree mechanism for noisy prefix sums of a gradient stream.

    Only the nodes covering the current count are kept: after t additions
    the stack holds popcount(t) dyadic block sums. Each node gets its own
    N(0, (sigma * sensitivity)^2) vector, drawn the first time it is read.
    """

    def __init__(
        self,
        capacity: int,
        dim: int,
        sigma: float,
        sensitivity: float,
        rng: np.random.Generator,
        clip_norm: float | None = None,
    ):
        if capacity < 1 or dim < 1:
            raise ConfigError("capacity and dim must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.sigma = float(sigma)
        self.sensitivity = float(sensitivity)
        self.clip_norm = float(sensitivity if clip_norm is None else clip_norm)
        self.rng = rng
        self.count = 0
        # entries: [level, block sum, noise or None]
        self.stack: list[list[Any]] = []

    def clip(self, grad) -> np.ndarray:
        g = np.asarray(grad, dtype=float).ravel()
        if g.size != self.dim:
            raise ValueError(f"expected gradient of length {self.dim}, got {g.size}")
        nrm = float(np.linalg.norm(g))
        if nrm > self.clip_norm:
            g = g * (self.clip_norm / nrm)
        return g

    def add(self, grad) -> None:
        if self.count >= self.capacity:
            raise ConfigError(f"tree capacity {self.capacity} exceeded")
        node = [0, self.clip(grad), None]
        while self.stack and self.stack[-1][0] == node[0]:
            left = self.stack.pop()
            node = [node[0] + 1, left[1] + node[1], None]
        self.stack.append(node)
        self.count += 1

    def noisy_nodes(self) -> int:
        return len(self.stack)

    def sum(self, t: int | None = None) -> np.ndarray:
        """Noisy prefix sum of the first t gradients (t must equal the count)."""
        if t is not None and t != self.count:
            raise ValueError(f"prefix sums are available for the current count {self.count} only")
        total = np.zeros(self.dim)
        for node in self.stack:
            if node[2] is None:
                node[2] = (
                    self.rng.normal(0.0, self.sigma * self.sensitivity, self.dim)
                    if self.sigma > 0
                    else np.zeros(self.dim)
                )
            total = total + node[1] + node[2]
        return total

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "dim": self.dim,
            "sigma": self.sigma,
            "sensitivity": self.sensitivity,
            "clip_norm": self.clip_norm,
            "count": self.count,
            "stack": [[lv, s.tolist(), None if nz is None else nz.tolist()] for lv, s, nz in self.stack],
            "rng": _rng_state(self.rng),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeAggregator":
        agg = cls(d["capacity"], d["dim"], d["sigma"], d["sensitivity"], _rng_from_state(d["rng"]), d["clip_norm"])
        agg.count = d["count"]
        agg.stack = [[lv, np.array(s), None if nz is None else np.array(nz)] for lv, s, nz in d["stack"]]
        return agg


def tree_add(agg: TreeAggregator, grad) -> None:
    agg.add(grad)


def tree_sum(agg: TreeAggregator, t: int | None = None) -> np.ndarray:
    return agg.sum(t)


# ---------------------------------------------------------------- DP-FTRL


class FtrlBox:
    """Follow-the-regularized-leader with 0.5 * ||x - x1||^2 over a box."""

    def __init__(self, x1, lo, hi, eta: float, agg: TreeAggregator):
        self.x1 = np.asarray(x1, dtype=float).copy()
        self.lo = np.broadcast_to(np.asarray(lo, dtype=float), self.x1.shape).copy()
        self.hi = np.broadcast_to(np.asarray(hi, dtype=float), self.x1.shape).copy()
        if np.any(self.x1 < self.lo) or np.any(self.x1 > self.hi):
            raise ConfigError("initial iterate outside the box")
        self.eta = float(eta)
        self.agg = agg
        self.x = self.x1.copy()

    def step(self, grad) -> np.ndarray:
        self.agg.add(grad)
        G = self.agg.sum().reshape(self.x1.shape)
        self.x = np.clip(self.x1 - self.eta * G, self.lo, self.hi)
        return self.x

    def to_dict(self) -> dict:
        return {
            "kind": "box",
            "x1": self.x1.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "eta": self.eta,
            "x": self.x.tolist(),
            "agg": self.agg.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FtrlBox":
        st = cls(d["x1"], d["lo"], d["hi"], d["eta"], TreeAggregator.from_dict(d["agg"]))
        st.x = np.array(d["x"])
        return st


def ftrl_step_box(state: FtrlBox, grad) -> np.ndarray:
    return state.step(grad)


def floored_simplex_projection(w, floor: float) -> np.ndarray:
    """Clamp entries up to ``floor`` and rescale the rest so each row sums to 1."""
    w = np.atleast_2d(np.asarray(w, dtype=float)).copy()
    d = w.shape[1]
    if floor * d > 1 + 1e-12:
        raise ConfigError("floor too large for the simplex dimension")
    for row in w:
        row /= row.sum()
        clamped = np.zeros(d, dtype=bool)
        for _ in range(d):
            new = (row < floor) & ~clamped
            if not new.any():
                break
            clamped |= new
            free = ~clamped
            row[clamped] = floor
            rest = row[free].sum()
            if rest > 0:
                row[free] *= (1.0 - floor * clamped.sum()) / rest
    return w


class FtrlEntropic:
    """FTRL with regularizer m * <W, log W> over a product of floored simplices.

    The unconstrained minimiser is a per-row softmax of -(eta/m) * G, which is
    then projected onto {w >= gamma/d, sum w = 1}.
    """

    def __init__(self, m: int, d: int, eta: float, gamma: float, agg: TreeAggregator):
        if agg.dim != m * d:
            raise ConfigError("aggregator dimension must be m * d")
        self.m, self.d = int(m), int(d)
        self.eta = float(eta)
        self.gamma = float(gamma)
        self.agg = agg
        self.W = np.full((m, d), 1.0 / d)

    def step(self, grad) -> np.ndarray:
        self.agg.add(np.asarray(grad, dtype=float).ravel())
        G = self.agg.sum().reshape(self.m, self.d)
        z = -(self.eta / self.m) * G
        z -= z.max(axis=1, keepdims=True)
        W = np.exp(z)
        W /= W.sum(axis=1, keepdims=True)
        self.W = floored_simplex_projection(W, self.gamma / self.d)
        return self.W


def ftrl_step_entropic(state: FtrlEntropic, grad) -> np.ndarray:
    return state.step(grad)


# ---------------------------------------------------------------- COCOB and OGD


class Cocob:
    """COCOB-Backprop: per-coordinate coin betting without a learning rate.

    ``w`` is the current iterate and ``avg`` the running mean of iterates
    (the quantity the betting regret bound speaks about).
    """

    def __init__(self, w0, alpha: float = 100.0, eps: float = 1e-8):
        self.w0 = np.asarray(w0, dtype=float).copy()
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.w = self.w0.copy()
        self.reward = np.zeros_like(self.w0)
        self.bet = np.zeros_like(self.w0)
        self.neg_sum = np.zeros_like(self.w0)
        self.abs_sum = np.zeros_like(self.w0)
        self.max_scale = np.full_like(self.w0, self.eps)
        self.avg = self.w0.copy()
        self.t = 0

    def step(self, grad) -> np.ndarray:
        g = np.asarray(grad, dtype=float).reshape(self.w0.shape)
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
        self.max_scale = np.maximum(self.max_scale, np.abs(g))
        self.abs_sum += np.abs(g)
        self.neg_sum -= g
        self.reward = np.maximum(self.reward - self.bet * g, 0.0)
        frac = self.neg_sum / (
            self.max_scale * np.maximum(self.abs_sum + self.max_scale, self.alpha * self.max_scale)
        )
        self.bet = frac * (self.max_scale + self.reward)
        self.w = self.w0 + self.bet
        self.t += 1
        self.avg += (self.w - self.avg) / self.t
        return self.w

    _FIELDS = ("w0", "w", "reward", "bet", "neg_sum", "abs_sum", "max_scale", "avg")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in self._FIELDS}
        d.update(alpha=self.alpha, eps=self.eps, t=self.t)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Cocob":
        st = cls(d["w0"], d["alpha"], d["eps"])
        for k in cls._FIELDS:
            setattr(st, k, np.array(d[k], dtype=float))
        st.t = int(d["t"])
        return st


def cocob_step(state: Cocob, grad) -> np.ndarray:
    return state.step(grad)


def ogd_step(x, grad, eta, lo, hi) -> np.ndarray:
    """Projected gradient step; ``eta`` may be per-coordinate (one value per block)."""
    x = np.asarray(x, dtype=float)
    return np.clip(x - np.asarray(eta, dtype=float) * np.asarray(grad, dtype=float), lo, hi)


def ogd_step_sizes(B: float, sigma_min: float, sigma_max: float, m: int, T: int) -> tuple[float, float]:
    """Step sizes for the location and scale blocks of public-data OGD."""
    r = math.sqrt(m / T)
    return B * r, (sigma_max - sigma_min) / (4.0 * B + sigma_max) * r
