"""Exponential-mechanism release of one or many quantiles with priors."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dpquant.core import (
    ConfigError,
    QuantileList,
    ReleaseError,
    SortedDataset,
    gaps,
    interval_edges,
    interval_gaps,
    restrict,
)
from dpquant.priors import Prior, adapt_conditional, adapt_edge

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
ADAPTATIONS = ("edge", "conditional")


def interval_log_weights(x: SortedDataset, q: float, eps: float, prior: Prior) -> np.ndarray:
    """log mass(I_k) - (eps/2) * gap(I_k) for k = 0..n."""
    lo, hi = interval_edges(x)
    return prior.log_masses(lo, hi) - 0.5 * eps * interval_gaps(x, q)


def release_single(
    x: SortedDataset,
    q: float,
    eps: float,
    prior: Prior,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Exponential mechanism with base measure ``prior``.

    Picks interval I_k with probability proportional to
    exp(-eps * gap_k / 2) * prior(I_k) via Gumbel-max, then draws from the
    prior conditioned on I_k. With ``size`` set, returns that many
    independent releases.
    """
    if not eps > 0:
        raise ConfigError(f"epsilon must be positive, got {eps}")
    logw = interval_log_weights(x, q, eps, prior)
    if not np.any(np.isfinite(logw)):
        raise ReleaseError("prior assigns zero mass to every interval")
    lo, hi = interval_edges(x)
    if size is None:
        k = int(np.argmax(logw + rng.gumbel(size=logw.size)))
        return prior.sample_in(lo[k], hi[k], rng)
    ks = np.argmax(logw[None, :] + rng.gumbel(size=(size, logw.size)), axis=1)
    out = np.empty(size)
    for k in np.unique(ks):
        sel = ks == k
        out[sel] = prior.sample_in(lo[k], hi[k], rng, int(sel.sum()))
    return out


# ---------------------------------------------------------------- plans and budgets


def default_arity(m: int) -> int:
    """ceil(exp(sqrt(ln 2 * ln(m + 1)))), at least 2."""
    if m < 1:
        raise ConfigError("m must be at least 1")
    v = math.exp(math.sqrt(math.log(2.0) * math.log(m + 1.0)))
    return max(2, math.ceil(v - 1e-9))


def ceil_log(base: int, v: int) -> int:
    """Smallest L >= 0 with base**L >= v, in exact integer arithmetic."""
    L, p = 0, 1
    while p < v:
        p *= base
        L += 1
    return L


def split_indices(j: Sequence[int], K: int) -> tuple[list[int], list[list[int]]]:
    """Node indices and the K child groups for index list ``j``."""
    j = list(j)
    if len(j) < K:
        return j, []
    pos = [math.ceil(r * len(j) / K) for r in range(1, K)]  # 1-based
    node = [j[p - 1] for p in pos]
    bounds = [0] + pos + [len(j) + 1]
    groups = [j[bounds[r] : bounds[r + 1] - 1] for r in range(K)]
    return node, groups


def tree_height(m: int, K: int) -> int:
    """Number of levels in the (data-independent) quantile tree."""

    def h(j):
        if not j:
            return 0
        _, groups = split_indices(j, K)
        return 1 + max((h(g) for g in groups), default=0)

    return h(list(range(m)))


def _depth_weight(k: int, power: float) -> float:
    return float(k) ** (-power)


@dataclass(frozen=True)
class ReleasePlan:
    """Quantiles, priors, and budget configuration for ``release_multi``.

    Args:
        schedule: "uniform" or "power" (with ``power`` > 1).
        literal_budgets: use the literal per-call budgets (divides by K-1 twice
            for power schedules). Paths need not total ``epsilon``: power
            schedules underspend, and conditional adaptation can overspend on
            incomplete trees (1.5 * epsilon at m=4).
    """

    qs: QuantileList
    epsilon: float
    priors: tuple
    arity: int | None = None
    adaptation: str = "edge"
    schedule: str = "uniform"
    power: float | None = None
    literal_budgets: bool = False

    def __post_init__(self):
        if not isinstance(self.qs, QuantileList):
            object.__setattr__(self, "qs", QuantileList(self.qs))
        object.__setattr__(self, "priors", tuple(self.priors))
        if len(self.priors) != self.qs.m:
            raise ConfigError(f"{self.qs.m} quantiles but {len(self.priors)} priors")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.arity is None:
            object.__setattr__(self, "arity", default_arity(self.qs.m))
        if self.arity < 2:
            raise ConfigError("arity must be at least 2")
        if self.adaptation not in ADAPTATIONS:
            raise ConfigError(f"adaptation must be one of {ADAPTATIONS}")
        if self.schedule == "power":
            if self.power is None or not self.power > 1:
                raise ConfigError("power schedule needs p > 1")
        elif self.schedule != "uniform":
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    @property
    def m(self) -> int:
        return self.qs.m

    @property
    def _p(self) -> float:
        return self.power if self.schedule == "power" else 0.0

    def node_budget(self, remaining: float, depth: int, height: int) -> float:
        """Composition-exact budget for a node at ``depth`` with ``height`` levels below it (inclusive).

        Every root-to-leaf path spends exactly epsilon; on complete trees this
        equals the textbook eps / depth (uniform) or eps_bar / k**p (power).
        """
        w = [_depth_weight(k, self._p) for k in range(depth, depth + height)]
        return remaining * w[0] / math.fsum(w)

    def strict_call_budget(self, depth: int, calls: int) -> float:
        K, m, eps = self.arity, self.m, self.epsilon
        if self.schedule == "uniform":
            if K == 2:
                levels = ceil_log(2, m + 1) if self.adaptation == "edge" else max(1, ceil_log(2, m))
            else:
                levels = max(1, ceil_log(K, m + 1))
            return eps / levels / calls
        levels = max(1, ceil_log(K, m + 1))
        eps_bar = eps / (K - 1) / math.fsum(_depth_weight(k, self.power) for k in range(1, levels + 1))
        return eps_bar * _depth_weight(depth, self.power) / calls


def budget_schedule(
    m: int,
    K: int,
    eps: float,
    schedule: str = "uniform",
    power: float | None = None,
    literal_budgets: bool = False,
    adaptation: str = "edge",
) -> list[float]:
    """Per-call budgets by depth along the deepest root-to-leaf path (full nodes of K-1 calls)."""
    plan = ReleasePlan(
        QuantileList.uniform(m), eps, [None] * m, K, adaptation, schedule, power, literal_budgets
    )
    H = tree_height(m, K)
    calls = min(K - 1, m)
    if literal_budgets:
        return [plan.strict_call_budget(k, calls) for k in range(1, H + 1)]
    out, remaining = [], eps
    for k in range(1, H + 1):
        b = plan.node_budget(remaining, k, H - k + 1)
        remaining -= b
        out.append(b / calls)
    return out


# ---------------------------------------------------------------- tree release


@dataclass(frozen=True)
class BudgetEntry:
    node: int
    parent: int  # -1 at the root
    depth: int
    quantile: int
    epsilon: float  # per-call budget
    data_lo: int  # restricted data are x[data_lo:data_hi]
    data_hi: int
    leaf: bool


@dataclass
class ReleaseResult:
    outputs: tuple
    qs: tuple
    budget_log: list = field(default_factory=list)
    gaps: list | None = None

    def to_jsonl(self) -> str:
        by_q = {e.quantile: e for e in self.budget_log}
        lines = []
        for i, (q, o) in enumerate(zip(self.qs, self.outputs)):
            e = by_q.get(i)
            rec = {"quantile": q, "output": o, "epsilon": e.epsilon if e else None, "depth": e.depth if e else None}
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"


def release_multi(x: SortedDataset, plan: ReleasePlan, rng: np.random.Generator) -> ReleaseResult:
    """Tree-structured release of all quantiles in ``plan``.

    Each node picks up to K-1 quantile indices, restricts the data to the
    open interval between its ancestors' outputs, adapts the priors to that
    interval and runs the exponential mechanism on relative quantiles. Its
    sorted outputs split the remaining indices among K children.
    """
    K, qs = plan.arity, plan.qs.qs
    adapt = adapt_edge if plan.adaptation == "edge" else adapt_conditional
    outputs = [None] * plan.m
    log: list[BudgetEntry] = []
    heights: dict[tuple, int] = {}

    def height(j):
        key = tuple(j)
        if key not in heights:
            _, groups = split_indices(j, K)
            heights[key] = 0 if not j else 1 + max((height(g) for g in groups), default=0)
        return heights[key]

    counter = [0]

    def visit(j, q_lo, q_hi, a, b, depth, remaining, parent):
        if not j:
            return
        node_id = counter[0]
        counter[0] += 1
        idx, groups = split_indices(j, K)
        if plan.literal_budgets:
            per_call = plan.strict_call_budget(depth, len(idx))
            spent = per_call * len(idx)
        else:
            spent = plan.node_budget(remaining, depth, height(j))
            per_call = spent / len(idx)
        xr, offset = restrict(x, a, b)
        width = q_hi - q_lo
        outs = []
        for i in idx:
            qt = (qs[i] - q_lo) / width if width > 0 else 0.5
            qt = min(max(qt, 0.0), 1.0)
            prior = adapt(plan.priors[i], a, b)
            outs.append(release_single(xr, qt, per_call, prior, rng))
        outs.sort()
        is_leaf = not any(groups)
        for i, o in zip(idx, outs):
            outputs[i] = o
            log.append(BudgetEntry(node_id, parent, depth, i, per_call, offset, offset + xr.n, is_leaf))
        edges = [a] + outs + [b]
        qb = [q_lo] + [qs[i] for i in idx] + [q_hi]
        for r, g in enumerate(groups):
            visit(g, qb[r], qb[r + 1], edges[r], edges[r + 1], depth + 1, remaining - spent, node_id)

    visit(list(range(plan.m)), 0.0, 1.0, -np.inf, np.inf, 1, plan.epsilon, -1)
    return ReleaseResult(tuple(outputs), tuple(qs), log, gaps(x, qs, outputs))


def path_budgets(log: Sequence[BudgetEntry]) -> dict[int, float]:
    """Total budget spent along the root path of every leaf node."""
    node_cost: dict[int, float] = {}
    parent: dict[int, int] = {}
    leaves = set()
    for e in log:
        node_cost[e.node] = node_cost.get(e.node, 0.0) + e.epsilon
        parent[e.node] = e.parent
        if e.leaf:
            leaves.add(e.node)
    out = {}
    for leaf in sorted(leaves):
        total, v = [], leaf
        while v != -1:
            total.append(node_cost[v])
            v = parent[v]
        out[leaf] = math.fsum(total)
    return out


def datapoint_budgets(log: Sequence[BudgetEntry], n: int) -> np.ndarray:
    """Sum of per-call budgets over the calls whose restricted data hold each point."""
    diff = np.zeros(n + 1)
    for e in log:
        diff[e.data_lo] += e.epsilon
        diff[e.data_hi] -= e.epsilon
    return np.cumsum(diff)[:n]


# ---------------------------------------------------------------- bounds


def theoretical_gap_bound(m: int, eps: float, beta: float, psi: float, variant: str = "single") -> float:
    """Closed-form high-probability gap bounds (diagnostic only).

    variant: "single", "binary" (edge adaptation, K=2), "kary" (edge
    adaptation, default arity) or "conditional" (K=2, conditional adaptation).
    """
    if variant == "single":
        return 2.0 / eps * math.log(1.0 / (beta * psi))
    logf = math.log(m / (beta * psi))
    if variant == "binary":
        return 2.0 / eps * GOLDEN ** math.log2(m + 1) * ceil_log(2, m + 1) * logf
    if variant == "kary":
        return 2.0 * math.pi**2 / eps * math.exp(2.0 * math.sqrt(math.log(2) * math.log(m + 1))) * logf
    if variant == "conditional":
        return 2.0 / eps * ceil_log(2, m) ** 2 * logf
    raise ConfigError(f"unknown bound variant {variant!r}")
