"""Fast invariant checks runnable without pytest (``dpquant selftest``)."""

from __future__ import annotations

import math

import numpy as np

from dpquant.core import SortedDataset, gap, make_rng, optimal_interval, restrict
from dpquant.learning import TreeAggregator, noise_scale, sensitivity_discrete
from dpquant.losses import laplace_loss, laplace_loss_grad
from dpquant.mechanisms import (
    ReleasePlan,
    datapoint_budgets,
    default_arity,
    path_budgets,
    release_multi,
    release_single,
)
from dpquant.priors import Cauchy, Laplace, Uniform, adapt_edge, mix


def _gap_examples():
    x = SortedDataset([1, 2, 3, 4, 5])
    assert gap(x, 0.5, 2.5) == 0 and gap(x, 0.5, 0.5) == 2 and gap(x, 0.5, 4.5) == 2
    iv = optimal_interval(x, 0.9)
    assert (iv.lo, iv.hi) == (4.0, 5.0)
    sub, off = restrict(x, 2, 3)
    assert sub.n == 0 and off == 2


def _prior_masses():
    assert abs(float(Cauchy(0, 1).masses(0, 1)) - 0.25) < 1e-15
    assert abs(float(Laplace(0, 1).masses(-1, 1)) - (1 - math.exp(-1))) < 1e-15
    e = adapt_edge(Uniform(0, 10), 2, 4)
    assert abs(e.atom_lo - 0.2) < 1e-15 and abs(e.atom_hi - 0.6) < 1e-15
    mx = mix(Uniform(0, 10), Cauchy(0, 1), 0.5)
    assert abs(float(mx.masses(0, 1)) - 0.175) < 1e-15


def _em_frequency():
    x = SortedDataset([1, 2, 3, 4, 5])
    o = release_single(x, 0.5, 2.0, Uniform(0, 6), make_rng(1), size=20000)
    target = 1.0 / (1 + 2 * math.exp(-1) + 2 * math.exp(-2) + math.exp(-3))
    assert abs(np.mean((o > 2) & (o <= 3)) - target) < 0.02


def _laplace_loss():
    assert abs(laplace_loss(-1, 1, 0, 1) - (1 - math.log(math.e - 1))) < 1e-12
    assert abs(laplace_loss(-1, 1, 3, 1) - (3 - math.log(math.sinh(1)))) < 1e-12
    assert laplace_loss_grad(-1, 1, 3, 1)[0] == 1.0


def _accounting():
    rng = make_rng(5)
    x = SortedDataset(rng.standard_normal(200))
    for m in (1, 4, 9, 15):
        for K in (2, 3, default_arity(m)):
            plan = ReleasePlan([i / (m + 1) for i in range(1, m + 1)], 1.0, [Cauchy(0, 1)] * m, K)
            res = release_multi(x, plan, rng)
            assert all(abs(v - 1.0) < 1e-9 for v in path_budgets(res.budget_log).values())
            assert datapoint_budgets(res.budget_log, x.n).max() <= 1.0 + 1e-9


def _tree():
    agg = TreeAggregator(64, 2, 0.0, 1.0, make_rng(0))
    for t in range(1, 65):
        agg.add([1.0, 0.0])
        assert agg.sum()[0] == t and agg.noisy_nodes() == bin(t).count("1")


def _formulas():
    assert abs(noise_scale(1.0, 1e-6, 1024) - math.sqrt(20 * math.log(1e6))) < 1e-12
    assert abs(sensitivity_discrete(10, 0.1, 0.05) - 100 * math.expm1(0.05)) < 1e-12


CHECKS = [_gap_examples, _prior_masses, _em_frequency, _laplace_loss, _accounting, _tree, _formulas]


def run() -> tuple[int, int, list[str]]:
    """Run all checks; returns (passed, total, failure names)."""
    failed = []
    for chk in CHECKS:
        try:
            chk()
        except Exception:  # noqa: BLE001 - report any failure by name
            failed.append(chk.__name__.lstrip("_"))
    return len(CHECKS) - len(failed), len(CHECKS), failed
