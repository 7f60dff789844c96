"""Prediction-quality losses: Psi, U, and the Laplace censored-regression loss."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from dpquant.core import SortedDataset, floor_qn, interval_edges, interval_gaps, optimal_interval
from dpquant.mechanisms import interval_log_weights
from dpquant.priors import Prior

LN2 = math.log(2.0)


# ---------------------------------------------------------------- Psi and U


def log_psi(x: SortedDataset, q: float, prior: Prior, eps: float | None = None) -> float:
    """log Psi; ``eps=None`` gives the limit variant (mass of the optimal interval)."""
    if eps is None:
        iv = optimal_interval(x, q)
        return float(prior.log_masses(iv.lo, iv.hi))
    return float(logsumexp(interval_log_weights(x, q, eps, prior)))


def psi(x: SortedDataset, q: float, prior: Prior, eps: float | None = None) -> float:
    """Inner product between the prior and the EM score.

    With ``eps`` this is sum_k exp(-eps * gap_k / 2) * prior(I_k); without it,
    the prior mass of the optimal interval.
    """
    if eps is None:
        iv = optimal_interval(x, q)
        return float(prior.masses(iv.lo, iv.hi))
    lo, hi = interval_edges(x)
    w = np.exp(-0.5 * eps * interval_gaps(x, q))
    return float(np.sum(w * prior.masses(lo, hi)))


def u_multi(
    x: SortedDataset,
    qs: Sequence[float],
    priors: Sequence[Prior],
    eps: float | Sequence[float] | None = None,
) -> float:
    """-log of the harmonic mean of per-quantile Psi values.

    Equals log(sum_i 1/Psi_i) - log m; returns inf when some Psi_i is zero.
    """
    m = len(qs)
    eps_list = [eps] * m if eps is None or np.isscalar(eps) else list(eps)
    us = np.array([-log_psi(x, q, p, e) for q, p, e in zip(qs, priors, eps_list)])
    if np.any(np.isposinf(us)):
        return math.inf
    return float(logsumexp(us) - math.log(m))


# ---------------------------------------------------------------- Laplace loss


def _one_sided(z):
    """-log P(Laplace(0,1) <= z) and its derivative in z."""
    if z <= 0:
        return LN2 - z, -1.0
    t = 0.5 * math.exp(-z)
    return -math.log1p(-t), -t / (1.0 - t)


def _log_sinh(s: float) -> float:
    return s + math.log(-math.expm1(-2.0 * s)) - LN2


def laplace_loss_and_grad(a: float, b: float, theta: float, phi: float) -> tuple[float, float, float]:
    """-log mass of Laplace(theta/phi, 1/phi) on (a, b], with d/dtheta and d/dphi.

    Infinite endpoints use the one-sided tail mass.
    """
    if a == -math.inf and b == math.inf:
        return 0.0, 0.0, 0.0
    if a == -math.inf:
        L, dz = _one_sided(b * phi - theta)
        return L, -dz, dz * b
    if b == math.inf:
        L, dz = _one_sided(theta - a * phi)
        return L, dz, -dz * a
    h, mid = 0.5 * (b - a), 0.5 * (a + b)
    s = h * phi
    c = theta - mid * phi
    if abs(c) <= s:
        ep, em = math.exp(c - s), math.exp(-c - s)
        D = -0.5 * (math.expm1(c - s) + math.expm1(-c - s))
        dD_dc = -0.5 * (ep - em)
        dD_ds = 0.5 * (ep + em)
        return -math.log(D), -dD_dc / D, -(dD_ds * h - dD_dc * mid) / D
    sg = 1.0 if c > 0 else -1.0
    return abs(c) - _log_sinh(s), sg, -mid * sg - h / math.tanh(s)


def laplace_loss(a: float, b: float, theta: float, phi: float) -> float:
    return laplace_loss_and_grad(a, b, theta, phi)[0]


def laplace_loss_grad(a: float, b: float, theta: float, phi: float) -> tuple[float, float]:
    _, dt, dp = laplace_loss_and_grad(a, b, theta, phi)
    return dt, dp


def proxy_loss(o_prev: float, g: float, theta: float, phi: float) -> tuple[float, float, float]:
    """Laplace loss on the width-``g`` interval centred at a released value."""
    if not g > 0:
        raise ValueError("granularity must be positive")
    return laplace_loss_and_grad(o_prev - 0.5 * g, o_prev + 0.5 * g, theta, phi)


# ---------------------------------------------------------------- featurized


def featurized_loss_intervals(intervals, f, V, phi):
    """Log-sum-exp over quantiles of Laplace losses with theta_i = <v_i, f>.

    Args:
        intervals: m pairs (a_i, b_i).
        f: feature vector of length d.
        V: (m, d) weights; phi: length-m scales.

    Returns:
        (loss, dV, dphi).
    """
    f = np.asarray(f, dtype=float)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    phi = np.asarray(phi, dtype=float)
    theta = V @ f
    parts = [laplace_loss_and_grad(a, b, t, p) for (a, b), t, p in zip(intervals, theta, phi)]
    losses = np.array([p[0] for p in parts])
    dth = np.array([p[1] for p in parts])
    dph = np.array([p[2] for p in parts])
    loss = float(logsumexp(losses))
    w = np.exp(losses - loss)
    return loss, (w * dth)[:, None] * f[None, :], w * dph


def featurized_loss(x: SortedDataset, qs: Sequence[float], f, V, phi):
    ivs = [optimal_interval(x, q) for q in qs]
    return featurized_loss_intervals([(iv.lo, iv.hi) for iv in ivs], f, V, phi)


def featurized_proxy_loss(outputs: Sequence[float], g: float, f, V, phi):
    return featurized_loss_intervals([(o - 0.5 * g, o + 0.5 * g) for o in outputs], f, V, phi)


# ---------------------------------------------------------------- piecewise-constant priors


def bin_scores(x: SortedDataset, q: float, eps: float, a: float, b: float, d: int) -> np.ndarray:
    """(d/(b-a)) * integral over each bin of exp(-eps * gap / 2), exactly."""
    edges = np.linspace(a, b, d + 1)
    inner = x.values[(x.values > a) & (x.values < b)]
    pts = np.union1d(edges, inner)
    left, right = pts[:-1], pts[1:]
    below = np.searchsorted(x.values, left, side="right")  # #{x < o} for o in (left, right)
    g = np.abs(below - floor_qn(q, x.n))
    contrib = np.exp(-0.5 * eps * g) * (right - left)
    bins = np.clip(np.searchsorted(edges, left, side="right") - 1, 0, d - 1)
    s = np.zeros(d)
    np.add.at(s, bins, contrib)
    return s * d / (b - a)


def discrete_loss(x: SortedDataset, qs: Sequence[float], eps: Sequence[float], W, a: float, b: float):
    """log sum_i 1/<s_i, W_i> - log m, and its gradient in W."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    m, d = W.shape
    S = np.stack([bin_scores(x, q, e, a, b, d) for q, e in zip(qs, eps)])
    inner = np.sum(S * W, axis=1)
    if np.any(inner <= 0):
        raise ValueError("zero inner product between prior and scores")
    inv = 1.0 / inner
    total = inv.sum()
    grad = -(inv**2)[:, None] * S / total
    return float(math.log(total) - math.log(m)), grad
