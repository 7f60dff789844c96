import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from dpquant.core import SortedDataset, make_rng, min_separation, optimal_interval
from dpquant.losses import (
    bin_scores,
    discrete_loss,
    featurized_loss,
    featurized_loss_intervals,
    featurized_proxy_loss,
    laplace_loss,
    laplace_loss_and_grad,
    laplace_loss_grad,
    log_psi,
    proxy_loss,
    psi,
    u_multi,
)
from dpquant.priors import Cauchy, Laplace, Uniform, mix

B, SMIN, SMAX = 10.0, 0.01, 10.0


def laplace_oracle(a, b, theta, phi):
    """-log P(a < Y <= b) for Y ~ Laplace(theta/phi, 1/phi), via scipy's log CDF/SF."""
    d = stats.laplace(theta / phi, 1 / phi)
    with np.errstate(invalid="ignore"):
        return _oracle_branch(d, a, b, theta / phi)


def _oracle_branch(d, a, b, loc):
    if b <= loc:
        return -(d.logcdf(b) + math.log(-math.expm1(d.logcdf(a) - d.logcdf(b))))
    if a >= loc:
        return -(d.logsf(a) + math.log(-math.expm1(d.logsf(b) - d.logsf(a))))
    return -math.log(d.cdf(b) - d.cdf(a))


def test_psi_examples(five):
    expected = (1 + 2 * math.exp(-1) + 2 * math.exp(-2) + math.exp(-3)) / 6
    assert psi(five, 0.5, Uniform(0, 6), 2.0) == pytest.approx(expected, abs=1e-15)
    # the commonly quoted 0.342704 is 2.05622/6 rounded early; the exact sum is 0.3427028
    assert expected == pytest.approx(0.342704, abs=2e-6)
    assert psi(five, 0.5, Uniform(2, 3)) == 1.0
    assert psi(five, 0.5, Uniform(0, 10)) == pytest.approx(0.1, abs=1e-15)
    assert log_psi(five, 0.5, Uniform(0, 6), 2.0) == pytest.approx(math.log(expected), abs=1e-14)


def test_u_multi_examples(five):
    assert u_multi(five, [0.5, 0.5], [Uniform(0, 10)] * 2) == pytest.approx(-math.log(0.1), abs=1e-14)
    assert u_multi(five, [0.5, 0.5], [Uniform(2, 3), Uniform(2, 4)]) == pytest.approx(math.log(1.5), abs=1e-14)
    assert u_multi(five, [0.3], [Cauchy(0, 1)], 1.0) == pytest.approx(-log_psi(five, 0.3, Cauchy(0, 1), 1.0))
    assert u_multi(five, [0.5], [Uniform(10, 11)]) == math.inf


def test_u_multi_stable_for_tiny_psi(five):
    u = u_multi(five, [0.5, 0.5], [Laplace(1e6, 1.0), Laplace(2e6, 1.0)])
    assert math.isfinite(u) and u > 9e5


@settings(max_examples=60)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=30, unique=True),
    st.floats(0.01, 0.99),
    st.floats(0.01, 5),
    st.floats(1.01, 4),
)
def test_psi_monotone_in_eps(vals, q, eps, factor):
    x = SortedDataset(vals)
    p = Cauchy(1.0, 3.0)
    hi_eps, lo_eps = psi(x, q, p, eps * factor), psi(x, q, p, eps)
    assert hi_eps <= lo_eps * (1 + 1e-12)
    assert psi(x, q, p) <= hi_eps * (1 + 1e-12)


@given(st.floats(0, 1), st.floats(0.1, 5))
def test_psi_linear_in_mixture(lam, eps):
    x = SortedDataset(make_rng(0).standard_normal(40))
    p, r = Laplace(0.3, 0.5), Cauchy(0, 2)
    lhs = psi(x, 0.4, mix(p, r, lam), eps)
    rhs = (1 - lam) * psi(x, 0.4, p, eps) + lam * psi(x, 0.4, r, eps)
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-300)


@settings(max_examples=100)
@given(st.integers(2, 40), st.floats(-100, 100), st.floats(0.1, 50), st.floats(0.01, 0.99), st.integers(0, 10**6))
def test_cauchy_lower_bound(n, mid, R, q, seed):
    vals = mid + R * (2 * make_rng(seed).random(n) - 1)
    assume(len(set(vals)) == n)
    x = SortedDataset(vals)
    a, b = mid - R, mid + R
    bound = 2 * (b - a) * min_separation(x) / math.pi / ((b - a) ** 2 + 4 * R**2)
    assert psi(x, q, Cauchy((a + b) / 2, (b - a) / 2)) >= bound * (1 - 1e-12)


# ---------------------------------------------------------------- Laplace loss


def test_laplace_loss_examples():
    assert laplace_loss(-1, 1, 0, 1) == pytest.approx(1 - math.log(math.e - 1), abs=1e-12)
    assert laplace_loss(-1, 1, 0, 1) == pytest.approx(0.4586751, abs=1e-7)
    assert laplace_loss(-1, 1, 3, 1) == pytest.approx(3 - math.log(math.sinh(1)), abs=1e-12)
    # 3 - log(sinh 1) = 2.83856064; the 7-digit value 2.8385602 is off in the last place
    assert laplace_loss(-1, 1, 3, 1) == pytest.approx(2.8385606, abs=1e-7)
    assert laplace_loss(-1, 1, 3, 1) == pytest.approx(-math.log((math.exp(-2) - math.exp(-4)) / 2), abs=1e-12)


@pytest.mark.parametrize("a,b,phi", [(-1, 1, 1), (0.5, 2.0, 3.0), (-7, -2, 0.2)])
def test_branch_continuity(a, b, phi):
    for edge in (a * phi, b * phi):
        inside = laplace_loss_and_grad(a, b, edge, phi)
        nudged = laplace_loss_and_grad(a, b, edge + (1e-12 if edge == b * phi else -1e-12), phi)
        np.testing.assert_allclose(inside, nudged, rtol=1e-9, atol=1e-9)


def test_grad_examples():
    assert laplace_loss_grad(-1, 1, 0, 1)[0] == pytest.approx(0.0, abs=1e-15)
    assert laplace_loss_grad(-1, 1, 3, 1)[0] == 1.0
    assert laplace_loss_grad(-1, 1, -3, 1)[0] == -1.0


def test_infinite_endpoints_use_tails():
    assert laplace_loss(-math.inf, 0.0, 0.0, 1.0) == pytest.approx(math.log(2), abs=1e-15)
    assert laplace_loss(2.0, math.inf, 0.0, 1.0) == pytest.approx(laplace_oracle(2.0, math.inf, 0.0, 1.0), abs=1e-12)
    assert laplace_loss(-math.inf, math.inf, 5.0, 2.0) == 0.0


in_box = st.tuples(
    st.floats(-B, B), st.floats(1e-3, 2 * B), st.floats(-B, B), st.floats(1 / SMAX, 1 / SMIN)
)


@settings(max_examples=300)
@given(in_box)
def test_laplace_loss_matches_scipy(params):
    a, width, nu, phi = params
    b = a + width
    theta = nu * phi
    got = laplace_loss(a, b, theta, phi)
    ref = laplace_oracle(a, b, theta, phi)
    assume(math.isfinite(ref))
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-8)


@settings(max_examples=300)
@given(in_box)
def test_gradient_bounds(params):
    a, width, nu, phi = params
    b = min(a + width, B)
    assume(b > a)
    dt, dp = laplace_loss_grad(a, b, nu * phi, phi)
    assert abs(dt) <= 1 + 1e-12
    assert abs(dp) <= 4 * B + SMAX


@settings(max_examples=200)
@given(st.floats(-3, 3), st.floats(0.01, 4), st.floats(-20, 20), st.floats(0.1, 20), st.floats(-20, 20), st.floats(0.1, 20))
def test_midpoint_convexity(a, width, t1, p1, t2, p2):
    b = a + width
    f1, f2 = laplace_loss(a, b, t1, p1), laplace_loss(a, b, t2, p2)
    fm = laplace_loss(a, b, (t1 + t2) / 2, (p1 + p2) / 2)
    assert fm <= (f1 + f2) / 2 + 1e-10 * max(1.0, abs(f1), abs(f2))


def _fd(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-2)))


def test_laplace_grad_finite_differences():
    r = make_rng(11)
    for _ in range(100):
        a = r.uniform(-5, 5)
        b = a + r.uniform(0.05, 5)
        phi = r.uniform(0.2, 5)
        theta = r.uniform(-8, 8) * phi
        g = laplace_loss_grad(a, b, theta, phi)
        fd = _fd(lambda z: laplace_loss(a, b, z[0], z[1]), [theta, phi])
        assert _rel_err(g, fd) <= 1e-5


def test_proxy_loss_examples():
    assert proxy_loss(10, 1, 2.0, 0.5) == laplace_loss_and_grad(9.5, 10.5, 2.0, 0.5)
    assert proxy_loss(10, 1, 2.0, 0.5)[0] == laplace_loss(9.5, 10.5, 2.0, 0.5)
    for phi in (0.3, 1.0, 2.5):
        res = optimize.minimize_scalar(lambda t: proxy_loss(10, 1, t, phi)[0], bounds=(0, 60), method="bounded",
                                       options={"xatol": 1e-9})
        assert res.x == pytest.approx(10 * phi, abs=1e-5)
    with pytest.raises(ValueError):
        proxy_loss(0, 0, 0, 1)


# ---------------------------------------------------------------- featurized


def test_featurized_reduces_to_laplace_loss():
    x = SortedDataset(make_rng(2).standard_normal(30))
    iv = optimal_interval(x, 0.5)
    loss, dV, dphi = featurized_loss(x, [0.5], [1.0], [[0.7]], [1.3])
    assert loss == pytest.approx(laplace_loss(iv.lo, iv.hi, 0.7, 1.3), abs=1e-14)
    dt, dp = laplace_loss_grad(iv.lo, iv.hi, 0.7, 1.3)
    assert dV[0, 0] == pytest.approx(dt) and dphi[0] == pytest.approx(dp)


def test_featurized_softmax_weights_sum_to_one():
    # shifting every theta_i by c moves the loss by the weighted sum of dtheta_i
    ivs = [(-1.0, 0.0), (0.0, 0.5), (0.5, 2.0)]
    f = np.array([1.0])
    V = np.array([[0.1], [0.3], [-0.2]])
    phi = np.array([1.0, 2.0, 0.5])
    parts = [laplace_loss_and_grad(a, b, t, p) for (a, b), t, p in zip(ivs, V[:, 0], phi)]
    losses = np.array([p[0] for p in parts])
    w = np.exp(losses - np.logaddexp.reduce(losses))
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    _, dV, _ = featurized_loss_intervals(ivs, f, V, phi)
    np.testing.assert_allclose(dV[:, 0], w * np.array([p[1] for p in parts]), rtol=1e-13)


def test_featurized_grad_finite_differences():
    r = make_rng(5)
    x = SortedDataset(r.standard_normal(100))
    qs = [0.1, 0.5, 0.9]
    for _ in range(100):
        f = r.standard_normal(3)
        V = r.uniform(-2, 2, (3, 3))
        phi = r.uniform(0.3, 3, 3)
        _, dV, dphi = featurized_loss(x, qs, f, V, phi)
        fdV = _fd(lambda z: featurized_loss(x, qs, f, z.reshape(3, 3), phi)[0], V.ravel())
        fdp = _fd(lambda z: featurized_loss(x, qs, f, V, z)[0], phi)
        assert _rel_err(dV.ravel(), fdV) <= 1e-5
        assert _rel_err(dphi, fdp) <= 1e-5


def test_featurized_proxy_uses_centered_intervals():
    out = [0.0, 2.0]
    a = featurized_proxy_loss(out, 0.5, [1.0], [[0.1], [0.2]], [1.0, 1.0])[0]
    b = featurized_loss_intervals([(-0.25, 0.25), (1.75, 2.25)], [1.0], [[0.1], [0.2]], [1.0, 1.0])[0]
    assert a == b


# ---------------------------------------------------------------- piecewise-constant priors


def test_bin_scores_match_quadrature():
    x = SortedDataset([0.3, 1.1, 1.2, 2.9, 3.5])
    a, b, d, eps, q = 0.0, 4.0, 5, 1.3, 0.4
    s = bin_scores(x, q, eps, a, b, d)
    edges = np.linspace(a, b, d + 1)
    t = math.floor(q * x.n + 1e-9)
    for j in range(d):
        brk = [v for v in x.values if edges[j] < v < edges[j + 1]]
        val, _ = integrate.quad(
            lambda o: math.exp(-eps / 2 * abs(x.count_below(o) - t)), edges[j], edges[j + 1], points=brk or None,
            epsabs=1e-13,
        )
        assert s[j] == pytest.approx(val * d / (b - a), abs=1e-10)


def test_discrete_loss_uniform_weights_equal_u_multi():
    x = SortedDataset(make_rng(8).uniform(-5, 5, 25))
    qs, eps = [0.25, 0.5, 0.75], [0.5, 0.5, 0.5]
    W = np.full((3, 6), 1 / 6)
    loss, _ = discrete_loss(x, qs, eps, W, -5, 5)
    assert loss == pytest.approx(u_multi(x, qs, [Uniform(-5, 5)] * 3, eps), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 1.0), st.integers(2, 8), st.integers(0, 10**6))
def test_discrete_gradient_l1_bound(gamma, d, seed):
    r = make_rng(seed)
    x = SortedDataset(r.uniform(-1, 1, 20))
    W = r.dirichlet(np.ones(d), 2)
    W = gamma / d + (1 - gamma) * W  # entries >= gamma/d, rows sum to 1
    _, g = discrete_loss(x, [0.3, 0.7], [1.0, 1.0], W, -1, 1)
    assert np.abs(g).sum() <= d / gamma * (1 + 1e-12)


def test_discrete_grad_finite_differences():
    r = make_rng(6)
    x = SortedDataset(r.uniform(-3, 3, 40))
    qs, eps = [0.2, 0.5, 0.8], [0.4, 0.8, 1.6]
    for _ in range(100):
        W = r.dirichlet(np.ones(4), 3)
        _, g = discrete_loss(x, qs, eps, W, -3, 3)
        fd = _fd(lambda z: discrete_loss(x, qs, eps, z.reshape(3, 4), -3, 3)[0], W.ravel())
        assert _rel_err(g.ravel(), fd) <= 1e-5


def test_discrete_zero_inner_product():
    x = SortedDataset([0.5])
    with pytest.raises(ValueError):
        discrete_loss(x, [0.5], [1.0], np.zeros((1, 2)), 0, 1)
