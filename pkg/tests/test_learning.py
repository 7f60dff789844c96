import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpquant.core import ConfigError, SortedDataset, make_rng
from dpquant.learning import (
    Cocob,
    FtrlBox,
    FtrlEntropic,
    TreeAggregator,
    cocob_step,
    eps_tilde,
    floored_simplex_projection,
    ftrl_step_box,
    ftrl_step_entropic,
    noise_scale,
    ogd_step,
    ogd_step_sizes,
    sensitivity_discrete,
    tree_add,
    tree_sum,
)
from dpquant.losses import discrete_loss


# ---------------------------------------------------------------- tree aggregation


def test_tree_exact_prefix_sums():
    agg = TreeAggregator(8, 4, 0.0, 1.0, make_rng(0))
    for i in range(3):
        tree_add(agg, np.eye(4)[i])
    np.testing.assert_array_equal(tree_sum(agg, 3), [1, 1, 1, 0])


def test_tree_node_count_is_popcount():
    agg = TreeAggregator(300, 1, 1.0, 1.0, make_rng(0))
    for t in range(1, 301):
        agg.add([0.5])
        agg.sum()
        assert agg.noisy_nodes() == bin(t).count("1") <= math.ceil(math.log2(t + 1))


def test_tree_capacity_and_clipping():
    agg = TreeAggregator(1, 2, 0.0, 1.0, make_rng(0))
    agg.add([6.0, 8.0])
    np.testing.assert_allclose(agg.sum(), [0.6, 0.8])
    assert np.linalg.norm(agg.sum()) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        agg.add([0.0, 0.0])
    with pytest.raises(ValueError):
        agg.sum(5)


def test_tree_noise_variance_band():
    # sigma=1, sensitivity=1, t=1024 -> one noisy node; band check at several t
    reps = 4000
    for t in (3, 7, 12):
        out = np.empty(reps)
        for r in range(reps):
            agg = TreeAggregator(16, 1, 1.0, 1.0, make_rng([t, r]))
            for _ in range(t):
                agg.add([0.0])
            out[r] = agg.sum()[0]
        k = bin(t).count("1")
        ss = float(np.sum(out**2)) / k
        lo, hi = stats.chi2.ppf([0.005, 0.995], reps)
        assert lo <= ss <= hi


def test_tree_state_roundtrip_resumes_exactly():
    a = TreeAggregator(64, 3, 0.5, 2.0, make_rng(7))
    g = make_rng(1).standard_normal((40, 3))
    for v in g[:20]:
        a.add(v)
        a.sum()
    b = TreeAggregator.from_dict(a.to_dict())
    for v in g[20:]:
        a.add(v)
        b.add(v)
        np.testing.assert_array_equal(a.sum(), b.sum())


# ---------------------------------------------------------------- formulas


def test_noise_scale_examples():
    assert noise_scale(1.0, 1e-6, 1024) == pytest.approx(math.sqrt(2 * 10 * math.log(1e6)), rel=1e-15)
    assert noise_scale(1.0, 1e-6, 1024) == pytest.approx(16.622, abs=1e-3)
    assert noise_scale(0.5, 1e-3, 1) == pytest.approx(math.sqrt(2 * math.log(1e3)) / 0.5, rel=1e-15)
    with pytest.raises(ConfigError):
        noise_scale(3.0, 0.5, 10)
    with pytest.raises(ConfigError):
        noise_scale(1.0, 1.5, 10)


def test_sensitivity_examples():
    assert sensitivity_discrete(10, 0.1, 0.05) == pytest.approx(100 * math.expm1(0.05), rel=1e-15)
    assert sensitivity_discrete(10, 0.1, 0.05) == pytest.approx(5.1271, abs=1e-4)
    assert sensitivity_discrete(10, 0.1, 10.0) == pytest.approx(200.0)
    assert eps_tilde([0.3]) == 0.3
    assert eps_tilde([0.3, 0.5]) == 1.0
    with pytest.raises(ConfigError):
        sensitivity_discrete(10, 0.0, 1.0)


# ---------------------------------------------------------------- DP-FTRL


def _box(x1, lo, hi, eta, T=1000, sigma=0.0):
    return FtrlBox(x1, lo, hi, eta, TreeAggregator(T, np.size(x1), sigma, 1.0, make_rng(0), clip_norm=1e9))


def test_ftrl_box_examples():
    st_ = _box([0.2, 0.4], 0, 1, 0.1)
    for _ in range(5):
        ftrl_step_box(st_, [0.0, 0.0])
    np.testing.assert_array_equal(st_.x, [0.2, 0.4])
    st_ = _box([0.5], 0, 1, 1.0)
    assert ftrl_step_box(st_, [10.0])[0] == 0.0


def test_ftrl_box_quadratic():
    T = 500
    st_ = _box([0.5], 0, 1, 0.05 / math.sqrt(T), T)
    for _ in range(T):
        ftrl_step_box(st_, [2 * (st_.x[0] - 0.3)])
    assert abs(st_.x[0] - 0.3) < 0.05


def test_ftrl_box_roundtrip():
    a = _box([0.5, 0.5], 0, 1, 0.1, 64, sigma=0.3)
    for _ in range(5):
        a.step([0.1, -0.2])
    b = FtrlBox.from_dict(a.to_dict())
    np.testing.assert_array_equal(a.step([0.3, 0.3]), b.step([0.3, 0.3]))


def test_ftrl_box_rejects_infeasible_start():
    with pytest.raises(ConfigError):
        _box([2.0], 0, 1, 0.1)


def _entropic(m, d, eta, gamma, T=100):
    return FtrlEntropic(m, d, eta, gamma, TreeAggregator(T, m * d, 0.0, 1.0, make_rng(0), clip_norm=1e9))


def test_entropic_examples():
    st_ = _entropic(2, 3, 1.0, 0.1)
    np.testing.assert_allclose(ftrl_step_entropic(st_, np.zeros(6)), np.full((2, 3), 1 / 3))
    st_ = _entropic(1, 2, 1.0, 1e-9)
    np.testing.assert_allclose(st_.step([1.0, 0.0])[0], [1 / (1 + math.e), math.e / (1 + math.e)], atol=1e-9)
    assert st_.W[0] == pytest.approx([0.2689, 0.7311], abs=1e-4)


def test_floored_projection_example():
    w = floored_simplex_projection([[0.1, 0.9]], 0.25)
    np.testing.assert_allclose(w, [[0.25, 0.75]])


@given(st.integers(2, 8), st.floats(0.01, 1.0), st.integers(0, 10**6))
def test_floored_projection_invariants(d, gamma, seed):
    r = make_rng(seed)
    w = r.dirichlet(np.full(d, 0.3), 3)
    out = floored_simplex_projection(w, gamma / d)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out >= gamma / d - 1e-15)


def _grid_simplex(d, step):
    k = round(1 / step)
    for c in np.ndindex(*([k + 1] * (d - 1))):
        if sum(c) <= k:
            yield np.array([*c, k - sum(c)]) / k


def test_entropic_ftrl_tracks_best_fixed_prior():
    T, d, gamma, eps = 2000, 3, 0.3, 1.0
    r = make_rng(3)
    data = [SortedDataset(np.sort(r.beta(2, 5, 20))) for _ in range(T)]
    eta = math.sqrt(math.log(d) / T) * gamma / d * 10
    st_ = _entropic(1, d, eta, gamma, T)
    losses = []
    for x in data:
        loss, g = discrete_loss(x, [0.5], [eps], st_.W, 0.0, 1.0)
        losses.append(loss)
        st_.step(g.ravel())
    best = math.inf
    for w in _grid_simplex(d, 0.05):
        if w.min() < gamma / d:
            continue
        best = min(best, np.mean([discrete_loss(x, [0.5], [eps], w[None, :], 0.0, 1.0)[0] for x in data[::10]]))
    assert np.mean(losses) <= best + 0.05


# ---------------------------------------------------------------- COCOB and OGD


def test_cocob_abs_loss():
    st_ = Cocob([0.0])
    for _ in range(2000):
        cocob_step(st_, [np.sign(st_.w[0] - 1.0)])
    # the averaged iterate settles; the last one keeps oscillating around 1
    assert abs(st_.avg[0] - 1.0) < 0.05
    assert abs(st_.w[0] - 1.0) < 0.15


def test_cocob_zero_gradients_and_isolation():
    st_ = Cocob([0.5, -1.0])
    for _ in range(10):
        st_.step([0.0, 0.0])
    np.testing.assert_array_equal(st_.w, [0.5, -1.0])
    a, b = Cocob([0.0, 0.0]), Cocob([0.0])
    for _ in range(300):
        a.step([2 * (a.w[0] - 3), 0.0])
        b.step([2 * (b.w[0] - 3)])
    assert a.w[0] == b.w[0] and a.w[1] == 0.0
    with pytest.raises(ValueError):
        a.step([np.nan, 0.0])


def test_cocob_roundtrip():
    a = Cocob([0.0, 1.0])
    for i in range(20):
        a.step([math.sin(i), math.cos(i)])
    b = Cocob.from_dict(a.to_dict())
    np.testing.assert_array_equal(a.step([0.3, -0.1]), b.step([0.3, -0.1]))
    assert a.t == b.t == 21


def test_ogd_examples():
    np.testing.assert_array_equal(ogd_step([0.3, 0.4], [0.0, 0.0], 0.5, 0, 1), [0.3, 0.4])
    assert ogd_step([0.2], [100.0], 1.0, 0.1, 100.0)[0] == 0.1
    T = 500
    x = np.array([0.5])
    for _ in range(T):
        x = ogd_step(x, 2 * (x - 0.3), 0.05, 0, 1)
    assert abs(x[0] - 0.3) < 0.05


def test_ogd_step_sizes():
    e1, e2 = ogd_step_sizes(10, 0.01, 10, 9, 100)
    assert e1 == pytest.approx(10 * 0.3)
    assert e2 == pytest.approx((10 - 0.01) / 50 * 0.3)
