import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm
from sklearn.metrics import mutual_info_score

from miue.estimators import (DegenerateInputError, GaussianJointSpec, MIConfig, bivariate_gaussian_mi,
                             classwise_mi, estimate_mi, gaussian_mi_oracle, gaussian_plugin_mi,
                             histogram_mi_1d, kde_mi_1d, knn_mi, mine_mi, silverman_bandwidth, sliced_mi)
from miue.numerics import digamma
from miue.rng import RngState, sample_gaussian


def correlated(rng, rho, n):
    return sample_gaussian(rng, [0.0, 0.0], [[1.0, rho], [rho, 1.0]], n)


# ---------------------------------------------------------------------------
# brute-force oracles, written independently of the package code

def ksg1_bruteforce(x, y, k):
    n = len(x)
    x = x + 1e-10 * np.arange(n)
    y = y + 1e-10 * np.arange(n)
    dx = np.abs(x[:, None] - x[None, :])
    dy = np.abs(y[:, None] - y[None, :])
    dz = np.maximum(dx, dy)
    np.fill_diagonal(dz, np.inf)
    eps = np.sort(dz, axis=1)[:, k - 1]
    np.fill_diagonal(dx, np.inf)
    np.fill_diagonal(dy, np.inf)
    nx = (dx < eps[:, None]).sum(axis=1)
    ny = (dy < eps[:, None]).sum(axis=1)
    return digamma(k) + digamma(n) - np.mean(digamma(nx + 1.0) + digamma(ny + 1.0))


def kde_bruteforce(x, y):
    n = len(x)
    hx = 1.06 * np.std(x, ddof=1) * n ** -0.2
    hy = 1.06 * np.std(y, ddof=1) * n ** -0.2
    kx = norm.pdf((x[:, None] - x[None, :]) / hx) / hx
    ky = norm.pdf((y[:, None] - y[None, :]) / hy) / hy
    px, py, pxy = kx.mean(axis=1), ky.mean(axis=1), (kx * ky).mean(axis=1)
    return np.mean(np.log(pxy) - np.log(px) - np.log(py))


# ---------------------------------------------------------------------------
# histogram

def test_histogram_matches_contingency_oracle(rng):
    xy = correlated(rng, 0.6, 3000)
    bins = 12
    est = histogram_mi_1d(xy[:, 0], xy[:, 1], bins)

    def digitize(v):
        u = (v - v.min()) / (v.max() - v.min())
        return np.minimum(np.floor(u * bins), bins - 1).astype(int)

    assert est.value_nats == pytest.approx(mutual_info_score(digitize(xy[:, 0]), digitize(xy[:, 1])), abs=1e-12)


def test_histogram_diagonal_four_bins():
    xs = np.repeat([0.0, 1.0, 2.0, 3.0], 25)
    assert histogram_mi_1d(xs, xs, bins=4).value_nats == pytest.approx(math.log(4), abs=1e-12)


def test_histogram_independent_uniform(rng):
    xs = rng.split("a").uniform(size=50000)
    ys = rng.split("b").uniform(size=50000)
    assert histogram_mi_1d(xs, ys, bins=10).value_nats < 0.01


def test_histogram_constant_is_degenerate():
    est = histogram_mi_1d(np.ones(10), np.ones(10))
    assert est.value_nats == 0.0 and est.degenerate


def test_histogram_bad_inputs():
    with pytest.raises(ValueError):
        histogram_mi_1d([1.0], [1.0])
    with pytest.raises(ValueError):
        histogram_mi_1d([1.0, 2.0], [1.0, 2.0], bins=1)


# ---------------------------------------------------------------------------
# KDE

def test_kde_matches_bruteforce(rng):
    xy = correlated(rng, 0.7, 400)
    est = kde_mi_1d(xy[:, 0], xy[:, 1], chunk=64)
    assert est.raw_value == pytest.approx(kde_bruteforce(xy[:, 0], xy[:, 1]), abs=1e-10)


def test_silverman_rule():
    v = np.arange(32, dtype=float)
    assert silverman_bandwidth(v) == pytest.approx(1.06 * np.std(v, ddof=1) / 2.0)


def test_kde_correlated(rng):
    xy = correlated(rng, 0.8, 5000)
    assert abs(kde_mi_1d(xy[:, 0], xy[:, 1]).value_nats - 0.51083) < 0.10


def test_kde_permuted_copy(rng):
    xs = rng.standard_normal(5000)
    ys = xs[rng.permutation(5000)]
    assert kde_mi_1d(xs, ys).value_nats < 0.05


def test_kde_degenerate_and_small():
    est = kde_mi_1d(np.zeros(10), np.arange(10.0))
    assert est.value_nats == 0.0 and est.degenerate
    with pytest.raises(ValueError):
        kde_mi_1d(np.arange(4.0), np.arange(4.0))


# ---------------------------------------------------------------------------
# KSG

@pytest.mark.parametrize("rho, k", [(0.0, 3), (0.5, 3), (0.9, 1), (0.9, 5)])
def test_knn_matches_bruteforce(rho, k):
    xy = correlated(RngState(3), rho, 300)
    est = knn_mi(xy[:, 0], xy[:, 1], k)
    assert est.raw_value == pytest.approx(ksg1_bruteforce(xy[:, 0], xy[:, 1], k), abs=1e-12)


def test_knn_independent(rng):
    X = rng.split("x").standard_normal((5000, 1))
    Y = rng.split("y").standard_normal((5000, 1))
    assert knn_mi(X, Y, 3).value_nats < 0.02


def test_knn_correlated(rng):
    xy = correlated(rng, 0.8, 10000)
    assert abs(knn_mi(xy[:, 0], xy[:, 1], 3).value_nats - 0.51083) < 0.05


def test_knn_self_information_saturates(rng):
    x = rng.standard_normal(1000)
    assert knn_mi(x, x, 3).value_nats >= digamma(1000) - digamma(3) - 2


def test_knn_needs_more_samples_than_k():
    with pytest.raises(ValueError, match="n=3"):
        knn_mi(np.arange(3.0), np.arange(3.0), 3)


def test_knn_multivariate_gaussian_oracle(rng):
    spec = GaussianJointSpec(np.eye(2), 0.5 * np.eye(2))
    Z = sample_gaussian(rng.split("z"), np.zeros(2), spec.Sigma1, 8000)
    Zp = Z + sample_gaussian(rng.split("n"), np.zeros(2), spec.Sigma2, 8000)
    assert abs(knn_mi(Z, Zp, 3).value_nats - gaussian_mi_oracle(spec)) < 0.06


# ---------------------------------------------------------------------------
# MINE

def test_mine_correlated_and_deterministic():
    xy = correlated(RngState(8), 0.8, 10000)
    cfg = MIConfig(estimator="mine")
    a = mine_mi(xy[:, :1], xy[:, 1:], cfg, RngState(1))
    b = mine_mi(xy[:, :1], xy[:, 1:], cfg, RngState(1))
    assert a.value_nats == b.value_nats
    assert 0.36 <= a.value_nats <= 0.56
    assert a.value_nats <= 0.51083 + 0.1


def test_mine_independent():
    X = RngState(9).standard_normal((5000, 1))
    Y = RngState(10).standard_normal((5000, 1))
    assert abs(mine_mi(X, Y, MIConfig(estimator="mine"), RngState(2)).value_nats) < 0.1


def test_mine_may_be_negative_unclamped():
    X = RngState(11).standard_normal((200, 1))
    Y = RngState(12).standard_normal((200, 1))
    est = mine_mi(X, Y, MIConfig(estimator="mine", mine_iters=60, mine_batch=100), RngState(0))
    assert est.value_nats == est.raw_value


# ---------------------------------------------------------------------------
# sliced and class-conditional

def test_sliced_1d_equals_base(rng):
    xy = correlated(rng, 0.6, 1000)
    cfg = MIConfig(bins=20)
    for base, direct in (("knn", knn_mi(xy[:, 0], xy[:, 1], 3)),
                         ("histogram", histogram_mi_1d(xy[:, 0], xy[:, 1], 20))):
        sliced = sliced_mi(xy[:, :1], xy[:, 1:], 5, base, RngState(4), cfg)
        assert sliced.value_nats == pytest.approx(direct.value_nats, abs=1e-9)


def test_sliced_independent_vs_dependent():
    rng = RngState(21)
    X = rng.split("x").standard_normal((2000, 8))
    Y = rng.split("y").standard_normal((2000, 8))
    indep = [sliced_mi(X, Y, 200, "knn", RngState(s)).value_nats for s in range(3)]
    dep = [sliced_mi(X, X + 0.1 * Y, 200, "knn", RngState(s)).value_nats for s in range(3)]
    assert max(indep) < 0.02
    assert min(dep) > max(indep) + 5 * (np.std(indep) + 1e-3)


def test_sliced_deterministic_and_excludes_degenerate():
    X = np.hstack([RngState(1).standard_normal((300, 2)), np.zeros((300, 1))])
    a = sliced_mi(X, X, 10, "histogram", RngState(5))
    b = sliced_mi(X, X, 10, "histogram", RngState(5))
    assert a.value_nats == b.value_nats
    with pytest.raises(DegenerateInputError):
        sliced_mi(np.zeros((50, 3)), np.zeros((50, 3)), 4, "histogram", RngState(0))


def test_classwise_single_class_equals_sliced(rng):
    Z = rng.split("z").standard_normal((300, 4))
    Zp = Z + 0.5 * rng.split("n").standard_normal((300, 4))
    cfg = MIConfig(slices=20)
    cw = classwise_mi(Z, Zp, np.zeros(300, dtype=int), cfg, RngState(7))
    direct = estimate_mi(Z, Zp, cfg, RngState(7).split("class-0"))
    assert cw.value_nats == direct.value_nats


def test_classwise_weighted_average():
    cfg = MIConfig(estimator="knn", sliced=False)
    rng = RngState(30)
    a = correlated(rng.split("a"), 0.3, 400)
    b = correlated(rng.split("b"), 0.9, 400)
    Z = np.concatenate([a[:, :1], b[:, :1]])
    Zp = np.concatenate([a[:, 1:], b[:, 1:]])
    labels = np.repeat([0, 1], 400)
    cw = classwise_mi(Z, Zp, labels, cfg, RngState(0)).value_nats
    expected = 0.5 * (knn_mi(a[:, 0], a[:, 1]).value_nats + knn_mi(b[:, 0], b[:, 1]).value_nats)
    assert cw == pytest.approx(expected, abs=1e-12)


def test_classwise_identity_saturates_per_class():
    cfg = MIConfig(estimator="knn", sliced=False)
    Z = RngState(2).standard_normal((200, 1))
    labels = np.repeat([0, 1], 100)
    cw = classwise_mi(Z, Z, labels, cfg).value_nats
    per = [knn_mi(Z[:100], Z[:100]).value_nats, knn_mi(Z[100:], Z[100:]).value_nats]
    assert cw == pytest.approx(np.mean(per), abs=1e-12)


def test_classwise_small_class_named():
    labels = np.array([0] * 20 + [1] * 3)
    Z = RngState(0).standard_normal((23, 2))
    with pytest.raises(ValueError, match="class 1"):
        classwise_mi(Z, Z, labels, MIConfig(slices=3))


def test_classwise_all_degenerate_class_counts_zero():
    Z = np.vstack([RngState(0).standard_normal((30, 2)), np.zeros((30, 2))])
    labels = np.repeat([0, 1], 30)
    est = classwise_mi(Z, Z, labels, MIConfig(slices=5))
    assert est.degenerate and est.config["degenerate_classes"] == [1]
    assert est.config["per_class"][1] == 0.0


# ---------------------------------------------------------------------------
# Gaussian references

def test_gaussian_oracle_examples():
    assert gaussian_mi_oracle(GaussianJointSpec(np.eye(2), np.eye(2))) == pytest.approx(math.log(2), abs=1e-12)
    assert bivariate_gaussian_mi(0.8) == pytest.approx(-0.5 * math.log(0.36), abs=1e-12)
    assert bivariate_gaussian_mi(0.0) == 0.0
    # Z ~ N(0, s1), Z' = Z + N(0, s2) has correlation rho with rho^2 = s1 / (s1 + s2)
    s1, s2 = 0.64, 0.36
    one_d = gaussian_mi_oracle(GaussianJointSpec([[s1]], [[s2]]))
    assert one_d == pytest.approx(bivariate_gaussian_mi(math.sqrt(s1 / (s1 + s2))), abs=1e-12)


def test_gaussian_oracle_rejects_non_pd():
    with pytest.raises(np.linalg.LinAlgError):
        gaussian_mi_oracle(GaussianJointSpec(np.eye(2), -np.eye(2)))
    with pytest.raises(ValueError):
        GaussianJointSpec(np.eye(2), np.eye(3))


def test_plugin_estimator_close_to_oracle(rng):
    xy = correlated(rng, 0.6, 20000)
    est = estimate_mi(xy[:, :1], xy[:, 1:], MIConfig(estimator="analytic-oracle"))
    assert abs(est.value_nats - bivariate_gaussian_mi(0.6)) < 0.01
    assert gaussian_plugin_mi(xy[:, :1], xy[:, 1:]).value_nats == est.value_nats


# ---------------------------------------------------------------------------
# config and properties

@pytest.mark.parametrize("bad", [{"bins": 1}, {"k_neighbors": 0}, {"slices": 0}, {"mine_batch": 1},
                                 {"estimator": "copula"}, {"bandwidth_rule": "scott"}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        MIConfig(**bad)


def test_paper_preset():
    assert MIConfig.paper_preset().slices == 2000
    assert MIConfig().slices == 200


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rho=st.floats(-0.95, 0.95), n=st.integers(20, 400))
def test_symmetry_and_nonnegativity(seed, rho, n):
    xy = correlated(RngState(seed), rho, n)
    x, y = xy[:, 0], xy[:, 1]
    h1, h2 = histogram_mi_1d(x, y, 10), histogram_mi_1d(y, x, 10)
    k1, k2 = knn_mi(x, y, 3), knn_mi(y, x, 3)
    assert h1.value_nats == h2.value_nats
    assert k1.value_nats == k2.value_nats
    assert abs(kde_mi_1d(x, y).value_nats - kde_mi_1d(y, x).value_nats) < 1e-9
    for est in (h1, k1, kde_mi_1d(x, y)):
        assert est.value_nats >= 0 and np.isfinite(est.value_nats)


def test_data_processing_monotone():
    rng = RngState(40)
    x = rng.split("x").standard_normal(4000)
    noise = rng.split("n").standard_normal(4000)
    values = [knn_mi(x, x + s * noise).value_nats for s in (0.25, 0.5, 1.0, 2.0, 4.0)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_clamped_estimators_report_raw_value():
    x = RngState(50).standard_normal(200)
    y = RngState(51).standard_normal(200)
    est = knn_mi(x, y)
    assert est.value_nats == max(est.raw_value, 0.0)
    assert est.raw_value > -0.05
