import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mogp_longevity.analytics import (crps_gaussian, hierarchical_cluster, smape,
                                      trend_distance)
from mogp_longevity.data import MortalityPanel, standardize
from mogp_longevity.kernels import Family, KernelSpec, build_cov_matrix, se_cov, SEParams

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.1, 20.0)
coef = st.tuples(st.floats(-5, 5), st.floats(-0.2, 0.2), st.floats(-0.05, 0.05))


@st.composite
def cells(draw, max_L=3, max_n=12):
    L = draw(st.integers(1, max_L))
    n = draw(st.integers(1, max_n))
    pop = draw(arrays(np.int64, n, elements=st.integers(0, L - 1)))
    age = draw(arrays(np.float64, n, elements=st.floats(50, 84)))
    year = draw(arrays(np.float64, n, elements=st.floats(1990, 2016)))
    return L, pop, age, year


@settings(max_examples=60, deadline=None)
@given(cells(), positive, positive, st.floats(0.1, 2.0), st.integers(0, 2 ** 31))
def test_icm_covariance_symmetric_psd(c, theta_ag, theta_yr, scale, seed):
    L, pop, age, year = c
    A = scale * np.random.default_rng(seed).normal(size=(L, min(L, 2)))
    p = MortalityPanel(tuple(f"P{i}" for i in range(L)), pop, age, year, np.zeros(len(pop)))
    C, K = build_cov_matrix(p, KernelSpec(Family.ICM, theta_ag, theta_yr, [1e-3] * L, A=A))
    assert np.array_equal(C, C.T)
    lam = np.linalg.eigvalsh(C)
    assert lam.min() >= -1e-10 * max(1.0, lam.max())


@settings(max_examples=100, deadline=None)
@given(st.tuples(finite, finite), st.tuples(finite, finite), positive, positive, positive)
def test_se_symmetric_and_bounded(x1, x2, eta2, ta, tt):
    p = SEParams(eta2, ta, tt)
    v = se_cov(x1, x2, p)
    assert v == se_cov(x2, x1, p)
    assert 0.0 <= v <= eta2


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-10, -0.1)),
       arrays(np.float64, 20, elements=st.floats(-10, -0.1)))
def test_smape_symmetric_and_bounded(y, m):
    m = m[:len(y)]
    s = smape(y, m)
    assert s == smape(m, y)
    assert 0.0 <= s <= 200.0


@settings(max_examples=200, deadline=None)
@given(finite, st.floats(1e-3, 10), finite)
def test_crps_nonnegative(mu, sigma, y):
    assert crps_gaussian(mu, sigma, y) >= 0.0


@settings(max_examples=200, deadline=None)
@given(coef, coef, coef)
def test_trend_distance_pseudometric(a, b, c):
    dab, dbc, dac = trend_distance(a, b), trend_distance(b, c), trend_distance(a, c)
    assert dab == trend_distance(b, a)
    assert trend_distance(a, a) == 0.0
    assert dac <= dab + dbc + 1e-9 * (1 + dab + dbc)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31), st.sampled_from(["single", "complete"]))
def test_dendrogram_heights_nondecreasing(n, seed, method):
    X = np.random.default_rng(seed).normal(size=(n, 2))
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    d = hierarchical_cluster(D, method)
    assert len(d.merges) == n - 1
    assert np.all(np.diff(d.heights) >= 0)
    assert d.merges[-1].size == n


@settings(max_examples=60, deadline=None)
@given(cells(max_n=15), st.integers(0, 2 ** 31))
def test_panel_order_insensitive(c, seed):
    L, pop, age, year = c
    age, year = np.round(age), np.round(year)
    key = np.unique(np.column_stack([pop, year, age]), axis=0)  # drop duplicate cells
    pop, year, age = key[:, 0].astype(int), key[:, 1], key[:, 2]
    y = np.random.default_rng(seed).normal(size=len(pop))
    names = tuple(f"P{i}" for i in range(L))
    perm = np.random.default_rng(seed + 1).permutation(len(pop))
    a = MortalityPanel(names, pop, age, year, y)
    b = MortalityPanel(names, pop[perm], age[perm], year[perm], y[perm])
    assert a.digest() == b.digest()
    assert np.array_equal(a.y, b.y)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(50, 84), unique=True),
       st.integers(0, 2 ** 31))
def test_standardize_roundtrip(age, seed):
    rng = np.random.default_rng(seed)
    year = rng.uniform(1990, 2016, len(age))
    p = MortalityPanel(("A",), np.zeros(len(age), int), age, year, rng.normal(size=len(age)))
    ps, sc = standardize(p)
    assert abs(ps.age.mean()) < 1e-9 and abs(ps.age.std() - 1) < 1e-9
    a, t = sc.destandardize(ps.age, ps.year)
    np.testing.assert_allclose(a, p.age, atol=1e-9)
    np.testing.assert_allclose(t, p.year, atol=1e-9)
