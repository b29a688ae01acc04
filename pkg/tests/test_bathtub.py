import numpy as np
import pytest

from bangbang.bathtub import (
    TIE_TOL,
    brute_force_sigma,
    measure_above,
    quantile,
    restricted_support_function,
    support_batch,
    support_function,
    threshold_h,
)
from bangbang.spectral import Domain, GridField, GridMismatchError

from oracles import SIGMA_IDENTITY_HALF, SIGMA_SHIFTED_HALF, count_above, greedy_sigma

DOM = Domain.interval(1.0, 200)
X = DOM.axis_nodes()
CELL = DOM.cell


def field(values):
    return GridField(DOM, np.asarray(values, dtype=float))


def test_measure_above_examples():
    assert measure_above(field(-np.ones(200)), 0.0) == 0.0
    assert measure_above(field(X), 0.25) == pytest.approx(0.75, abs=CELL)
    assert measure_above(field(X), 0.25) == pytest.approx(count_above(X, 0.25, CELL), abs=1e-15)
    assert measure_above(field(X), -1.0) == pytest.approx(1.0)


def test_measure_above_monotone_right_continuous():
    rng = np.random.default_rng(0)
    v = field(np.round(rng.normal(size=200), 1))
    rs = np.linspace(-3, 3, 301)
    vals = [measure_above(v, r) for r in rs]
    assert np.all(np.diff(vals) <= 0)
    for level in np.unique(v.values)[:10]:
        assert measure_above(v, level) == measure_above(v, level + 1e-13)


def test_quantile_examples():
    v = field(X)
    assert quantile(v, 1.0) <= X.min()
    assert quantile(v, 0.5) == pytest.approx(0.5, abs=CELL)
    assert quantile(field(np.full(200, 3.0)), 0.3) == 3.0
    with pytest.raises(ValueError):
        quantile(v, 1.5)
    with pytest.raises(ValueError):
        quantile(v, -0.1)


def test_quantile_defining_property():
    rng = np.random.default_rng(1)
    v = field(np.round(rng.normal(size=200), 1))
    previous = np.inf
    for s in np.linspace(0, 0.999, 50):
        q = quantile(v, s)
        assert measure_above(v, q) <= s + 1e-12
        assert q <= previous
        previous = q


def test_threshold_examples():
    assert threshold_h(field(-np.abs(X)), 0.5) == 0.0
    assert threshold_h(field(X), 0.5) == pytest.approx(0.5, abs=CELL)
    assert threshold_h(field(X - 0.7), 0.5) == 0.0
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = field(rng.normal(size=200))
        h = threshold_h(v, 0.3)
        assert h >= 0 and measure_above(v, h) <= 0.3 + CELL


def test_support_function_closed_forms():
    res = support_function(field(X), 0.5)
    assert res.sigma == pytest.approx(SIGMA_IDENTITY_HALF, abs=CELL)
    assert res.sigma == pytest.approx(greedy_sigma(X, CELL, 0.5), rel=1e-12)
    res = support_function(field(X - 0.7), 0.5)
    assert res.sigma == pytest.approx(SIGMA_SHIFTED_HALF, abs=CELL)
    assert res.h == 0.0 and res.c == 0.0
    res = support_function(field(-np.ones(200)), 0.5)
    assert res.sigma == 0.0 and not res.maximiser.any()


def test_brute_force_examples():
    assert brute_force_sigma(field(-np.ones(200)), 0.3) == 0.0
    v = np.zeros(200)
    v[17] = 5.0
    assert brute_force_sigma(field(v), 0.3) == pytest.approx(5.0 * CELL)
    rng = np.random.default_rng(3)
    w = field(rng.normal(size=200))
    assert support_function(w, 0.3).sigma == pytest.approx(brute_force_sigma(w, 0.3), rel=1e-12)


def test_plateau_coefficient_fills_budget():
    # Ten tied nodes at the threshold, budget reaches into the tie.
    v = np.zeros(200)
    v[:50] = 2.0
    v[50:60] = 1.0
    res = support_function(field(v), 0.275)  # 55 cells
    assert res.h == 1.0
    assert int(res.strict.sum()) == 50 and int(res.plateau.sum()) == 10
    assert res.c == pytest.approx(0.5)
    assert res.mass == pytest.approx(0.275, rel=1e-12)
    assert res.sigma == pytest.approx(np.dot(res.maximiser, v) * CELL, rel=1e-12)
    assert not res.bang_bang()


def test_tie_tolerance_is_relative():
    v = np.zeros(200)
    v[:40] = 3.0
    v[40] = 1.0
    v[41] = 1.0 + 0.5 * TIE_TOL
    v[42] = 0.5
    res = support_function(field(v), 0.205)  # 41 cells, threshold at 1
    assert bool(res.plateau[40]) and bool(res.plateau[41])
    assert res.bang_bang()


def test_maximiser_invariants_random():
    rng = np.random.default_rng(4)
    for L in (0.1, 0.3, 0.5, 0.9):
        for _ in range(25):
            v = field(rng.normal(size=200))
            res = support_function(v, L)
            assert np.all(res.maximiser >= 0) and np.all(res.maximiser <= 1)
            assert res.mass <= L + CELL
            assert np.all(res.maximiser[res.strict] == 1)
            assert np.all(res.maximiser[~res.strict & ~res.plateau] == 0)
            assert res.sigma == pytest.approx(np.dot(res.maximiser, v.values) * CELL, abs=1e-10)


def test_homogeneity_and_upper_bound():
    rng = np.random.default_rng(5)
    for _ in range(30):
        v = field(rng.normal(size=200))
        s = support_function(v, 0.3).sigma
        for lam in (0.01, 2.5, 1e3):
            scaled = support_function(field(lam * v.values), 0.3).sigma
            assert scaled == pytest.approx(lam * s, rel=1e-12)
        assert 0 <= s <= np.sqrt(DOM.measure) * v.norm()


def test_fenchel_inequality_for_feasible_w():
    rng = np.random.default_rng(6)
    for _ in range(30):
        v = field(rng.normal(size=200))
        s = support_function(v, 0.3).sigma
        w = rng.random(200)
        w *= min(1.0, 0.3 / (w.sum() * CELL))
        assert np.dot(w, v.values) * CELL <= s + 1e-12


def test_sigma_zero_iff_nonpositive():
    assert support_function(field(-X), 0.3).sigma == 0.0
    v = -X.copy()
    v[5] = 1e-6
    assert support_function(field(v), 0.3).sigma > 0


def test_classical_relaxed_consistency():
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = field(rng.normal(size=200) + 2.0)  # mostly positive
        res = support_function(v, 0.3)
        assert measure_above(v, 0.0) >= 0.3 and res.h > 0
        assert res.mass == pytest.approx(0.3, abs=CELL)


def test_restricted_examples():
    rng = np.random.default_rng(8)
    v = field(rng.normal(size=200))
    empty = restricted_support_function(v, 0.3, np.zeros(200, dtype=bool))
    assert empty.sigma == support_function(v, 0.3).sigma
    mask = v.values > 0
    assert restricted_support_function(v, 0.3, mask).sigma == 0.0
    half = np.arange(200) < 100
    res = restricted_support_function(v, 0.3, half)
    assert res.sigma == pytest.approx(greedy_sigma(v.values[~half], CELL, 0.3), rel=1e-12)
    assert not res.maximiser[half].any()
    with pytest.raises(ValueError):
        restricted_support_function(v, 0.3, np.ones(200, dtype=bool))
    with pytest.raises(GridMismatchError):
        restricted_support_function(v, 0.3, np.zeros(10, dtype=bool))


def test_volume_fraction_validation():
    with pytest.raises(ValueError, match=r"L must lie in \(0,1\)"):
        support_function(field(X), 1.5)
    with pytest.raises(ValueError):
        threshold_h(field(X), 0.0)


def test_support_batch_matches_single():
    rng = np.random.default_rng(9)
    V = rng.normal(size=(12, 200))
    sigma, U = support_batch(V, CELL, 0.3 * DOM.measure)
    for i in range(12):
        assert sigma[i] == pytest.approx(support_function(field(V[i]), 0.3).sigma, rel=1e-12)
        assert np.dot(U[i], V[i]) * CELL == pytest.approx(sigma[i], rel=1e-12)
    mask = np.arange(200) % 3 == 0
    sig_m, U_m = support_batch(V, CELL, 0.3 * DOM.measure, mask)
    assert not U_m[:, mask].any()
    assert sig_m[0] == pytest.approx(restricted_support_function(field(V[0]), 0.3, mask).sigma, rel=1e-12)
