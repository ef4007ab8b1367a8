import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcpvol.changepoint import (
    change_contrast,
    contrast_at,
    contrast_lower_constant,
    max_stat,
    split_stat,
)
from lcpvol.core import Interval, ReturnSeries, kl
from lcpvol.errors import DomainError, GeometryError, InvalidSplitError


def test_split_stat_constant_data_is_zero():
    s = ReturnSeries(np.ones(20))
    assert split_stat(s, Interval(0, 20), 7).stat == 0.0


def test_split_stat_hand_example():
    s = ReturnSeries(np.concatenate([np.full(10, np.sqrt(2.0)), np.ones(10)]))
    res = split_stat(s, Interval(0, 20), 10)
    assert res.stat == pytest.approx(0.58892, abs=1e-5)
    assert res.left == Interval(0, 10) and res.right == Interval(10, 20)


def test_split_stat_rejects_empty_part():
    s = ReturnSeries(np.ones(10))
    for tau in (0, 10, 11):
        with pytest.raises(InvalidSplitError):
            split_stat(s, Interval(0, 10), tau)


def test_max_stat_geometry():
    s = ReturnSeries(np.ones(30))
    with pytest.raises(GeometryError):
        max_stat(s, Interval(5, 30), Interval(5, 10))
    with pytest.raises(GeometryError):
        max_stat(s, Interval(5, 20), Interval(10, 25))


def test_max_stat_matches_recomputation_and_prefers_smallest_tau():
    rng = np.random.default_rng(2)
    s = ReturnSeries(rng.standard_normal(60))
    testing, tested = Interval(4, 60), Interval(20, 45)
    res = max_stat(s, testing, tested)
    each = [split_stat(s, testing, t).stat for t in range(tested.start, tested.end)]
    assert res.stat == max(each)
    assert res.argmax_tau == tested.start + int(np.argmax(each))
    flat = max_stat(ReturnSeries(np.ones(40)), Interval(0, 40), Interval(10, 30))
    assert flat.argmax_tau == 10


def test_max_stat_monotone_in_tested_interval():
    rng = np.random.default_rng(4)
    s = ReturnSeries(rng.standard_normal(80))
    small = max_stat(s, Interval(0, 80), Interval(30, 40)).stat
    big = max_stat(s, Interval(0, 80), Interval(20, 60)).stat
    assert big >= small


def test_max_stat_localizes_a_jump():
    rng = np.random.default_rng(9)
    hits = []
    for _ in range(200):
        r = np.concatenate([rng.standard_normal(150), np.sqrt(3) * rng.standard_normal(150)])
        hits.append(max_stat(ReturnSeries(r), Interval(0, 300), Interval(50, 250)).argmax_tau)
    assert abs(np.median(hits) - 150) <= 10


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.floats(0.01, 100))
def test_split_stat_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    s = ReturnSeries(rng.standard_normal(40))
    a = split_stat(s, Interval(0, 40), 17).stat
    b = split_stat(s.scaled(c), Interval(0, 40), 17).stat
    assert b == pytest.approx(a, rel=1e-10, abs=1e-13)


def test_change_contrast_example():
    d2 = change_contrast(1.0, 4.0, 0.25, 0.5)
    assert d2 == pytest.approx(0.10652, abs=1e-5)
    m = 0.75 * 1.0 + 0.25 * 4.0
    assert m == 1.75
    assert d2 == pytest.approx(0.75 * kl(1.0, m) + 0.25 * kl(4.0, m), rel=1e-14)
    assert change_contrast(2.0, 2.0, 0.3, 0.6) == 0.0


def test_change_contrast_matches_grid_minimization():
    rng = np.random.default_rng(11)
    for _ in range(30):
        t1, t2 = np.exp(rng.uniform(-2, 2, 2))
        c1, c2 = np.sort(rng.uniform(0.05, 0.95, 2))
        cs = np.linspace(c1, c2, 401)
        thetas = np.exp(np.linspace(np.log(min(t1, t2)), np.log(max(t1, t2)), 4001))
        C, T = np.meshgrid(cs, thetas, indexing="ij")
        vals = (1 - C) * kl(t1, T) + C * kl(t2, T)
        grid = vals.min(axis=1).min()
        exact = change_contrast(t1, t2, c1, c2)
        assert exact <= grid + 1e-12
        assert grid - exact <= 1e-6


def test_change_contrast_domain():
    with pytest.raises(DomainError):
        change_contrast(1.0, 2.0, 0.6, 0.5)
    with pytest.raises(DomainError):
        change_contrast(1.0, 2.0, 0.0, 0.5)


def test_contrast_lower_constant_is_a_lower_bound():
    thetas = np.exp(np.linspace(-1, 1, 9))
    b = contrast_lower_constant(thetas, 0.3, 0.6)
    assert b > 0
    for x in thetas:
        for y in thetas:
            if x != y:
                assert change_contrast(x, y, 0.3, 0.6) >= b * (x / y - y / x) ** 2 - 1e-15


def test_contrast_at_minimized_at_mixture_mean():
    c = 0.3
    m = 0.7 * 1.0 + 0.3 * 5.0
    direct = 0.7 * kl(1.0, m) + 0.3 * kl(5.0, m)
    assert float(contrast_at(1.0, 5.0, c)) == pytest.approx(float(direct), rel=1e-14)
    for other in (m * 0.9, m * 1.1):
        assert 0.7 * kl(1.0, other) + 0.3 * kl(5.0, other) > direct
