import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcpvol.core import (
    Interval,
    ParamBounds,
    ReturnSeries,
    confidence_level_value,
    confidence_set,
    empirical_triangle_constant,
    fitted_loglik_ratio,
    is_degenerate,
    kl,
    kl_divergence,
    local_mle,
    log_returns,
    loglik,
    modeling_bias,
    risk_constant,
)
from lcpvol.errors import (
    BoundsError,
    DataValidationError,
    DegenerateEstimateError,
    DomainError,
    UnsupportedInLiveDataError,
)

positive = st.floats(1e-6, 1e6, allow_nan=False)


def test_log_returns_examples():
    assert np.array_equal(log_returns([1, 1, 1]).returns, [0.0, 0.0])
    assert log_returns([1, math.e]).returns[0] == pytest.approx(1.0, abs=1e-15)
    r = log_returns([100, 101, 99.5]).returns
    assert r == pytest.approx([math.log(1.01), math.log(99.5 / 101)], rel=1e-14)


def test_log_returns_rejects_bad_price_with_index():
    with pytest.raises(DataValidationError, match="index 2"):
        log_returns([1.0, 2.0, -1.0])


def test_return_series_validation():
    with pytest.raises(DataValidationError):
        ReturnSeries([0.1, np.nan])
    with pytest.raises(DataValidationError):
        ReturnSeries([0.1, 0.2], timestamps=[3, 3])
    with pytest.raises(DataValidationError):
        ReturnSeries([0.1, 0.2], true_vol=[1.0, 0.0])
    s = ReturnSeries([0.1, 0.2])
    with pytest.raises(ValueError):
        s.returns[0] = 1.0


def test_interval_must_be_nonempty():
    with pytest.raises(BoundsError):
        Interval(3, 3)
    assert len(Interval(2, 7)) == 5


def test_local_mle_examples():
    assert local_mle(ReturnSeries([2, 2, 2]), Interval(0, 3)) == 4.0
    assert local_mle(ReturnSeries([1, -1, 3, -3]), Interval(0, 4)) == 5.0


def test_local_mle_converges_to_truth():
    rng = np.random.default_rng(0)
    s = ReturnSeries(rng.standard_normal(200_000) * math.sqrt(2.5))
    assert local_mle(s, Interval(0, 200_000)) == pytest.approx(2.5, rel=0.02)


def test_local_mle_degenerate_floor_and_strict():
    s = ReturnSeries([0.0, 0.0, 0.0, 1.0])
    assert local_mle(s, Interval(0, 3), floor=1e-12) == 1e-12
    assert is_degenerate(s, Interval(0, 3))
    with pytest.raises(DegenerateEstimateError):
        local_mle(s, Interval(0, 3), strict=True)


def test_local_mle_interval_bounds():
    with pytest.raises(BoundsError):
        local_mle(ReturnSeries([1.0, 2.0]), Interval(1, 3))


def test_kl_examples():
    assert kl_divergence(3.7, 3.7) == 0.0
    assert kl_divergence(2, 1) == pytest.approx(0.153426, abs=1e-6)
    assert kl_divergence(1, 2) == pytest.approx(0.096574, abs=1e-6)
    with pytest.raises(DomainError):
        kl_divergence(0.0, 1.0)


def test_kl_accurate_near_equal_arguments():
    # series expansion u**2/4 - u**3/6 for x = 1 + u
    u = 1e-6
    assert kl(1 + u, 1.0) == pytest.approx(u * u / 4 - u**3 / 6, rel=1e-9)


@given(positive, positive, st.floats(1e-3, 1e3))
def test_kl_nonnegative_and_scale_free(a, b, c):
    v = kl_divergence(a, b)
    assert v >= 0
    assert (v == 0) == (a == b) or abs(a / b - 1) < 1e-7
    assert kl_divergence(c * a, c * b) == pytest.approx(v, rel=1e-9, abs=1e-15)


def test_fitted_loglik_ratio_examples():
    s = ReturnSeries(np.sqrt(2.0) * np.ones(10))
    full = Interval(0, 10)
    assert fitted_loglik_ratio(s, full, local_mle(s, full)) == 0.0
    assert fitted_loglik_ratio(s, full, 1.0) == pytest.approx(1.53426, abs=1e-5)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.floats(-3, 3))
def test_fitted_loglik_ratio_matches_loglik_difference(seed, n, log_ratio):
    rng = np.random.default_rng(seed)
    s = ReturnSeries(rng.standard_normal(n) * 0.01)
    iv = Interval(0, n)
    theta = local_mle(s, iv) * math.exp(log_ratio)
    direct = loglik(s, iv, local_mle(s, iv)) - loglik(s, iv, theta)
    scale = abs(loglik(s, iv, theta)) + 1.0
    assert fitted_loglik_ratio(s, iv, theta) == pytest.approx(direct, abs=1e-12 * scale)


def test_confidence_set_roots():
    assert confidence_level_value(0.05) == pytest.approx(3.68888, abs=1e-5)
    s = ReturnSeries(np.ones(100))
    lo, hi = confidence_set(s, Interval(0, 100), 0.05)
    assert lo < 1 < hi
    for root in (lo, hi):
        assert 100 * kl_divergence(1.0, root) == pytest.approx(math.log(40), abs=1e-8)


def test_confidence_set_shrinks_with_length():
    widths = []
    for n in (10, 100, 1000):
        lo, hi = confidence_set(ReturnSeries(np.ones(n)), Interval(0, n), 0.05)
        widths.append(hi - lo)
    assert widths[0] > widths[1] > widths[2]


def test_risk_constant():
    assert risk_constant(1) == pytest.approx(2.0, rel=1e-12)
    assert risk_constant(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    assert risk_constant(2) == pytest.approx(4.0, rel=1e-12)
    assert 0.2 * risk_constant(0.5) == pytest.approx(0.35449, abs=1e-5)


def test_modeling_bias():
    s = ReturnSeries(np.ones(5), true_vol=np.full(5, 2.0))
    assert modeling_bias(s, Interval(0, 5), 2.0) == 0.0
    assert modeling_bias(s, Interval(0, 5), 1.0) == pytest.approx(5 * (1 - math.log(2)) / 2, rel=1e-14)
    assert modeling_bias(s, Interval(0, 5), 1.0) == pytest.approx(0.76713, abs=5e-6)
    with pytest.raises(UnsupportedInLiveDataError):
        modeling_bias(ReturnSeries(np.ones(5)), Interval(0, 5), 1.0)


def test_modeling_bias_grows_leftward():
    tv = np.array([4.0, 3.0, 1.0, 1.0, 2.0, 1.0])
    s = ReturnSeries(np.ones(6), true_vol=tv)
    vals = [modeling_bias(s, Interval(start, 6), 1.5) for start in range(5, -1, -1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_param_bounds():
    b = ParamBounds.from_values([1.0, 4.0])
    assert b.a_const == pytest.approx(0.5)
    assert b.triangle_constant == pytest.approx(2.0)
    assert b.admits(1.0, 4.0) and not b.admits(1.0, 4.5)
    with pytest.raises(DomainError):
        ParamBounds(1.5)


def test_triangle_constant_suffices_on_grid():
    rng = np.random.default_rng(3)
    for _ in range(20):
        thetas = np.exp(rng.uniform(-2, 2, size=12))
        bound = ParamBounds.from_values(thetas).triangle_constant
        assert empirical_triangle_constant(thetas) <= bound + 1e-12


def test_mle_scale_equivariance():
    rng = np.random.default_rng(5)
    s = ReturnSeries(rng.standard_normal(50))
    iv = Interval(3, 41)
    for c in (0.1, 7.0):
        assert local_mle(s.scaled(c), iv) == pytest.approx(c * c * local_mle(s, iv), rel=1e-12)
