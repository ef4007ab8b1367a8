import numpy as np
import pytest

from lcpvol.core import ReturnSeries, local_mle
from lcpvol.errors import InsufficientHistoryError, SchemeError
from lcpvol.procedure import (
    PUBLISHED_GRID,
    CriticalValues,
    IntervalScheme,
    LcpResult,
    PointFailure,
    build_scheme,
    estimate_array,
    rolling_estimate,
    run_lcp,
    stability_check,
)
from lcpvol.changepoint import max_stat
from lcpvol.core import Interval


def test_build_scheme_examples():
    assert build_scheme(5, 2.0, 3).lengths == (5, 10, 20, 40)
    raw = build_scheme(5, 1.25, 12).lengths
    assert raw[:4] == (5, 7, 8, 10)
    assert raw != PUBLISHED_GRID


def test_published_scheme():
    s = IntervalScheme.published()
    assert s.lengths == (5, 7, 10, 13, 16, 20, 24, 30, 38, 47, 59, 73, 92)
    assert s.n_scales == 11
    assert s.window == 92


def test_scheme_validation():
    with pytest.raises(SchemeError):
        IntervalScheme.from_lengths([5, 10])
    with pytest.raises(SchemeError):
        IntervalScheme.from_lengths([5, 10, 10, 20])
    with pytest.raises(SchemeError):
        IntervalScheme.from_lengths([5, 10, 20, 40], u0=0.6)
    with pytest.raises(SchemeError):
        build_scheme(5, 1.0, 3)


def test_c_u_closed_form():
    s = IntervalScheme.from_lengths([5, 10, 20], u0=0.5, u=0.8)
    assert s.c_u == pytest.approx(8.4721, abs=1e-4)


def _crits(scheme, value=3.0):
    return CriticalValues(tuple([value] * scheme.n_scales))


def test_run_lcp_matches_direct_statistics():
    rng = np.random.default_rng(1)
    r = np.concatenate([rng.standard_normal(120), 3 * rng.standard_normal(30)])
    s = ReturnSeries(r)
    scheme = IntervalScheme.published()
    crits = _crits(scheme)
    res = run_lcp(s, 150, scheme, crits)
    n = scheme.lengths
    for step in res.step_stats:
        k = step.k
        direct = max_stat(s, Interval(150 - n[k + 1], 150), Interval(150 - n[k], 150 - n[k - 1]))
        assert step.stat == pytest.approx(direct.stat, rel=1e-12, abs=1e-12)
        assert step.tau_hat == direct.argmax_tau
    assert res.kappa < scheme.n_scales
    assert res.change_point is not None
    lo = 150 - n[res.kappa + 1]
    hi = 150 - n[res.kappa]
    assert lo <= res.change_point < hi
    assert res.theta_hat == pytest.approx(local_mle(s, res.selected_interval), rel=1e-12)


def test_run_lcp_homogeneous_accepts_everything():
    s = ReturnSeries(np.ones(100))
    scheme = IntervalScheme.published()
    res = run_lcp(s, 100, scheme, _crits(scheme))
    assert res.kappa == scheme.n_scales
    assert res.change_point is None
    assert len(res.selected_interval) == 73


def test_run_lcp_truncates_at_the_edge():
    rng = np.random.default_rng(0)
    s = ReturnSeries(rng.standard_normal(100))
    scheme = IntervalScheme.published()
    res = run_lcp(s, 40, scheme, _crits(scheme))
    assert res.truncated
    # lengths up to 38 fit into 40 points: seven testable scales
    assert res.kappa == 7 and len(res.step_stats) == 7
    with pytest.raises(InsufficientHistoryError):
        run_lcp(s, 4, scheme, _crits(scheme))


def test_rolling_estimate_agrees_with_run_lcp_and_records_failures():
    rng = np.random.default_rng(3)
    s = ReturnSeries(rng.standard_normal(200))
    scheme = IntervalScheme.published()
    crits = _crits(scheme, 2.5)
    out = rolling_estimate(s, scheme, crits, range(3, 201))
    assert isinstance(out[0], PointFailure)
    for t, res in zip(range(3, 201), out):
        if isinstance(res, LcpResult):
            single = run_lcp(s, t, scheme, crits)
            assert res == single


def test_kappa_monotone_in_critical_values():
    rng = np.random.default_rng(8)
    r = rng.standard_normal((50, 300)) * np.repeat([1.0, 2.0], 150)
    scheme = IntervalScheme.published()
    _, scan, _ = estimate_array(r**2, scheme, np.full(11, 3.0))
    low = scan.kappa(np.full(11, 3.0))
    high = scan.kappa(np.full(11, 4.0))
    assert np.all(high >= low)


def test_stability_inequalities_hold(published_crits):
    rng = np.random.default_rng(12)
    r = rng.standard_normal((200, 400)) * np.repeat([1.0, 3.0, 1.0, 2.0], 100)
    scheme = IntervalScheme.published()
    z = published_crits.array()
    _, scan, _ = estimate_array(r**2, scheme, z)
    rep = stability_check(scan, z, scheme)
    assert rep["accepted_steps"] > 0
    assert rep["one_step_violations"] == 0
    assert rep["multi_step_violations"] == 0


def test_scale_invariance_of_decisions(published_crits):
    rng = np.random.default_rng(21)
    s = ReturnSeries(rng.standard_normal(300) * np.repeat([1.0, 3.0], 150))
    scheme = IntervalScheme.published()
    base = rolling_estimate(s, scheme, published_crits)
    for c in (0.1, 10.0):
        other = rolling_estimate(s.scaled(c), scheme, published_crits)
        for a, b in zip(base, other):
            assert a.kappa == b.kappa and a.change_point == b.change_point
            assert b.theta_hat == pytest.approx(c * c * a.theta_hat, rel=1e-10)


def test_critical_values_must_match_scheme():
    scheme = IntervalScheme.published()
    with pytest.raises(SchemeError):
        run_lcp(ReturnSeries(np.ones(100)), 100, scheme, CriticalValues((1.0, 2.0)))
