import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randstop.expected_time import expected_time_field
from randstop.problems import bm_abs, bm_square
from randstop.reward import reward_field
from randstop.strategy import OpenSetUnion, RateFunction, Strategy
from randstop.verify import check_necessary, check_regularity, check_sufficient

INF = math.inf


def fields(spec, s, n=1024):
    return expected_time_field(spec, s, n=n), reward_field(spec, s, n=n)


class TestRegularity:
    def test_interval(self):
        rep = check_regularity(OpenSetUnion([(-2, 2)]))
        assert rep.passed and [c for _, c in rep.points] == [
            "D^c contains a left neighbourhood (p-eps, p]", "D^c contains a right neighbourhood [p, p+eps)"]

    def test_isolated_point(self):
        rep = check_regularity(OpenSetUnion([(-1, 0), (0, 1)]))
        assert rep.passed and (0.0, "isolated point of D^c") in rep.points

    def test_whole_line(self):
        assert check_regularity(OpenSetUnion([(-INF, INF)])).points == []


class TestSufficient:
    @pytest.mark.parametrize("name", ["fb_result", "pure_result", "sub_result", "two_well_result"])
    def test_constructed_pass(self, request, name):
        assert request.getfixturevalue(name).report.overall

    @pytest.mark.parametrize("xl,xr", [(-1.0, 0.5), (-0.2, 0.3), (0.5, 2.0)])
    def test_square_payoff_pure_interval_fails_smooth_fit(self, xl, xr):
        spec = bm_square(0.0, 1.0)
        s = Strategy.pure([(xl, xr)], 1.0)
        rep = check_sufficient(spec, s, *fields(spec, s))
        assert not rep.overall and "(iii)" in rep.failing()
        pts = {round(p["x"], 12): p["gap"] for p in rep["(iii)"].details["points"]}
        assert pts[round(xr, 12)] == pytest.approx(xr - xl, rel=1e-3)

    def test_rate_where_expected_time_below_T(self):
        T = 10.0
        spec = bm_abs(0.5, T)
        s = Strategy(OpenSetUnion([(-3, 3)]), RateFunction.indicator(-0.5, 0.5, 1.0 / T), T)
        rep = check_sufficient(spec, s, *fields(spec, s))
        assert not rep["(ii)"].passed and abs(rep["(ii)"].witness) < 0.5

    def test_interior_kink_in_stopping_region_fails(self):
        # |x| stopped everywhere: convex kink at 0 inside the stopping region
        spec = bm_abs(0.5, 1.0)
        s = Strategy.pure([(2.0, 3.0)], 1.0)
        rep = check_sufficient(spec, s, *fields(spec, s, 256))
        assert not rep["(i)"].passed and rep["(i)"].witness == 0.0

    def test_smooth_fit_equality_at_free_boundary(self, fb_result):
        tol = fb_result.report.tolerances["derivative"]
        for p in fb_result.report["(iii)"].details["points"]:
            assert abs(p["gap"]) <= 10 * tol

    def test_deterministic(self, fb_result):
        spec = bm_abs(0.01, 10.0)
        a = check_sufficient(spec, fb_result.strategy, fb_result.e, fb_result.J)
        b = check_sufficient(spec, fb_result.strategy, fb_result.e, fb_result.J)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_table_lists_conditions(self, fb_result):
        text = fb_result.report.table()
        assert text.splitlines()[0] == "sufficient conditions: PASS"
        assert all(f"({k})" in text for k in ("i", "ii", "iii", "iv"))

    def test_json_serialisable(self, fb_result):
        json.dumps(fb_result.report.to_dict(), allow_nan=False)


class TestNecessary:
    def test_full_randomization_passes_through_time_branch(self, sub_result):
        rep = check_necessary(bm_abs(0.0, 1.0), sub_result.strategy, sub_result.e, sub_result.J)
        assert rep.overall and rep["(iv)"].details["e_gap"] <= 1e-6

    def test_rate_where_neither_branch_holds(self):
        T = 10.0
        spec = bm_abs(0.5, T)
        s = Strategy(OpenSetUnion([(-3, 3)]), RateFunction.indicator(-0.5, 0.5, 1.0 / T), T)
        e, J = fields(spec, s)
        assert np.all(e(np.linspace(-0.4, 0.4, 9)) < T - 1)
        rep = check_necessary(spec, s, e, J)
        d = rep["(iv)"].details
        assert not rep["(iv)"].passed and d["g_gap"] > 0.05 and d["e_gap"] > 1.0

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-2.0, 1.0), st.floats(0.1, 2.0))
    def test_square_payoff_never_pure_equilibrium(self, xl, width):
        spec = bm_square(0.0, 1.0)
        s = Strategy.pure([(xl, xl + width)], 1.0)
        e, J = fields(spec, s, 512)
        assert not check_necessary(spec, s, e, J)["(iii)"].passed


@pytest.mark.parametrize("name,r,T", [("fb_result", 0.01, 10.0), ("pure_result", 0.5, 2.0),
                                      ("sub_result", 0.0, 1.0), ("two_well_result", 0.72, 1.0)])
def test_sufficient_implies_necessary(request, name, r, T):
    from randstop.problems import two_well
    res = request.getfixturevalue(name)
    spec = two_well(r, T) if name == "two_well_result" else bm_abs(r, T)
    suff = check_sufficient(spec, res.strategy, res.e, res.J)
    assert (not suff.overall) or check_necessary(spec, res.strategy, res.e, res.J).overall
