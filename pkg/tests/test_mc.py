import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randstop.construct import construct_equilibrium
from randstop.diffusion import constant
from randstop.errors import DomainError
from randstop.expected_time import expected_time_field
from randstop.mc import (BLOCK, McEstimate, block_rng, canned_deviations, estimate_e_and_J,
                         estimate_perturbation_gap, occupation_ratio, sample_stopping)
from randstop.problems import bm_abs
from randstop.reward import reward_closed_form_bm, reward_field
from randstop.strategy import OpenSetUnion, RateFunction, Strategy

from conftest import FREE_BOUNDARY_REF

INF = math.inf


def test_block_streams_are_distinct_and_repeatable():
    a = block_rng(5, 0).standard_normal(4)
    assert np.array_equal(a, block_rng(5, 0).standard_normal(4))
    assert not np.array_equal(a, block_rng(5, 1).standard_normal(4))
    assert not np.array_equal(a, block_rng(6, 0).standard_normal(4))


class TestSampleStopping:
    def test_immediate_stop_outside_D(self):
        tau, x, pay, cens = sample_stopping(bm_abs(0.5, 1.0), Strategy.pure([(1, 2)], 1.0), 0.3, 1e-3,
                                            np.random.default_rng(0))
        assert (tau, x, pay, cens) == (0.0, 0.3, 0.3, False)

    def test_symmetric_exit(self):
        rng = np.random.default_rng(11)
        s = Strategy.pure([(-0.2, 0.2)], 1.0)
        xs = [sample_stopping(bm_abs(0.0, 1.0), s, 0.0, 1e-4, rng)[1] for _ in range(400)]
        assert set(np.round(xs, 12)) <= {-0.2, 0.2}
        assert abs(np.mean(np.array(xs) > 0) - 0.5) <= 3 * 0.5 / math.sqrt(400)

    def test_outside_state_space(self):
        from randstop.problems import custom
        spec = custom("0", "1", "x", 0.0, 1.0, alpha=0.0, beta=1.0)
        with pytest.raises(DomainError):
            sample_stopping(spec, Strategy.pure([(0.2, 0.8)], 1.0), 1.5, 1e-3, np.random.default_rng(0))


class TestEstimates:
    def test_full_randomization_mean_time(self):
        T = 0.5
        e, J = estimate_e_and_J(bm_abs(0.0, T), Strategy.full_randomization(-INF, INF, T), 0.0, n=20000)
        assert e.within(T) and J.within(math.sqrt(T / 2), allowance=0.01)

    def test_pure_exit_from_unit_interval(self):
        e, _ = estimate_e_and_J(bm_abs(0.5, 1.0), Strategy.pure([(-1, 1)], 1.0), 0.0, n=20000, seed=2)
        assert e.within(1.0, allowance=0.01)

    def test_worker_count_does_not_change_result(self):
        spec = bm_abs(0.5, 1.0)
        s = Strategy(OpenSetUnion([(-1.2, 1.2)]), RateFunction.indicator(-0.2, 0.2, 1.0), 1.0)
        one = estimate_e_and_J(spec, s, 0.1, n=2 * BLOCK + 17, seed=9, workers=1)
        three = estimate_e_and_J(spec, s, 0.1, n=2 * BLOCK + 17, seed=9, workers=3)
        assert one == three

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 2**31))
    def test_same_seed_same_estimate(self, seed):
        spec = bm_abs(0.5, 1.0)
        s = Strategy.pure([(-0.5, 0.5)], 1.0)
        a = estimate_e_and_J(spec, s, 0.0, n=500, seed=seed)
        b = estimate_e_and_J(spec, s, 0.0, n=500, seed=seed)
        assert a == b

    def test_censoring_flag(self):
        spec = bm_abs(0.5, 1.0)
        e, J = estimate_e_and_J(spec, Strategy.pure([(-50, 50)], 1.0), 0.0, n=200, dt=1e-2, max_time=0.5)
        assert e.censored_fraction == 1.0 and e.flagged and math.isnan(e.mean)

    def test_too_few_paths(self):
        with pytest.raises(DomainError):
            estimate_e_and_J(bm_abs(0.5, 1.0), Strategy.pure([(-1, 1)], 1.0), 0.0, n=10)

    def test_to_dict(self):
        m = McEstimate(1.0, 0.1, 100, 3, 1e-3, x0=0.0)
        assert m.to_dict() == {"x0": 0.0, "mean": 1.0, "stderr": 0.1, "n": 100, "dt": 1e-3, "seed": 3,
                               "censoredFraction": 0.0, "flagged": False}


@pytest.mark.slow
def test_fields_agree_with_simulation_at_five_points():
    r, T = 0.5, 1.0
    b = FREE_BOUNDARY_REF[(r, T)][0]
    a = b - math.sqrt(T)
    spec = bm_abs(r, T)
    s = Strategy(OpenSetUnion([(-b, b)]), RateFunction.indicator(-a, a, 1.0 / T), T)
    e_f = expected_time_field(spec, s, n=1024)
    J_f = reward_field(spec, s, n=1024)
    dt = 1e-3
    for k, x0 in enumerate([-0.9, -0.1, 0.0, 0.6, 1.5]):
        e, J = estimate_e_and_J(spec, s, x0, n=20000, dt=dt, seed=100 + k)
        # C dt with C = 5 covers the Euler and interpolation bias
        assert e.within(e_f(x0), allowance=5 * dt), (x0, e.mean, e_f(x0))
        assert J.within(J_f(x0), allowance=5 * dt), (x0, J.mean, J_f(x0))
        assert J_f(x0) == pytest.approx(reward_closed_form_bm(r, T, b, x0), abs=1e-4)


@pytest.mark.slow
def test_step_refinement_reduces_monitoring_bias():
    spec = bm_abs(0.5, 1.0)
    s = Strategy.pure([(-1, 1)], 1.0)
    coarse, _ = estimate_e_and_J(spec, s, 0.0, n=20000, dt=1e-2, seed=1, bridge=False)
    fine, _ = estimate_e_and_J(spec, s, 0.0, n=20000, dt=2.5e-3, seed=1, bridge=False)
    assert abs(coarse.mean - 1.0) > abs(fine.mean - 1.0) + 2 * fine.stderr


class TestPerturbationGap:
    def test_self_deviation_is_zero(self, sub_result):
        spec = bm_abs(0.0, 1.0)
        g = estimate_perturbation_gap(spec, sub_result.strategy, sub_result.strategy, 0.0, 0.1, n=2000,
                                      e_field=sub_result.e)
        assert g.mean == 0.0 and g.stderr == 0.0 and g.extra["admissible"]

    def test_stop_now_recovers_reward_gap(self, sub_result):
        spec = bm_abs(0.0, 1.0)
        h = 0.05
        g = estimate_perturbation_gap(spec, sub_result.strategy, canned_deviations(sub_result.strategy)["stop-now"],
                                      0.0, h, n=4000, e_field=sub_result.e)
        # gap * E[tau_h] is the reward difference; as h -> 0 it tends to J(0) - g(0)
        assert g.mean * g.extra["meanTauH"] == pytest.approx(g.extra["rewardDifference"], rel=1e-9)
        assert g.extra["rewardDifference"] == pytest.approx(math.sqrt(0.5), abs=0.05)
        assert g.extra["meanTauH"] == pytest.approx(h * h, rel=0.05)

    def test_never_stop_is_flagged_inadmissible(self, fb_result):
        spec = bm_abs(0.01, 10.0)
        dev = canned_deviations(fb_result.strategy)["never-stop"]
        g = estimate_perturbation_gap(spec, fb_result.strategy, dev, 0.0, 0.1, n=2000, e_field=fb_result.e)
        assert not g.extra["admissible"] and g.flagged and "inadmissible deviation" in g.extra["flags"]

    def test_window_must_fit(self):
        from randstop.problems import custom
        spec = custom("0", "1", "x", 0.0, 1.0, alpha=0.0, beta=1.0)
        s = Strategy.pure([(0.2, 0.8)], 1.0)
        with pytest.raises(DomainError):
            estimate_perturbation_gap(spec, s, s, 0.05, 0.1, n=100)

    def test_canned_families(self, fb_result):
        devs = canned_deviations(fb_result.strategy)
        assert set(devs) == {"stop-now", "never-stop", "widen-D", "shrink-rate"}
        assert devs["shrink-rate"].psi(0.0) == 0.5 * fb_result.strategy.psi(0.0)
        (lo, hi), = devs["widen-D"].D.intervals
        (l0, h0), = fb_result.strategy.D.intervals
        assert (lo, hi) == (l0 - 0.5, h0 + 0.5)


class TestOccupation:
    def test_half_at_zero(self):
        est = occupation_ratio(bm_abs(0.0, 1.0), 0.0, 0.05, n=8192, seed=4)
        assert abs(est.mean - 0.5) <= 0.02

    def test_drift_does_not_matter_in_the_limit(self):
        spec = bm_abs(0.0, 1.0).with_(drift=constant(0.5))
        est = occupation_ratio(spec, 0.3, 0.02, n=8192, seed=5)
        assert abs(est.mean - 0.5) <= 0.03

    def test_sides_add_to_one(self):
        spec = bm_abs(0.0, 1.0)
        up = occupation_ratio(spec, 1.0, 0.05, n=2048, seed=6, side="above")
        down = occupation_ratio(spec, 1.0, 0.05, n=2048, seed=6, side="below")
        assert up.mean + down.mean == pytest.approx(1.0, abs=1e-3)

    def test_bad_side(self):
        with pytest.raises(ValueError):
            occupation_ratio(bm_abs(0.0, 1.0), 0.0, 0.1, side="left")
