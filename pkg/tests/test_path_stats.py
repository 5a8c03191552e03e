import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpslab.errors import SpecInfeasibleError, WrongBranchError
from gpslab.free_energy import tilted_law
from gpslab.loop_law import KernelSpec, build_free_end_weights, build_loop_law
from gpslab.partition import compute_zc
from gpslab.path_stats import (
    EventSpec, PathSummary, c_h, classify_event, default_event_spec, empirical_event_probs,
    mixed_parameters, predicted_probs, slow_multiplier, summarize, summarize_batch, theoretical_QN,
    theoretical_tildeQN, wilson_interval,
)
from gpslab.sampler import Trajectory, sample_free_batch


def _spec(t=200, a=40, m=10, u=6, v=None, eps=None):
    return EventSpec(u_N=u, m_N_plus=m, a_N_plus=a, a_N_tilde_plus=a, t_N=t, v_N=v, eps_N=eps)


def test_summarize_example():
    ps = summarize(Trajectory(((1, 1), (1, 5), (2, 2)), 0, 3))
    assert (ps.kappa, ps.M1, ps.M2, ps.V1, ps.V2) == (3, 5, 2, 0, 3)
    assert (ps.total_l, ps.total_t) == (4, 8)


def test_summarize_single_loop():
    ps = summarize(Trajectory(((1, 1),)))
    assert (ps.M1, ps.M2, ps.kappa) == (1, 0, 1)


def test_batch_summaries_match_direct(law05):
    table = compute_zc(law05, 1.0, 50, 90)
    batch = sample_free_batch(table, build_free_end_weights(1.0), 300, 12)
    fast = summarize_batch(batch)
    for tr, ps in zip(batch, fast):
        ts = [t for _, t in tr.loops]
        assert ps == summarize(tr)
        assert ps.M1 == (max(ts) if ts else 0)
        assert ps.M1 >= ps.M2 >= 0


def test_default_spec_feasible_at_400(tl05):
    N = 400
    spec = default_event_spec(tl05, N, int(round(tl05.gamma_c * N + 200)))
    assert spec.t_N == 200
    assert spec.violations(tl05.scaling_m(N), tl05.scaling_a(N)) == []
    assert spec.u_N == math.ceil(math.log(N))
    assert spec.m_N_plus > tl05.scaling_m(N) and spec.a_N_plus > tl05.scaling_a(N)
    assert not spec.has_mixed


def test_spec_infeasible_when_excess_equals_scale(tl05):
    N = 400
    with pytest.raises(SpecInfeasibleError):
        default_event_spec(tl05, N, tl05.gamma_c * N + tl05.scaling_a(N))


def test_spec_infeasible_at_small_N(tl05):
    with pytest.raises(SpecInfeasibleError):
        default_event_spec(tl05, 10, tl05.gamma_c * 10 + 5)


def test_spec_nonstrict_reports_violations(tl05):
    spec = default_event_spec(tl05, 10, tl05.gamma_c * 10 + 5, strict=False)
    assert spec.violations(tl05.scaling_m(10), tl05.scaling_a(10))


def test_spec_rejects_negative_excess(tl05):
    with pytest.raises(SpecInfeasibleError):
        default_event_spec(tl05, 100, 50)


def test_slow_multiplier_grows():
    vals = [slow_multiplier(10.0 ** k) for k in range(2, 12)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert slow_multiplier(2.0) == 1.0


def test_mixed_parameters_fill_on_divergent_branch(tl05):
    fw = build_free_end_weights(1.0)
    N = 400
    spec = default_event_spec(tl05, N, tl05.gamma_c * N + 1500, fw=fw)
    assert spec.has_mixed
    assert spec.v_N == spec.u_N + 1
    assert 0 < spec.eps_N < 1 and spec.eps_N * spec.t_N >= spec.v_N
    assert fw.kbar(int(spec.eps_N * spec.t_N)) >= (1 - 1 / math.log(N)) * fw.kbar(spec.t_N)


def test_mixed_parameters_shrink_with_excess():
    fw = build_free_end_weights(1.0)
    eps = [mixed_parameters(fw, t, 6, 400)[1] for t in (10**3, 10**5, 10**7)]
    assert eps[0] >= eps[1] >= eps[2]


@pytest.mark.parametrize("ps, label", [
    (PathSummary(5, 200, 0, 0, 0, 0, 0), "BL0"),
    (PathSummary(5, 200, 3, 2, 0, 0, 0), "BL"),
    (PathSummary(5, 1, 1, 0, 200, 0, 0), "US"),
    (PathSummary(5, 200 - 40 - 1, 0, 0, 0, 0, 0), "other"),
    (PathSummary(5, 200 + 40, 9, 6, 6, 0, 0), "BL"),
    (PathSummary(5, 200, 10, 0, 0, 0, 0), "other"),
    (PathSummary(5, 9, 1, 6, 160, 0, 0), "US"),
    (PathSummary(5, 9, 1, 7, 160, 0, 0), "other"),
])
def test_classify_examples(ps, label):
    assert classify_event(ps, _spec()) == label


def test_classify_mixed():
    spec = _spec(v=8, eps=0.25)
    assert classify_event(PathSummary(4, 190, 2, 1, 30, 0, 0), spec) == "mixed"
    assert classify_event(PathSummary(4, 190, 2, 1, 5, 0, 0), spec) == "BL"
    assert classify_event(PathSummary(4, 190, 2, 1, 7, 0, 0), spec) == "other"
    assert classify_event(PathSummary(4, 190, 2, 1, 51, 0, 0), spec) == "other"
    assert classify_event(PathSummary(4, 190, 2, 1, 30, 0, 0), _spec()) == "other"


@given(M1=st.integers(0, 400), M2=st.integers(0, 400), V1=st.integers(0, 20), V2=st.integers(0, 400))
@settings(max_examples=300)
def test_big_loop_and_strand_are_disjoint(M1, M2, V1, V2):
    M2 = min(M1, M2)
    spec = _spec()
    ps = PathSummary(3, M1, M2, V1, V2, 0, 0)
    bl = (spec.t_N - spec.a_N_plus <= M1 <= spec.t_N + spec.a_N_plus and M2 < spec.m_N_plus
          and max(V1, V2) <= spec.u_N)
    us = (M1 < spec.m_N_plus and V1 <= spec.u_N
          and spec.t_N - spec.a_N_tilde_plus <= V2 <= spec.t_N + spec.a_N_tilde_plus)
    assert not (bl and us)
    label = classify_event(ps, spec)
    assert label in {"BL0", "BL", "US", "mixed", "other"}
    assert (label in {"BL0", "BL"}) == bl
    assert (label == "US") == us


def test_empirical_all_big_loop():
    samples = [PathSummary(3, 200, 0, 0, 0, 0, 0)] * 50
    ep = empirical_event_probs(samples, _spec())
    assert ep.p_BL == 1.0 and ep.p_BL0 == 1.0 and ep.p_US == 0.0
    assert ep.intervals["BL"] == pytest.approx(wilson_interval(50, 50))
    assert ep.intervals["BL"][0] < 1.0


def test_empirical_recovers_mixture_weights():
    spec = _spec()
    samples = ([PathSummary(3, 200, 0, 0, 0, 0, 0)] * 30 + [PathSummary(3, 200, 1, 1, 0, 0, 0)] * 20
               + [PathSummary(3, 1, 1, 0, 200, 0, 0)] * 40 + [PathSummary(3, 50, 1, 0, 0, 0, 0)] * 10)
    ep = empirical_event_probs(samples, spec)
    assert (ep.p_BL, ep.p_BL0, ep.p_US, ep.p_mixed, ep.p_other) == (0.5, 0.3, 0.4, 0.0, 0.1)
    assert ep.p_BL + ep.p_US + ep.p_mixed + ep.p_other == pytest.approx(1.0, abs=1e-12)
    assert ep.n_samples == 100
    assert set(ep.to_json()) >= {"p_BL", "p_US", "p_mixed", "p_BL0", "p_other", "intervals"}


def test_empirical_requires_samples():
    with pytest.raises(ValueError):
        empirical_event_probs([], _spec())


@pytest.mark.parametrize("k, n", [(0, 10), (3, 10), (10, 10), (500, 10000)])
def test_wilson_interval_formula(k, n):
    z = 1.959963984540054
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(max(0.0, centre - half), abs=1e-12)
    assert hi == pytest.approx(min(1.0, centre + half), abs=1e-12)


def test_QN_cancelling_exponent(law05, tl05):
    fw = build_free_end_weights(2.5)
    for N, t in [(100, 50.0), (400, 1000.0)]:
        assert theoretical_QN(law05, fw, tl05, N, t) == pytest.approx(
            c_h(fw, tl05) * N * law05.c_K, rel=1e-12)


@pytest.mark.parametrize("alpha_bar, direction", [(1.2, "down"), (2.0, "up")])
def test_QN_trend_for_linear_excess(law05, tl05, alpha_bar, direction):
    fw = build_free_end_weights(alpha_bar)
    q = [theoretical_QN(law05, fw, tl05, N, 0.5 * N) for N in (10**2, 10**4, 10**6)]
    if direction == "down":
        assert q[0] > q[1] > q[2] and predicted_probs(q[2])[0] > 0.5
    else:
        assert q[0] < q[1] < q[2] and predicted_probs(q[2])[1] > 0.99


def test_QN_wrong_branches(law05, tl05, two_point, tl_two):
    with pytest.raises(WrongBranchError):
        theoretical_QN(law05, build_free_end_weights(1.0), tl05, 100, 50)
    with pytest.raises(WrongBranchError):
        theoretical_QN(two_point, build_free_end_weights(2.0), tl_two, 100, 50)
    with pytest.raises(WrongBranchError):
        theoretical_tildeQN(law05, build_free_end_weights(2.0), tl05, 100, 50)


def test_tildeQN_vanishes_for_finite_variance(law15, tl15):
    fw = build_free_end_weights(1.0)
    q = [theoretical_tildeQN(law15, fw, tl15, N, N) for N in (10**2, 10**3, 10**4, 10**5)]
    assert all(b < a for a, b in zip(q, q[1:]))


@pytest.mark.parametrize("excess, direction", [
    (lambda tl, N: tl.scaling_a(N) * slow_multiplier(N), "up"),
    (lambda tl, N: tl.scaling_a(N) * math.log(N), "down"),
], ids=["loglog", "log"])
def test_tildeQN_trend_for_slow_excess(law05, tl05, excess, direction):
    # tildeQ_N scales like N t^(-3/2) log t here, so only a very slow excess makes it grow
    fw = build_free_end_weights(1.0)
    Ns = (10**2, 10**3, 10**4, 10**5)
    q = [theoretical_tildeQN(law05, fw, tl05, N, excess(tl05, N)) for N in Ns]
    pairs = list(zip(q, q[1:]))
    if direction == "up":
        assert all(b > a for a, b in pairs)
    else:
        assert all(b < a for a, b in pairs)


def test_tildeQN_formula(law05, tl05):
    fw = build_free_end_weights(1.0)
    t = 321
    expected = 400 / tl05.mu1_hat * tl05.marginal2_pmf(t) * fw.kbar(t) * t
    assert theoretical_tildeQN(law05, fw, tl05, 400, 320.4) == pytest.approx(expected, rel=1e-12)


@given(st.floats(0.0, 1e12))
def test_predicted_probs_sum_to_one(q):
    us, other = predicted_probs(q)
    assert 0.0 <= us <= 1.0 and 0.0 <= other <= 1.0
    assert us + other == pytest.approx(1.0, abs=1e-12)


def test_predicted_probs_infinite():
    assert predicted_probs(math.inf) == (0.0, 1.0)


def test_QN_for_log_power_law():
    law = build_loop_law(KernelSpec(alpha=0.5, sv_family="log_power", sv_beta=1.0, analytic_tail=True))
    tl = tilted_law(law, 1.0)
    fw = build_free_end_weights(2.5, "log_power", sv_bar_beta=1.0)
    q = theoretical_QN(law, fw, tl, 400, 200.0)
    assert q == pytest.approx(c_h(fw, tl) * 400 * law.c_K, rel=1e-12)
