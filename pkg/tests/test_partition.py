import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpslab.errors import EmptyKernelError, OutOfDomainError
from gpslab.free_energy import solve_nh, tilted_law
from gpslab.loop_law import KernelSpec, build_free_end_weights, build_loop_law, FreeEndWeights
from gpslab.partition import (
    ScaledValue, compute_zc, compute_zf, dp_free_energy, dump_table, hitting_prob_exact, load_table,
)

from oracles import brute_zc, brute_zf, hit_prob_by_paths

SMALL_LAW = build_loop_law(KernelSpec(alpha=0.5, support_cap=12))


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_single_cells(two_point):
    h = 1.0
    t = compute_zc(two_point, h, 2, 2)
    assert t.cell(1, 1).to_float() == pytest.approx(math.e * 0.5, rel=1e-15)
    expected = math.e * two_point.K(4) + (math.e * 0.5) ** 2
    assert t.cell(2, 2).to_float() == pytest.approx(expected, rel=1e-15)
    assert t.cell(2, 1).to_float() == pytest.approx(math.e * 0.25, rel=1e-15)
    assert t.cell(1, 0).is_zero and t.cell(0, 0).to_float() == 1.0


@pytest.mark.parametrize("method", ["fast", "naive"])
@pytest.mark.parametrize("N, M", [(1, 1), (2, 3), (4, 4), (5, 3), (3, 6)])
def test_matches_enumeration(method, N, M):
    h = 0.7
    t = compute_zc(SMALL_LAW, h, N, M, method=method)
    for n in range(1, N + 1):
        for m in range(1, M + 1):
            ref = brute_zc(SMALL_LAW.K, h, n, m)
            assert _rel(t.cell(n, m).to_float(), ref) <= 1e-12


@given(N=st.integers(1, 5), M=st.integers(1, 5), h=st.floats(-1.0, 2.0), cap=st.integers(2, 10))
@settings(max_examples=40, deadline=None)
def test_loop_cap_matches_truncated_kernel(N, M, h, cap):
    t = compute_zc(SMALL_LAW, h, N, M, loop_cap=cap)
    K = lambda s: SMALL_LAW.K(s) if s <= cap else 0.0  # noqa: E731
    ref = brute_zc(K, h, N, M)
    got = t.cell(N, M).to_float()
    assert got == ref == 0.0 or _rel(got, ref) <= 1e-12


def test_loop_cap_below_two_rejected(two_point):
    with pytest.raises(EmptyKernelError):
        compute_zc(two_point, 1.0, 3, 3, loop_cap=1)


def test_rejects_empty_grid(two_point):
    with pytest.raises(OutOfDomainError):
        compute_zc(two_point, 1.0, 0, 3)


def test_fast_matches_naive_on_medium_grid(law05):
    fast = compute_zc(law05, 1.0, 30, 40)
    naive = compute_zc(law05, 1.0, 30, 40, method="naive")
    lf, ln = fast.log_table(), naive.log_table()
    mask = np.isfinite(ln)
    np.testing.assert_array_equal(np.isfinite(lf), mask)
    assert np.max(np.abs(np.expm1(lf[mask] - ln[mask]))) <= 1e-12


def test_delta_kernel_diagonal(delta):
    h = 0.8
    t = compute_zc(delta, h, 6, 6)
    for n in range(7):
        for m in range(7):
            if n == m:
                assert t.log_z(n, m) == pytest.approx(n * h, abs=1e-13)
            else:
                assert t.cell(n, m).is_zero
    assert hitting_prob_exact(delta, h, 6, 6, table=t) == pytest.approx(1.0, abs=1e-13)
    assert hitting_prob_exact(delta, h, 6, 5, table=compute_zc(delta, h, 6, 5)) == 0.0


@pytest.mark.parametrize("N, M", [(3, 3), (4, 6), (6, 4)])
def test_hitting_probability_by_paths(N, M):
    h = 1.0
    nh = solve_nh(SMALL_LAW, h)
    ref = hit_prob_by_paths(SMALL_LAW.K, h, nh, N, M)
    assert hitting_prob_exact(SMALL_LAW, h, N, M) == pytest.approx(ref, rel=1e-12)


@given(h1=st.floats(-1.0, 2.0), dh=st.floats(0.01, 1.0))
@settings(max_examples=25, deadline=None)
def test_monotone_in_h(h1, dh):
    a = compute_zc(SMALL_LAW, h1, 6, 7).log_table()
    b = compute_zc(SMALL_LAW, h1 + dh, 6, 7).log_table()
    mask = np.isfinite(a)
    mask[0, 0] = False  # the empty path carries no reward
    assert np.all(b[mask] > a[mask])


@pytest.mark.parametrize("fw", [
    FreeEndWeights.identity(8),
    build_free_end_weights(0.5, J_max=20),
    build_free_end_weights(1.0, J_max=20),
    build_free_end_weights(3.5, J_max=20),
], ids=["identity", "a0.5", "a1", "a3.5"])
@pytest.mark.parametrize("N, M", [(1, 1), (3, 4), (5, 5)])
def test_free_partition_matches_enumeration(fw, N, M):
    h = 0.9
    got = compute_zf(SMALL_LAW, fw, h, N, M).to_float()
    Kf = lambda j: float(fw.weight(j))  # noqa: E731
    assert got == pytest.approx(brute_zf(SMALL_LAW.K, Kf, h, N, M), rel=1e-12)


def test_free_partition_identity_equals_constrained(law05):
    t = compute_zc(law05, 1.0, 20, 25)
    zf = compute_zf(law05, FreeEndWeights.identity(30), 1.0, 20, 25, table=t)
    assert zf.log() == pytest.approx(t.log_z(20, 25), abs=1e-13)


def test_table_dimension_mismatch(law05):
    t = compute_zc(law05, 1.0, 5, 5)
    with pytest.raises(ValueError):
        compute_zf(law05, FreeEndWeights.identity(5), 1.0, 5, 6, table=t)


def test_dump_and_load_round_trip(tmp_path, law05):
    t = compute_zc(law05, 1.0, 12, 17)
    path = tmp_path / "z.bin"
    dump_table(t, path)
    u = load_table(path, law=law05)
    assert (u.N, u.M, u.h) == (12, 17, 1.0)
    np.testing.assert_array_equal(u.mantissa, t.mantissa)
    np.testing.assert_array_equal(u.exponent, t.exponent)
    np.testing.assert_array_equal(u.kernel, t.kernel)
    assert u.diag_prefix is not None


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"hello world" * 10)
    with pytest.raises(ValueError):
        load_table(p)


@pytest.mark.parametrize("shift", [900, -900, 5000])
def test_base_exponent_shift_is_exact(law05, shift):
    ref = compute_zc(law05, 1.0, 25, 30)
    shifted = compute_zc(law05, 1.0, 25, 30, _base_exponent=shift)
    np.testing.assert_array_equal(shifted.mantissa, ref.mantissa)
    nz = ref.mantissa != 0
    np.testing.assert_array_equal(shifted.exponent[nz] - ref.exponent[nz], shift)


def test_large_table_has_no_overflow(law05):
    t = compute_zc(law05, 5.0, 300, 450)
    lz = t.log_z(300, 450)
    assert 709 < lz <= 300 * solve_nh(law05, 5.0)
    assert math.isinf(t.cell(300, 450).to_float())


def test_dp_free_energy_delta(delta):
    est = dp_free_energy(delta, 0.6, 1.0, [10, 20, 40])
    np.testing.assert_allclose(est.values, 0.6, atol=1e-13)
    assert est.extrapolated == pytest.approx(0.6, abs=1e-12)
    assert len(est.as_list()) == 4


def test_dp_free_energy_approaches_root(law05):
    tl = tilted_law(law05, 1.0)
    est = dp_free_energy(law05, 1.0, tl.gamma_c + 0.5, [50, 100, 200])
    gaps = [tl.nh - v for v in est.values]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert abs(est.extrapolated - tl.nh) < gaps[-1]


def test_dp_free_energy_grid_checks(law05):
    with pytest.raises(ValueError):
        dp_free_energy(law05, 1.0, 1.5, [20, 10])


@pytest.mark.parametrize("x", [0.0, 1.0, 3.5, 1e-300, 1e300])
def test_scaled_value_round_trip(x):
    v = ScaledValue.from_float(x)
    assert v.to_float() == x
    if x > 0:
        assert ScaledValue.from_log(math.log(x)).to_float() == pytest.approx(x, rel=1e-12)
        assert (v * 4.0).to_float() == pytest.approx(4 * x)


def test_scaled_value_validation():
    with pytest.raises(ValueError):
        ScaledValue(3.0, 0)
    with pytest.raises(ValueError):
        ScaledValue.from_float(-1.0)
    assert ScaledValue.from_log(2000.0).to_float() == math.inf
