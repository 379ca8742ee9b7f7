import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmabc.exceptions import InadmissiblePadeError
from helmabc.pade import (
    PadeAbc,
    admissibility_check,
    compute_pade,
    find_zeros,
    impedance,
    pade_order,
    reflection_coefficient,
    reflection_profile,
    sqrt_taylor,
    upsilon_circle,
)

ADMISSIBLE = [(M, N) for M in range(7) for N in range(7) if M + N <= 6 and M in (N, N + 1)]


def series_of_ratio(p, q, n):
    """Taylor coefficients of p/q by long division (float oracle)."""
    p = list(p) + [0.0] * n
    out = []
    for i in range(n):
        c = p[i] - sum(q[j] * out[i - j] for j in range(1, min(i, len(q) - 1) + 1))
        out.append(c / q[0])
    return np.array(out)


def sqrt_series_float(n):
    c = [1.0]
    for m in range(1, n):
        c.append(c[-1] * (m - 1.5) / m)
    return np.array(c)


# --- coefficients -----------------------------------------------------------
def test_impedance_coefficients():
    abc = compute_pade(0, 0)
    assert abc.p == (1.0,) and abc.q == (1.0,)
    assert impedance() == abc


def test_pade_1_0():
    abc = compute_pade(1, 0)
    assert abc.p_exact == (Fraction(1), Fraction(-1, 2))
    assert abc.q_exact == (Fraction(1),)


def test_pade_1_1():
    abc = compute_pade(1, 1)
    assert abc.p_exact == (Fraction(1), Fraction(-3, 4))
    assert abc.q_exact == (Fraction(1), Fraction(-1, 4))
    # (1 - 3t/4)/(1 - t/4) = 1 - t/2 - t²/8 + O(t³)
    s = series_of_ratio(abc.p, abc.q, 3)
    np.testing.assert_allclose(s, [1.0, -0.5, -0.125], atol=1e-15)


@pytest.mark.parametrize("M,N", [(2, 0), (0, 1), (3, 1), (1, 2), (-1, -1)])
def test_inadmissible_pairs_rejected(M, N):
    with pytest.raises(InadmissiblePadeError, match="M = N or M = N \\+ 1|nonnegative"):
        compute_pade(M, N)


def test_sqrt_taylor_recurrence():
    c = sqrt_taylor(6)
    assert c[:4] == [Fraction(1), Fraction(-1, 2), Fraction(-1, 8), Fraction(-1, 16)]


@pytest.mark.parametrize("M,N", ADMISSIBLE)
def test_series_matches_through_degree_M_plus_N(M, N):
    abc = compute_pade(M, N)
    n = M + N + 1
    diff = series_of_ratio(abc.p, abc.q, n) - sqrt_series_float(n)
    assert np.max(np.abs(diff)) < 1e-12
    assert abc.q[0] == 1.0 and abc.p[-1] != 0 and abc.q[-1] != 0


# --- order ------------------------------------------------------------------
@pytest.mark.parametrize("M,N,expected", [(0, 0, 1), (1, 0, 2), (1, 1, 3)])
def test_pade_order_values(M, N, expected):
    assert pade_order(compute_pade(M, N)) == expected


@pytest.mark.parametrize("M,N", ADMISSIBLE)
def test_order_at_least_M_plus_N_plus_1(M, N):
    abc = compute_pade(M, N)
    assert abc.m_ord >= M + N + 1


def test_order_from_float_coefficients():
    abc = PadeAbc(1, 1, (1.0, -0.75), (1.0, -0.25))
    assert not abc.is_exact
    assert pade_order(abc) == 3


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(ADMISSIBLE), st.integers(min_value=-9, max_value=9).filter(lambda v: v != 0))
def test_order_invariant_under_scaling(pair, factor):
    abc = compute_pade(*pair)
    assert pade_order(abc.scaled(factor)) == pade_order(abc)


# --- zeros ------------------------------------------------------------------
@pytest.mark.parametrize("M,N", ADMISSIBLE)
def test_pade_pairs_have_no_vanishing_angles(M, N):
    abc = compute_pade(M, N)
    assert find_zeros(abc) == []
    assert abc.psi == () and abc.m_vanish == 0 and abc.m_mult == 0


def test_simple_zero_hand_built():
    # p = 1 − 2t/3: Q = −t(4t − 3)/9, simple root at t = 3/4
    abc = PadeAbc.from_coefficients([1, Fraction(-2, 3)], [1])
    zeros = find_zeros(abc)
    assert len(zeros) == 1
    t, m = zeros[0]
    assert abs(t - 0.75) < 1e-12 and m == 1
    assert abs(abc.psi[0] - math.pi / 3) < 1e-12
    assert reflection_coefficient(abc, abc.psi[0]) < 1e-20


def test_double_zero_hand_built():
    # p = 1 − t/3 − 4t²/9: Q = −t(4t − 3)²(t + 3)/81, double root at t = 3/4
    abc = PadeAbc.from_coefficients([1, Fraction(-1, 3), Fraction(-4, 9)], [1])
    zeros = find_zeros(abc)
    assert len(zeros) == 1
    t, m = zeros[0]
    assert abs(t - 0.75) < 1e-12 and m == 2
    assert abc.m_mult == 2


# --- reflection -------------------------------------------------------------
def test_impedance_reflection_closed_form():
    th = np.linspace(0, 1.5, 100)
    alpha = reflection_coefficient(impedance(), th)
    exact = ((1 - np.cos(th)) / (1 + np.cos(th))) ** 2
    np.testing.assert_allclose(alpha, exact, rtol=0, atol=1e-12)
    assert abs(reflection_coefficient(impedance(), math.pi / 3) - 1 / 9) < 1e-15


@pytest.mark.parametrize("M,N", ADMISSIBLE)
def test_reflection_vanishes_at_normal_incidence(M, N):
    assert reflection_coefficient(compute_pade(M, N), 0.0) == 0.0


def test_pade_1_1_reflection_small():
    abc = compute_pade(1, 1)
    a1, a2 = reflection_coefficient(abc, 0.1), reflection_coefficient(abc, 0.2)
    assert a1 < a2 < 1e-4
    # q√(1−t) − p = −t³/32 + O(t⁴), denominator 2 + O(t)
    t = math.sin(0.1) ** 2
    assert abs(math.sqrt(a1) / (t**3 / 64) - 1) < 0.05


@pytest.mark.parametrize("M,N", [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)])
def test_near_normal_slope(M, N):
    abc = compute_pade(M, N)
    th = np.geomspace(1e-3, 1e-2, 20)
    slope = np.polyfit(np.log(th), np.log(reflection_coefficient(abc, th)), 1)[0]
    assert abs(slope - 4 * abc.m_ord) < 0.05


def test_glancing_rejected():
    with pytest.raises(ValueError, match="glancing"):
        reflection_coefficient(impedance(), math.pi / 2)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(ADMISSIBLE), st.floats(min_value=0.0, max_value=1.5))
def test_reflection_in_unit_interval(pair, theta):
    a = reflection_coefficient(compute_pade(*pair), theta)
    assert 0.0 <= a <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(ADMISSIBLE), st.floats(min_value=0.0, max_value=1.5))
def test_reflection_depends_on_sin_squared_only(pair, theta):
    abc = compute_pade(*pair)
    # rebuild the angle from t = sin²θ alone
    t = math.sin(theta) ** 2
    assert reflection_coefficient(abc, math.asin(math.sqrt(t))) == pytest.approx(
        reflection_coefficient(abc, theta), rel=1e-9, abs=1e-300
    )


def test_reflection_profile():
    prof = reflection_profile(impedance(), [0.0, math.pi / 3])
    arr = prof.as_array()
    assert arr.shape == (2, 2)
    assert arr[0, 1] == 0.0 and abs(arr[1, 1] - 1 / 9) < 1e-15


# --- admissibility ----------------------------------------------------------
def test_admissibility_pass_cases():
    assert admissibility_check(impedance()).passed
    rep = admissibility_check(compute_pade(1, 1))
    assert rep.passed and rep.interlacing
    assert rep.p_roots_in_interval == () and rep.q_roots_in_interval == ()


def test_admissibility_fails_with_root_at_one():
    rep = admissibility_check(PadeAbc.from_coefficients([1, -1], [1]))
    assert not rep.passed
    assert rep.p_roots_in_interval == pytest.approx((1.0,))
    assert "p has roots" in rep.message


@pytest.mark.parametrize("M,N", ADMISSIBLE)
def test_admissible_pairs_positive_on_interval(M, N):
    abc = compute_pade(M, N)
    t = np.linspace(-1, 1, 2001)
    assert np.all(abc.eval_p(t) > 0) and np.all(abc.eval_q(t) > 0)
    assert admissibility_check(abc).passed


# --- Υ ---------------------------------------------------------------------
@pytest.mark.parametrize("R", [2.0, 10.0, 50.0])
def test_upsilon_impedance_closed_form(R):
    # impedance: |cosθ − 1| + 2 sin²θ, maximal at the cone edge cosθ = 1 − 1/R²
    assert upsilon_circle(impedance(), R, 1.0) == pytest.approx(5 / R**2 - 2 / R**4, rel=1e-9)


@pytest.mark.parametrize("pair,expected,tol", [((0, 0), -2.0, 0.1), ((1, 1), -6.0, 0.2)])
def test_upsilon_scaling(pair, expected, tol):
    R = np.array([4, 8, 16, 32, 64], float)
    vals = [upsilon_circle(compute_pade(*pair), r) for r in R]
    slope = np.polyfit(np.log(R), np.log(vals), 1)[0]
    assert abs(slope - expected) < tol


def test_upsilon_rejects_bad_arguments():
    with pytest.raises(ValueError):
        upsilon_circle(impedance(), 0.5)
    with pytest.raises(ValueError):
        upsilon_circle(impedance(), 4.0, cone_constant=0.0)
