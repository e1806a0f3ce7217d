import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplfm.special import erf, erfcx, exp_erf_sum


def mp_exp_erf_sum(c, x, y):
    # enough digits to survive the cancellation in erf(x) + erf(y): both sit
    # within ~exp(-min(x^2, y^2)) of +-1, and exp(c) may be huge on top
    digits = (max(c, 0.0) + min(x * x, y * y)) / 2.3 + 60
    with mpmath.workdps(int(digits)):
        return float(mpmath.exp(c) * (mpmath.erf(x) + mpmath.erf(y)))


@pytest.mark.parametrize("x", [-6.0, -2.5, -0.3, 0.0, 1e-8, 0.2, 1.0, 3.7, 5.9])
def test_erf_matches_mpmath(x):
    with mpmath.workdps(40):
        ref = float(mpmath.erf(x))
    assert abs(erf(x) - ref) <= 1e-15


@pytest.mark.parametrize("x", [-5.0, -1.0, 0.0, 0.5, 2.0, 10.0, 30.0, 1e3, 1e6])
def test_erfcx_matches_mpmath(x):
    with mpmath.workdps(60):
        ref = float(mpmath.exp(mpmath.mpf(x) ** 2) * mpmath.erfc(x))
    assert erfcx(x) == pytest.approx(ref, rel=1e-14)


def test_exp_erf_sum_no_overflow_where_naive_fails():
    c, x, y = 900.0, -29.0, 31.0
    with np.errstate(over="ignore"):
        naive = np.exp(c) * (erf(x) + erf(y))
    assert not np.isfinite(naive)
    got = exp_erf_sum(c, x, y)
    assert np.isfinite(got)
    assert got == pytest.approx(mp_exp_erf_sum(c, x, y), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    nu=st.floats(0.0, 40.0),
    a=st.floats(-60.0, 60.0),
    b=st.floats(-60.0, 60.0),
)
def test_exp_erf_sum_against_mpmath(nu, a, b):
    # the shape that occurs in the kernel: exp(nu^2 + shift) (erf(a - nu) + erf(b + nu))
    c = nu * nu - 0.5 * abs(a)
    x, y = a - nu, b + nu
    ref = mp_exp_erf_sum(c, x, y)
    got = float(exp_erf_sum(c, x, y))
    if not np.isfinite(ref):
        return
    assert got == pytest.approx(ref, rel=1e-11, abs=1e-290)


def test_exp_erf_sum_broadcasts():
    out = exp_erf_sum(np.zeros((2, 1)), np.array([0.1, -0.2, 0.3]), 0.5)
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out[0], erf(np.array([0.1, -0.2, 0.3])) + erf(0.5), rtol=1e-15)
