import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplfm.errors import ConfigError, NumericFailureError
from gplfm.kernels import LagTable
from gplfm.lfm import (
    EFoldingTime,
    LfmFirstOrder,
    LfmParams,
    efolding,
    lfm_cross_kernel,
    lfm_kernel,
    lfm_unit_block,
    stationary_unit_variance,
)
from gplfm.oracle import quad_kernel_oracle

# nested quadrature of the defining integrals, recorded once (see test_oracle for the tolerance check)
UNIT_REF = 33.98586363363207  # D=0.1, l=5, S=1, t=t'=30
CROSS_REF = 2.7219964774225445  # D=0.2, l=3, S=1, output at 10, force at 8


def params(D, S, l, noise=0.0):
    D = np.atleast_1d(np.asarray(D, float))
    return LfmParams(D, np.zeros(D.size), np.full(D.size, noise), np.atleast_2d(S), np.atleast_1d(l))


def mp_unit(t, s, Dp, Dq, l):
    """Closed form in arbitrary precision (no stabilisation needed)."""
    t, s, Dp, Dq, l = map(mpmath.mpf, (t, s, Dp, Dq, l))

    def H(a, b, Da, Db):
        nu = l * Da / 2
        return mpmath.exp(nu**2) * (
            mpmath.exp(-Da * (a - b)) * (mpmath.erf((a - b) / l - nu) + mpmath.erf(b / l + nu))
            - mpmath.exp(-Da * a - Db * b) * (mpmath.erf(a / l - nu) + mpmath.erf(nu))
        )

    return mpmath.sqrt(mpmath.pi) * l / 2 * (H(t, s, Dp, Dq) + H(s, t, Dq, Dp)) / (Dp + Dq)


def test_zero_at_origin():
    P = params([0.3, 0.05], [[1.0, -2.0]], 4.0)
    assert lfm_kernel(P, 0, 0.0, 1, 0.0) == 0.0
    assert lfm_kernel(P, 1, 0.0, 1, 0.0) == 0.0


def test_reference_values():
    assert lfm_kernel(params(0.1, [[1.0]], 5.0), 0, 30.0, 0, 30.0) == pytest.approx(UNIT_REF, rel=1e-12)
    assert lfm_cross_kernel(params(0.2, [[1.0]], 3.0), 0, 10.0, 0, 8.0) == pytest.approx(CROSS_REF, rel=1e-12)


def test_cross_kernel_linear_in_sensitivity_and_zero_at_t0():
    P1 = params([0.2, 0.4], [[1.0, 0.5]], 3.0)
    P3 = params([0.2, 0.4], [[3.0, 0.5]], 3.0)
    a = lfm_cross_kernel(P1, 0, 10.0, 0, 8.0)
    assert lfm_cross_kernel(P3, 0, 10.0, 0, 8.0) == 3.0 * a
    for s in [0.0, -1.0, -7.5]:
        assert abs(lfm_cross_kernel(P1, 1, 0.0, 0, s)) <= 1e-12


def test_doubling_force_row_quadruples_diagonal_block():
    t = np.linspace(0, 50, 7)
    k1 = LfmFirstOrder([0.1, 0.3], [[0.7, 1.1]], [6.0])
    k2 = LfmFirstOrder([0.1, 0.3], [[1.4, 1.1]], [6.0])
    np.testing.assert_allclose(k2.block(0, t, 0, t), 4.0 * k1.block(0, t, 0, t), rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(
    Dp=st.floats(0.01, 1.0),
    Dq=st.floats(0.01, 1.0),
    l=st.floats(0.5, 50.0),
    t=st.floats(0.0, 100.0),
    s=st.floats(0.0, 100.0),
)
def test_symmetry(Dp, Dq, l, t, s):
    P = params([Dp, Dq], [[1.3, -0.4]], l)
    a = lfm_kernel(P, 0, t, 1, s)
    b = lfm_kernel(P, 1, s, 0, t)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("seed", range(4))
def test_block_path_matches_elementwise(seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.choice(np.arange(0, 400), 40, replace=False)).astype(float)
    s = np.sort(rng.uniform(0, 400, 30))
    Dp, Dq = rng.uniform(0.01, 2, 2)
    l = rng.uniform(0.5, 100)
    k = LfmFirstOrder([Dp, Dq], [[1.0, 1.0]], [l])
    ref = lfm_kernel(k, 0, t[:, None], 1, s[None, :])
    np.testing.assert_allclose(k.block(0, t, 1, s), ref, rtol=1e-10, atol=1e-13 * np.abs(ref).max())
    ti = t.copy()
    np.testing.assert_allclose(
        lfm_unit_block(ti, ti, Dp, Dp, l, LagTable(ti, ti)), lfm_kernel(params(Dp, [[1.0]], l), 0, ti[:, None], 0, ti[None, :]), rtol=1e-10, atol=1e-13
    )


def test_block_is_bitwise_symmetric():
    t = np.arange(0.0, 200.0, 3.0)
    k = LfmFirstOrder([0.07, 0.2], [[1.0, -0.3]], [9.0])
    B = k.block(0, t, 0, t)
    assert np.array_equal(B, B.T)
    assert np.array_equal(k.block(0, t, 1, t), k.block(1, t, 0, t).T)


def test_stationary_regime():
    P = params([0.05, 0.2], [[1.0, 1.0]], 8.0)
    for delta in [0.0, 3.0, 20.0]:
        a = lfm_kernel(P, 0, 200.0, 1, 200.0 + delta)
        b = lfm_kernel(P, 0, 400.0, 1, 400.0 + delta)
        assert a == pytest.approx(b, rel=1e-6)
    assert lfm_kernel(P, 0, 500.0, 0, 500.0) == pytest.approx(stationary_unit_variance(0.05, 8.0), rel=1e-9)


@pytest.mark.parametrize("lD", [20.0, 50.0, 80.0, 100.0])
def test_large_l_times_d_is_finite_and_accurate(lD):
    D = 0.5
    l = lD / D
    t, s = 30.0, 27.0
    with mpmath.workdps(int((lD / 2) ** 2 / 2.3) + 80):
        ref = float(mp_unit(t, s, D, D, l))
    got = lfm_kernel(params(D, [[1.0]], l), 0, t, 0, s)
    assert np.isfinite(got)
    assert got == pytest.approx(ref, rel=1e-8)


def test_range_checks_active_in_tests():
    with pytest.raises(NumericFailureError):
        LfmFirstOrder([20.0], [[1.0]], [1.0])
    with pytest.raises(NumericFailureError):
        LfmFirstOrder([0.1], [[1.0]], [400.0])


def test_params_validation_and_round_trip():
    P = LfmParams([0.1, 0.2], [0.01, 0.02], [0.1, 0.0], [[1.0, 2.0]], [5.0])
    assert P.Q == 2 and P.R == 1
    np.testing.assert_allclose(P.mean, [0.1, 0.1])
    assert P.nu(0, 1) == pytest.approx(0.5)
    assert set(P.to_dict()) == {"decay", "offset", "noise_std", "sensitivity", "force_lengthscale"}
    P2 = LfmParams.from_dict(P.to_dict())
    for k in P.to_dict():
        np.testing.assert_array_equal(getattr(P2, k), getattr(P, k))
    with pytest.raises(ConfigError):
        LfmParams([0.1], [0.0], [0.1], [[1.0, 2.0]], [5.0])
    with pytest.raises(ConfigError):
        LfmParams([-0.1], [0.0], [0.1], [[1.0]], [5.0])
    with pytest.raises(ConfigError):
        LfmParams.from_dict({"decay": [0.1]})


def test_efolding():
    assert efolding(params(0.0617, [[1.0]], 5.0)).tau[0] == pytest.approx(16.21, abs=0.005)
    assert efolding(params(1.0, [[1.0]], 5.0)).tau[0] == 1.0
    assert isinstance(efolding(params(1.0, [[1.0]], 5.0)), EFoldingTime)


def test_psd_small():
    rng = np.random.default_rng(0)
    for _ in range(10):
        Q, R = rng.integers(1, 5), rng.integers(1, 4)
        k = LfmFirstOrder(rng.uniform(0.01, 1, Q), rng.normal(size=(R, Q)), rng.uniform(0.5, 50, R))
        t = [np.sort(rng.uniform(0, 100, 10)) for _ in range(Q)]
        K = np.block([[k.block(p, t[p], q, t[q]) for q in range(Q)] for p in range(Q)])
        w = np.linalg.eigvalsh(K)
        assert w.min() >= -1e-8 * np.trace(K) / K.shape[0]


@pytest.mark.parametrize("q,t,s", [(0, 12.0, 5.0), (1, 40.0, 41.0), (1, 3.0, 0.0)])
def test_cross_against_quadrature(q, t, s):
    k = LfmFirstOrder([0.3, 0.04], [[0.5, -2.0]], [4.0])
    assert k.force_block(q, [t], 0, [s])[0, 0] == pytest.approx(quad_kernel_oracle(k, q, t, 0, s, force=True), rel=1e-6)
