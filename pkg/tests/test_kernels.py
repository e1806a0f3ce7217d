import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplfm.errors import ConfigError, QueryError
from gplfm.kernels import LMC, RBF, GaussConv, Independent, LagTable, Periodic, Sum, eval_gauss_conv, kernel_from_dict
from gplfm.oracle import quad_kernel_oracle

# double quadrature over +-10 combined lengthscales, recorded once
GAUSS_CONV_REF = 1.1927984473506843  # nu=(0.5, 0.7), l=1, S=1, p=0 at t=0, q=1 at t'=1


def test_rbf_values():
    assert RBF(2.0)(0, 0.0, 0, 0.0) == 1.0
    assert RBF(1.0)(0, 0.0, 0, 1.0) == pytest.approx(np.exp(-0.5), rel=1e-15)
    assert RBF(1.0, 3.0)(0, 0.0, 0, 0.0) == 3.0


def test_periodic_form():
    k = Periodic(period=10.0, lengthscale=0.7, amplitude=2.0)
    d = 3.3
    assert k(0, 0.0, 0, d) == pytest.approx(2.0 * np.exp(-2 * np.sin(np.pi * d / 10) ** 2 / 0.49), rel=1e-14)
    assert k(0, 0.0, 0, 10.0) == pytest.approx(2.0, rel=1e-12)


def test_lmc_separable_cross_block():
    k = LMC((RBF(1.5),), np.array([[2.0], [3.0]]))
    assert k(0, 4.0, 1, 4.0) == pytest.approx(6.0 * RBF(1.5)(0, 4.0, 0, 4.0), rel=1e-15)


def test_lmc_orthogonal_mixing_gives_zero_cross_block():
    k = LMC((RBF(1.0), RBF(3.0)), np.array([[1.0, 0.0], [0.0, 2.0]]))
    t = np.array([0.0, 1.0, 2.5])
    assert np.all(k.block(0, t, 1, t) == 0.0)


def test_channel_out_of_range():
    k = LMC((RBF(1.0),), np.ones((2, 1)))
    with pytest.raises(QueryError):
        k(2, 0.0, 0, 0.0)
    with pytest.raises(QueryError):
        GaussConv([1.0], [1.0], [[1.0]]).force_block(0, [0.0], 3, [0.0])


def test_invalid_parameters():
    with pytest.raises(ConfigError):
        RBF(0.0)
    with pytest.raises(ConfigError):
        Sum(())
    with pytest.raises(ConfigError):
        LMC((RBF(1.0),), np.ones((2, 2)))
    with pytest.raises(ConfigError):
        GaussConv([1.0, -1.0], [1.0], [[1.0, 1.0]])


def test_gauss_conv_against_quadrature():
    k = GaussConv([0.5, 0.7], [1.0], [[1.0, 1.0]])
    assert eval_gauss_conv(k, 0, 0.0, 1, 1.0) == pytest.approx(GAUSS_CONV_REF, rel=1e-12)
    assert quad_kernel_oracle(k, 0, 0.0, 1, 1.0) == pytest.approx(GAUSS_CONV_REF, rel=1e-9)


def test_gauss_conv_peak_at_zero_lag():
    k = GaussConv([0.8, 0.8], [2.0], [[1.3, 0.4]])
    s = np.linspace(-10, 10, 2001)
    row = k.block(0, [0.0], 0, s)[0]
    assert k(0, 0.0, 0, 0.0) == pytest.approx(row.max(), rel=1e-15)


def test_gauss_conv_zero_sensitivity_channel_is_decoupled():
    k = GaussConv([0.5, 0.9, 1.1], [2.0, 5.0], [[1.0, 0.0, 0.3], [0.4, 0.0, -1.0]])
    t = np.linspace(0, 9, 7)
    for q in range(3):
        assert np.all(k.block(1, t, q, t) == 0.0)


def _random_kernels(rng):
    Q = 3
    yield Independent(tuple(RBF(rng.uniform(0.5, 5), rng.uniform(0.5, 2)) for _ in range(Q)))
    yield LMC((RBF(rng.uniform(0.5, 5)), Sum((RBF(2.0), Periodic(7.0, 1.0, 0.5)))), rng.normal(size=(Q, 2)))
    yield GaussConv(rng.uniform(0.2, 3, Q), rng.uniform(0.5, 5, 2), rng.normal(size=(2, Q)))


@pytest.mark.parametrize("seed", range(5))
def test_symmetry_is_exact(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 30, 6)
    s = rng.uniform(0, 30, 5)
    for k in _random_kernels(rng):
        for p in range(3):
            for q in range(3):
                assert np.array_equal(k.block(p, t, q, s), k.block(q, s, p, t).T)


@pytest.mark.parametrize("seed", range(5))
def test_stationarity_under_shifts(seed):
    rng = np.random.default_rng(100 + seed)
    t = rng.uniform(0, 30, 6)
    s = rng.uniform(0, 30, 5)
    c = rng.uniform(-50, 50)
    for k in _random_kernels(rng):
        for p, q in [(0, 0), (0, 2), (2, 1)]:
            np.testing.assert_allclose(k.block(p, t + c, q, s + c), k.block(p, t, q, s), rtol=1e-12, atol=1e-14)


def test_sum_is_sum_of_terms():
    a, b = RBF(1.3, 0.7), Periodic(5.0, 0.9, 1.4)
    t = np.linspace(0, 11, 9)
    np.testing.assert_allclose(Sum((a, b)).block(0, t, 0, t), a.block(0, t, 0, t) + b.block(0, t, 0, t), rtol=1e-15, atol=0)


def test_lag_table_blocks_match_direct():
    rng = np.random.default_rng(3)
    t = np.sort(rng.uniform(0, 20, 9))
    s = np.sort(rng.uniform(0, 20, 7))
    k = GaussConv([0.4, 1.2], [2.0], [[1.0, -0.5]])
    np.testing.assert_array_equal(k.block(0, t, 1, s, LagTable(t, s)), k.block(0, t, 1, s))
    ti = np.arange(12.0)
    si = np.arange(3.0, 9.0)
    np.testing.assert_allclose(k.block(0, ti, 1, si, LagTable(ti, si)), k.block(0, ti, 1, si), rtol=1e-15)


def test_serialization_round_trip():
    ks = [
        RBF(1.5, 2.0),
        Sum((RBF(1.0), Periodic(365.25, 1.0, 0.3))),
        LMC((RBF(2.0), RBF(4.0)), np.array([[1.0, 0.5], [0.2, -1.0]])),
        GaussConv([0.5, 0.7], [1.0], [[1.0, 2.0]]),
        Independent((RBF(1.0), RBF(2.0, 3.0))),
    ]
    t = np.linspace(0, 5, 4)
    for k in ks:
        k2 = kernel_from_dict(k.to_dict())
        Q = k.n_outputs or 1
        for p in range(Q):
            np.testing.assert_array_equal(k2.block(p, t, Q - 1, t), k.block(p, t, Q - 1, t))
    with pytest.raises(ConfigError):
        kernel_from_dict({"type": "nope"})


@settings(max_examples=30, deadline=None)
@given(
    nu=st.lists(st.floats(0.2, 3.0), min_size=2, max_size=2),
    l=st.floats(0.3, 4.0),
    t=st.floats(-5, 5),
    s=st.floats(-5, 5),
)
def test_gauss_conv_cross_covariance_against_quadrature(nu, l, t, s):
    k = GaussConv(nu, [l], [[1.0, -0.7]])
    ref = quad_kernel_oracle(k, 1, t, 0, s, tol=1e-10, force=True)
    got = k.force_block(1, [t], 0, [s])[0, 0]
    assert got == pytest.approx(ref, rel=1e-6, abs=1e-12)
