import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gplfm.data import Channel, TimeSeriesSet
from gplfm.errors import DataError, IllConditionedError, NumericFailureError, QueryError
from gplfm.gp import (
    ConditionedGP,
    LatentForce,
    assemble_gram,
    cholesky_with_jitter,
    jitter_ladder,
    log_marginal_likelihood,
    predict,
)
from gplfm.kernels import LMC, RBF, GaussConv, KernelSpec
from gplfm.lfm import LfmFirstOrder
from gplfm.oracle import quad_kernel_oracle


def one(t, y, cid="a"):
    return TimeSeriesSet.from_arrays({cid: (np.asarray(t, float), np.asarray(y, float))})


def test_identical_timestamps_across_channels_rbf():
    data = TimeSeriesSet.from_arrays({"a": ([1.0], [0.0]), "b": ([1.0], [0.0])})
    k = LMC((RBF(1.0),), np.ones((2, 1)))
    np.testing.assert_array_equal(assemble_gram(data, k, 0.0).matrix, np.ones((2, 2)))


def test_block_layout_and_symmetry(rng):
    data = TimeSeriesSet.from_arrays({"a": (np.arange(5.0), rng.normal(size=5)), "b": (np.arange(2.0, 9.0), rng.normal(size=7))})
    k = GaussConv([0.5, 1.0], [2.0], [[1.0, 0.5]])
    G = assemble_gram(data, k, [0.1, 0.2])
    assert G.matrix.shape == (12, 12)
    assert G.block(0, 1).shape == (5, 7)
    assert np.max(np.abs(G.matrix - G.matrix.T)) <= 1e-12 * np.max(np.abs(G.matrix))
    np.testing.assert_allclose(np.diag(G.block(1, 1)), k.diag(1, np.arange(2.0, 9.0)) + 0.04)


def test_zero_cross_sensitivity_gives_block_diagonal():
    data = TimeSeriesSet.from_arrays({"a": ([0.0, 1.0], [0.0, 0.0]), "b": ([0.5, 3.0], [0.0, 0.0])})
    k = LMC((RBF(1.0), RBF(2.0)), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.all(assemble_gram(data, k, 0.1).block(0, 1) == 0.0)


def test_lfm_gram_against_quadrature():
    t = np.array([1.0, 2.0, 3.0])
    data = TimeSeriesSet.from_arrays({"a": (t, np.zeros(3)), "b": (t, np.zeros(3))})
    k = LfmFirstOrder([0.3, 0.8], [[1.0, -0.6]], [2.0])
    K = assemble_gram(data, k, 0.0).matrix
    tt = np.concatenate([t, t])
    ch = [0, 0, 0, 1, 1, 1]
    ref = np.array([[quad_kernel_oracle(k, ch[i], tt[i], ch[j], tt[j]) for j in range(6)] for i in range(6)])
    np.testing.assert_allclose(K, ref, rtol=1e-4)


class _Broken(KernelSpec):
    n_outputs = 1

    def block(self, p, t, q, s, lags=None):
        out = np.ones((np.size(t), np.size(s)))
        out[-1, -1] = np.nan
        return out

    def to_dict(self):
        return {"type": "broken"}


def test_non_finite_kernel_names_channel_and_time():
    with pytest.raises(NumericFailureError, match=r"channel 'a', t=4"):
        assemble_gram(one([1.0, 4.0], [0.0, 0.0]), _Broken(), 0.1)


def test_trivial_likelihoods():
    assert log_marginal_likelihood(one([0.0], [0.0]), RBF(1.0), 0.0).nll == 0.0
    # K + sigma^2 I = I for far-apart points with unit variance split between signal and noise
    data = one([0.0, 1000.0], [1.0, 1.0])
    J = log_marginal_likelihood(data, RBF(1.0, 0.5), np.sqrt(0.5)).nll
    assert J == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_likelihood_matches_dense_inverse(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(5, 50))
    t = np.sort(rng.uniform(0, 20, N))
    if seed == 0:
        N, t = 5, np.sort(rng.uniform(0, 5, 5))
    y = rng.normal(size=N)
    K = np.exp(-((t[:, None] - t[None, :]) ** 2) / 2) + 0.01 * np.eye(N)
    ref = y @ np.linalg.inv(K) @ y + np.linalg.slogdet(K)[1]
    lik = log_marginal_likelihood(one(t, y), RBF(1.0), 0.1)
    assert lik.nll == pytest.approx(ref, rel=1e-8)
    assert lik.log_likelihood == -lik.nll


def test_likelihood_with_mean_subtracts_it(rng):
    t = np.linspace(0, 10, 12)
    y = rng.normal(size=12) + 5.0
    a = log_marginal_likelihood(one(t, y), RBF(2.0), 0.3, mean=5.0).nll
    b = log_marginal_likelihood(one(t, y - 5.0), RBF(2.0), 0.3).nll
    assert a == pytest.approx(b, rel=1e-13)


def test_jitter_ladder_and_failure():
    lad = jitter_ladder(2.0)
    assert lad[0] == pytest.approx(2e-8) and lad[-1] == pytest.approx(2e-2) and len(lad) == 7
    K = np.ones((3, 3))  # rank one, needs jitter
    L, j = cholesky_with_jitter(K, 1.0)
    assert j > 0
    with pytest.raises(IllConditionedError) as err:
        cholesky_with_jitter(-np.eye(2), 1.0)
    assert len(err.value.jitter_ladder) == 7


def test_interpolates_noiseless_data():
    t = np.array([0.0, 1.3, 2.0, 4.5])
    y = np.sin(t)
    pred = predict(one(t, y), RBF(1.0), 1e-5, "a", t)
    np.testing.assert_allclose(pred.mean, y, atol=1e-6)
    assert np.all(pred.variance <= 1e-6)


def test_reverts_to_prior_far_away():
    t = np.array([0.0, 1.0, 2.0])
    pred = predict(one(t, [1.0, 2.0, 3.0]), RBF(1.0, 2.0), 0.1, "a", [50.0])
    assert abs(pred.mean[0]) < 1e-6
    assert pred.variance[0] == pytest.approx(2.0, abs=1e-6)
    noisy = predict(one(t, [1.0, 2.0, 3.0]), RBF(1.0, 2.0), 0.1, "a", [50.0], include_noise=True)
    assert noisy.variance[0] == pytest.approx(2.01, abs=1e-6) and noisy.includes_noise


def test_query_errors():
    data = one([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(QueryError):
        predict(data, RBF(1.0), 0.1, "zzz", [0.0])
    with pytest.raises(QueryError):
        predict(data, RBF(1.0), 0.1, "a", [np.nan])
    with pytest.raises(QueryError):
        predict(data, LfmFirstOrder([0.1], [[1.0]], [2.0]), 0.1, LatentForce(3), [0.0])


def test_empty_channel_allowed_for_prediction():
    data = TimeSeriesSet((Channel("a", [0.0, 1.0, 2.0], [0.1, 0.5, 0.2]), Channel("b", [], [])))
    k = LMC((RBF(1.0),), np.array([[1.0], [0.8]]))
    pred = predict(data, k, [0.05, 0.05], "b", [1.0])
    assert pred.target == "b"
    assert pred.mean[0] == pytest.approx(0.8 * predict(data, k, [0.05, 0.05], "a", [1.0]).mean[0], rel=1e-12)


def test_force_posterior_prior_when_unobserved():
    data = TimeSeriesSet.from_arrays({"a": (np.arange(10.0), np.linspace(0, 1, 10))})
    k = LfmFirstOrder([0.2], [[1.0], [0.0]], [3.0, 4.0])
    pred = predict(data, k, 0.1, LatentForce(1), np.linspace(0, 9, 5))
    np.testing.assert_allclose(pred.mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(pred.variance, 1.0, atol=1e-12)


def _random_lmc(rng, Q):
    return LMC((RBF(rng.uniform(0.5, 3)), RBF(rng.uniform(2, 6))), rng.normal(size=(Q, 2)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_adding_data_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    k = _random_lmc(rng, 2)
    base = {"a": np.sort(rng.choice(np.arange(30.0), 6, replace=False)), "b": np.sort(rng.choice(np.arange(30.0), 5, replace=False))}
    extra = float(rng.choice(np.setdiff1d(np.arange(30.0), base["b"])))
    d1 = TimeSeriesSet.from_arrays({c: (t, rng.normal(size=t.size)) for c, t in base.items()})
    tb = np.sort(np.append(base["b"], extra))
    d2 = d1.replace_channel(Channel("b", tb, rng.normal(size=tb.size)))
    q = np.linspace(-5, 35, 41)
    for target in ("a", "b"):
        v1 = predict(d1, k, [0.2, 0.3], target, q).variance
        v2 = predict(d2, k, [0.2, 0.3], target, q).variance
        assert np.all(v2 <= v1 + 1e-9)


def test_channel_permutation_invariance(rng):
    Q = 3
    k = _random_lmc(rng, Q)
    ids = ["x", "y", "z"]
    series = {c: (np.sort(rng.choice(np.arange(40.0), 8, replace=False)), rng.normal(size=8)) for c in ids}
    data = TimeSeriesSet.from_arrays(series)
    order = [2, 0, 1]
    perm = data.reordered([ids[i] for i in order])
    kp = LMC(k.bases, k.mixing[order])
    noise = np.array([0.1, 0.2, 0.3])
    mean = np.array([1.0, -1.0, 0.5])
    q = np.linspace(0, 40, 9)
    for c in ids:
        a = predict(data, k, noise, c, q, mean=mean)
        b = predict(perm, kp, noise[order], c, q, mean=mean[order])
        np.testing.assert_allclose(b.mean, a.mean, atol=1e-10)
        np.testing.assert_allclose(b.variance, a.variance, atol=1e-10)


def test_data_validation():
    with pytest.raises(DataError):
        Channel("a", [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(DataError):
        Channel("a", [1.0], [np.inf])
    with pytest.raises(DataError):
        TimeSeriesSet((Channel("a", [], []), Channel("a", [], [])))
    with pytest.raises(DataError):
        TimeSeriesSet(())


def test_conditioned_gp_alpha_solves_system(rng):
    t = np.sort(rng.uniform(0, 10, 15))
    y = rng.normal(size=15)
    gp = ConditionedGP(one(t, y), RBF(1.5), 0.2)
    K = np.exp(-((t[:, None] - t[None, :]) ** 2) / (2 * 1.5**2)) + 0.04 * np.eye(15)
    np.testing.assert_allclose(K @ gp.alpha, y, atol=1e-10)
    np.testing.assert_allclose(gp.inverse() @ K, np.eye(15), atol=1e-9)
