"""Exact GP regression over stacked multi-output data.

Observations are stacked block-by-channel (all of channel 0, then channel 1,
...).  The training objective is

    J = r' (K + Sigma)^-1 r + log |K + Sigma|,     r = y - mu

with ``Sigma`` the per-channel noise variances on the diagonal and ``mu``
an optional per-channel constant mean.  Constants and the factor 1/2 of the
Gaussian log density are dropped, so ``J`` is twice the usual negative log
marginal likelihood minus ``N log 2 pi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .data import TimeSeriesSet
from .errors import IllConditionedError, NumericFailureError, QueryError
from .fpenv import flush_denormals
from .kernels import KernelSpec, LagTable

JITTER_START = 1e-8
JITTER_STOP = 1e-2
JITTER_FACTOR = 10.0
VARIANCE_TOL = 1e-10


class LatentForce(NamedTuple):
    """Prediction target selecting latent force ``index``."""

    index: int


class Layout:
    """Lag tables for every channel pair ``p <= q`` of one data set.

    A fit evaluates the Gram matrix hundreds of times on fixed inputs;
    keeping the tables (and the block caches that hang off them) here makes
    every evaluation after the first cheap.
    """

    def __init__(self, data: TimeSeriesSet):
        self.data = data
        self.times = [c.times for c in data.channels]
        self._lags = {}

    def lags(self, p, q) -> LagTable:
        if p > q:
            raise ValueError("Layout.lags expects p <= q")
        key = (p, q)
        if key not in self._lags:
            self._lags[key] = LagTable(self.times[p], self.times[q])
        return self._lags[key]

    def pairs(self):
        Q = len(self.times)
        return [(p, q) for p in range(Q) for q in range(p, Q)]


@dataclass(frozen=True, eq=False)
class GramMatrix:
    matrix: np.ndarray
    offsets: np.ndarray
    channel_ids: tuple

    def block(self, p, q):
        o = self.offsets
        return self.matrix[o[p] : o[p + 1], o[q] : o[q + 1]]


@dataclass(frozen=True, eq=False)
class PosteriorPrediction:
    query_times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    target: object
    includes_noise: bool

    @property
    def std(self):
        return np.sqrt(self.variance)


class Likelihood(NamedTuple):
    nll: float
    log_likelihood: float
    jitter: float


def _noise_vector(noise, Q):
    sig = np.broadcast_to(np.asarray(noise, dtype=float), (Q,)).copy()
    if np.any(~np.isfinite(sig)) or np.any(sig < 0):
        raise NumericFailureError(f"noise standard deviations must be finite and >= 0, got {sig}")
    return sig


def _mean_vector(mean, Q):
    if mean is None:
        return np.zeros(Q)
    return np.broadcast_to(np.asarray(mean, dtype=float), (Q,)).copy()


def _check_finite_block(B, p, t, q, s, ids):
    if np.all(np.isfinite(B)):
        return
    i, j = np.argwhere(~np.isfinite(B))[0]
    raise NumericFailureError(
        f"non-finite kernel value {B[i, j]} at (channel {ids[p]!r}, t={t[i]:g}) x (channel {ids[q]!r}, t={s[j]:g})"
    )


def kernel_blocks(kernel: KernelSpec, layout: Layout) -> dict:
    """Noise-free blocks ``(p, q)`` for ``p <= q``."""
    ids = layout.data.ids
    out = {}
    for p, q in layout.pairs():
        t, s = layout.times[p], layout.times[q]
        B = kernel.block(p, t, q, s, layout.lags(p, q))
        _check_finite_block(B, p, t, q, s, ids)
        out[(p, q)] = B
    return out


def _fill(blocks, offsets, sigma):
    N = offsets[-1]
    K = np.empty((N, N))
    for (p, q), B in blocks.items():
        a, b = slice(offsets[p], offsets[p + 1]), slice(offsets[q], offsets[q + 1])
        K[a, b] = B
        if p != q:
            K[b, a] = B.T
    diag_noise = np.repeat(sigma**2, np.diff(offsets))
    K[np.diag_indices(N)] += diag_noise
    return K


def assemble_gram(data: TimeSeriesSet, kernel: KernelSpec, noise, layout: Layout | None = None) -> GramMatrix:
    """Stacked ``K + diag(sigma_q**2)``, symmetric by construction."""
    layout = layout or Layout(data)
    sigma = _noise_vector(noise, data.Q)
    offsets = data.offsets()
    K = _fill(kernel_blocks(kernel, layout), offsets, sigma)
    return GramMatrix(K, offsets, tuple(data.ids))


def jitter_ladder(scale):
    out, j = [], JITTER_START
    while j <= JITTER_STOP * (1 + 1e-9):
        out.append(j * scale)
        j *= JITTER_FACTOR
    return out


def _jitter_scale(blocks, sigma, offsets):
    """Mean prior variance on the diagonal; falls back to the noise, then 1."""
    counts = np.diff(offsets)
    total = sum(float(np.trace(blocks[(p, p)])) for p in range(len(counts)) if counts[p])
    N = int(counts.sum())
    scale = total / N
    if not scale > 0:
        scale = float(np.sum(counts * sigma**2)) / N
    return scale if scale > 0 else 1.0


def cholesky_with_jitter(K, scale):
    """Lower Cholesky factor of ``K + j I``: ``j = 0`` first, then up the ladder."""
    ladder = jitter_ladder(scale)
    N = K.shape[0]
    idx = np.diag_indices(N)
    for j in [0.0] + ladder:
        A = K.copy()
        if j:
            A[idx] += j
        with flush_denormals():
            c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=1)
        if info == 0:
            return c, j
    raise IllConditionedError(
        f"Cholesky failed for every jitter in {ladder[0]:.3g} .. {ladder[-1]:.3g}", jitter_ladder=ladder
    )


class ConditionedGP:
    """A GP conditioned on ``data``: Cholesky factor and weights ``alpha``.

    ``kernel_scale`` is the mean prior variance used to size the jitter;
    it defaults to the mean of the noise-free diagonal.
    """

    def __init__(self, data, kernel, noise, mean=None, layout=None, blocks=None):
        self.data = data
        self.kernel = kernel
        self.layout = layout or Layout(data)
        self.sigma = _noise_vector(noise, data.Q)
        self.mu = _mean_vector(mean, data.Q)
        self.offsets = data.offsets()
        if blocks is None:
            blocks = kernel_blocks(kernel, self.layout)
        self.blocks = blocks
        N = self.offsets[-1]
        self.N = N
        _, y, idx = data.stacked()
        self.resid = y - self.mu[idx] if N else np.zeros(0)
        if N == 0:
            self.chol, self.jitter = np.zeros((0, 0)), 0.0
            self.alpha = np.zeros(0)
            return
        K = _fill(blocks, self.offsets, self.sigma)
        self.chol, self.jitter = cholesky_with_jitter(K, _jitter_scale(blocks, self.sigma, self.offsets))
        del K
        self.alpha = lapack.dpotrs(self.chol, self.resid, lower=1)[0]

    @property
    def nll(self) -> float:
        if self.N == 0:
            return 0.0
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return float(self.resid @ self.alpha + logdet)

    def inverse(self, lower_only=False) -> np.ndarray:
        """``(K + Sigma + jitter)^-1`` as a full symmetric matrix, or with
        only the lower triangle filled when ``lower_only``."""
        with flush_denormals():
            inv, info = lapack.dpotri(self.chol, lower=1)
        if info != 0:
            raise IllConditionedError("dpotri failed on a valid Cholesky factor")
        if not lower_only:
            iu = np.triu_indices(self.N, 1)
            inv[iu] = inv.T[iu]
        return inv

    def _cross(self, target, times):
        """Prior covariance between the target at ``times`` and every training point."""
        data, kernel = self.data, self.kernel
        cols = []
        if isinstance(target, LatentForce):
            kernel.check_force(target.index)
            for p, c in enumerate(data.channels):
                cols.append(kernel.force_block(p, c.times, target.index, times).T)
            prior = np.diag(kernel.force_cov(target.index, times, times)).copy() if times.size else np.zeros(0)
        else:
            q = target
            for p, c in enumerate(data.channels):
                cols.append(kernel.block(q, times, p, c.times, LagTable(times, c.times)))
            prior = kernel.diag(q, times)
        return np.concatenate(cols, axis=1) if cols else np.zeros((times.size, 0)), prior

    def predict(self, target, times, include_noise=False) -> PosteriorPrediction:
        times = np.asarray(times, dtype=float).reshape(-1)
        if not np.all(np.isfinite(times)):
            raise QueryError("query times must be finite")
        if isinstance(target, LatentForce):
            label, q = target, None
        else:
            q = self.data.index(target) if isinstance(target, str) else int(target)
            if not 0 <= q < self.data.Q:
                raise QueryError(f"channel index {target!r} out of range")
            label = self.data.ids[q]
            target = q
        kstar, prior = self._cross(target, times)
        mean = kstar @ self.alpha if self.N else np.zeros(times.size)
        if q is not None:
            mean = mean + self.mu[q]
        if self.N:
            with flush_denormals():
                v = solve_triangular(self.chol, kstar.T, lower=True, check_finite=False)
            var = prior - np.einsum("ij,ij->j", v, v)
        else:
            var = prior.astype(float)
        tol = VARIANCE_TOL * np.maximum(1.0, np.abs(prior))
        if np.any(var < -tol):
            worst = int(np.argmin(var + tol))
            raise NumericFailureError(f"posterior variance {var[worst]:.3e} at t={times[worst]:g} is negative beyond roundoff")
        var = np.maximum(var, 0.0)
        if include_noise and q is not None:
            var = var + self.sigma[q] ** 2
        return PosteriorPrediction(times, mean, var, label, bool(include_noise and q is not None))


def log_marginal_likelihood(data, kernel, noise, mean=None, layout=None) -> Likelihood:
    """``J`` (``nll``) and its negation, computed through a Cholesky factor."""
    gp = ConditionedGP(data, kernel, noise, mean, layout)
    J = gp.nll
    return Likelihood(J, -J, gp.jitter)


def predict(data, kernel, noise, target, times, mean=None, include_noise=False, layout=None) -> PosteriorPrediction:
    """Posterior of a channel (id or index) or a :class:`LatentForce` at ``times``."""
    return ConditionedGP(data, kernel, noise, mean, layout).predict(target, times, include_noise)
