"""First-order ODE latent force model.

Each output obeys ``dy_q/dt + D_q y_q = B_q + sum_r S[r,q] f_r(t)`` with null
initial conditions at ``t = 0`` and independent latent forces with
covariance ``cov(f_r(t), f_r(s)) = exp(-(t - s)**2 / l_r**2)``.  Note the
``l**2`` (not ``2 l**2``) in the force kernel: it is the convention under
which the closed form carries the factor ``sqrt(pi) l / 2`` and
``nu = l D / 2``.

Argument convention (checked against nested quadrature in the tests)::

    k(p, t, q, s) = S_p S_q sqrt(pi) l / 2 * [H(t, s; D_p, D_q) + H(s, t; D_q, D_p)]

    H(a, b; Da, Db) = exp(nu_a**2) / (Da + Db) * {
          exp(-Da (a - b)) [erf((a - b)/l - nu_a) + erf(b/l + nu_a)]
        - exp(-Da a - Db b) [erf(a/l - nu_a)     + erf(nu_a)] },   nu_a = l Da / 2

and the output/force cross-covariance, output ``q`` at ``t`` and force at
``s``, is ``S_q sqrt(pi) l / 2 * exp(nu**2 - D (t - s)) [erf((t - s)/l - nu)
+ erf(s/l + nu)]``.  All ``exp(nu**2) * erf(...)`` products go through
:func:`gplfm.special.exp_erf_sum` or the equivalent tabulated split below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericFailureError
from .kernels import KernelSpec, LagTable, _readonly
from .special import erf, erfcx, exp_erf_sum

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is optional
    njit = None

SQRT_PI = np.sqrt(np.pi)

#: ranges the optimizer keeps the ODE parameters in
DECAY_RANGE = (1e-4, 10.0)
LENGTHSCALE_RANGE = (0.1, 365.0)

#: when True every LfmFirstOrder construction is checked against the ranges
#: above; the test suite switches this on
RANGE_CHECKS = False


@dataclass(frozen=True, eq=False)
class LfmParams:
    """Full hyperparameter set of a first-order LFM with ``Q`` outputs, ``R`` forces."""

    decay: np.ndarray
    offset: np.ndarray
    noise_std: np.ndarray
    sensitivity: np.ndarray
    force_lengthscale: np.ndarray

    def __post_init__(self):
        decay = _readonly(self.decay, 1)
        Q = decay.size
        offset = _readonly(np.broadcast_to(self.offset, (Q,)), 1)
        noise = _readonly(np.broadcast_to(self.noise_std, (Q,)), 1)
        ls = _readonly(self.force_lengthscale, 1)
        sens = _readonly(self.sensitivity, 2)
        if sens.shape != (ls.size, Q):
            raise ConfigError(f"sensitivity must be R x Q = {ls.size} x {Q}, got {sens.shape}")
        for name, a in [("decay", decay), ("offset", offset), ("noise_std", noise), ("sensitivity", sens), ("force_lengthscale", ls)]:
            if not np.all(np.isfinite(a)):
                raise ConfigError(f"{name} must be finite")
        if np.any(decay <= 0) or np.any(ls <= 0) or np.any(noise < 0):
            raise ConfigError("need decay > 0, force_lengthscale > 0, noise_std >= 0")
        for k, v in [("decay", decay), ("offset", offset), ("noise_std", noise), ("sensitivity", sens), ("force_lengthscale", ls)]:
            object.__setattr__(self, k, v)

    @property
    def Q(self):
        return self.decay.size

    @property
    def R(self):
        return self.force_lengthscale.size

    @property
    def mean(self):
        """Stationary output mean ``B_q / D_q``."""
        return self.offset / self.decay

    def nu(self, r, q):
        return self.force_lengthscale[r] * self.decay[q] / 2.0

    def kernel(self) -> "LfmFirstOrder":
        return LfmFirstOrder(self.decay, self.sensitivity, self.force_lengthscale)

    def to_dict(self):
        return {
            "decay": self.decay.tolist(),
            "offset": self.offset.tolist(),
            "noise_std": self.noise_std.tolist(),
            "sensitivity": self.sensitivity.tolist(),
            "force_lengthscale": self.force_lengthscale.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                np.array(d["decay"], float),
                np.array(d["offset"], float),
                np.array(d["noise_std"], float),
                np.array(d["sensitivity"], float),
                np.array(d["force_lengthscale"], float),
            )
        except KeyError as exc:
            raise ConfigError(f"LFM parameters missing field {exc}") from None


@dataclass(frozen=True)
class EFoldingTime:
    tau: np.ndarray


def efolding(params: LfmParams) -> EFoldingTime:
    """Per-channel e-folding time ``1 / D_q`` in days."""
    return EFoldingTime(1.0 / np.asarray(params.decay, float))


# --------------------------------------------------------------------------
# Elementwise closed forms (reference path)
# --------------------------------------------------------------------------


def _h(a, b, Da, Db, l):
    nu = l * Da / 2.0
    first = exp_erf_sum(nu * nu - Da * (a - b), (a - b) / l - nu, b / l + nu)
    second = exp_erf_sum(nu * nu - Da * a - Db * b, a / l - nu, nu)
    return first - second


def _unit_elementwise(t, s, Dp, Dq, l):
    return SQRT_PI * l / 2.0 * (_h(t, s, Dp, Dq, l) + _h(s, t, Dq, Dp, l)) / (Dp + Dq)


def lfm_kernel(params, p, t, q, s):
    """``cov(y_p(t), y_q(s))``; ``t`` and ``s`` broadcast.

    ``params`` may be :class:`LfmParams` or :class:`LfmFirstOrder`.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    D, S, ls = params.decay, params.sensitivity, params.force_lengthscale
    out = 0.0
    for r in range(ls.size):
        out = out + S[r, p] * S[r, q] * _unit_elementwise(t, s, D[p], D[q], ls[r])
    return out


def lfm_cross_kernel(params, q, t, r, s):
    """``cov(y_q(t), f_r(s))``; ``t`` and ``s`` broadcast."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    D, l = params.decay[q], params.force_lengthscale[r]
    nu = l * D / 2.0
    d = t - s
    return params.sensitivity[r, q] * SQRT_PI * l / 2.0 * exp_erf_sum(nu * nu - D * d, d / l - nu, s / l + nu)


def stationary_unit_variance(decay, lengthscale):
    """``lim_{t->inf} k(q, t, q, t)`` for ``S = 1``: ``sqrt(pi) l erfcx(nu) / (2 D)``."""
    nu = lengthscale * decay / 2.0
    return SQRT_PI * lengthscale * erfcx(nu) / (2.0 * decay)


# --------------------------------------------------------------------------
# Tabulated fast path
#
# With a = row time, b = column time, lag L = a - b and x = L/l - nu:
#   x >= 0: exp(nu^2 - Da L)[erf(x) + erf(b/l + nu)]
#           = E(L) erf(x(L)) + E(L) w(b)                E(L) = exp(nu^2 - Da L) <= 1
#   x <  0: = G(L) - exp(-Da a) v(b)                    G(L) = exp(-(L/l)^2) erfcx(nu - L/l)
#                                                       v(b) = exp(-(b/l)^2) erfcx(b/l + nu)
# so everything that is not a function of the lag alone is an outer product.
# --------------------------------------------------------------------------


def _lag_tables(L, D, l):
    nu = l * D / 2.0
    x = L / l - nu
    flag = x >= 0
    P = np.empty_like(L)
    Qt = np.zeros_like(L)
    E = np.exp(nu * nu - D * L[flag])
    P[flag] = E * erf(x[flag])
    Qt[flag] = E
    Lm = L[~flag] / l
    P[~flag] = np.exp(-Lm * Lm) * erfcx(nu - Lm)
    return P, Qt, flag


def _side_vectors(b, D, l):
    nu = l * D / 2.0
    bl = b / l
    w = erf(bl + nu)
    v = np.exp(-bl * bl) * erfcx(bl + nu)
    u = exp_erf_sum(nu * nu - D * b, bl - nu, nu)
    return w, v, u


def _combine_numpy(index, PA, QA, FA, PB, QB, FB, wA, vA, uA, wB, vB, uB, ep, eq):
    fa = FA[index]
    fb = FB[index]
    t1a = PA[index] + np.where(fa, QA[index] * wA[None, :], -ep[:, None] * vA[None, :])
    t1b = PB[index] + np.where(fb, QB[index] * wB[:, None], -eq[None, :] * vB[:, None])
    return (t1a - uA[:, None] * eq[None, :]) + (t1b - uB[None, :] * ep[:, None])


def _combine_loop(index, PA, QA, FA, PB, QB, FB, wA, vA, uA, wB, vB, uB, ep, eq):  # pragma: no cover - jitted
    n, m = index.shape
    out = np.empty((n, m))
    for i in range(n):
        epi = ep[i]
        for j in range(m):
            k = index[i, j]
            if FA[k]:
                t1a = PA[k] + QA[k] * wA[j]
            else:
                t1a = PA[k] - epi * vA[j]
            if FB[k]:
                t1b = PB[k] + QB[k] * wB[i]
            else:
                t1b = PB[k] - eq[j] * vB[i]
            out[i, j] = (t1a - uA[i] * eq[j]) + (t1b - uB[j] * epi)
    return out


_combine = njit(cache=True)(_combine_loop) if njit is not None else _combine_numpy


def lfm_unit_block(t, s, Dp, Dq, l, lags: LagTable | None = None) -> np.ndarray:
    """Unit-sensitivity block ``[k(p, t_i, q, s_j)]`` for one force via lag tables."""
    t = np.asarray(t, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    if lags is None:
        lags = LagTable(t, s)
    if t.size == 0 or s.size == 0:
        return np.zeros((t.size, s.size))
    L = lags.values
    PA, QA, FA = _lag_tables(L, Dp, l)
    PB, QB, FB = _lag_tables(-L, Dq, l)
    wA, vA, _ = _side_vectors(s, Dp, l)
    _, _, uA = _side_vectors(t, Dp, l)
    wB, vB, _ = _side_vectors(t, Dq, l)
    _, _, uB = _side_vectors(s, Dq, l)
    ep = np.exp(-Dp * t)
    eq = np.exp(-Dq * s)
    out = _combine(lags.index, PA, QA, FA, PB, QB, FB, wA, vA, uA, wB, vB, uB, ep, eq)
    out *= SQRT_PI * l / 2.0 / (Dp + Dq)
    return out


@dataclass(frozen=True, eq=False)
class LfmFirstOrder(KernelSpec):
    """Output covariance of the first-order LFM (zero-mean part)."""

    decay: np.ndarray
    sensitivity: np.ndarray
    force_lengthscale: np.ndarray

    def __post_init__(self):
        decay = _readonly(self.decay, 1)
        ls = _readonly(self.force_lengthscale, 1)
        sens = _readonly(self.sensitivity, 2)
        if sens.shape != (ls.size, decay.size):
            raise ConfigError(f"sensitivity must be R x Q = {ls.size} x {decay.size}, got {sens.shape}")
        if not (np.all(np.isfinite(decay)) and np.all(np.isfinite(ls)) and np.all(np.isfinite(sens))):
            raise ConfigError("LFM parameters must be finite")
        if np.any(decay <= 0) or np.any(ls <= 0):
            raise ConfigError("LFM decay and force lengthscale must be strictly positive")
        if RANGE_CHECKS:
            if np.any(decay < DECAY_RANGE[0]) or np.any(decay > DECAY_RANGE[1]):
                raise NumericFailureError(f"decay {decay} outside {DECAY_RANGE}")
            if np.any(ls < LENGTHSCALE_RANGE[0]) or np.any(ls > LENGTHSCALE_RANGE[1]):
                raise NumericFailureError(f"force lengthscale {ls} outside {LENGTHSCALE_RANGE}")
        object.__setattr__(self, "decay", decay)
        object.__setattr__(self, "force_lengthscale", ls)
        object.__setattr__(self, "sensitivity", sens)

    @property
    def n_outputs(self):
        return self.decay.size

    @property
    def n_forces(self):
        return self.force_lengthscale.size

    def block(self, p, t, q, s, lags=None):
        self.check_channel(p)
        self.check_channel(q)
        t = np.asarray(t, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        if lags is None:
            lags = LagTable(t, s)
        D, S = self.decay, self.sensitivity
        out = None
        for r, l in enumerate(self.force_lengthscale):
            key = ("lfm-unit", float(D[p]), float(D[q]), float(l))
            unit = lags.memo(key, lambda: lfm_unit_block(t, s, D[p], D[q], l, lags))
            term = S[r, p] * S[r, q] * unit
            out = term if out is None else out + term
        return out

    def diag(self, p, t):
        self.check_channel(p)
        t = np.asarray(t, dtype=float).reshape(-1)
        return np.asarray(lfm_kernel(self, p, t, p, t), dtype=float).reshape(-1)

    def block_key(self, p, q):
        return (
            "LFM1",
            float(self.decay[p]),
            float(self.decay[q]),
            tuple(self.force_lengthscale),
            tuple(self.sensitivity[:, p]),
            tuple(self.sensitivity[:, q]),
        )

    def unit_variance(self, q, r):
        return float(stationary_unit_variance(self.decay[q], self.force_lengthscale[r]))

    def force_block(self, q, t, r, s, lags=None):
        self.check_channel(q)
        self.check_force(r)
        t = np.asarray(t, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        return lfm_cross_kernel(self, q, t[:, None], r, s[None, :])

    def force_cov(self, r, t, s):
        self.check_force(r)
        d = np.asarray(t, float).reshape(-1)[:, None] - np.asarray(s, float).reshape(-1)[None, :]
        return np.exp(-(d * d) / self.force_lengthscale[r] ** 2)

    def to_dict(self):
        return {
            "type": "lfm_first_order",
            "decay": self.decay.tolist(),
            "sensitivity": self.sensitivity.tolist(),
            "force_lengthscale": self.force_lengthscale.tolist(),
        }


def _from_dict(d):
    return LfmFirstOrder(np.array(d["decay"], float), np.array(d["sensitivity"], float), np.array(d["force_lengthscale"], float))


from .kernels import register  # noqa: E402

register("lfm_first_order")(_from_dict)
