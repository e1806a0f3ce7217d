"""Multi-output covariance functions.

Every kernel answers ``k(p, t, q, s) = cov(y_p(t), y_q(s))`` for channel
indices ``p, q``.  Dense evaluation goes through :meth:`KernelSpec.block`,
which receives an optional :class:`LagTable` so that anything depending on
``t - s`` alone is evaluated once per distinct lag instead of once per
matrix entry.

Single-output kernels (:class:`RBF`, :class:`Periodic`, :class:`Sum`) applied
to several channels describe independent outputs sharing hyperparameters:
their cross-channel blocks are zero.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, QueryError, UnsupportedModelError


class LagTable:
    """Distinct values of ``t[i] - s[j]`` plus an index into them.

    Integer-valued times (day offsets of daily or 8-day products) take a
    sort-free path.  The table also owns a small LRU cache that kernels use
    to memoize expensive blocks keyed by their hyperparameters.
    """

    cache_size = 4

    def __init__(self, t, s):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        self.s = np.asarray(s, dtype=float).reshape(-1)
        t, s = self.t, self.s
        if t.size == 0 or s.size == 0:
            self.values = np.zeros(0)
            self.index = np.zeros((t.size, s.size), dtype=np.int32)
        elif _integral(t) and _integral(s):
            ti, si = t.astype(np.int64), s.astype(np.int64)
            lo = int(ti.min() - si.max())
            hi = int(ti.max() - si.min())
            self.values = np.arange(lo, hi + 1, dtype=float)
            self.index = (ti[:, None] - si[None, :] - lo).astype(np.int32)
        else:
            d = t[:, None] - s[None, :]
            self.values, inv = np.unique(d, return_inverse=True)
            self.index = inv.reshape(d.shape).astype(np.int32)
        self._cache = OrderedDict()

    @property
    def shape(self):
        return self.index.shape

    def lags(self) -> np.ndarray:
        return self.values[self.index]

    def memo(self, key, compute):
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        value = compute()
        self._cache[key] = value
        while len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return value


def _integral(a):
    return bool(np.all(a == np.round(a)) and np.all(np.abs(a) < 2**30))


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
        raise ConfigError(f"{name} must be finite and strictly positive, got {value!r}")
    return arr


def _readonly(a, ndim):
    a = np.array(a, dtype=float, ndmin=ndim)
    a.setflags(write=False)
    return a


class KernelSpec:
    """Base class; subclasses implement :meth:`block`."""

    #: number of output channels, or ``None`` for "any" (independent outputs)
    n_outputs: int | None = None
    #: number of latent forces whose posterior can be queried
    n_forces: int = 0

    def check_channel(self, p):
        if not isinstance(p, (int, np.integer)) or p < 0:
            raise QueryError(f"channel index must be a non-negative integer, got {p!r}")
        if self.n_outputs is not None and p >= self.n_outputs:
            raise QueryError(f"channel {p} out of range for a {self.n_outputs}-output kernel")

    def check_force(self, r):
        if not isinstance(r, (int, np.integer)) or not 0 <= r < self.n_forces:
            raise QueryError(f"latent force {r!r} out of range (kernel has {self.n_forces})")

    def block(self, p, t, q, s, lags=None) -> np.ndarray:
        """Matrix ``[k(p, t[i], q, s[j])]_ij``."""
        raise NotImplementedError

    def diag(self, p, t) -> np.ndarray:
        """``k(p, t[i], p, t[i])`` for every ``i``."""
        t = np.asarray(t, dtype=float).reshape(-1)
        return np.array([self.block(p, t[i : i + 1], p, t[i : i + 1])[0, 0] for i in range(t.size)])

    def __call__(self, p, t, q, s) -> float:
        self.check_channel(p)
        self.check_channel(q)
        return float(self.block(p, np.array([t], float), q, np.array([s], float))[0, 0])

    def block_key(self, p, q) -> tuple:
        """Hashable summary of every hyperparameter that block ``(p, q)`` depends on."""
        return (type(self).__name__, repr(self.to_dict()))

    def force_block(self, q, t, r, s, lags=None) -> np.ndarray:
        """``cov(y_q(t[i]), f_r(s[j]))``."""
        raise UnsupportedModelError(f"{type(self).__name__} has no latent forces")

    def force_cov(self, r, t, s) -> np.ndarray:
        """``cov(f_r(t[i]), f_r(s[j]))``."""
        raise UnsupportedModelError(f"{type(self).__name__} has no latent forces")

    def to_dict(self) -> dict:
        raise NotImplementedError


class Stationary(KernelSpec):
    """Single-output kernel that depends on the lag only."""

    def profile(self, d):
        raise NotImplementedError

    def block(self, p, t, q, s, lags=None):
        self.check_channel(p)
        self.check_channel(q)
        t = np.asarray(t, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        if p != q:
            return np.zeros((t.size, s.size))
        if lags is None:
            return self.profile(t[:, None] - s[None, :])
        return self.profile(lags.values)[lags.index]

    def diag(self, p, t):
        return np.full(np.asarray(t).size, float(self.profile(np.zeros(1))[0]))


@dataclass(frozen=True, eq=False)
class RBF(Stationary):
    """``amplitude * exp(-d**2 / (2 lengthscale**2))``."""

    lengthscale: float
    amplitude: float = 1.0

    def __post_init__(self):
        _positive("RBF lengthscale", self.lengthscale)
        _positive("RBF amplitude", self.amplitude)

    def profile(self, d):
        d = np.asarray(d, dtype=float)
        return self.amplitude * np.exp(-(d * d) / (2.0 * self.lengthscale**2))

    def to_dict(self):
        return {"type": "rbf", "lengthscale": float(self.lengthscale), "amplitude": float(self.amplitude)}


@dataclass(frozen=True, eq=False)
class Periodic(Stationary):
    """``amplitude * exp(-2 sin**2(pi d / period) / lengthscale**2)``."""

    period: float
    lengthscale: float
    amplitude: float = 1.0

    def __post_init__(self):
        _positive("Periodic period", self.period)
        _positive("Periodic lengthscale", self.lengthscale)
        _positive("Periodic amplitude", self.amplitude)

    def profile(self, d):
        d = np.asarray(d, dtype=float)
        sn = np.sin(np.pi * np.abs(d) / self.period)
        return self.amplitude * np.exp(-2.0 * sn * sn / self.lengthscale**2)

    def to_dict(self):
        return {
            "type": "periodic",
            "period": float(self.period),
            "lengthscale": float(self.lengthscale),
            "amplitude": float(self.amplitude),
        }


@dataclass(frozen=True, eq=False)
class Sum(KernelSpec):
    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ConfigError("Sum kernel needs at least one term")
        sizes = {k.n_outputs for k in terms} - {None}
        if len(sizes) > 1:
            raise ConfigError(f"Sum terms disagree on the number of outputs: {sorted(sizes)}")
        object.__setattr__(self, "terms", terms)

    @property
    def n_outputs(self):
        sizes = {k.n_outputs for k in self.terms} - {None}
        return sizes.pop() if sizes else None

    def profile(self, d):
        if not all(isinstance(k, Stationary) for k in self.terms):
            raise UnsupportedModelError("profile() needs stationary single-output terms")
        out = self.terms[0].profile(d)
        for k in self.terms[1:]:
            out = out + k.profile(d)
        return out

    def block(self, p, t, q, s, lags=None):
        out = self.terms[0].block(p, t, q, s, lags)
        for k in self.terms[1:]:
            out = out + k.block(p, t, q, s, lags)
        return out

    def diag(self, p, t):
        out = self.terms[0].diag(p, t)
        for k in self.terms[1:]:
            out = out + k.diag(p, t)
        return out

    def to_dict(self):
        return {"type": "sum", "terms": [k.to_dict() for k in self.terms]}


@dataclass(frozen=True, eq=False)
class Independent(KernelSpec):
    """One single-output kernel per channel; no cross-channel covariance."""

    kernels: tuple

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ConfigError("Independent kernel needs at least one channel")
        object.__setattr__(self, "kernels", kernels)

    @property
    def n_outputs(self):
        return len(self.kernels)

    def block(self, p, t, q, s, lags=None):
        self.check_channel(p)
        self.check_channel(q)
        if p != q:
            return np.zeros((np.asarray(t).size, np.asarray(s).size))
        return self.kernels[p].block(0, t, 0, s, lags)

    def diag(self, p, t):
        self.check_channel(p)
        return self.kernels[p].diag(0, t)

    def block_key(self, p, q):
        return ("Independent", p, q, repr(self.kernels[p].to_dict()), repr(self.kernels[q].to_dict()))

    def to_dict(self):
        return {"type": "independent", "kernels": [k.to_dict() for k in self.kernels]}


@dataclass(frozen=True, eq=False)
class LMC(KernelSpec):
    """Linear model of coregionalization ``sum_r a[p,r] a[q,r] k_r(t - s)``.

    ``bases`` are single-output stationary kernels (one per latent process)
    and ``mixing`` is the ``Q x R`` coefficient matrix.
    """

    bases: tuple
    mixing: np.ndarray

    def __post_init__(self):
        bases = tuple(self.bases)
        mixing = _readonly(self.mixing, 2)
        if len(bases) < 1:
            raise ConfigError("LMC needs R >= 1 latent processes")
        if mixing.shape[1] != len(bases):
            raise ConfigError(f"LMC mixing must be Q x R = ? x {len(bases)}, got {mixing.shape}")
        for b in bases:
            if b.n_outputs is not None:
                raise ConfigError("LMC bases must be single-output kernels")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "mixing", mixing)

    @property
    def n_outputs(self):
        return self.mixing.shape[0]

    @property
    def n_forces(self):
        return len(self.bases)

    def _base(self, r, t, s, lags):
        b = self.bases[r]
        if lags is None:
            return b.profile(np.asarray(t, float)[:, None] - np.asarray(s, float)[None, :])
        return b.profile(lags.values)[lags.index]

    def block(self, p, t, q, s, lags=None):
        self.check_channel(p)
        self.check_channel(q)
        a = self.mixing
        out = a[p, 0] * a[q, 0] * self._base(0, t, s, lags)
        for r in range(1, len(self.bases)):
            out = out + a[p, r] * a[q, r] * self._base(r, t, s, lags)
        return out

    def diag(self, p, t):
        self.check_channel(p)
        n = np.asarray(t).size
        return sum(self.mixing[p, r] ** 2 * self.bases[r].diag(0, np.zeros(n)) for r in range(self.n_forces))

    def block_key(self, p, q):
        return ("LMC", tuple(repr(b.to_dict()) for b in self.bases), tuple(self.mixing[p]), tuple(self.mixing[q]))

    def force_block(self, q, t, r, s, lags=None):
        self.check_channel(q)
        self.check_force(r)
        return self.mixing[q, r] * self._base(r, t, s, lags)

    def force_cov(self, r, t, s):
        self.check_force(r)
        return self._base(r, t, s, None)

    def to_dict(self):
        return {
            "type": "lmc",
            "bases": [b.to_dict() for b in self.bases],
            "mixing": self.mixing.tolist(),
        }


@dataclass(frozen=True, eq=False)
class GaussConv(KernelSpec):
    """Gaussian smoothing kernels convolved with RBF latent forces.

    Output ``q`` is ``y_q = sum_r S[r, q] (G_q * f_r)`` with
    ``G_q(u) = (pi nu_q**2)**(-1/4) exp(-u**2 / (2 nu_q**2))`` (unit L2 norm,
    so the output scale lives entirely in ``S``) and
    ``cov(f_r(t), f_r(s)) = exp(-(t - s)**2 / (2 l_r**2))``.  Integrating
    over the whole real line, Gaussians convolve into a Gaussian whose
    variance is the sum of the three variances::

        k_pq(d) = sum_r S[r,p] S[r,q] A_pqr exp(-d**2 / (2 V_pqr))
        V_pqr   = nu_p**2 + nu_q**2 + l_r**2
        A_pqr   = 2 sqrt(pi) l_r sqrt(nu_p nu_q) / sqrt(V_pqr)

    and the output/force cross-covariance is
    ``S[r,q] sqrt(2) pi**(1/4) l_r sqrt(nu_q) / sqrt(nu_q**2 + l_r**2)
    * exp(-d**2 / (2 (nu_q**2 + l_r**2)))``.
    """

    widths: np.ndarray
    lengthscales: np.ndarray
    sensitivity: np.ndarray

    def __post_init__(self):
        widths = _readonly(_positive("GaussConv widths", self.widths), 1)
        ls = _readonly(_positive("GaussConv lengthscales", self.lengthscales), 1)
        sens = _readonly(self.sensitivity, 2)
        if sens.shape != (ls.size, widths.size):
            raise ConfigError(f"sensitivity must be R x Q = {ls.size} x {widths.size}, got {sens.shape}")
        if not np.all(np.isfinite(sens)):
            raise ConfigError("sensitivity must be finite")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "sensitivity", sens)

    @property
    def n_outputs(self):
        return self.widths.size

    @property
    def n_forces(self):
        return self.lengthscales.size

    def _term(self, p, q, r, d):
        nu_p, nu_q, l = self.widths[p], self.widths[q], self.lengthscales[r]
        var = nu_p * nu_p + nu_q * nu_q + l * l
        amp = 2.0 * np.sqrt(np.pi) * l * np.sqrt(nu_p * nu_q) / np.sqrt(var)
        return amp * np.exp(-(d * d) / (2.0 * var))

    def block(self, p, t, q, s, lags=None):
        self.check_channel(p)
        self.check_channel(q)
        S = self.sensitivity
        if lags is None:
            d = np.asarray(t, float).reshape(-1)[:, None] - np.asarray(s, float).reshape(-1)[None, :]
            out = S[0, p] * S[0, q] * self._term(p, q, 0, d)
            for r in range(1, self.n_forces):
                out = out + S[r, p] * S[r, q] * self._term(p, q, r, d)
            return out
        prof = S[0, p] * S[0, q] * self._term(p, q, 0, lags.values)
        for r in range(1, self.n_forces):
            prof = prof + S[r, p] * S[r, q] * self._term(p, q, r, lags.values)
        return prof[lags.index]

    def diag(self, p, t):
        self.check_channel(p)
        v = sum(self.sensitivity[r, p] ** 2 * self._term(p, p, r, 0.0) for r in range(self.n_forces))
        return np.full(np.asarray(t).size, float(v))

    def unit_variance(self, q, r):
        """Prior variance of output ``q`` driven by force ``r`` with ``S = 1``."""
        return float(self._term(q, q, r, 0.0))

    def block_key(self, p, q):
        return (
            "GaussConv",
            float(self.widths[p]),
            float(self.widths[q]),
            tuple(self.lengthscales),
            tuple(self.sensitivity[:, p]),
            tuple(self.sensitivity[:, q]),
        )

    def force_block(self, q, t, r, s, lags=None):
        self.check_channel(q)
        self.check_force(r)
        nu, l = self.widths[q], self.lengthscales[r]
        var = nu * nu + l * l
        amp = np.sqrt(2.0) * np.pi**0.25 * l * np.sqrt(nu) / np.sqrt(var)
        d = np.asarray(t, float).reshape(-1)[:, None] - np.asarray(s, float).reshape(-1)[None, :]
        return self.sensitivity[r, q] * amp * np.exp(-(d * d) / (2.0 * var))

    def force_cov(self, r, t, s):
        self.check_force(r)
        d = np.asarray(t, float).reshape(-1)[:, None] - np.asarray(s, float).reshape(-1)[None, :]
        return np.exp(-(d * d) / (2.0 * self.lengthscales[r] ** 2))

    def to_dict(self):
        return {
            "type": "gauss_conv",
            "widths": self.widths.tolist(),
            "lengthscales": self.lengthscales.tolist(),
            "sensitivity": self.sensitivity.tolist(),
        }


def eval_gauss_conv(kernel: GaussConv, p, t, q, s) -> float:
    return kernel(p, t, q, s)


_REGISTRY = {}


def register(name):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


register("rbf")(lambda d: RBF(d["lengthscale"], d.get("amplitude", 1.0)))
register("periodic")(lambda d: Periodic(d["period"], d["lengthscale"], d.get("amplitude", 1.0)))
register("sum")(lambda d: Sum(tuple(kernel_from_dict(k) for k in d["terms"])))
register("independent")(lambda d: Independent(tuple(kernel_from_dict(k) for k in d["kernels"])))
register("lmc")(lambda d: LMC(tuple(kernel_from_dict(k) for k in d["bases"]), np.array(d["mixing"], float)))
register("gauss_conv")(
    lambda d: GaussConv(np.array(d["widths"], float), np.array(d["lengthscales"], float), np.array(d["sensitivity"], float))
)


def kernel_from_dict(d: dict) -> KernelSpec:
    try:
        build = _REGISTRY[d["type"]]
    except KeyError:
        raise ConfigError(f"unknown kernel type {d.get('type')!r}; known: {sorted(_REGISTRY)}") from None
    try:
        return build(d)
    except KeyError as exc:
        raise ConfigError(f"kernel {d['type']!r} is missing field {exc}") from None
