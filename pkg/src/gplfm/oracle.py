"""Independent checks: brute-force quadrature of the convolution integrals,
an ODE simulator driven by sampled forces, and a GP prior sampler.

Nothing here reuses the closed forms in :mod:`gplfm.lfm` or
:mod:`gplfm.kernels`; the quadrature integrates the defining integrals
directly from impulse responses and force covariances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal

from .data import Channel, TimeSeriesSet
from .errors import ConfigError, OracleFailureError
from .gp import Layout, _fill, _jitter_scale, cholesky_with_jitter, kernel_blocks
from .kernels import GaussConv, KernelSpec
from .lfm import LfmFirstOrder, LfmParams

QUAD_LIMIT = 200
TRUNCATION = 10.0


@dataclass(frozen=True)
class ConvolutionForm:
    """``y_q(t) = sum_r S[r,q] int G_q(t - u) f_r(u) du`` over ``support(q, t)``.

    ``green(q, x)`` is the impulse response, ``force_cov(r, d)`` the force
    covariance as a function of lag and ``support(q, t)`` the integration
    interval in ``u`` for an output at time ``t``.
    """

    green: object
    force_cov: object
    support: object
    sensitivity: np.ndarray

    @classmethod
    def first_order(cls, decay, sensitivity, lengthscale):
        D = np.asarray(decay, float)
        l = np.asarray(lengthscale, float)
        return cls(
            green=lambda q, x: np.exp(-D[q] * x),
            force_cov=lambda r, d: np.exp(-(d * d) / l[r] ** 2),
            support=lambda q, t: (0.0, float(t)),
            sensitivity=np.asarray(sensitivity, float),
        )

    @classmethod
    def gaussian(cls, widths, sensitivity, lengthscales):
        nu = np.asarray(widths, float)
        l = np.asarray(lengthscales, float)
        half = TRUNCATION * float(np.sqrt(2 * np.max(nu) ** 2 + np.max(l) ** 2))
        return cls(
            green=lambda q, x: (np.pi * nu[q] ** 2) ** -0.25 * np.exp(-(x * x) / (2 * nu[q] ** 2)),
            force_cov=lambda r, d: np.exp(-(d * d) / (2 * l[r] ** 2)),
            support=lambda q, t: (float(t) - half, float(t) + half),
            sensitivity=np.asarray(sensitivity, float),
        )

    @classmethod
    def of(cls, kernel: KernelSpec) -> "ConvolutionForm":
        if isinstance(kernel, LfmFirstOrder):
            return cls.first_order(kernel.decay, kernel.sensitivity, kernel.force_lengthscale)
        if isinstance(kernel, GaussConv):
            return cls.gaussian(kernel.widths, kernel.sensitivity, kernel.lengthscales)
        raise ConfigError(f"no integral form for {type(kernel).__name__}")


def _quad(f, a, b, tol, points=None):
    if b <= a:
        return 0.0
    pts = None
    if points is not None:
        pts = sorted({float(x) for x in points if a < x < b}) or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=tol, limit=QUAD_LIMIT, points=pts)
        except integrate.IntegrationWarning as exc:
            raise OracleFailureError(f"quadrature did not converge on [{a:g}, {b:g}]: {exc}") from None
    return val


def quad_kernel_oracle(form, p, t, q, s, tol=1e-7, force=False) -> float:
    """Nested adaptive quadrature of the output covariance (or, with
    ``force=True``, of the covariance between output ``p`` at ``t`` and force
    ``q`` at ``s``).  ``form`` is a :class:`ConvolutionForm` or a kernel."""
    if not isinstance(form, ConvolutionForm):
        form = ConvolutionForm.of(form)
    S = form.sensitivity
    total = 0.0
    a, b = form.support(p, t)
    if force:
        r = q
        f = lambda u: form.green(p, t - u) * form.force_cov(r, u - s)
        return S[r, p] * _quad(f, a, b, tol, [s, t])
    c, d = form.support(q, s)
    for r in range(S.shape[0]):
        if S[r, p] == 0 or S[r, q] == 0:
            continue

        # break both integrals at the peaks of their two factors
        def inner(u, r=r):
            g = lambda v: form.green(q, s - v) * form.force_cov(r, u - v)
            return form.green(p, t - u) * _quad(g, c, d, tol, [u, s])

        total += S[r, p] * S[r, q] * _quad(inner, a, b, tol, [s, t])
    return total


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimScenario:
    """Everything needed to generate one synthetic data set.

    ``sample_times`` maps channel index to observation times (default: the
    integer days ``0..horizon``).  ``missing`` maps channel index to either a
    boolean array (True = drop) aligned with that channel's sample times, or
    a drop probability.  ``force_clip`` turns each force into the sparse,
    spiky ``max(f - clip, 0)`` before it drives the ODE.
    """

    params: LfmParams
    horizon: float
    dt: float | None = None
    force_seed: int = 0
    sample_times: dict = field(default_factory=dict)
    missing: dict = field(default_factory=dict)
    force_clip: float | None = None
    channel_ids: tuple = ()

    def __post_init__(self):
        dt = self.dt if self.dt is not None else float(np.min(self.params.force_lengthscale)) / 20.0
        if not dt > 0:
            raise ConfigError("dt must be positive")
        if not self.horizon > 0 or self.horizon / dt > 1e7:
            raise ConfigError("need horizon > 0 and horizon / dt <= 1e7")
        for k, m in self.missing.items():
            if np.ndim(m) == 0 and not 0.0 <= float(m) <= 1.0:
                raise ConfigError(f"missing probability for channel {k} must lie in [0, 1]")
        object.__setattr__(self, "dt", float(dt))

    def ids(self):
        return tuple(self.channel_ids) or tuple(f"y{q}" for q in range(self.params.Q))


@dataclass(frozen=True, eq=False)
class Simulation:
    data: TimeSeriesSet
    grid: np.ndarray
    forces: np.ndarray
    outputs: np.ndarray


def sample_forces(lengthscales, grid_size, dt, rng) -> np.ndarray:
    """Stationary forces with covariance ``exp(-d**2 / l**2)`` on a regular grid.

    White noise smoothed by ``exp(-2 u**2 / l**2)`` (normalized to unit
    energy) has exactly that autocovariance in the continuum limit.
    """
    out = np.empty((len(lengthscales), grid_size))
    for r, l in enumerate(lengthscales):
        half = int(np.ceil(4.0 * l / dt))
        u = np.arange(-half, half + 1) * dt
        g = np.exp(-2.0 * u * u / l**2)
        g /= np.sqrt(np.sum(g * g))
        w = rng.standard_normal(grid_size + 2 * half)
        out[r] = signal.fftconvolve(w, g, mode="valid")
    return out


def integrate_first_order(decay, drive, dt, y0):
    """Exponential-integrator steps with the drive held at its left-point value.

    ``drive`` is ``B + S' f`` on the grid, shape ``(Q, M)``.
    """
    D = np.asarray(decay, float)[:, None]
    a = np.exp(-D * dt)
    b = -np.expm1(-D * dt) / D
    Q, M = drive.shape
    y = np.empty((Q, M))
    y[:, 0] = y0
    a, b = a[:, 0], b[:, 0]
    for k in range(M - 1):
        y[:, k + 1] = a * y[:, k] + b * drive[:, k]
    return y


def simulate(scenario: SimScenario) -> Simulation:
    """Forces, dense noiseless outputs and the observed (noisy, gappy) data."""
    P = scenario.params
    ss = np.random.SeedSequence(scenario.force_seed)
    force_rng, noise_rng, miss_rng = (np.random.default_rng(c) for c in ss.spawn(3))
    dt = scenario.dt
    M = int(np.floor(scenario.horizon / dt + 1e-9)) + 1
    grid = np.arange(M) * dt
    f = sample_forces(P.force_lengthscale, M, dt, force_rng)
    if scenario.force_clip is not None:
        f = np.maximum(f - scenario.force_clip, 0.0)
    drive = P.offset[:, None] + P.sensitivity.T @ f
    y = integrate_first_order(P.decay, drive, dt, P.mean)
    chans = []
    for q, cid in enumerate(scenario.ids()):
        t = np.asarray(scenario.sample_times.get(q, np.arange(0.0, np.floor(scenario.horizon) + 1)), float)
        vals = np.interp(t, grid, y[q]) + P.noise_std[q] * noise_rng.standard_normal(t.size)
        spec = scenario.missing.get(q)
        if spec is None:
            drop = np.zeros(t.size, bool)
        elif np.ndim(spec) == 0:
            drop = miss_rng.random(t.size) < float(spec)
        else:
            drop = np.asarray(spec, bool)
            if drop.shape != t.shape:
                raise ConfigError(f"missing mask for channel {q} has shape {drop.shape}, expected {t.shape}")
        chans.append(Channel(cid, t[~drop], vals[~drop]))
    return Simulation(TimeSeriesSet(tuple(chans)), grid, f, y)


def sample_gp_prior(kernel: KernelSpec, times, rng, n=1) -> list:
    """Joint draws from a multi-output GP prior at ``times`` (one array per channel).

    Returns ``n`` lists of per-channel arrays.
    """
    data = TimeSeriesSet(tuple(Channel(f"c{q}", t, np.zeros(len(t))) for q, t in enumerate(times)))
    blocks = kernel_blocks(kernel, Layout(data))
    off = data.offsets()
    sigma = np.zeros(data.Q)
    K = _fill(blocks, off, sigma)
    L, _ = cholesky_with_jitter(K, _jitter_scale(blocks, sigma, off))
    L = np.tril(L)
    draws = []
    for _ in range(n):
        z = L @ rng.standard_normal(off[-1])
        draws.append([z[off[q] : off[q + 1]] for q in range(data.Q)])
    return draws
