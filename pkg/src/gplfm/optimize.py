"""Hyperparameter fitting by ADAM on smoothly reparameterized parameters.

A *family* (``LfmFamily``, ``GaussConvFamily``, ``LmcFamily``,
``RbfFamily``) knows how to turn a flat vector of unconstrained reals into a
kernel, per-channel noise and per-channel mean for a given data set.  All
transforms are scale-aware: they are anchored on each channel's sample mean
and standard deviation and on the time span, so that ``u = 0`` is always a
sensible neighbourhood.

The gradient of

    J(u) = r' Kt^-1 r + log |Kt|,      Kt = K + diag(sigma**2)

is ``dJ/du_i = sum(W * dKt/du_i)`` with ``W = Kt^-1 - alpha alpha'`` and
``alpha = Kt^-1 r``.  ``dKt/du_i`` is a central difference of kernel
entries; blocks whose parameters are untouched by coordinate ``i`` are
skipped.  The mean coordinates enter only through ``r`` and get the exact
derivative ``-2 alpha' dr/du_i``.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .data import Channel, TimeSeriesSet
from .errors import ConfigError, LfmError, NumericFailureError, OptimizationFailureError
from .fpenv import flush_denormals
from .gp import ConditionedGP, Layout, kernel_blocks
from .kernels import RBF, GaussConv, Independent, LMC, Periodic, Sum
from .lfm import DECAY_RANGE, LENGTHSCALE_RANGE, LfmFirstOrder, LfmParams, stationary_unit_variance

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WINDOW = 20
MAX_BACKOFFS = 5
FD_STEP = 1e-5


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------


class Exp:
    """``c = scale * exp(u)``."""

    def __init__(self, scale=1.0):
        self.scale = np.asarray(scale, float)

    def forward(self, u):
        return self.scale * np.exp(u)

    def inverse(self, c):
        c = np.asarray(c, float)
        if np.any(c <= 0):
            raise ConfigError(f"positive parameter expected, got {c}")
        return np.log(c / self.scale)


class LogSigmoid:
    """``c = lo * (hi / lo) ** expit(u)``: smooth bijection onto ``(lo, hi)``."""

    def __init__(self, lo, hi):
        self.lo, self.hi = float(lo), float(hi)
        self._w = np.log(self.hi / self.lo)

    def forward(self, u):
        # rounding can land a hair outside at saturation
        return np.clip(self.lo * np.exp(self._w * expit(u)), self.lo, self.hi)

    def inverse(self, c):
        c = np.asarray(c, float)
        if np.any(c <= self.lo) or np.any(c >= self.hi):
            raise ConfigError(f"value {c} outside the open interval ({self.lo:g}, {self.hi:g})")
        return logit(np.log(c / self.lo) / self._w)


class Affine:
    """``c = shift + scale * u``."""

    def __init__(self, shift=0.0, scale=1.0):
        self.shift = np.asarray(shift, float)
        self.scale = np.asarray(scale, float)

    def forward(self, u):
        return self.shift + self.scale * u

    def inverse(self, c):
        return (np.asarray(c, float) - self.shift) / self.scale


@dataclass(frozen=True)
class DataScales:
    """Per-channel sample mean and std (1 when undefined) and the time span."""

    mean: np.ndarray
    std: np.ndarray
    span: float

    @classmethod
    def of(cls, data: TimeSeriesSet) -> "DataScales":
        mean, std = [], []
        for c in data.channels:
            v = c.values
            mean.append(float(v.mean()) if v.size else 0.0)
            s = float(v.std()) if v.size > 1 else 0.0
            std.append(s if s > 0 else 1.0)
        lo, hi = data.span()
        return cls(np.array(mean), np.array(std), max(hi - lo, 1.0))


# --------------------------------------------------------------------------
# model families
# --------------------------------------------------------------------------


class Family:
    """Base class.  Subclasses define ``groups``, ``_transforms`` and ``build``.

    Parameters are handled as dicts of constrained arrays keyed by group
    name; ``sensitivity`` (when present) is ``R x Q`` and is coupled to the
    shape parameters so that ``u = 0`` means unit-variance-per-std output.
    """

    name = ""

    def __init__(self, Q, R=1):
        if Q < 1:
            raise ConfigError("need Q >= 1 channels")
        if R < 1:
            raise ConfigError("need R >= 1 latent processes")
        self.Q, self.R = int(Q), int(R)

    def groups(self) -> list:
        raise NotImplementedError

    def _transforms(self, sc: DataScales) -> dict:
        raise NotImplementedError

    def _sens_scale(self, params, sc):
        """``R x Q`` factor turning unit-free sensitivities into physical ones."""
        raise NotImplementedError

    def build(self, params):
        raise NotImplementedError

    def options(self) -> dict:
        return {"family": self.name, "Q": self.Q, "R": self.R}

    # -- vector layout -------------------------------------------------------

    def slices(self) -> dict:
        out, i = {}, 0
        for name, shape in self.groups():
            n = int(np.prod(shape))
            out[name] = slice(i, i + n)
            i += n
        return out

    @property
    def size(self):
        return sum(int(np.prod(shape)) for _, shape in self.groups())

    def coordinate_names(self) -> list[str]:
        names = []
        for name, shape in self.groups():
            for idx in np.ndindex(*shape):
                names.append(f"{name}[{','.join(map(str, idx))}]")
        return names

    def decode(self, u, sc: DataScales) -> dict:
        u = np.asarray(u, float)
        tr = self._transforms(sc)
        shapes = dict(self.groups())
        out = {}
        for name, sl in self.slices().items():
            if name != "sensitivity":
                out[name] = tr[name].forward(u[sl]).reshape(shapes[name])
        if "sensitivity" in shapes:
            out["sensitivity"] = u[self.slices()["sensitivity"]].reshape(shapes["sensitivity"]) * self._sens_scale(out, sc)
        return out

    def encode(self, params: dict, sc: DataScales) -> np.ndarray:
        tr = self._transforms(sc)
        shapes = dict(self.groups())
        u = np.empty(self.size)
        for name, sl in self.slices().items():
            try:
                value = np.asarray(params[name], float)
            except KeyError:
                raise ConfigError(f"missing parameter group {name!r}") from None
            if value.size != int(np.prod(shapes[name])):
                raise ConfigError(f"parameter {name!r} needs shape {shapes[name]}, got {value.shape}")
            value = value.reshape(shapes[name])
            if name == "sensitivity":
                u[sl] = (value / self._sens_scale(params, sc)).reshape(-1)
            else:
                u[sl] = np.asarray(tr[name].inverse(value.reshape(-1)), float)
        return u

    def default_init(self, sc: DataScales, rng: np.random.Generator) -> np.ndarray:
        """Unconstrained start: transforms are anchored so most groups sit at 0."""
        u = np.zeros(self.size)
        sl = self.slices()
        if "sensitivity" in sl:
            u[sl["sensitivity"]] = rng.standard_normal(self.R * self.Q)
        return u

    def canonicalize(self, params: dict) -> dict:
        """Flip each latent process so its loadings sum to a nonnegative value.

        ``f_r -> -f_r`` together with a sign change of its loadings leaves
        every output covariance unchanged.
        """
        key = "sensitivity" if "sensitivity" in params else "mixing" if "mixing" in params else None
        if key is None:
            return params
        out = dict(params)
        M = np.array(params[key], float)
        rows = M if key == "sensitivity" else M.T
        for r in range(rows.shape[0]):
            if rows[r].sum() < 0:
                rows[r] *= -1
        out[key] = M
        return out

    def describe(self, params: dict) -> dict:
        """JSON-ready model description (constrained values)."""
        return {k: np.asarray(v, float).tolist() for k, v in params.items()}

    def derived(self, params: dict) -> dict:
        return {}


def _noise_mean_transforms(sc):
    return {"noise_std": Exp(sc.std), "mean": Affine(sc.mean, sc.std)}


class LfmFamily(Family):
    """First-order ODE latent force model.

    ``decay`` and ``force_lengthscale`` live in fixed bounded intervals;
    ``sensitivity[r, q]`` is ``u * std_q / sqrt(v_qr)`` with ``v_qr`` the
    stationary variance of output ``q`` for a unit-sensitivity force ``r``.
    """

    name = "lfm"

    def groups(self):
        Q, R = self.Q, self.R
        return [("decay", (Q,)), ("force_lengthscale", (R,)), ("sensitivity", (R, Q)), ("noise_std", (Q,)), ("mean", (Q,))]

    def _transforms(self, sc):
        return {
            "decay": LogSigmoid(*DECAY_RANGE),
            "force_lengthscale": LogSigmoid(*LENGTHSCALE_RANGE),
            **_noise_mean_transforms(sc),
        }

    def _sens_scale(self, params, sc):
        D = np.asarray(params["decay"], float).reshape(1, -1)
        l = np.asarray(params["force_lengthscale"], float).reshape(-1, 1)
        return sc.std[None, :] / np.sqrt(stationary_unit_variance(D, l))

    def default_init(self, sc, rng):
        u = super().default_init(sc, rng)
        sl, tr = self.slices(), self._transforms(sc)
        u[sl["decay"]] = tr["decay"].inverse(np.full(self.Q, 1.0 / 30.0))
        l0 = np.clip(sc.span / 10.0, 1.01 * LENGTHSCALE_RANGE[0], 0.99 * LENGTHSCALE_RANGE[1])
        u[sl["force_lengthscale"]] = tr["force_lengthscale"].inverse(np.full(self.R, l0))
        u[sl["noise_std"]] = np.log(0.1)
        return u

    def build(self, params):
        kernel = LfmFirstOrder(params["decay"], params["sensitivity"], params["force_lengthscale"])
        return kernel, params["noise_std"], params["mean"]

    def lfm_params(self, params) -> LfmParams:
        D = np.asarray(params["decay"], float)
        return LfmParams(D, np.asarray(params["mean"]) * D, params["noise_std"], params["sensitivity"], params["force_lengthscale"])

    def describe(self, params):
        return self.lfm_params(params).to_dict()

    def derived(self, params):
        return {"tau": (1.0 / np.asarray(params["decay"], float)).tolist()}


class GaussConvFamily(Family):
    """Gaussian process convolution; ``shared_width`` ties all ``nu_q``."""

    name = "gauss_conv"

    def __init__(self, Q, R=1, shared_width=False):
        super().__init__(Q, R)
        self.shared_width = bool(shared_width)

    def options(self):
        return {**super().options(), "shared_width": self.shared_width}

    def groups(self):
        Q, R = self.Q, self.R
        nw = 1 if self.shared_width else Q
        return [("width", (nw,)), ("force_lengthscale", (R,)), ("sensitivity", (R, Q)), ("noise_std", (Q,)), ("mean", (Q,))]

    def _transforms(self, sc):
        return {"width": Exp(sc.span / 20.0), "force_lengthscale": Exp(sc.span / 10.0), **_noise_mean_transforms(sc)}

    def _widths(self, params):
        return np.broadcast_to(np.asarray(params["width"], float).reshape(-1), (self.Q,))

    def _sens_scale(self, params, sc):
        nu = self._widths(params)[None, :]
        l = np.asarray(params["force_lengthscale"], float).reshape(-1, 1)
        unit = 2.0 * np.sqrt(np.pi) * l * nu / np.sqrt(2.0 * nu * nu + l * l)
        return sc.std[None, :] / np.sqrt(unit)

    def default_init(self, sc, rng):
        u = super().default_init(sc, rng)
        u[self.slices()["noise_std"]] = np.log(0.1)
        return u

    def build(self, params):
        kernel = GaussConv(self._widths(params), params["force_lengthscale"], params["sensitivity"])
        return kernel, params["noise_std"], params["mean"]


class LmcFamily(Family):
    """LMC over RBF bases, optionally RBF + periodic (fixed period) per base."""

    name = "lmc"

    def __init__(self, Q, R=1, periodic=False, period=365.25):
        super().__init__(Q, R)
        self.periodic = bool(periodic)
        self.period = float(period)

    def options(self):
        return {**super().options(), "periodic": self.periodic, "period": self.period}

    def groups(self):
        Q, R = self.Q, self.R
        g = [("lengthscale", (R,))]
        if self.periodic:
            g += [("periodic_lengthscale", (R,)), ("periodic_weight", (R,))]
        return g + [("mixing", (Q, R)), ("noise_std", (Q,)), ("mean", (Q,))]

    def _transforms(self, sc):
        tr = {"lengthscale": Exp(sc.span / 10.0), "mixing": Affine(0.0, np.repeat(sc.std, self.R)), **_noise_mean_transforms(sc)}
        if self.periodic:
            tr["periodic_lengthscale"] = Exp(1.0)
            tr["periodic_weight"] = Exp(1.0)
        return tr

    def default_init(self, sc, rng):
        u = super().default_init(sc, rng)
        sl = self.slices()
        u[sl["mixing"]] = rng.standard_normal(self.Q * self.R) / np.sqrt(self.R)
        u[sl["noise_std"]] = np.log(0.1)
        return u

    def build(self, params):
        bases = []
        for r in range(self.R):
            b = RBF(float(params["lengthscale"][r]))
            if self.periodic:
                per = Periodic(self.period, float(params["periodic_lengthscale"][r]), float(params["periodic_weight"][r]))
                b = Sum((b, per))
            bases.append(b)
        return LMC(tuple(bases), params["mixing"]), params["noise_std"], params["mean"]


class RbfFamily(Family):
    """Independent single-output RBF GPs, one per channel (the baseline)."""

    name = "rbf"

    def __init__(self, Q, R=1):
        super().__init__(Q, 1)

    def options(self):
        return {"family": self.name, "Q": self.Q}

    def groups(self):
        Q = self.Q
        return [("lengthscale", (Q,)), ("amplitude", (Q,)), ("noise_std", (Q,)), ("mean", (Q,))]

    def _transforms(self, sc):
        return {"lengthscale": Exp(sc.span / 10.0), "amplitude": Exp(sc.std**2), **_noise_mean_transforms(sc)}

    def default_init(self, sc, rng):
        u = super().default_init(sc, rng)
        u[self.slices()["noise_std"]] = np.log(0.1)
        return u

    def build(self, params):
        ks = tuple(RBF(float(l), float(a)) for l, a in zip(params["lengthscale"], params["amplitude"]))
        return Independent(ks), params["noise_std"], params["mean"]


FAMILIES = {"lfm": LfmFamily, "gauss_conv": GaussConvFamily, "lmc": LmcFamily, "rbf": RbfFamily}


def make_family(name, Q, R=1, **options) -> Family:
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown kernel family {name!r}; choose from {sorted(FAMILIES)}") from None
    return cls(Q, R, **options)


# --------------------------------------------------------------------------
# objective and gradient
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Unconstrained coordinates together with the family that decodes them."""

    values: np.ndarray
    family: Family
    scales: DataScales

    def constrained(self) -> dict:
        return self.family.decode(self.values, self.scales)

    @classmethod
    def from_constrained(cls, params, family, scales):
        return cls(family.encode(params, scales), family, scales)


class Objective:
    """``J`` and its gradient for one (data, family) pair.

    Holds the lag tables so block caches survive across evaluations.
    ``fixed`` lists parameter groups whose gradient is forced to zero.
    """

    def __init__(self, data: TimeSeriesSet, family: Family, fixed=()):
        if family.Q != data.Q:
            raise ConfigError(f"model has Q={family.Q} channels but the data have {data.Q}")
        self.data, self.family = data, family
        self.scales = DataScales.of(data)
        self.layout = Layout(data)
        sl = family.slices()
        unknown = set(fixed) - set(sl)
        if unknown:
            raise ConfigError(f"cannot fix unknown parameter groups {sorted(unknown)}")
        self.free = np.ones(family.size, bool)
        for g in fixed:
            self.free[sl[g]] = False
        self.mean_slice = sl["mean"]
        self.names = family.coordinate_names()
        self.evaluations = 0

    def params(self, u) -> dict:
        return self.family.decode(u, self.scales)

    def conditioned(self, u) -> ConditionedGP:
        kernel, noise, mean = self.family.build(self.params(u))
        return ConditionedGP(self.data, kernel, noise, mean, self.layout)

    def nll(self, u) -> float:
        return self.conditioned(u).nll

    def _keys(self, kernel, noise):
        return {pq: (kernel.block_key(*pq), float(noise[pq[0]]) if pq[0] == pq[1] else None) for pq in self.layout.pairs()}

    def value_and_grad(self, u):
        with flush_denormals():
            return self._value_and_grad(np.asarray(u, float))

    def _value_and_grad(self, u):
        self.evaluations += 1
        fam, layout = self.family, self.layout
        kernel, noise, mean = fam.build(self.params(u))
        noise = np.asarray(noise, float)
        blocks = kernel_blocks(kernel, layout)
        gp = ConditionedGP(self.data, kernel, noise, mean, layout, blocks)
        J = gp.nll
        grad = np.zeros(u.size)
        if gp.N == 0:
            return J, grad
        off = gp.offsets
        # W = Kt^-1 - alpha alpha', one block per channel pair (p <= q), read
        # from the lower triangle that dpotri fills
        inv = gp.inverse(lower_only=True)
        a = gp.alpha
        Wb = {}
        for p, q in layout.pairs():
            blk = inv[off[q] : off[q + 1], off[p] : off[p + 1]].T
            if p == q:
                blk = np.tril(blk.T) + np.tril(blk.T, -1).T
            Wb[(p, q)] = blk - np.outer(a[off[p] : off[p + 1]], a[off[q] : off[q + 1]])
        Wdiag = {p: float(np.trace(Wb[(p, p)])) for p in range(self.data.Q)}
        del inv, gp.chol
        base = self._keys(kernel, noise)

        # mean: exact, dJ/dmu_q = -2 sum_{i in q} alpha_i
        ms = self.mean_slice
        for k, i in enumerate(range(ms.start, ms.stop)):
            if self.free[i]:
                grad[i] = -2.0 * gp.alpha[off[k] : off[k + 1]].sum() * self.scales.std[k]

        # remaining coordinates, walked back to front so cheap ones reuse cached blocks
        for i in reversed(range(u.size)):
            if not self.free[i] or ms.start <= i < ms.stop:
                continue
            h = FD_STEP * max(1.0, abs(u[i]))
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            kp, np_, _ = fam.build(self.params(up))
            km, nm, _ = fam.build(self.params(um))
            np_, nm = np.asarray(np_, float), np.asarray(nm, float)
            kp_keys, km_keys = self._keys(kp, np_), self._keys(km, nm)
            g = 0.0
            for (p, q) in layout.pairs():
                b = base[(p, q)]
                if kp_keys[(p, q)] == b and km_keys[(p, q)] == b:
                    continue
                c = 0.0
                if kp_keys[(p, q)][0] != b[0] or km_keys[(p, q)][0] != b[0]:
                    t, s = layout.times[p], layout.times[q]
                    lags = layout.lags(p, q)
                    dB = kp.block(p, t, q, s, lags) - km.block(p, t, q, s, lags)
                    c = float(np.vdot(Wb[(p, q)], dB))
                if p == q:
                    c += Wdiag[p] * (np_[p] ** 2 - nm[p] ** 2)
                g += c if p == q else 2.0 * c
            grad[i] = g / (2.0 * h)
            if not np.isfinite(grad[i]):
                raise NumericFailureError(f"non-finite gradient at coordinate {i} ({self.names[i]})")
        if not np.isfinite(J):
            raise NumericFailureError("non-finite objective")
        return J, grad


def nll_gradient(data, family, theta, fixed=()) -> np.ndarray:
    """Gradient of ``J`` in unconstrained coordinates (``theta`` is a ParamVector or array)."""
    u = theta.values if isinstance(theta, ParamVector) else theta
    return Objective(data, family, fixed).value_and_grad(u)[1]


# --------------------------------------------------------------------------
# ADAM
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.05
    max_iters: int = 200
    tol: float = 1e-3
    restarts: int = 3
    seed: int = 0
    # coarse-to-fine: restarts run on the first ``warm_start`` days only, then
    # the best of them is refined on all data with fresh ADAM state
    warm_start: float | None = None
    warm_iters: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.max_iters < 0 or self.restarts < 1:
            raise ConfigError("need max_iters >= 0 and restarts >= 1")
        if not self.tol >= 0:
            raise ConfigError("tol must be >= 0")
        if self.warm_start is not None and not self.warm_start > 0:
            raise ConfigError("warm_start must be a positive number of days")
        if self.warm_iters is not None and self.warm_iters < 0:
            raise ConfigError("warm_iters must be >= 0")

    def to_dict(self):
        return {
            "lr": self.lr,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "restarts": self.restarts,
            "seed": self.seed,
            "warm_start": self.warm_start,
            "warm_iters": self.warm_iters,
        }


@dataclass(eq=False)
class FitReport:
    final_nll: float
    trace: list
    params: dict
    converged: bool
    iterations: int
    seed: int
    family: dict
    u: np.ndarray = field(repr=False)
    constrained: dict = field(repr=False, default_factory=dict)
    derived: dict = field(default_factory=dict)
    restarts: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    warm_start: dict | None = None

    def to_dict(self):
        return {
            "final_nll": self.final_nll,
            "trace": [[int(k), float(j)] for k, j in self.trace],
            "params": self.params,
            "derived": self.derived,
            "converged": self.converged,
            "iterations": self.iterations,
            "seed": self.seed,
            "family": self.family,
            "restarts": self.restarts,
            "optimizer": self.config,
            "warm_start": self.warm_start,
        }


def _report(obj: Objective, u, J, trace, converged, iterations, seed, config):
    fam = obj.family
    params = fam.canonicalize(obj.params(u))
    rep = FitReport(
        final_nll=float(J),
        trace=trace,
        params=fam.describe(params),
        converged=converged,
        iterations=iterations,
        seed=int(seed),
        family=fam.options(),
        u=np.asarray(u, float).copy(),
        constrained=params,
        derived=fam.derived(params),
        config=config.to_dict(),
    )
    return rep


def fit(data, family, init=None, config: OptimizerConfig | None = None, fixed=(), objective=None) -> FitReport:
    """Minimize ``J`` with ADAM from ``init`` (ParamVector, array, or None for the default start).

    Non-finite or failed steps are retried at half the step up to five
    times; after that the run stops.  The best point seen is returned.
    """
    config = config or OptimizerConfig()
    obj = objective or Objective(data, family, fixed)
    if init is None:
        u = family.default_init(obj.scales, np.random.default_rng(config.seed))
    else:
        u = np.array(init.values if isinstance(init, ParamVector) else init, float)
    if u.size != family.size:
        raise ConfigError(f"init has {u.size} coordinates, family needs {family.size}")
    try:
        J, g = obj.value_and_grad(u)
    except LfmError as exc:
        raise OptimizationFailureError(f"objective not finite at the initial point: {exc}", {"seed": config.seed}) from exc
    free = obj.free.astype(float)
    m = np.zeros(u.size)
    v = np.zeros(u.size)
    trace = [(0, float(J))]
    best_J, best_u = J, u.copy()
    converged = False
    k = 0
    for k in range(1, config.max_iters + 1):
        g = g * free
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1**k)
        vhat = v / (1 - ADAM_BETA2**k)
        step = config.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        for _ in range(MAX_BACKOFFS + 1):
            trial = u - step
            try:
                Jt, gt = obj.value_and_grad(trial)
                ok = np.isfinite(Jt) and np.all(np.isfinite(gt))
            except LfmError:
                # out-of-range or non-finite parameters, failed factorization
                ok = False
            if ok:
                break
            step = step * 0.5
        else:
            k -= 1
            break
        u, J, g = trial, Jt, gt
        trace.append((k, float(J)))
        if J < best_J:
            best_J, best_u = J, u.copy()
        if k >= WINDOW and abs(trace[-1][1] - trace[-1 - WINDOW][1]) < config.tol:
            converged = True
            break
    return _report(obj, best_u, best_J, trace, converged, k, config.seed, config)


def _restart(args):
    data, family, seed, config, fixed, overrides = args
    cfg = OptimizerConfig(config.lr, config.max_iters, config.tol, 1, seed)
    obj = Objective(data, family, fixed)
    init = initial_point(family, obj.scales, seed, overrides)
    return fit(data, family, init, cfg, fixed, obj)


def initial_point(family, scales, seed, overrides=None) -> np.ndarray:
    """Default start for ``seed`` with some groups set to given constrained values."""
    u = family.default_init(scales, np.random.default_rng(seed))
    if overrides:
        params = family.decode(u, scales)
        unknown = set(overrides) - set(params)
        if unknown:
            raise ConfigError(f"init for unknown parameter groups {sorted(unknown)}")
        for k, val in overrides.items():
            params[k] = np.asarray(val, float).reshape(np.shape(params[k]))
        if "sensitivity" in params and "sensitivity" not in overrides:
            # keep the unit-free draw, rescaled to the overridden shape parameters
            sl = family.slices()["sensitivity"]
            params["sensitivity"] = u[sl].reshape(family.R, family.Q) * family._sens_scale(params, scales)
        u = family.encode(params, scales)
    return u


def fit_restarts(data, family, config: OptimizerConfig | None = None, fixed=(), init=None, jobs=1) -> FitReport:
    """Run ``config.restarts`` fits with seeds ``seed, seed+1, ...`` and keep the best.

    ``init`` optionally maps parameter groups to constrained starting values
    shared by every restart.  Restarts are independent, so ``jobs > 1``
    runs them in worker processes without changing the result.
    """
    config = config or OptimizerConfig()
    if config.warm_start is not None and min(data.counts) > 0:
        # the window opens once every channel has started, so none is empty
        start = max(float(c.times[0]) for c in data.channels)
        window = data_window(data, start, start + config.warm_start)
        if window.n_total < data.n_total and min(window.counts) >= 2:
            return _coarse_to_fine(data, window, family, config, fixed, init, jobs)
    seeds = [config.seed + i for i in range(config.restarts)]
    tasks = [(data, family, s, config, tuple(fixed), init) for s in seeds]
    results, failures = [], []

    def collect(seed, fn):
        try:
            results.append(fn())
        except OptimizationFailureError as exc:
            failures.append({"seed": seed, "error": str(exc)})

    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_restart, t) for t in tasks]
            for s, f in zip(seeds, futs):
                collect(s, f.result)
    else:
        for s, t in zip(seeds, tasks):
            collect(s, lambda t=t: _restart(t))
    if not results:
        raise OptimizationFailureError("every restart diverged", {"failures": failures})
    best = min(results, key=lambda r: (r.final_nll, r.seed))
    best.restarts = [
        {"seed": r.seed, "final_nll": r.final_nll, "iterations": r.iterations, "converged": r.converged} for r in results
    ] + failures
    best.config = {**config.to_dict()}
    return best


def data_window(data: TimeSeriesSet, start, stop) -> TimeSeriesSet:
    """Samples with ``start <= t < stop``, channels kept (possibly empty)."""
    chans = []
    for c in data.channels:
        keep = (c.times >= start) & (c.times < stop)
        chans.append(Channel(c.id, c.times[keep], c.values[keep], c.name, c.unit))
    return TimeSeriesSet(tuple(chans), data.origin)


def _coarse_to_fine(data, window, family, config, fixed, init, jobs):
    coarse_cfg = replace(config, max_iters=config.max_iters if config.warm_iters is None else config.warm_iters, warm_start=None)
    coarse = fit_restarts(window, family, coarse_cfg, fixed, init, jobs)
    obj = Objective(data, family, fixed)
    u0 = family.encode(coarse.constrained, obj.scales)
    best = fit(data, family, u0, replace(config, restarts=1, seed=coarse.seed, warm_start=None), fixed, obj)
    best.restarts = coarse.restarts
    best.config = config.to_dict()
    best.warm_start = {
        "start": float(window.span()[0]),
        "stop": float(window.span()[0] + config.warm_start),
        "n": int(window.n_total),
        "final_nll": coarse.final_nll,
        "iterations": coarse.iterations,
        "params": coarse.params,
    }
    return best
