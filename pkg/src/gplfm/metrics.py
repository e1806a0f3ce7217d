"""Evaluation metrics: errors, correlation, ROC/AUC for event detection,
autocorrelation e-folding time and the LAI / fAPAR exponential fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TimeSeriesSet
from .errors import MetricError

E_INV = float(np.exp(-1.0))
YEAR = 365.25


def _pair(a, b, what="series"):
    a = np.asarray(a, float).reshape(-1)
    b = np.asarray(b, float).reshape(-1)
    if a.size != b.size:
        raise MetricError(f"{what} have different lengths ({a.size} vs {b.size})")
    if a.size == 0:
        raise MetricError(f"{what} are empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise MetricError(f"{what} contain non-finite values")
    return a, b


def mse_nmse(truth, pred) -> tuple[float, float]:
    """``(MSE, NMSE%)`` with NMSE normalized by the mean square of ``truth``."""
    y, yhat = _pair(truth, pred)
    mse = float(np.mean((y - yhat) ** 2))
    ms = float(np.mean(y * y))
    if ms == 0:
        raise MetricError("NMSE undefined: truth is identically zero")
    return mse, 100.0 * mse / ms


def pearson_r(x, y) -> float:
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if den == 0:
        raise MetricError("correlation undefined for a constant series")
    return float(np.clip(np.sum(xc * yc) / den, -1.0, 1.0))


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr)`` from the highest threshold down.

    Tied scores form a single step, so the curve (and its trapezoid area)
    counts a positive/negative tie as one half.
    """
    s, lab = _pair(scores, np.asarray(labels, float), "scores and labels")
    lab = lab.astype(bool)
    P, N = int(lab.sum()), int((~lab).sum())
    if P == 0 or N == 0:
        raise MetricError("ROC undefined: labels contain a single class")
    order = np.argsort(-s, kind="mergesort")
    s, lab = s[order], lab[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(lab)[last]
    fp = np.cumsum(~lab)[last]
    return np.r_[0.0, fp / N], np.r_[0.0, tp / P]


def auc(fpr, tpr) -> float:
    trap = getattr(np, "trapezoid", None) or np.trapz
    return float(trap(tpr, fpr))


def roc_auc(scores, labels) -> float:
    return auc(*roc_curve(scores, labels))


@dataclass(frozen=True, eq=False)
class RainEventMetrics:
    threshold: float
    r: float
    fpr: np.ndarray | None
    tpr: np.ndarray | None
    auc: float | None
    error: str | None = None

    def to_dict(self, curve=False):
        d = {"threshold": self.threshold, "r": self.r, "auc": self.auc}
        if self.error:
            d["error"] = self.error
        if curve and self.fpr is not None:
            d["roc"] = [[float(a), float(b)] for a, b in zip(self.fpr, self.tpr)]
        return d


def rain_event_metrics(force, precip, thresholds) -> list[RainEventMetrics]:
    """Score a latent-force series as a detector of precipitation events.

    Negative force values are set to zero first.  A day is an event when
    ``precip > threshold``.  Thresholds whose labels are all one class get
    ``auc=None`` and an ``error`` message instead of raising.
    """
    f, p = _pair(force, precip, "force and precipitation")
    f = np.maximum(f, 0.0)
    try:
        r = pearson_r(f, p)
    except MetricError:
        r = float("nan")
    out = []
    for thr in thresholds:
        labels = p > thr
        try:
            fpr, tpr = roc_curve(f, labels)
            out.append(RainEventMetrics(float(thr), r, fpr, tpr, auc(fpr, tpr)))
        except MetricError as exc:
            out.append(RainEventMetrics(float(thr), r, None, None, None, str(exc)))
    return out


def _regular(times, values, step):
    x = (np.asarray(times, float) - times[0]) / step
    k = np.rint(x).astype(int)
    if np.any(np.abs(x - k) > 1e-6) or np.any(np.diff(k) <= 0):
        raise MetricError("samples do not sit on a regular grid at the given step")
    x = np.full(k[-1] + 1, np.nan)
    x[k] = values
    return x


def deseasonalize(times, values, window=15, period=YEAR):
    """Subtract a smoothed day-of-year climatology.

    The climatology is the mean per integer day of the cycle, then a
    centred circular moving average of ``window`` days.
    """
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    nb = int(np.ceil(period))
    doy = np.floor(np.mod(t, period)).astype(int) % nb
    sums = np.bincount(doy, v, nb)
    counts = np.bincount(doy, None, nb)
    half = window // 2
    kern = np.ones(2 * half + 1)
    wrap = lambda a: np.concatenate([a[-half:], a, a[:half]]) if half else a
    ssum = np.convolve(wrap(sums), kern, "valid")
    scnt = np.convolve(wrap(counts), kern, "valid")
    clim = np.where(scnt > 0, ssum / np.maximum(scnt, 1), 0.0)
    return v - clim[doy]


def autocorrelation(times, values, step=None, max_lag=None):
    """Gap-tolerant sample autocorrelation on a regular grid.

    Returns ``(lags, acf)``.  Each lag uses all pairs with both samples
    present, centred and scaled by the overall mean and variance.
    """
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if t.size < 3:
        raise MetricError("need at least 3 samples for an autocorrelation")
    if step is None:
        step = float(np.min(np.diff(t)))
    x = _regular(t, v, step)
    ok = np.isfinite(x)
    m = np.nanmean(x)
    var = np.nanvar(x)
    if var == 0:
        raise MetricError("autocorrelation undefined for a constant series")
    xc = np.where(ok, x - m, 0.0)
    n = x.size
    max_lag = n // 2 if max_lag is None else min(int(max_lag), n - 1)
    ac = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        cnt = np.count_nonzero(ok[: n - k] & ok[k:])
        ac[k] = np.dot(xc[: n - k], xc[k:]) / cnt / var if cnt else np.nan
    return np.arange(max_lag + 1) * step, ac


def tau_autocorr(times, values, deseasonalize_first=False, step=None, max_lag=None) -> float:
    """Lag (days) at which the autocorrelation first drops to ``1/e``,
    linearly interpolated between lag samples."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if deseasonalize_first:
        v = deseasonalize(t, v)
    lags, ac = autocorrelation(t, v, step, max_lag)
    below = np.flatnonzero(ac <= E_INV)
    if below.size == 0:
        raise MetricError(f"autocorrelation never falls to 1/e within {lags[-1]:g} days")
    k = int(below[0])
    if k == 0:
        return 0.0
    a, b = ac[k - 1], ac[k]
    return float(lags[k - 1] + (a - E_INV) / (a - b) * (lags[k] - lags[k - 1]))


def fit_exponential_lai_fapar(lai, fapar) -> float:
    """``alpha`` in ``fapar = 1 - exp(alpha * lai)``, least squares through
    the origin on ``log(1 - fapar) = alpha * lai``."""
    x, f = _pair(lai, fapar, "LAI and fAPAR")
    if np.any(f >= 1):
        raise MetricError("fAPAR must be < 1 for the log transform")
    den = float(np.dot(x, x))
    if den == 0:
        raise MetricError("LAI is identically zero")
    return float(np.dot(x, np.log1p(-f)) / den)


def align(truth: TimeSeriesSet, pred: TimeSeriesSet) -> dict:
    """Inner join by ``(channel, time)``: ``{id: (times, truth, pred)}``."""
    out = {}
    ids = [c for c in truth.ids if c in pred.ids]
    for cid in ids:
        a, b = truth[cid], pred[cid]
        common, ia, ib = np.intersect1d(a.times, b.times, assume_unique=True, return_indices=True)
        if common.size:
            out[cid] = (common, a.values[ia], b.values[ib])
    if not out:
        raise MetricError("prediction and truth share no (channel, time) pairs")
    return out


def evaluate(truth: TimeSeriesSet, pred: TimeSeriesSet) -> dict:
    """Per-channel ``{n, mse, nmse_percent, r}`` on the inner join."""
    out = {}
    for cid, (t, y, yhat) in align(truth, pred).items():
        mse, nmse = mse_nmse(y, yhat)
        try:
            r = pearson_r(y, yhat)
        except MetricError:
            r = None
        out[cid] = {"n": int(t.size), "mse": mse, "nmse_percent": nmse, "r": r}
    return out
