"""Error functions and overflow-free ``exp(c) * (erf(x) + erf(y))``.

``erf`` and ``erfcx`` are the Cephes / Faddeeva implementations shipped with
SciPy (both accurate to a few ulp over the real line).  The package-level
contribution is :func:`exp_erf_sum`, which never evaluates ``exp(c)`` on its
own: first-order latent-force kernels multiply factors like
``exp(nu**2)`` (which overflows once ``nu`` exceeds ~26.6) by differences of
error functions that are exponentially small.
"""

import numpy as np
from scipy import special

erf = special.erf
erfc = special.erfc
erfcx = special.erfcx


def _scaled(c, s):
    """``exp(c) * s`` for ``s >= 0``, going through logs only when ``exp(c)`` overflows."""
    big = c > 700.0
    if not np.any(big):
        return np.exp(c) * s
    out = np.exp(np.where(big, 0.0, c)) * s
    with np.errstate(divide="ignore"):
        out[big] = np.exp(c[big] + np.log(s[big]))
    return out


def exp_erf_sum(c, x, y):
    """Evaluate ``exp(c) * (erf(x) + erf(y))`` elementwise.

    Arguments broadcast against each other.

    When ``x`` and ``y`` have the same sign the two error functions add
    without cancellation and the product is formed directly (the caller
    guarantees ``c`` is not large there).  With opposite signs, say
    ``x < 0 <= y``, the sum equals ``erfc(-x) - erfc(y)`` and each term is
    rewritten as ``exp(c - z**2) * erfcx(z)``, so the large exponent in
    ``c`` is cancelled analytically before anything is exponentiated.
    """
    c, x, y = np.broadcast_arrays(
        np.asarray(c, dtype=float), np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    )
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    out = np.empty(c.shape)

    pos = lo >= 0
    neg = hi <= 0
    mixed = ~(pos | neg)
    if np.any(pos):
        out[pos] = _scaled(c[pos], erf(x[pos]) + erf(y[pos]))
    if np.any(neg):
        out[neg] = -_scaled(c[neg], erf(-x[neg]) + erf(-y[neg]))
    if np.any(mixed):
        cm, a, b = c[mixed], -lo[mixed], hi[mixed]
        m, h = 0.5 * (a + b), 0.5 * (b - a)
        close = np.abs(m * h) < 2.0
        res = np.empty(cm.shape)
        far = ~close
        res[far] = np.exp(cm[far] - a[far] ** 2) * erfcx(a[far]) - np.exp(cm[far] - b[far] ** 2) * erfcx(b[far])
        if np.any(close):
            res[close] = _erf_diff_near(cm[close], m[close], h[close])
        out[mixed] = res
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _erf_diff_near(c, m, h):
    """``exp(c) * (erf(m + h) - erf(m - h))`` when the two nearly cancel.

    The difference is ``2/sqrt(pi) exp(-m^2) int_{-h}^{h} exp(-2 m s - s^2) ds``;
    with ``|m h| < 2`` the integrand is smooth enough that 24-point
    Gauss-Legendre is exact to rounding, and there is no subtraction.
    """
    s = h[:, None] * _GL_X[None, :]
    integral = h * np.sum(_GL_W * np.exp(-2.0 * m[:, None] * s - s * s), axis=1)
    return 2.0 / np.sqrt(np.pi) * np.exp(c - m * m) * integral
