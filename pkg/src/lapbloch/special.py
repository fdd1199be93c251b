"""Bessel J0/Y0, Struve H0, Hankel H0^(1) and free-space Green's functions.

All values are computed here from power series and large-argument
expansions:

* r <= 8: double-precision power series (cancellation stays below 1e-13),
* 8 < r <= 25: the same series in 50-digit decimal arithmetic,
* r > 25: Hankel-type asymptotic expansions, truncated at the smallest term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext

import numpy as np

from .errors import DomainError

_PI_STR = "3.14159265358979323846264338327950288419716939937510582097494"
_EULER_STR = "0.57721566490153286060651209008240243104215933593992359880577"
_EULER = 0.5772156649015329

SERIES_FLOAT_MAX = 8.0
SERIES_DECIMAL_MAX = 25.0
_DPS = 50
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SpecialFnResult:
    value: complex
    est_error: float


# ---------------------------------------------------------------------------
# power series
# ---------------------------------------------------------------------------

def _float_series(r, kind):
    """Vectorised double-precision series for r <= SERIES_FLOAT_MAX."""
    r = np.asarray(r, dtype=float)
    q = -(r * r) / 4.0
    if kind in ("j0", "y0"):
        term = np.ones_like(r)
        j0 = term.copy()
        harm = 0.0
        ysum = np.zeros_like(r)
        for m in range(1, 60):
            term = term * q / (m * m)
            harm += 1.0 / m
            j0 = j0 + term
            ysum = ysum + harm * term
        if kind == "j0":
            return j0
        with np.errstate(divide="ignore"):
            return (2.0 / math.pi) * ((np.log(r / 2.0) + _EULER) * j0 - ysum)
    if kind in ("j1", "y1"):
        half = r / 2.0
        term = half.copy()  # (r/2)^{2k+1}/(k!(k+1)!) * (-1)^k at k = 0
        j1 = term.copy()
        psi_sum = (-_EULER) + (1.0 - _EULER)  # psi(1) + psi(2)
        ysum = psi_sum * term
        hk = 0.0
        for k in range(1, 60):
            term = term * q / (k * (k + 1))
            hk += 1.0 / k
            psi_sum = (hk - _EULER) + (hk + 1.0 / (k + 1) - _EULER)
            j1 = j1 + term
            ysum = ysum + psi_sum * term
        if kind == "j1":
            return j1
        with np.errstate(divide="ignore"):
            return (2.0 / math.pi) * j1 * np.log(half) - 2.0 / (math.pi * r) - ysum / math.pi
    if kind == "h0":
        term = r.copy()  # r^{2m+1}/((2m+1)!!)^2
        out = term.copy()
        for m in range(1, 60):
            term = term * (-(r * r)) / ((2 * m + 1) ** 2)
            out = out + term
        return (2.0 / math.pi) * out
    raise ValueError(kind)


def _decimal_series(r: float, kind: str) -> float:
    """Single-argument series evaluated with 50 significant digits."""
    with localcontext() as ctx:
        ctx.prec = _DPS
        pi = Decimal(_PI_STR)
        euler = Decimal(_EULER_STR)
        x = Decimal(r)
        tiny = Decimal(10) ** (-(_DPS - 8))
        q = -(x * x) / 4
        if kind in ("j0", "y0"):
            term = Decimal(1)
            j0 = Decimal(1)
            ysum = Decimal(0)
            harm = Decimal(0)
            m = 0
            while True:
                m += 1
                term = term * q / (m * m)
                harm += Decimal(1) / m
                j0 += term
                ysum += harm * term
                if abs(term) * (1 + harm) < tiny and m > 4:
                    break
            if kind == "j0":
                return float(j0)
            return float(2 / pi * (((x / 2).ln() + euler) * j0 - ysum))
        if kind in ("j1", "y1"):
            half = x / 2
            term = half
            j1 = term
            hk = Decimal(0)
            psi_sum = -2 * euler + 1
            ysum = psi_sum * term
            k = 0
            while True:
                k += 1
                term = term * q / (k * (k + 1))
                hk += Decimal(1) / k
                psi_sum = 2 * hk + Decimal(1) / (k + 1) - 2 * euler
                j1 += term
                ysum += psi_sum * term
                if abs(term) * (1 + abs(psi_sum)) < tiny and k > 4:
                    break
            if kind == "j1":
                return float(j1)
            return float(2 / pi * j1 * half.ln() - 2 / (pi * x) - ysum / pi)
        if kind == "h0":
            term = x
            out = x
            m = 0
            while True:
                m += 1
                term = term * (-(x * x)) / ((2 * m + 1) ** 2)
                out += term
                if abs(term) < tiny and m > 4:
                    break
            return float(2 / pi * out)
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# large-argument expansions
# ---------------------------------------------------------------------------

def _pq(r: float, nu: int):
    """Hankel P, Q factors truncated at the smallest term."""
    mu = 4.0 * nu * nu
    p, q = 0.0, 0.0
    coeff = 1.0  # a_k(nu) / r^k
    last = math.inf
    err = 0.0
    for k in range(0, 200):
        if k > 0:
            coeff *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * r)
        if abs(coeff) > last:
            err = last
            break
        last = abs(coeff)
        if k % 4 == 0:
            p += coeff
        elif k % 4 == 1:
            q += coeff
        elif k % 4 == 2:
            p -= coeff
        else:
            q -= coeff
        if last < 1e-18:
            err = last
            break
    return p, q, err


def _asym_bessel(r: float, nu: int):
    p, q, err = _pq(r, nu)
    chi = r - (0.5 * nu + 0.25) * math.pi
    amp = math.sqrt(2.0 / (math.pi * r))
    c, s = math.cos(chi), math.sin(chi)
    return amp * (p * c - q * s), amp * (p * s + q * c), amp * err


def _asym_struve_minus_y0(r: float):
    """H0(r) - Y0(r) = (2/pi) sum_k (-1)^k ((2k-1)!!)^2 / r^{2k+1}."""
    term = 1.0 / r
    total = term
    last = abs(term)
    err = 0.0
    for k in range(1, 200):
        term = -term * (2 * k - 1) ** 2 / (r * r)
        if abs(term) > last:
            err = last
            break
        total += term
        last = abs(term)
        if last < 1e-18:
            err = last
            break
    return 2.0 / math.pi * total, 2.0 / math.pi * err


# ---------------------------------------------------------------------------
# scalar kernels with error estimates
# ---------------------------------------------------------------------------

def _scalar(kind: str, r: float) -> SpecialFnResult:
    if kind in ("y0", "y1") and r <= 0.0:
        raise DomainError(f"{kind.upper()} requires r > 0, got {r}")
    if kind in ("j0", "j1", "h0") and r < 0.0:
        # even/odd extensions
        v = _scalar(kind, -r)
        sign = 1.0 if kind == "j0" else -1.0
        return SpecialFnResult(sign * v.value, v.est_error)
    if r <= SERIES_FLOAT_MAX:
        v = float(_float_series(np.array([r]), kind)[0])
        return SpecialFnResult(v, 64 * _EPS * max(1.0, abs(v)))
    if r <= SERIES_DECIMAL_MAX:
        v = _decimal_series(r, kind)
        return SpecialFnResult(v, 4 * _EPS * max(1.0, abs(v)))
    if kind == "h0":
        y0 = _scalar("y0", r)
        d, err = _asym_struve_minus_y0(r)
        return SpecialFnResult(y0.value + d, err + y0.est_error)
    nu = 0 if kind in ("j0", "y0") else 1
    j, y, err = _asym_bessel(r, nu)
    v = j if kind in ("j0", "j1") else y
    return SpecialFnResult(v, err + 8 * _EPS)


def _vectorised(kind: str, r):
    r_arr = np.asarray(r, dtype=float)
    if kind in ("y0", "y1") and np.any(r_arr <= 0.0):
        raise DomainError(f"{kind.upper()} requires r > 0")
    if r_arr.ndim == 0:
        return _scalar(kind, float(r_arr)).value
    out = np.empty_like(r_arr)
    flat = r_arr.ravel()
    res = out.ravel()
    small = np.abs(flat) <= SERIES_FLOAT_MAX
    if np.any(small):
        vals = _float_series(np.abs(flat[small]), kind)
        if kind in ("j1", "h0"):
            vals = np.sign(flat[small]) * vals
        res[small] = vals
    for i in np.flatnonzero(~small):
        res[i] = _scalar(kind, float(flat[i])).value
    return res.reshape(r_arr.shape)


def bessel_j0(r):
    return _vectorised("j0", r)


def bessel_j1(r):
    return _vectorised("j1", r)


def bessel_y0(r):
    return _vectorised("y0", r)


def bessel_y1(r):
    return _vectorised("y1", r)


def struve_h0(r):
    return _vectorised("h0", r)


def hankel1_0(r):
    """H0^(1)(r) = J0(r) + i Y0(r)."""
    return bessel_j0(r) + 1j * bessel_y0(r)


def bessel_j0_err(r: float) -> SpecialFnResult:
    return _scalar("j0", float(r))


def bessel_y0_err(r: float) -> SpecialFnResult:
    return _scalar("y0", float(r))


def struve_h0_err(r: float) -> SpecialFnResult:
    return _scalar("h0", float(r))


def hankel1_0_err(r: float) -> SpecialFnResult:
    j = _scalar("j0", float(r))
    y = _scalar("y0", float(r))
    return SpecialFnResult(complex(j.value, y.value), j.est_error + y.est_error)


# ---------------------------------------------------------------------------
# Green's functions
# ---------------------------------------------------------------------------

def greens_free_2d(k: float, r):
    """Outgoing fundamental solution of -Laplace - k^2 in the plane."""
    if k <= 0:
        raise DomainError("wavenumber must be positive")
    return 0.25j * hankel1_0(k * np.asarray(r, dtype=float))


def greens_free_1d(k: float, x):
    """Outgoing solution of -u'' - k^2 u = delta: i exp(ik|x|) / (2k)."""
    if k <= 0:
        raise DomainError("wavenumber must be positive")
    return 1j * np.exp(1j * k * np.abs(np.asarray(x, dtype=float))) / (2.0 * k)


def _gauss_box(lo, hi, order, dim):
    t, w = np.polynomial.legendre.leggauss(order)
    pts, wts = [], []
    for d in range(dim):
        a, b = lo[d], hi[d]
        pts.append(0.5 * (b - a) * t + 0.5 * (b + a))
        wts.append(0.5 * (b - a) * w)
    if dim == 1:
        return pts[0][:, None], wts[0]
    g1, g2 = np.meshgrid(pts[0], pts[1], indexing="ij")
    w12 = np.outer(wts[0], wts[1])
    return np.stack([g1.ravel(), g2.ravel()], axis=-1), w12.ravel()


def convolve_reference(kernel, source, x, support, tol=None, start_order=16, max_order=None):
    """u(x) = int G(x - y) f(y) dy over the box ``support`` by tensor Gauss-Legendre.

    ``kernel`` maps displacements (..., dim) to complex values, ``source``
    maps points (..., dim) to values.  The order is doubled until two
    consecutive results differ by at most ``tol`` (relative).
    """
    lo = np.atleast_1d(np.asarray(support[0], dtype=float))
    hi = np.atleast_1d(np.asarray(support[1], dtype=float))
    dim = lo.size
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.all(x >= lo) and np.all(x <= hi):
        raise DomainError("probe point lies inside the source support")
    if tol is None:
        tol = 1e-10 if dim == 1 else 1e-8
    if max_order is None:
        max_order = 1024 if dim == 1 else 256
    order = start_order
    prev = None
    while True:
        y, w = _gauss_box(lo, hi, order, dim)
        val = complex(np.sum(w * kernel(x[None, :] - y) * source(y)))
        if prev is not None and abs(val - prev) <= tol * max(abs(val), 1e-300):
            return val
        if order >= max_order:
            return val
        prev = val
        order *= 2
