"""Geometry of the periodicity cell and of the dual cell B = (-1/2, 1/2]^n.

Quasi-momenta live in B.  An observation direction ``n_hat`` splits a
quasi-momentum into a tangential part ``gamma`` and a coordinate ``s`` along
``n_hat``: ``alpha = gamma * t + s * n_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidDirectionError

FACE_TOL = 1e-12


@dataclass(frozen=True)
class DirectionalFrame:
    dim: int
    n_hat: np.ndarray
    tangents: tuple = field(default_factory=tuple)

    def coords(self, alpha):
        """Split ``alpha`` (..., dim) into (gamma, s); gamma is None in 1D."""
        alpha = np.asarray(alpha)
        s = alpha @ self.n_hat
        if self.dim == 1:
            return None, s
        return alpha @ self.tangents[0], s

    def point(self, gamma, s):
        """Inverse of :meth:`coords` (works for complex ``s``)."""
        s = np.asarray(s)
        out = s[..., None] * self.n_hat
        if self.dim == 2:
            out = out + np.asarray(gamma)[..., None] * self.tangents[0]
        return out


@dataclass(frozen=True)
class LineSegment:
    gamma: float
    ell1: float
    ell2: float


def build_frame(n_hat) -> DirectionalFrame:
    n = np.atleast_1d(np.asarray(n_hat, dtype=float)).copy()
    if n.ndim != 1 or n.size not in (1, 2):
        raise InvalidDirectionError("direction must have 1 or 2 components")
    norm = float(np.linalg.norm(n))
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidDirectionError("direction must be a nonzero finite vector")
    n /= norm
    n.setflags(write=False)
    if n.size == 1:
        return DirectionalFrame(1, n, ())
    t = np.array([-n[1], n[0]])  # counter-clockwise rotation
    t.setflags(write=False)
    return DirectionalFrame(2, n, (t,))


def clip_line(frame: DirectionalFrame, gamma=0.0) -> Optional[LineSegment]:
    """Intersect {gamma*t + s*n} with the closed square; None if empty."""
    if frame.dim == 1:
        return LineSegment(0.0, -0.5, 0.5)
    g = float(np.asarray(gamma).reshape(-1)[0])
    base = g * frame.tangents[0]
    lo, hi = -math.inf, math.inf
    for i in range(2):
        ni = frame.n_hat[i]
        if abs(ni) < 1e-15:
            if abs(base[i]) > 0.5 + FACE_TOL:
                return None
            continue
        a = (-0.5 - base[i]) / ni
        b = (0.5 - base[i]) / ni
        lo = max(lo, min(a, b))
        hi = min(hi, max(a, b))
    if not hi - lo > 1e-15:
        return None
    return LineSegment(g, lo, hi)


def face_of(alpha, tol=FACE_TOL):
    """Faces C_j^{+/-} containing ``alpha`` as a list of (axis, sign)."""
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    faces = []
    for j, v in enumerate(a):
        if abs(v - 0.5) <= tol:
            faces.append((j, 1))
        elif abs(v + 0.5) <= tol:
            faces.append((j, -1))
    return faces


def translate_boundary(alpha) -> np.ndarray:
    """Map a point of C_j^{+/-} to the opposite face by flipping coordinate j."""
    a = np.atleast_1d(np.asarray(alpha, dtype=float)).copy()
    faces = face_of(a)
    if not faces:
        raise DomainError(f"point {a.tolist()} is not on the boundary of B")
    for j, _ in faces:
        a[j] = -a[j]
    return a


def wrap_to_B(alpha) -> np.ndarray:
    """Reduce each coordinate modulo 1 into (-1/2, 1/2]."""
    a = np.asarray(alpha, dtype=float)
    return a - np.ceil(a - 0.5)


def wrap_complex(alpha):
    """Wrap the real part into B, keep the imaginary part."""
    a = np.asarray(alpha)
    if np.iscomplexobj(a):
        return wrap_to_B(a.real) + 1j * a.imag
    return wrap_to_B(a)


# ---------------------------------------------------------------------------
# Closed orbits of the line family on the torus
# ---------------------------------------------------------------------------

def _integer_direction(n_hat, max_int=16, tol=1e-10):
    n = np.asarray(n_hat, dtype=float)
    for scale in range(1, max_int + 1):
        for axis in range(2):
            if abs(n[axis]) < 1e-14:
                continue
            v = n / abs(n[axis]) * scale
            r = np.rint(v)
            if np.all(np.abs(v - r) < tol * scale) and np.all(np.abs(r) <= max_int):
                p, q = int(r[0]), int(r[1])
                if math.gcd(abs(p), abs(q)) == 1:
                    return p, q
    raise InvalidDirectionError(
        f"direction {n.tolist()} is not rational with small integers "
        f"(|p|,|q| <= {max_int}); closed slices are unavailable")


@dataclass(frozen=True)
class OrbitFamily:
    """Lines {gamma*t + s*n} on the torus R^2/Z^2 for a rational direction.

    Each line closes after length ``length``; lines whose gamma differ by
    ``period`` coincide.  Every point of the torus lies on exactly one line
    with gamma in [-period/2, period/2) and s in [-length/2, length/2).
    In 1D there is a single orbit of length 1.
    """

    frame: DirectionalFrame
    length: float
    period: float
    shift: tuple  # lattice vector v with v.t = period

    def to_orbit(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if self.frame.dim == 1:
            s = alpha[..., 0] * self.frame.n_hat[0]
            return None, s - np.floor(s + 0.5)
        g_raw, s_raw = self.frame.coords(alpha)
        m = np.floor(g_raw / self.period + 0.5)
        v = np.asarray(self.shift, dtype=float)
        gamma = g_raw - m * self.period
        s = s_raw - m * float(v @ self.frame.n_hat)
        s = s - self.length * np.floor(s / self.length + 0.5)
        return gamma, s

    def point(self, gamma, s):
        return self.frame.point(gamma, s)


def orbit_family(frame: DirectionalFrame, max_int=16) -> OrbitFamily:
    if frame.dim == 1:
        return OrbitFamily(frame, 1.0, 1.0, (0,))
    p, q = _integer_direction(frame.n_hat, max_int)
    length = math.hypot(p, q)
    # find integers (a, b) with p*b - q*a = 1, so that (a, b).t = 1/length
    cands = [(a, b) for a in range(-max_int - 1, max_int + 2)
             for b in range(-max_int - 1, max_int + 2) if p * b - q * a == 1]
    a, b = min(cands, key=lambda v: (v[0] ** 2 + v[1] ** 2, v))
    return OrbitFamily(frame, length, 1.0 / length, (a, b))
