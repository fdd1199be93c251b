"""Plane-wave Galerkin matrices of the shifted cell operator and their spectra.

For a quasi-momentum ``alpha`` the periodic part of a Bloch function is
expanded in ``exp(i j.x) / (2 pi)^{n/2}`` with ``|j|_inf <= J_max``.  The
matrix is

    H[j, j'] = (alpha + j)^T A(j - j') (alpha + j') + V(j - j'),

a quadratic polynomial in ``alpha``, so the same formula gives the analytic
continuation to complex quasi-momenta.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional

import numpy as np
import scipy.linalg

from .errors import (BranchContinuationError, DegenerateBandError, DomainError,
                     PoleProximityError)
from .medium import MediumSpec, index_set

DEGENERACY_RTOL = 1e-10
PIVOT_RTOL = 1e-12
POLE_FREE_MARGIN = 1e-8


class TruncationWarning(UserWarning):
    """J_max is smaller than the support of the coefficient tables."""


# ---------------------------------------------------------------------------
# precomputed index structure
# ---------------------------------------------------------------------------

class CellModel:
    """Index map and coupling tables for one (medium, J_max) pair.

    Instances are immutable after construction and safe to share across
    threads.
    """

    def __init__(self, medium: MediumSpec, J_max: int):
        if J_max < 1:
            raise DomainError("J_max must be at least 1")
        if J_max < medium.support_radius:
            warnings.warn(f"J_max={J_max} is below the coefficient support {medium.support_radius}",
                          TruncationWarning, stacklevel=2)
        self.medium = medium
        self.dim = medium.dim
        self.J_max = int(J_max)
        self.modes = index_set(self.dim, self.J_max)
        self.size = self.modes.shape[0]
        self.diagonal = medium.is_diagonal
        zero = (0,) * self.dim
        self.A0 = np.asarray(medium.A_coeffs.get(zero, np.zeros((self.dim, self.dim))), dtype=complex)
        self.V0 = complex(medium.V_coeffs.get(zero, 0.0))
        # lookup from multi-index to row
        side = 2 * self.J_max + 1
        self._stride = side ** np.arange(self.dim - 1, -1, -1)
        jf = self.modes.astype(float)
        self._two_Aj = 2.0 * jf @ self.A0.T
        self._jAj = np.einsum("ni,ij,nj->n", jf, self.A0, jf) + self.V0
        self._couplings = []
        if not self.diagonal:
            keys = sorted(set(medium.A_coeffs) | set(medium.V_coeffs))
            for m in keys:
                A = np.asarray(medium.A_coeffs.get(m, np.zeros((self.dim, self.dim))), dtype=complex)
                V = complex(medium.V_coeffs.get(m, 0.0))
                if not (np.any(A) or V):
                    continue
                shifted = self.modes - np.asarray(m)
                ok = np.all(np.abs(shifted) <= self.J_max, axis=1)
                rows = np.flatnonzero(ok)
                cols = self._row_of(shifted[ok])
                jr = self.modes[rows].astype(float)
                jc = self.modes[cols].astype(float)
                const = np.einsum("ni,ij,nj->n", jr, A, jc) + V
                lin = (jr + jc) @ A.T  # row n: A (j + j'), used as alpha . A (j + j')
                self._couplings.append((rows, cols, A, const, lin))

    def _row_of(self, j):
        return ((np.asarray(j) + self.J_max) @ self._stride).astype(int)

    def row_of(self, j) -> int:
        return int(self._row_of(np.atleast_2d(j))[0])

    # -- diagonal media -----------------------------------------------------
    def symbol(self, alphas):
        """Diagonal entries (alpha + j)^T A0 (alpha + j) + V0 for alphas (K, dim); diagonal media only."""
        alphas = np.atleast_2d(alphas)
        q = np.einsum("ki,ij,kj->k", alphas, self.A0, alphas)
        return q[:, None] + alphas @ self._two_Aj.T + self._jAj[None, :]

    def symbol_grad(self, alphas):
        """d/d alpha of :meth:`symbol`, shape (K, N, dim)."""
        alphas = np.atleast_2d(alphas)
        P = alphas[:, None, :] + self.modes[None, :, :]
        return 2.0 * P @ self.A0.T

    # -- dense assembly -----------------------------------------------------
    def matrix(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=complex).reshape(self.dim)
        if self.diagonal:
            return np.diag(self.symbol(alpha[None])[0])
        H = np.zeros((self.size, self.size), dtype=complex)
        for rows, cols, A, const, lin in self._couplings:
            H[rows, cols] += const + lin @ alpha + alpha @ A @ alpha
        return H

    def matrix_grad(self, alpha) -> List[np.ndarray]:
        """Partial derivatives dH/d alpha_k as dense matrices."""
        alpha = np.asarray(alpha, dtype=complex).reshape(self.dim)
        out = []
        if self.diagonal:
            g = self.symbol_grad(alpha[None])[0]
            return [np.diag(g[:, k]) for k in range(self.dim)]
        for k in range(self.dim):
            D = np.zeros((self.size, self.size), dtype=complex)
            for rows, cols, A, const, lin in self._couplings:
                D[rows, cols] += lin[:, k] + 2.0 * (A @ alpha)[k]
            out.append(D)
        return out


@lru_cache(maxsize=32)
def _cached_model(medium_id, J_max):
    medium = _MEDIA[medium_id]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return CellModel(medium, J_max)


_MEDIA = {}


def cell_model(medium: MediumSpec, J_max: int) -> CellModel:
    """Shared :class:`CellModel` per (medium object, J_max)."""
    if J_max < medium.support_radius:
        warnings.warn(f"J_max={J_max} is below the coefficient support {medium.support_radius}",
                      TruncationWarning, stacklevel=2)
    _MEDIA[id(medium)] = medium
    model = _cached_model(id(medium), int(J_max))
    if model.medium is not medium:  # id reuse after garbage collection
        _cached_model.cache_clear()
        model = _cached_model(id(medium), int(J_max))
    return model


# ---------------------------------------------------------------------------
# public types
# ---------------------------------------------------------------------------

@dataclass
class BlochMatrix:
    alpha: np.ndarray
    J_max: int
    entries: np.ndarray
    index_map: np.ndarray

    @property
    def norm(self) -> float:
        return _norm(self.entries)


@dataclass
class BandEigen:
    band_index: int
    mu: float
    coeffs: np.ndarray
    multiplicity: int = 1
    alpha: Optional[np.ndarray] = None

    @property
    def simple(self) -> bool:
        return self.multiplicity == 1


@dataclass(frozen=True)
class PoleCheck:
    passed: bool
    margin: float


def _norm(H) -> float:
    return float(np.max(np.sum(np.abs(H), axis=1)))


def assemble(medium: MediumSpec, alpha, J_max: int) -> BlochMatrix:
    model = cell_model(medium, J_max)
    alpha = np.asarray(alpha, dtype=complex).reshape(medium.dim)
    return BlochMatrix(alpha, J_max, model.matrix(alpha), model.modes)


def _flag_multiplicity(vals, scale):
    mult = np.ones(vals.size, dtype=int)
    tol = DEGENERACY_RTOL * max(scale, 1.0)
    start = 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] > tol:
            mult[start:i] = i - start
            start = i
    return mult


def eigensolve(H: BlochMatrix, num_bands: int, lookahead: int = 1) -> List[BandEigen]:
    """Lowest ``num_bands`` eigenpairs of a Hermitian Bloch matrix, ascending."""
    if np.any(np.abs(H.alpha.imag) > 0):
        raise DomainError("eigensolve needs a real quasi-momentum; use solve_cell for complex alpha")
    E = H.entries
    n = min(num_bands + lookahead, E.shape[0])
    if np.count_nonzero(E - np.diag(np.diagonal(E))) == 0:
        d = np.diagonal(E).real
        order = np.argsort(d, kind="stable")[:n]
        vals = d[order]
        vecs = np.zeros((E.shape[0], n), dtype=complex)
        vecs[order, np.arange(n)] = 1.0
    else:
        vals, vecs = scipy.linalg.eigh(E, subset_by_index=[0, n - 1])
    mult = _flag_multiplicity(vals, H.norm)
    return [BandEigen(i + 1, float(vals[i]), vecs[:, i], int(mult[i]), H.alpha.real.copy())
            for i in range(min(num_bands, n))]


def bands_at(medium: MediumSpec, alpha, num_bands: int, J_max: int) -> List[BandEigen]:
    """Lowest bands at real alpha; constant media skip the dense matrix."""
    alpha = np.asarray(alpha, dtype=float).reshape(medium.dim)
    model = cell_model(medium, J_max)
    if not model.diagonal:
        return eigensolve(assemble(medium, alpha, J_max), num_bands)
    d = model.symbol(alpha[None])[0].real
    n = min(num_bands + 1, d.size)
    order = np.argpartition(d, n - 1)[:n] if n < d.size else np.arange(d.size)
    order = order[np.argsort(d[order], kind="stable")]
    vals = d[order]
    mult = _flag_multiplicity(vals, float(np.max(np.abs(d))))
    out = []
    for i in range(min(num_bands, n)):
        c = np.zeros(d.size, dtype=complex)
        c[order[i]] = 1.0
        out.append(BandEigen(i + 1, float(vals[i]), c, int(mult[i]), alpha.copy()))
    return out


def _quad_form_grad(model: CellModel, alpha, x, y=None):
    """y^H (dH/d alpha_k) x for each k (y defaults to x)."""
    y = x if y is None else y
    if model.diagonal:
        g = model.symbol_grad(np.asarray(alpha)[None])[0]
        return np.einsum("n,nk,n->k", np.conj(y), g, x)
    return np.array([np.conj(y) @ (D @ x) for D in model.matrix_grad(alpha)])


def hf_gradient(medium: MediumSpec, alpha, band: BandEigen, J_max: Optional[int] = None) -> np.ndarray:
    """Gradient of a simple band by the Hellmann-Feynman formula c^H (dH) c."""
    if band.multiplicity > 1:
        raise DegenerateBandError(f"band {band.band_index} has multiplicity {band.multiplicity}")
    if J_max is None:
        J_max = (round(band.coeffs.size ** (1.0 / medium.dim)) - 1) // 2
    model = cell_model(medium, J_max)
    g = _quad_form_grad(model, np.asarray(alpha, dtype=float), band.coeffs)
    if np.max(np.abs(g.imag)) > 1e-9 * max(1.0, np.max(np.abs(g.real))):
        raise DomainError("Hellmann-Feynman gradient has a large imaginary part")
    return g.real.astype(float)


def eigen_source_coeff(band: BandEigen, g) -> complex:
    """Expansion coefficient of the source on the band: sum_k g_k conj(c_k)."""
    return complex(np.vdot(band.coeffs, np.asarray(g)))


def bloch_values(alpha, coeffs, x, modes) -> np.ndarray:
    """exp(i alpha.x) sum_j c_j exp(i j.x) / (2 pi)^{n/2} at points x (P, dim)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dim = x.shape[1]
    alpha = np.asarray(alpha).reshape(dim)
    phase = np.exp(1j * (x @ alpha))
    return phase * (np.exp(1j * x @ modes.T.astype(float)) @ coeffs) / (2 * math.pi) ** (dim / 2)


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------

def _lu_pivots(M):
    lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    return lu, piv, np.abs(np.diagonal(lu))


def solve_cell(medium: MediumSpec, alpha, spectral_shift, g, J_max: int,
               cross_check: bool = True) -> np.ndarray:
    """Solve (H(alpha) - shift) c = g with pivot-based singularity detection."""
    model = cell_model(medium, J_max)
    alpha = np.asarray(alpha, dtype=complex).reshape(medium.dim)
    g = np.asarray(g, dtype=complex)
    if model.diagonal:
        d = model.symbol(alpha[None])[0] - spectral_shift
        scale = float(np.max(np.abs(d + spectral_shift)))
        if np.min(np.abs(d)) < PIVOT_RTOL * max(scale, 1.0):
            raise PoleProximityError("singular cell system", alpha, float(np.min(np.abs(d)) / max(scale, 1.0)))
        return g / d
    H = model.matrix(alpha)
    scale = _norm(H)
    M = H - spectral_shift * np.eye(model.size)
    lu, piv, pivots = _lu_pivots(M)
    if np.min(pivots) < PIVOT_RTOL * max(scale, 1.0):
        raise PoleProximityError("singular cell system", alpha, float(np.min(pivots) / max(scale, 1.0)))
    c = scipy.linalg.lu_solve((lu, piv), g, check_finite=False)
    res = np.linalg.norm(M @ c - g)
    if res > 1e-10 * max(np.linalg.norm(g), 1e-300):
        raise PoleProximityError(f"residual {res:.3e} too large", alpha, float(np.min(pivots) / scale))
    if cross_check and np.all(alpha.imag == 0) and np.imag(spectral_shift) > 0:
        vals, vecs = np.linalg.eigh(H)
        c_eig = vecs @ ((vecs.conj().T @ g) / (vals - spectral_shift))
        if np.linalg.norm(c_eig - c) > 1e-9 * max(np.linalg.norm(c), 1.0):
            raise PoleProximityError("eigen-expansion and direct solve disagree", alpha, 0.0)
    return c


def solve_batch(model: CellModel, alphas, spectral_shift, G) -> np.ndarray:
    """Coefficient vectors for many quasi-momenta; rows of G are source vectors."""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=complex))
    G = np.asarray(G, dtype=complex)
    if model.diagonal:
        return G / (model.symbol(alphas) - spectral_shift)
    out = np.empty_like(G)
    eye = np.eye(model.size)
    for i, a in enumerate(alphas):
        out[i] = np.linalg.solve(model.matrix(a) - spectral_shift * eye, G[i])
    return out


def pole_free_check(medium: MediumSpec, alpha_complex, lam: float, J_max: int) -> PoleCheck:
    """Smallest LU pivot of H(alpha) - lambda relative to ||H||; passes when >= 1e-8."""
    model = cell_model(medium, J_max)
    margin = float(pivot_margins(model, np.atleast_2d(alpha_complex), lam)[0])
    return PoleCheck(margin >= POLE_FREE_MARGIN, margin)


def pivot_margins(model: CellModel, alphas, lam: float) -> np.ndarray:
    alphas = np.atleast_2d(np.asarray(alphas, dtype=complex))
    if model.diagonal:
        S = model.symbol(alphas)
        scale = np.maximum(np.max(np.abs(S), axis=1), 1.0)
        return np.min(np.abs(S - lam), axis=1) / scale
    out = np.empty(alphas.shape[0])
    for i, a in enumerate(alphas):
        H = model.matrix(a)
        _, _, pivots = _lu_pivots(H - lam * np.eye(model.size))
        out[i] = np.min(pivots) / max(_norm(H), 1.0)
    return out


# ---------------------------------------------------------------------------
# band derivatives and complex continuation
# ---------------------------------------------------------------------------

def band_hessian(medium: MediumSpec, alpha, band_index: int, J_max: int, h: float = 1e-3) -> np.ndarray:
    """Hessian of a simple band by central differences of the Hellmann-Feynman gradient.

    One Richardson step combines steps h and h/2.
    """
    dim = medium.dim
    alpha = np.asarray(alpha, dtype=float)

    def grad(a):
        b = bands_at(medium, a, band_index, J_max)[band_index - 1]
        return hf_gradient(medium, a, b, J_max)

    def fd(step):
        Hs = np.zeros((dim, dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = step
            Hs[:, k] = (grad(alpha + e) - grad(alpha - e)) / (2 * step)
        return Hs

    Hm = (4 * fd(h / 2) - fd(h)) / 3
    return 0.5 * (Hm + Hm.T)


@dataclass
class ComplexEigen:
    """Eigenpair of H at complex alpha continued from the real axis.

    ``right`` is normalised to unit length; ``left`` satisfies
    left^H right = 1, so the spectral projector is right left^H.
    """

    alpha: np.ndarray
    mu: complex
    right: np.ndarray
    left: np.ndarray

    def dmu(self, model: CellModel) -> np.ndarray:
        return _quad_form_grad(model, self.alpha, self.right, self.left)


def continue_eigenpair(model: CellModel, alpha_c, seed: np.ndarray, mu_seed: complex,
                       iterations: int = 5, tol: float = 1e-12) -> ComplexEigen:
    """Inverse iteration at complex alpha seeded by a nearby eigenpair.

    The right vector is rotated to match the seed's phase so the gauge is
    continuous with the real side.
    """
    alpha_c = np.asarray(alpha_c, dtype=complex).reshape(model.dim)
    seed = np.asarray(seed, dtype=complex)
    if model.diagonal:
        # eigenvectors are unit vectors; pick the mode the seed sits on
        k = int(np.argmax(np.abs(seed)))
        mu = complex(model.symbol(alpha_c[None])[0, k])
        x = np.zeros(model.size, dtype=complex)
        x[k] = seed[k] / abs(seed[k])
        return ComplexEigen(alpha_c, mu, x, x.copy())
    H = model.matrix(alpha_c)
    Hh = H.conj().T
    eye = np.eye(model.size)
    x = seed / np.linalg.norm(seed)
    y = x.copy()
    mu = complex(mu_seed)
    for it in range(max(iterations, 1) + 20):
        shift = mu + 1e-14 * max(1.0, abs(mu))
        try:
            x_new = np.linalg.solve(H - shift * eye, x)
            y_new = np.linalg.solve(Hh - np.conj(shift) * eye, y)
        except np.linalg.LinAlgError as exc:
            raise BranchContinuationError(f"singular shift during inverse iteration: {exc}") from exc
        x_new /= np.linalg.norm(x_new)
        y_new /= np.linalg.norm(y_new)
        mu_new = complex(np.vdot(y_new, H @ x_new) / np.vdot(y_new, x_new))
        done = abs(mu_new - mu) <= tol * max(1.0, abs(mu_new))
        x, y, mu = x_new, y_new, mu_new
        if it + 1 >= iterations and done:
            break
    else:
        raise BranchContinuationError("inverse iteration stagnated at complex alpha")
    res = np.linalg.norm(H @ x - mu * x)
    if res > 1e-8 * max(1.0, _norm(H)):
        raise BranchContinuationError(f"continued eigenpair residual {res:.2e}")
    x *= np.exp(-1j * np.angle(np.vdot(seed, x)))
    y = y / np.conj(np.vdot(y, x))
    return ComplexEigen(alpha_c, mu, x, y)
