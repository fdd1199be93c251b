"""Periodic coefficients, sources, and the discrete Floquet-Bloch transform.

Coefficients are Fourier tables on the cell Omega = (-pi, pi]^n:
``A(x) = sum_j A_j exp(i j.x)`` and ``V(x) = sum_j V_j exp(i j.x)``.
Sources are expanded in the orthonormal basis ``exp(i j.x) / (2 pi)^{n/2}``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError, DomainError

Index = Tuple[int, ...]

_SYM_TOL = 1e-12


def _key(j, dim) -> Index:
    t = tuple(int(v) for v in np.atleast_1d(j))
    if len(t) != dim:
        raise ConfigError(f"multi-index {t} does not match dimension {dim}")
    return t


def _neg(j: Index) -> Index:
    return tuple(-v for v in j)


@dataclass(frozen=True)
class MediumSpec:
    dim: int
    A_coeffs: Mapping[Index, np.ndarray]
    V_coeffs: Mapping[Index, complex]
    c0: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("dimension must be 1 or 2")
        A = {_key(j, self.dim): np.array(np.broadcast_to(np.asarray(m, dtype=complex), (self.dim, self.dim)))
             for j, m in self.A_coeffs.items()}
        V = {_key(j, self.dim): complex(v) for j, v in self.V_coeffs.items()}
        object.__setattr__(self, "A_coeffs", A)
        object.__setattr__(self, "V_coeffs", V)
        if not self.c0 > 0:
            raise ConfigError("ellipticity constant c0 must be positive")
        self._validate()

    # -- validation ---------------------------------------------------------
    def _validate(self):
        for j, m in self.A_coeffs.items():
            partner = self.A_coeffs.get(_neg(j), np.zeros_like(m))
            if np.max(np.abs(partner - np.conj(m))) > _SYM_TOL * max(1.0, np.max(np.abs(m))):
                raise ConfigError(f"A is not real-valued: A({_neg(j)}) != conj(A({j}))")
            if np.max(np.abs(m - m.T)) > _SYM_TOL * max(1.0, np.max(np.abs(m))):
                raise ConfigError(f"A({j}) is not symmetric")
        for j, v in self.V_coeffs.items():
            partner = self.V_coeffs.get(_neg(j), 0.0)
            if abs(partner - np.conj(v)) > _SYM_TOL * max(1.0, abs(v)):
                raise ConfigError(f"V is not real-valued: V({_neg(j)}) != conj(V({j}))")
        lo = self.min_ellipticity()
        if lo < self.c0 * (1 - 1e-12):
            raise ConfigError(f"sampled ellipticity {lo:.6g} is below c0={self.c0}")

    def min_ellipticity(self, samples: int = 32) -> float:
        xs = -math.pi + 2 * math.pi * (np.arange(samples) + 1) / samples
        grids = np.meshgrid(*([xs] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        Ax = np.zeros((pts.shape[0], self.dim, self.dim), dtype=complex)
        for j, m in self.A_coeffs.items():
            Ax += np.exp(1j * pts @ np.asarray(j, dtype=float))[:, None, None] * m
        return float(np.min(np.linalg.eigvalsh(0.5 * (Ax + np.conj(np.swapaxes(Ax, 1, 2))))))

    # -- derived properties -------------------------------------------------
    @property
    def support_radius(self) -> int:
        keys = list(self.A_coeffs) + list(self.V_coeffs)
        return max((max(abs(v) for v in j) for j in keys), default=0)

    @property
    def is_diagonal(self) -> bool:
        """True when only the zero Fourier mode is present (constant medium)."""
        zero = (0,) * self.dim
        nz = lambda tab: [j for j, v in tab.items() if np.any(np.abs(v) > 0)]
        return all(j == zero for j in nz(self.A_coeffs) + nz(self.V_coeffs))

    def potential_lower_bound(self, samples: int = 32) -> float:
        xs = -math.pi + 2 * math.pi * (np.arange(samples) + 1) / samples
        grids = np.meshgrid(*([xs] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        v = np.zeros(pts.shape[0], dtype=complex)
        for j, c in self.V_coeffs.items():
            v += c * np.exp(1j * pts @ np.asarray(j, dtype=float))
        return float(np.min(v.real))


def free_space(dim: int, A=None) -> MediumSpec:
    """Constant medium; ``A`` defaults to the identity."""
    m = np.eye(dim) if A is None else np.asarray(A, dtype=float)
    c0 = float(np.min(np.linalg.eigvalsh(m)))
    return MediumSpec(dim, {(0,) * dim: m}, {}, c0)


def cosine_medium(dim: int, amplitude: float) -> MediumSpec:
    """A = I, V = amplitude * sum_k cos(x_k)."""
    V = {}
    for k in range(dim):
        for sgn in (1, -1):
            j = [0] * dim
            j[k] = sgn
            V[tuple(j)] = amplitude / 2.0
    return MediumSpec(dim, {(0,) * dim: np.eye(dim)}, V, 1.0)


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    """Right-hand side supported in one periodicity cell.

    ``kind`` is ``"delta"`` (point mass at the origin) or ``"fourier"``
    (coefficients of f on Omega in the orthonormal exponential basis; f is
    zero outside Omega).
    """

    dim: int
    kind: str = "delta"
    table: Mapping[Index, complex] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("delta", "fourier"):
            raise ConfigError(f"unknown source kind {self.kind!r}")
        object.__setattr__(self, "table", {_key(j, self.dim): complex(v) for j, v in self.table.items()})
        if self.kind == "fourier" and not self.table:
            raise ConfigError("fourier source needs at least one coefficient")

    @property
    def support_radius(self) -> int:
        return max((max(abs(v) for v in j) for j in self.table), default=0)

    def shell_max(self) -> float:
        """Largest coefficient magnitude on the outermost shell of the table (decay diagnostic)."""
        if self.kind == "delta":
            return (2 * math.pi) ** (-self.dim / 2)
        r = self.support_radius
        return max(abs(v) for j, v in self.table.items() if max(abs(t) for t in j) == r)

    def evaluate(self, y):
        """f(y) for y in Omega (fourier kind only)."""
        if self.kind != "fourier":
            raise DomainError("a point mass has no pointwise values")
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1], dtype=complex)
        for j, c in self.table.items():
            out += c * np.exp(1j * (y @ np.asarray(j, dtype=float)))
        inside = np.all(np.abs(y) <= math.pi, axis=-1)
        return np.where(inside, out, 0.0) / (2 * math.pi) ** (self.dim / 2)


def index_set(dim: int, J_max: int) -> np.ndarray:
    """All multi-indices with |j|_inf <= J_max, lexicographic order, shape (N, dim)."""
    r = np.arange(-J_max, J_max + 1)
    grids = np.meshgrid(*([r] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _sinc(t):
    return np.sinc(t)  # sin(pi t) / (pi t), entire in t


def _complex_sinc(t):
    t = np.asarray(t)
    if not np.iscomplexobj(t):
        return _sinc(t)
    out = np.ones_like(t, dtype=complex)
    nz = np.abs(t) > 1e-8
    pt = np.pi * t[nz]
    out[nz] = np.sin(pt) / pt
    small = ~nz
    out[small] = 1.0 - (np.pi * t[small]) ** 2 / 6.0
    return out


def source_fourier_vector(source: SourceSpec, alpha, J_max: int) -> np.ndarray:
    """Coefficients g of exp(-i alpha.x) f in the orthonormal basis on Omega.

    For a point mass every entry is (2 pi)^{-n/2}.  For a table source,
    g_j(alpha) = sum_m f_m prod_k sinc(m_k - j_k - alpha_k), which reduces to
    the table itself at alpha = 0 and is entire in alpha.
    """
    alpha = np.asarray(alpha)
    if alpha.ndim == 1:
        return source_fourier_batch(source, alpha[None, :], J_max)[0]
    return source_fourier_batch(source, alpha, J_max)


def source_fourier_batch(source: SourceSpec, alphas, J_max: int) -> np.ndarray:
    """Vectorised :func:`source_fourier_vector` for alphas of shape (K, dim)."""
    dim = source.dim
    alphas = np.asarray(alphas)
    K = alphas.shape[0]
    n_modes = (2 * J_max + 1) ** dim
    if source.kind == "delta":
        return np.full((K, n_modes), (2 * math.pi) ** (-dim / 2), dtype=complex)
    R = source.support_radius
    size = 2 * R + 1
    table = np.zeros((size,) * dim, dtype=complex)
    for j, c in source.table.items():
        table[tuple(v + R for v in j)] = c
    jj = np.arange(-J_max, J_max + 1)
    mm = np.arange(-R, R + 1)
    # per-axis sinc matrices S_k[K, j, m] = sinc(m - j - alpha_k)
    mats = []
    for k in range(dim):
        arg = mm[None, None, :] - jj[None, :, None] - alphas[:, k][:, None, None]
        mats.append(_complex_sinc(arg))
    if dim == 1:
        return np.einsum("kjm,m->kj", mats[0], table)
    G = np.einsum("kam,mn,kbn->kab", mats[0], table, mats[1], optimize=True)
    return G.reshape(K, n_modes)


class SourceEvaluator:
    """Repeated evaluation of source vectors at many (complex) quasi-momenta.

    In 2D the coefficient table is split by SVD into rank-one terms, each a
    product of two one-dimensional sinc transforms.
    """

    def __init__(self, source: SourceSpec, J_max: int, rtol: float = 1e-15):
        self.source = source
        self.dim = source.dim
        self.J_max = J_max
        self.size = (2 * J_max + 1) ** self.dim
        if source.kind == "delta":
            self.terms = None
            return
        R = source.support_radius
        table = np.zeros((2 * R + 1,) * self.dim, dtype=complex)
        for j, c in source.table.items():
            table[tuple(v + R for v in j)] = c
        self.mm = np.arange(-R, R + 1)
        self.jj = np.arange(-J_max, J_max + 1)
        if self.dim == 1:
            self.terms = [(table,)]
        else:
            U, s, Vh = np.linalg.svd(table)
            keep = s > rtol * max(s[0], 1e-300)
            self.terms = [(s[r] * U[:, r], Vh[r]) for r in np.flatnonzero(keep)]

    def _axis(self, a):
        # sinc(n - a) = -(-1)^n sin(pi a) / (pi (n - a)) for integer n = m - j
        n = self.mm[None, :] - self.jj[:, None]
        arg = n[None, :, :] - a[:, None, None]
        sign = np.where(n % 2 == 0, 1.0, -1.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = -np.sin(np.pi * a)[:, None, None] * sign[None] / (np.pi * arg)
        small = np.abs(arg) < 1e-8
        if np.any(small):
            out[small] = _complex_sinc(arg[small])
        return out

    def __call__(self, alphas) -> np.ndarray:
        alphas = np.atleast_2d(np.asarray(alphas))
        K = alphas.shape[0]
        if self.terms is None:
            return np.full((K, self.size), (2 * math.pi) ** (-self.dim / 2), dtype=complex)
        S1 = self._axis(alphas[:, 0])
        if self.dim == 1:
            return S1 @ self.terms[0][0]
        S2 = self._axis(alphas[:, 1])
        out = np.zeros((K, 2 * self.J_max + 1, 2 * self.J_max + 1), dtype=complex)
        for u, v in self.terms:
            out += (S1 @ u)[:, :, None] * (S2 @ v)[:, None, :]
        return out.reshape(K, self.size)


def source_from_function(func, dim: int, order: int) -> SourceSpec:
    """Fourier table of a smooth cell function sampled on a uniform grid (|j|_inf <= order)."""
    M = 4 * order + 8
    xs = -math.pi + 2 * math.pi * np.arange(M) / M
    grids = np.meshgrid(*([xs] * dim), indexing="ij")
    pts = np.stack(grids, axis=-1)
    vals = func(pts)
    coef = np.fft.fftn(vals) / M ** dim * (2 * math.pi) ** (dim / 2)
    # account for the grid starting at -pi
    table = {}
    for j in itertools.product(range(-order, order + 1), repeat=dim):
        idx = tuple(v % M for v in j)
        phase = np.exp(1j * math.pi * sum(j))
        table[j] = complex(coef[idx] * phase)
    return SourceSpec(dim, "fourier", table)


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------

def medium_from_dict(d: dict) -> MediumSpec:
    try:
        dim = int(d["dimension"])
        A = {tuple(e["j"]): np.asarray(e["matrix"], dtype=float) + 1j * np.asarray(e.get("matrix_im", 0.0))
             for e in d.get("A", [])}
        V = {tuple(e["j"]): complex(e.get("re", 0.0), e.get("im", 0.0)) for e in d.get("V", [])}
        c0 = float(d.get("c0", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed medium description: {exc}") from exc
    if not A:
        raise ConfigError("medium needs at least one A coefficient")
    return MediumSpec(dim, A, V, c0)


def source_from_dict(d: dict, dim: int) -> SourceSpec:
    try:
        kind = d["type"]
        if kind == "delta":
            return SourceSpec(dim, "delta")
        if kind == "fourier":
            table = {tuple(e["j"]): complex(e.get("re", 0.0), e.get("im", 0.0)) for e in d["coeffs"]}
            return SourceSpec(dim, "fourier", table)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed source description: {exc}") from exc
    raise ConfigError(f"unknown source type {d.get('type')!r}")


def load_medium(path) -> MediumSpec:
    try:
        return medium_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read medium file {path}: {exc}") from exc


def load_source(path, dim: int) -> SourceSpec:
    try:
        return source_from_dict(json.loads(Path(path).read_text()), dim)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read source file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# discrete Floquet-Bloch transform
# ---------------------------------------------------------------------------

@dataclass
class BlochField:
    """Values of (J phi)(alpha, x) on an alpha grid times the cell sample grid.

    ``values[k]`` holds the field at ``alpha_nodes[k]`` on the cell grid;
    ``cells`` keeps the input samples so the field can be evaluated on
    translated cells directly from the defining sum.
    """

    alpha_nodes: np.ndarray
    values: np.ndarray
    cell_points: np.ndarray
    cells: Dict[Index, np.ndarray]

    def evaluate_shifted(self, k: int, shift) -> np.ndarray:
        """(J phi)(alpha_k, x + 2 pi shift) for x on the cell grid, from the defining sum."""
        shift = tuple(int(v) for v in shift)
        a = self.alpha_nodes[k]
        out = np.zeros_like(self.values[k])
        for m, vals in self.cells.items():
            mm = tuple(mi - si for mi, si in zip(m, shift))
            out = out + vals * np.exp(-2j * math.pi * np.dot(a, mm))
        return out


def cell_grid(dim: int, M: int) -> np.ndarray:
    """Uniform sample points of Omega, M per axis, flattened (M^dim, dim)."""
    xs = -math.pi + 2 * math.pi * (np.arange(M) + 0.5) / M
    grids = np.meshgrid(*([xs] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def uniform_alpha_grid(dim: int, K: int, offset: float = 0.0) -> np.ndarray:
    a = -0.5 + (np.arange(K) + 0.5 + offset) / K
    grids = np.meshgrid(*([a] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _check_uniform(alpha_grid: np.ndarray):
    """Require a full tensor grid with spacing 1/K per axis (a trapezoid grid on the torus)."""
    sizes = 1
    for d in range(alpha_grid.shape[1]):
        u = np.unique(np.round(alpha_grid[:, d], 12))
        K = u.size
        sizes *= K
        if K > 1 and np.max(np.abs(np.diff(u) - 1.0 / K)) > 1e-12:
            raise DomainError("alpha grid is not uniform with spacing 1/K over B")
    if sizes != alpha_grid.shape[0]:
        raise DomainError("alpha grid is not a full tensor grid")


def floquet_transform(cells: Mapping[Index, np.ndarray], alpha_grid, cell_points) -> BlochField:
    """(J phi)(alpha, x) = sum_m phi(x + 2 pi m) exp(-i 2 pi alpha.m) on a uniform alpha grid.

    ``cells`` maps a cell offset m to the samples of phi on ``cell_points + 2 pi m``.
    """
    alpha_grid = np.atleast_2d(np.asarray(alpha_grid, dtype=float))
    _check_uniform(alpha_grid)
    cells = {tuple(int(v) for v in np.atleast_1d(m)): np.asarray(v, dtype=complex) for m, v in cells.items()}
    shape = next(iter(cells.values())).shape if cells else (cell_points.shape[0],)
    values = np.zeros((alpha_grid.shape[0],) + shape, dtype=complex)
    for m, vals in cells.items():
        phase = np.exp(-2j * math.pi * alpha_grid @ np.asarray(m, dtype=float))
        values += phase.reshape((-1,) + (1,) * len(shape)) * vals[None]
    return BlochField(alpha_grid, values, np.asarray(cell_points), cells)


def inverse_floquet(field_: BlochField, m) -> np.ndarray:
    """Trapezoidal approximation of int_B psi(alpha, x) exp(i 2 pi alpha.m) d alpha."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    phase = np.exp(2j * math.pi * field_.alpha_nodes @ m)
    shape = (-1,) + (1,) * (field_.values.ndim - 1)
    return np.mean(phase.reshape(shape) * field_.values, axis=0)


def parseval_defect(cells: Mapping[Index, np.ndarray], field_: BlochField, cell_weight: float = 1.0) -> float:
    """| sum_cells ||phi||^2 - mean_alpha ||J phi(alpha)||^2 | relative to the left side."""
    lhs = sum(float(np.sum(np.abs(v) ** 2)) for v in cells.values()) * cell_weight
    rhs = float(np.mean(np.sum(np.abs(field_.values.reshape(field_.values.shape[0], -1)) ** 2, axis=1))) * cell_weight
    return abs(lhs - rhs) / max(lhs, 1e-300)
