"""Limiting absorption solution by contour deformation in quasi-momentum space.

The solution is assembled from three parts:

* the evanescent part, the integral of the Bloch field over the deformed
  cell ``alpha + i sigma(alpha) n_hat``;
* the propagating part, ``2 pi i`` times the surface integral over the part
  of the level set where the group velocity points along ``n_hat``;
* the complex-extension part, ``2 pi i`` times the residues of complex
  roots near tangency points that lie below the deformed contour.

In two dimensions the cell is swept by closed orbits of lines parallel to
``n_hat`` (rational directions only), so each slice integral is periodic
and the trapezoid rule converges spectrally.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate

from .bands import _fmt, bands_at_level, check_regularity, sample_grid
from .cell import CellModel, bands_at, cell_model, pivot_margins, POLE_FREE_MARGIN
from .errors import (ContourConstructionError, DomainError, IrregularLevelError,
                     PoleProximityError)
from .fermi import (ComplexBranch, LevelSetData, _min_image, complex_extension, level_set)
from .lattice import DirectionalFrame, OrbitFamily, build_frame, orbit_family, wrap_to_B
from .medium import MediumSpec, SourceEvaluator, SourceSpec

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass
class LapConfig:
    sigma1: float = 0.05
    sigma2: float = 0.05
    halo: float = 0.1
    slices: int = 64
    nodes_per_slice: int = 512
    N: int = 64
    J_max: int = 16
    num_bands: int = 4
    prop_nodes: int = 64
    cext_samples: int = 24
    panel_order: int = 10
    grading: float = 0.2
    min_panel: float = 1e-10
    subtract_radius: float = 12.0  # pole subtraction radius in node spacings
    max_retries: int = 6


@dataclass
class LapResult:
    x: np.ndarray
    evanescent: complex
    propagating: complex
    complex_ext: complex
    total: complex
    diagnostics: Dict = field(default_factory=dict)


def _assemble_result(x, ev, pr, ce, diag) -> LapResult:
    ev, pr, ce = complex(ev), complex(pr), complex(ce)
    return LapResult(np.asarray(x, dtype=float), ev, pr, ce, ev + pr + ce, diag)


def solution_csv(results: Sequence[LapResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = results[0].x.size if results else 1
    w.writerow([f"x{k + 1}" for k in range(dim)] + ["re_total", "im_total", "re_evan", "im_evan",
                                                     "re_prop", "im_prop", "re_cext", "im_cext"])
    for r in results:
        row = [_fmt(v) for v in r.x]
        for v in (r.total, r.evanescent, r.propagating, r.complex_ext):
            row += [_fmt(v.real), _fmt(v.imag)]
        w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# contour
# ---------------------------------------------------------------------------

def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1, and its derivative."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / u), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / (1.0 - u)), 0.0)
        val = a / (a + b)
        da = np.where(u > 0, a / u ** 2, 0.0)
        db = np.where(u < 1, -b / (1.0 - u) ** 2, 0.0)
        dval = (da * b - a * db) / (a + b) ** 2
    return val, np.nan_to_num(dval)


@dataclass
class ContourSpec:
    """Height function sigma on the torus and the slice quadrature rule.

    ``sigma`` equals ``sigma2`` within ``halo`` of the tangency points (where
    complex roots approach the real axis), ``sigma1`` beyond twice the halo,
    with a C-infinity transition in between.  Torus distance to isolated
    points is smooth for ``2 * halo < 1/2``, so sigma is smooth along every
    slice and the slice trapezoid rule converges spectrally.
    """

    frame: DirectionalFrame
    family: OrbitFamily
    sigma1: float
    sigma2: float
    halo: float
    slices: int
    nodes_per_slice: int
    d_points: np.ndarray  # (D, dim)
    margin: float = float("inf")
    worst_alpha: Optional[np.ndarray] = None
    retries: int = 0

    def sigma(self, alpha):
        """sigma and d sigma / d s at real points alpha (K, dim)."""
        alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        K = alpha.shape[0]
        if self.d_points.shape[0] == 0:
            return np.full(K, self.sigma1), np.zeros(K)
        rel = _min_image(alpha[:, None, :] - self.d_points[None, :, :])
        dist = np.linalg.norm(rel, axis=2)
        k = np.argmin(dist, axis=1)
        rows = np.arange(K)
        d = dist[rows, k]
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.nan_to_num(rel[rows, k] / d[:, None])
        val, dval = smooth_step((d - self.halo) / self.halo)
        sig = self.sigma2 + (self.sigma1 - self.sigma2) * val
        dsig = (self.sigma1 - self.sigma2) * dval / self.halo * (unit @ self.frame.n_hat)
        return sig, dsig

    @property
    def sigma_min(self) -> float:
        return min(self.sigma1, self.sigma2) if self.d_points.shape[0] else self.sigma1


def _tangency_points(level: Optional[LevelSetData], dim: int) -> np.ndarray:
    if level is None:
        return np.zeros((0, dim))
    return np.array([d.alpha for d in level.d_points], dtype=float).reshape(-1, dim)


def build_contour(level: Optional[LevelSetData], frame: DirectionalFrame, sigma1: float, sigma2: float,
                  halo_width: float, slices: int, nodes_per_slice: int,
                  medium: Optional[MediumSpec] = None, lam: Optional[float] = None,
                  J_max: Optional[int] = None, max_retries: int = 6) -> ContourSpec:
    """Height function plus a pole-free check on a tensor sample of slice nodes.

    ``level`` supplies the tangency points; with no level set (lambda in a
    gap, or one dimension) sigma is the constant ``sigma1``.

    Nodes within ``halo_width`` of a tangency point are exempt from the check
    (a complex root crosses the contour there by construction).  When the
    check fails elsewhere, ``sigma2`` is halved and the construction retried.
    """
    if sigma1 <= 0 or sigma2 <= 0 or halo_width <= 0:
        raise DomainError("sigma1, sigma2 and halo must be positive")
    if frame.dim == 2 and halo_width >= 0.25:
        raise DomainError("halo must be below 1/4 so that the transition stays inside one cell")
    fam = orbit_family(frame)
    dpts = _tangency_points(level, frame.dim)
    s2 = sigma2
    for attempt in range(max_retries + 1):
        spec = ContourSpec(frame, fam, sigma1, s2, halo_width, slices, nodes_per_slice, dpts)
        spec.retries = attempt
        if medium is None:
            return spec
        model = cell_model(medium, J_max)
        margin, worst = _check_nodes(spec, model, lam)
        spec.margin, spec.worst_alpha = margin, worst
        if margin >= POLE_FREE_MARGIN:
            return spec
        s2 *= 0.5
    raise ContourConstructionError(f"no pole-free contour after {max_retries} retries (margin {margin:.3e})",
                                   worst, margin)


def _check_nodes(spec: ContourSpec, model: CellModel, lam: float, max_nodes: int = 200000):
    fam = spec.family
    M = max(8, int(math.ceil(spec.nodes_per_slice * fam.length)))
    s = -fam.length / 2 + fam.length * (np.arange(M) + 0.5) / M
    if spec.frame.dim == 1:
        gam = np.array([0.0])
    else:
        G = max(4, spec.slices)
        gam = -fam.period / 2 + fam.period * (np.arange(G) + 0.5) / G
    if not model.diagonal:
        gam = gam[:: max(1, len(gam) // 8)]
        s = s[:: max(1, len(s) // 64)]
    gg, ss = np.meshgrid(gam, s, indexing="ij")
    re = wrap_to_B(fam.point(gg.ravel(), ss.ravel()).reshape(-1, spec.frame.dim))
    sig, _ = spec.sigma(re)
    alpha = re + 1j * sig[:, None] * spec.frame.n_hat
    if spec.d_points.shape[0]:
        dd = np.min(np.linalg.norm(_min_image(re[:, None, :] - spec.d_points[None]), axis=2), axis=1)
        keep = dd > spec.halo
        alpha, re = alpha[keep], re[keep]
    if alpha.shape[0] == 0:
        return float("inf"), None
    margins = np.concatenate([pivot_margins(model, alpha[i:i + 20000], lam)
                              for i in range(0, alpha.shape[0], 20000)])
    k = int(np.argmin(margins))
    return float(margins[k]), alpha[k]


# ---------------------------------------------------------------------------
# Bloch field evaluation
# ---------------------------------------------------------------------------

def _field_values(model: CellModel, C, alphas, x):
    """exp(i alpha.x) sum_j C_j exp(i j.x) / (2 pi)^{n/2}; rows of C per alpha, columns of result per x."""
    x = np.atleast_2d(x)
    E = np.exp(1j * (model.modes.astype(float) @ x.T))  # (N, P)
    phase = np.exp(1j * (np.asarray(alphas) @ x.T))  # (K, P)
    return (C @ E) * phase / TWO_PI ** (model.dim / 2)


def _coefficients(model: CellModel, src: SourceEvaluator, alphas, lam: complex):
    G = src(alphas)
    if model.diagonal:
        return G / (model.symbol(alphas) - lam)
    out = np.empty_like(G)
    eye = np.eye(model.size)
    for i, a in enumerate(alphas):
        out[i] = np.linalg.solve(model.matrix(a) - lam * eye, G[i])
    return out


# ---------------------------------------------------------------------------
# evanescent term
# ---------------------------------------------------------------------------

def _mode_poles(model: CellModel, frame: DirectionalFrame, fam: OrbitFamily, gamma: float, lam: float):
    """Poles zeta of single plane-wave modes along one orbit (constant media).

    Returns arrays (zeta, mode row, wrapped complex alpha, a * (z1 - z2)),
    one entry per root with real part in [-L/2, L/2).
    """
    n = frame.n_hat
    A0 = model.A0
    dim = frame.dim
    L = fam.length
    base = fam.point(gamma, 0.0).reshape(dim) if dim == 2 else np.zeros(1)
    a = complex(n @ A0 @ n)
    along = np.linspace(-L / 2, L / 2, 33)
    samples = base[None, :] + along[:, None] * n[None, :]
    lam_eff = max(lam - model.V0.real, 0.0) / max(np.min(np.linalg.eigvalsh(A0.real)), 1e-12)
    r = int(math.ceil(math.sqrt(lam_eff) + 1.5))
    offsets = np.stack(np.meshgrid(*([np.arange(-r, r + 1)] * dim), indexing="ij"), -1).reshape(-1, dim)
    cand = ((-np.round(samples).astype(int))[:, None, :] + offsets[None]).reshape(-1, dim)
    cand = np.unique(cand, axis=0)
    v = base[None, :] + cand
    b = 2.0 * (v @ A0 @ n)
    c = np.einsum("ki,ij,kj->k", v, A0, v) + model.V0 - lam
    disc = np.sqrt(b * b - 4 * a * c + 0j)
    z1, z2 = (-b + disc) / (2 * a), (-b - disc) / (2 * a)
    z = np.concatenate([z1, z2])
    zo = np.concatenate([z2, z1])
    j = np.concatenate([cand, cand])
    keep = (z.real >= -L / 2) & (z.real < L / 2)
    z, zo, j = z[keep], zo[keep], j[keep]
    alpha = base[None, :] + z[:, None] * n[None, :]
    m = np.round(alpha.real)
    jw = j + m.astype(int)
    ok = np.max(np.abs(jw), axis=1) <= model.J_max
    return z[ok], model._row_of(jw[ok]), alpha[ok] - m[ok], a * (z[ok] - zo[ok])


@dataclass
class _SliceStats:
    min_margin: float = float("inf")
    halving_change: float = 0.0
    subtracted: int = 0
    untracked_captured: int = 0
    gamma_nodes: int = 1


def _slice_integral(model, src, contour: ContourSpec, lam, gamma, x, windows, stats: _SliceStats,
                    subtract_radius: float = 12.0):
    """Periodic trapezoid over one orbit; nearby single-mode poles are subtracted analytically.

    A pole z within ``subtract_radius`` node spacings of the contour is
    removed with the periodic kernel Res (pi/L) cot(pi (zeta - z)/L), whose
    exact contour integral is -i pi Res sign(sigma - Im z).
    """
    frame, fam = contour.frame, contour.family
    L = fam.length
    M = max(8, int(math.ceil(contour.nodes_per_slice * L)))
    M += M % 2
    h = L / M
    s = -L / 2 + h * np.arange(M)
    re = wrap_to_B(fam.point(np.full(M, gamma), s).reshape(M, frame.dim) if frame.dim == 2
                   else s[:, None] * frame.n_hat)
    sig, dsig = contour.sigma(re)
    alphas = re + 1j * sig[:, None] * frame.n_hat
    jac = 1.0 + 1j * dsig
    if model.diagonal:
        S = model.symbol(alphas)
        C = src(alphas) / (S - lam)
        margins = np.min(np.abs(S - lam), axis=1) / np.maximum(np.max(np.abs(S), axis=1), 1.0)
    else:
        C = _coefficients(model, src, alphas, lam)
        margins = np.full(M, np.inf)
    F = _field_values(model, C, alphas, x) * jac[:, None]
    zeta = s + 1j * sig
    const = np.zeros(F.shape[1], dtype=complex)
    radius = subtract_radius * h
    if model.diagonal:
        z, rows, aw, denom = _mode_poles(model, frame, fam, gamma, lam)
        if z.size:
            zr = base_point(fam, frame, gamma, z.real)
            sz, _ = contour.sigma(wrap_to_B(zr))
            above = sz - z.imag
            captured = (z.imag > 1e-13) & (z.imag < sz)
            if np.any(captured) and not _in_window(gamma, windows, fam):
                stats.untracked_captured += int(np.sum(captured))
            near = np.abs(above) < radius
            if np.any(near):
                z, rows, aw, denom, above = z[near], rows[near], aw[near], denom[near], above[near]
                g = src(aw)[np.arange(z.size), rows]
                phase = np.exp(1j * ((aw + model.modes[rows]) @ x.T))
                res = (g / (TWO_PI ** (model.dim / 2) * denom))[:, None] * phase  # (P, X)
                kern = (math.pi / L) / np.tan(math.pi * (zeta[:, None] - z[None, :]) / L)  # (M, P)
                F = F - (kern * jac[:, None]) @ res
                const = -1j * math.pi * (np.sign(above) @ res)
                stats.subtracted += int(z.size)
                dz = np.min(np.abs(zeta[:, None] - z[None, :]), axis=1)
                margins = np.where(dz < radius, np.inf, margins)
    stats.min_margin = min(stats.min_margin, float(np.min(margins)))
    if np.min(margins) < PIVOT_FLOOR:
        k = int(np.argmin(margins))
        raise PoleProximityError("contour node on a pole", alphas[k], float(margins[k]))
    full = h * np.sum(F, axis=0)
    half = 2 * h * np.sum(F[::2], axis=0)
    stats.halving_change = max(stats.halving_change, float(np.max(np.abs(full - half))))
    return full + const


PIVOT_FLOOR = 1e-14


def base_point(fam: OrbitFamily, frame: DirectionalFrame, gamma, s):
    """Real points of an orbit (unwrapped), shape (K, dim)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if frame.dim == 1:
        return s[:, None] * frame.n_hat
    return fam.point(np.full(s.size, gamma), s).reshape(-1, frame.dim)


def _in_window(gamma, windows, fam: OrbitFamily) -> bool:
    for lo, hi in windows:
        a, b = min(lo, hi), max(lo, hi)
        g = a + ((gamma - a) % fam.period)
        if g <= b + 1e-12:
            return True
    return False


def _graded_panels(a: float, b: float, base: float, ratio: float, min_size: float, grade_left: bool,
                   grade_right: bool):
    """Panel end points on [a, b] refined geometrically toward graded ends."""
    length = b - a
    if length <= 0:
        return []
    cuts = {a, b}
    n_base = max(1, int(math.ceil(length / base)))
    for k in range(1, n_base):
        cuts.add(a + length * k / n_base)
    first = min(base, length / 2)
    for flag, end, sgn in ((grade_left, a, 1.0), (grade_right, b, -1.0)):
        if not flag:
            continue
        d = first * ratio
        while d > min_size:
            cuts.add(end + sgn * d)
            d *= ratio
    return sorted(cuts)


def gamma_rule(fam: OrbitFamily, breaks: Sequence[float], slices: int, order: int, ratio: float,
               min_size: float):
    """Composite Gauss-Legendre rule over one period in gamma, graded toward break points."""
    P = fam.period
    base = P / max(1, slices // order)
    tq, wq = np.polynomial.legendre.leggauss(order)
    pts = sorted({((b + P / 2) % P) - P / 2 for b in breaks})
    if not pts:
        edges = [(-P / 2, P / 2, False, False)]
    else:
        edges = []
        for i, p in enumerate(pts):
            q = pts[(i + 1) % len(pts)] + (P if i + 1 == len(pts) else 0.0)
            edges.append((p, q, True, True))
    nodes, weights = [], []
    for a, b, gl, gr in edges:
        cuts = _graded_panels(a, b, base, ratio, min_size, gl, gr)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            nodes.append(0.5 * (hi - lo) * tq + 0.5 * (hi + lo))
            weights.append(0.5 * (hi - lo) * wq)
    nodes = np.concatenate(nodes)
    nodes = ((nodes + P / 2) % P) - P / 2
    return nodes, np.concatenate(weights)


def evanescent_term(medium: MediumSpec, source: SourceSpec, contour: ContourSpec, lam: float, x, J_max: int,
                    breaks: Sequence[float] = (), windows: Sequence = (), config: Optional[LapConfig] = None,
                    executor=None, stats: Optional[_SliceStats] = None):
    """Integral of the Bloch field over the deformed cell; one value per row of x."""
    cfg = config or LapConfig()
    model = cell_model(medium, J_max)
    src = SourceEvaluator(source, J_max)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    stats = stats if stats is not None else _SliceStats()
    if contour.frame.dim == 1:
        return _slice_integral(model, src, contour, lam, 0.0, x, windows, stats, cfg.subtract_radius)
    nodes, weights = gamma_rule(contour.family, breaks, contour.slices, cfg.panel_order, cfg.grading, cfg.min_panel)

    def one(g):
        st = _SliceStats()
        val = _slice_integral(model, src, contour, lam, g, x, windows, st, cfg.subtract_radius)
        return val, st

    results = list(executor.map(one, nodes)) if executor is not None else [one(g) for g in nodes]
    total = np.zeros(x.shape[0], dtype=complex)
    for w, (val, st) in zip(weights, results):
        total += w * val
        stats.min_margin = min(stats.min_margin, st.min_margin)
        stats.halving_change = max(stats.halving_change, st.halving_change * w)
        stats.subtracted += st.subtracted
        stats.untracked_captured += st.untracked_captured
    stats.gamma_nodes = len(nodes)
    return total


# ---------------------------------------------------------------------------
# propagating term
# ---------------------------------------------------------------------------

def _band_eval(medium, J_max, alpha, band):
    b = bands_at(medium, wrap_to_B(alpha), band, J_max)[band - 1]
    return b


def _root_along_n(medium, J_max, frame, lam, band, gamma, s0, tol=1e-14, max_iter=40):
    """Real root of mu_band(gamma t + s n) = lambda by Newton in s."""
    from .cell import hf_gradient
    s = float(s0)
    for _ in range(max_iter):
        a = frame.point(gamma, s).reshape(frame.dim)
        b = _band_eval(medium, J_max, a, band)
        g = hf_gradient(medium, wrap_to_B(a), b, J_max)
        ds = float(g @ frame.n_hat)
        step = (b.mu - lam) / ds
        s -= step
        if abs(step) < tol:
            break
    a = frame.point(gamma, s).reshape(frame.dim)
    b = _band_eval(medium, J_max, a, band)
    g = hf_gradient(medium, wrap_to_B(a), b, J_max)
    if abs(b.mu - lam) > 1e-10:
        raise DomainError("propagating root did not converge")
    return wrap_to_B(a), b, g


def _residue_real(medium, src: SourceEvaluator, model, alpha, band_eig, x):
    g = src(alpha[None])[0]
    fhat = np.vdot(band_eig.coeffs, g)
    phi = _field_values(model, band_eig.coeffs[None, :], alpha[None], x)[0]
    return fhat * phi


def propagating_term(level: LevelSetData, medium: MediumSpec, source: SourceSpec, x, J_max: int,
                     nodes: int = 64):
    """2 pi i times the integral of f_hat phi / |grad mu| over the plus part of the level set.

    Each plus run is parametrised by gamma between its end points; the
    substitution gamma = mid + half sin(theta) absorbs the inverse square-root
    behaviour of 1/|dmu/ds| at tangency points.
    """
    frame = level.frame
    model = cell_model(medium, J_max)
    src = SourceEvaluator(source, J_max)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(x.shape[0], dtype=complex)
    lam = level.lam
    if frame.dim == 1:
        for run in level.runs:
            c = level.components[run.component]
            a = c.points[run.indices[0]]
            b = bands_at(medium, a, c.band, J_max)[c.band - 1]
            total += _residue_real(medium, src, model, a, b, x) / abs(c.grads[run.indices[0]] @ frame.n_hat)
        return TWO_PI * 1j * total
    t = frame.tangents[0]
    tq, wq = np.polynomial.legendre.leggauss(nodes)
    for run in level.runs:
        c = level.components[run.component]
        pts = [c.points[i] for i in run.indices]
        if run.start is not None:
            pts = [level.d_points[run.start].alpha] + pts
        if run.end is not None:
            pts = pts + [level.d_points[run.end].alpha]
        path = [np.asarray(pts[0], dtype=float)]
        for p in pts[1:]:
            path.append(path[-1] + _min_image(p - path[-1]))
        closed = run.start is None and run.end is None
        if closed:
            path.append(path[-1] + _min_image(pts[0] - path[-1]))
        path = np.array(path)
        gam = path @ t
        ss = path @ frame.n_hat
        order = np.argsort(gam)
        g_sorted, s_sorted = gam[order], ss[order]
        if closed:
            g0, g1 = gam[0], gam[-1]
            if abs(g1 - g0) < 1e-12:
                raise DomainError("closed plus run with no net tangential extent")
            K = nodes
            gn = g0 + (g1 - g0) * np.arange(K) / K
            wn = np.full(K, abs(g1 - g0) / K)
            shift_s = ss[-1] - ss[0]
            seeds = [np.interp(g, gam if g1 > g0 else gam[::-1], ss if g1 > g0 else ss[::-1]) for g in gn]
        else:
            ga, gb = gam[0], gam[-1]
            gm, gh = 0.5 * (ga + gb), 0.5 * abs(gb - ga)
            theta = 0.5 * math.pi * tq
            gn = gm + gh * np.sin(theta)
            wn = gh * np.cos(theta) * 0.5 * math.pi * wq
            seeds = np.interp(gn, g_sorted, s_sorted)
        for g, w, s0 in zip(gn, wn, seeds):
            a, b, grad = _root_along_n(medium, J_max, frame, lam, c.band, g, s0)
            total += w * _residue_real(medium, src, model, a, b, x) / abs(grad @ frame.n_hat)
    return TWO_PI * 1j * total


def propagating_term_points(level: LevelSetData, medium: MediumSpec, source: SourceSpec, x, J_max: int,
                            exclude_radius: float = 0.0):
    """Plain arclength-trapezoid version over refined plus points, optionally dropping points near D."""
    model = cell_model(medium, J_max)
    src = SourceEvaluator(source, J_max)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(x.shape[0], dtype=complex)
    dpts = np.array([d.alpha for d in level.d_points]).reshape(-1, level.frame.dim)
    for c in level.components:
        for k, tag in enumerate(c.tags):
            if tag != "plus" or c.weights[k] == 0:
                continue
            a = c.points[k]
            if dpts.shape[0] and exclude_radius > 0:
                if np.min(np.linalg.norm(_min_image(dpts - a), axis=1)) < exclude_radius:
                    continue
            b = bands_at(medium, a, c.band, J_max)[c.band - 1]
            total += c.weights[k] * _residue_real(medium, src, model, a, b, x) / np.linalg.norm(c.grads[k])
    return TWO_PI * 1j * total


# ---------------------------------------------------------------------------
# complex-extension term
# ---------------------------------------------------------------------------

def complex_extension_term(branches: Sequence[ComplexBranch], medium: MediumSpec, source: SourceSpec, x,
                           J_max: int):
    """2 pi i sum over branch samples of f_hat phi / (sgn(dmu/ds) G_s) dS.

    The sign of the complex derivative is taken as dmu_s / |dmu_s|, so each
    sample reduces to the residue f_hat phi / dmu_s times d gamma.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(x.shape[0], dtype=complex)
    if not branches:
        return total
    model = cell_model(medium, J_max)
    src = SourceEvaluator(source, J_max)
    for br in branches:
        for k in range(len(br.gamma_samples)):
            a = br.alphas[k]
            xr, yl = br.right[k], br.left[k]
            g = src(a[None])[0]
            fhat = np.vdot(yl, g) / np.vdot(yl, xr)
            phi = _field_values(model, xr[None, :], a[None], x)[0]
            dS = br.gamma_weights[k] * br.surface_factor[k]
            total += dS * fhat * phi / (br.csign[k] * br.weights[k])
    return TWO_PI * 1j * total


# ---------------------------------------------------------------------------
# full solve
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    grid: object
    bands: List[int]
    level: Optional[LevelSetData]
    regularity: object
    contour: ContourSpec
    branches: List[ComplexBranch]
    breaks: List[float]
    windows: List


def prepare(medium: MediumSpec, lam: float, frame: DirectionalFrame, cfg: LapConfig, executor=None,
            grid=None) -> Prepared:
    if grid is None:
        grid = sample_grid(medium, cfg.N, cfg.num_bands, cfg.J_max, executor)
    J = bands_at_level(grid, lam)
    reg = check_regularity(grid, lam, frame)
    if not reg.regular:
        raise IrregularLevelError(f"lambda={lam} is not regular: {reg}")
    level = level_set(grid, lam, frame, J) if J else None
    contour = None
    if not J:
        # no band meets lambda: integrate over real B when it is pole free
        contour = ContourSpec(frame, orbit_family(frame), 0.0, 0.0, cfg.halo, cfg.slices, cfg.nodes_per_slice,
                              np.zeros((0, frame.dim)))
        contour.margin, contour.worst_alpha = _check_nodes(contour, cell_model(medium, cfg.J_max), lam)
        if contour.margin < POLE_FREE_MARGIN:
            contour = None
    if contour is None:
        contour = build_contour(level, frame, cfg.sigma1, cfg.sigma2, cfg.halo, cfg.slices, cfg.nodes_per_slice,
                                medium, lam, cfg.J_max, cfg.max_retries)
    branches, breaks, windows = [], [], []
    if frame.dim == 2 and level is not None:
        fam = contour.family

        def target(s, g):
            a = frame.point(g, s.real).reshape(2)
            return float(contour.sigma(wrap_to_B(a)[None])[0][0])

        for d in level.d_points:
            br = complex_extension(medium, d, frame, d.band, samples=cfg.cext_samples, J_max=cfg.J_max,
                                   target=target)
            branches.append(br)
            go, _ = fam.to_orbit(d.alpha)
            ge = float(go) + (br.gamma_end - br.gamma_anchor)
            breaks += [float(go), ge]
            windows.append((float(go), ge))
    return Prepared(grid, J, level, reg, contour, branches, breaks, windows)


def lap_solve(medium: MediumSpec, source: SourceSpec, lam: float, frame: Optional[DirectionalFrame], x_points,
              config: Optional[LapConfig] = None, executor=None, grid=None) -> List[LapResult]:
    """Three-term limiting absorption solution at each point.

    With ``frame=None`` each point uses its own direction x/|x|; the band
    grid is shared between points.
    """
    cfg = config or LapConfig()
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    if x_points.shape[1] != medium.dim:
        raise DomainError("evaluation points have the wrong dimension")
    if frame is None:
        if grid is None:
            grid = sample_grid(medium, cfg.N, cfg.num_bands, cfg.J_max, executor)
        out = []
        for x in x_points:
            nrm = np.linalg.norm(x)
            if nrm == 0:
                raise DomainError("direction x/|x| undefined at the origin")
            out += lap_solve(medium, source, lam, build_frame(x / nrm), x[None], cfg, executor, grid)
        return out
    if np.any(x_points @ frame.n_hat < 0):
        raise DomainError("evaluation points must satisfy n_hat . x >= 0")
    prep = prepare(medium, lam, frame, cfg, executor, grid)
    stats = _SliceStats()
    ev = evanescent_term(medium, source, prep.contour, lam, x_points, cfg.J_max, prep.breaks, prep.windows, cfg,
                         executor, stats)
    if stats.untracked_captured:
        raise ContourConstructionError(
            f"{stats.untracked_captured} complex poles below the contour are not on a tracked branch; "
            "lower sigma1", None, stats.min_margin)
    if prep.level is not None:
        pr = propagating_term(prep.level, medium, source, x_points, cfg.J_max, cfg.prop_nodes)
    else:
        pr = np.zeros(x_points.shape[0], dtype=complex)
    ce = complex_extension_term(prep.branches, medium, source, x_points, cfg.J_max)
    diag = {
        "bands": prep.bands,
        "sigma2_used": prep.contour.sigma2,
        "contour_retries": prep.contour.retries,
        "contour_margin": prep.contour.margin,
        "node_margin": stats.min_margin,
        "gamma_nodes": stats.gamma_nodes,
        "nodes_per_slice": cfg.nodes_per_slice,
        "subtracted_poles": stats.subtracted,
        "halving_change": stats.halving_change,
        "d_points": 0 if prep.level is None else len(prep.level.d_points),
        "cext_windows": [(b.gamma_anchor, b.gamma_end) for b in prep.branches],
    }
    return [_assemble_result(x, ev[i], pr[i], ce[i], dict(diag)) for i, x in enumerate(x_points)]


# ---------------------------------------------------------------------------
# damped reference
# ---------------------------------------------------------------------------

def damped_solve(medium: MediumSpec, source: SourceSpec, lam: float, epsilon: float, x_points,
                 N_alpha: Optional[int] = None, J_max: int = 16, chunk: int = 4096):
    """Trapezoid over real B of the Bloch field with spectral shift lambda + i epsilon."""
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    need = int(math.ceil(8.0 / epsilon))
    N_alpha = max(need, N_alpha or 0)
    dim = medium.dim
    model = cell_model(medium, J_max)
    src = SourceEvaluator(source, J_max)
    x = np.atleast_2d(np.asarray(x_points, dtype=float))
    ax = -0.5 + (np.arange(N_alpha) + 0.5) / N_alpha
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    total = np.zeros(x.shape[0], dtype=complex)
    shift = lam + 1j * epsilon
    for lo in range(0, nodes.shape[0], chunk):
        a = nodes[lo:lo + chunk]
        C = _coefficients(model, src, a, shift)
        total += np.sum(_field_values(model, C, a, x), axis=0)
    return total / nodes.shape[0]


# ---------------------------------------------------------------------------
# single-slice residue identity
# ---------------------------------------------------------------------------

@dataclass
class ResidueCheck:
    lhs: complex
    rhs: complex
    diff: float
    poles: List[complex]
    inconclusive: bool


def _cquad(f, a, b, points=None):
    kw = dict(limit=2000, epsabs=1e-14, epsrel=1e-13)
    if points:
        kw["points"] = [p for p in points if a < p < b]
    with warnings.catch_warnings():
        # quad reports roundoff once the tolerance is near machine precision
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re = integrate.quad(lambda t: f(t).real, a, b, **kw)[0]
        im = integrate.quad(lambda t: f(t).imag, a, b, **kw)[0]
    return complex(re, im)


def residue_line_check(mu, dmu, f_hat, lam: float, epsilon: float, sigma: float, interval=(-0.5, 0.5),
                       scan: int = 2001) -> ResidueCheck:
    """Compare a real-line integral with its deformed-rectangle evaluation.

    ``mu``, ``dmu`` and ``f_hat`` are analytic callables of a (complex)
    slice coordinate.  lhs = int f/(mu - lambda - i eps) over the interval;
    rhs = top segment + end segments + 2 pi i sum of residues inside.
    """
    l1, l2 = interval
    F = lambda s: f_hat(s) / (mu(s) - lam - 1j * epsilon)
    grid = np.linspace(l1, l2, scan)
    vals = np.array([mu(s) for s in grid]).real - lam
    roots = []
    for k in range(scan - 1):
        if vals[k] == 0 or vals[k] * vals[k + 1] < 0:
            lo, hi = grid[k], grid[k + 1]
            r = lo - vals[k] * (hi - lo) / (vals[k + 1] - vals[k])
            for _ in range(60):
                step = (mu(r).real - lam) / dmu(r).real
                r -= step
                if abs(step) < 1e-16:
                    break
            roots.append(float(r))
    poles = []
    for r in roots:
        z = complex(r) + 1j * epsilon / dmu(r)
        for _ in range(60):
            step = (mu(z) - lam - 1j * epsilon) / dmu(z)
            z -= step
            if abs(step) < 1e-16:
                break
        poles.append(z)
    inside = [z for z in poles if 0 < z.imag < sigma and l1 < z.real < l2]
    edge = min([abs(z.imag - sigma) for z in poles] + [abs(z.real - l1) for z in poles]
               + [abs(z.real - l2) for z in poles] + [1.0])
    peaks = [z.real for z in poles]
    lhs = _cquad(F, l1, l2, peaks)
    if edge < 1e-6:
        return ResidueCheck(lhs, complex(math.nan, math.nan), math.nan, inside, True)
    top = _cquad(lambda t: F(t + 1j * sigma), l1, l2)
    left = _cquad(lambda t: F(l1 + 1j * t) * 1j, 0.0, sigma)
    right = _cquad(lambda t: F(l2 + 1j * t) * 1j, 0.0, sigma)
    res = sum(f_hat(z) / dmu(z) for z in inside)
    rhs = top + left - right + TWO_PI * 1j * res
    return ResidueCheck(lhs, rhs, abs(lhs - rhs), inside, edge < 1e-6)
