"""Level sets mu_j(alpha) = lambda: extraction, refinement, classification, complex branches."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .bands import BandGrid, _fmt
from .cell import (CellModel, _quad_form_grad, band_hessian, bands_at, cell_model,
                   continue_eigenpair, hf_gradient)
from .errors import (BranchContinuationError, DomainError, HigherOrderDegeneracyError,
                     IrregularLevelError)
from .lattice import DirectionalFrame, wrap_to_B
from .medium import MediumSpec

RESIDUAL_TOL = 1e-10
DEGENERATE_RTOL = 1e-8
A0_MIN = 1e-6


@dataclass
class Polyline:
    band: int
    points: np.ndarray  # (K, dim), wrapped into B
    closed: bool


def _min_image(d):
    return d - np.round(d)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def extract_level_set(grid: BandGrid, lam: float, band: int) -> List[Polyline]:
    """Isocontours of mu_band - lambda on the periodic band grid.

    In 2D the curves are oriented with larger mu on the left.  In 1D every
    sign change between neighbouring nodes gives a one-point polyline.
    """
    F = grid.mu[..., band - 1] - lam
    N, ax = grid.N, grid.axis
    if grid.dim == 1:
        out = []
        for i in range(N):
            f0, f1 = F[i], F[(i + 1) % N]
            if (f0 >= 0) != (f1 >= 0):
                t = f0 / (f0 - f1)
                out.append(Polyline(band, wrap_to_B(np.array([[ax[i] + t / N]])), False))
        return out
    pos = F >= 0

    def edge_point(key):
        kind, i, j = key
        if kind == "h":
            f0, f1 = F[i, j], F[(i + 1) % N, j]
            t = f0 / (f0 - f1)
            return np.array([ax[i] + t / N, ax[j]])
        f0, f1 = F[i, j], F[i, (j + 1) % N]
        t = f0 / (f0 - f1)
        return np.array([ax[i], ax[j] + t / N])

    nxt = {}
    for i in range(N):
        ip = (i + 1) % N
        for j in range(N):
            jp = (j + 1) % N
            c = [pos[i, j], pos[ip, j], pos[ip, jp], pos[i, jp]]
            if all(c) or not any(c):
                continue
            # counter-clockwise edges of the cell
            edges = [("h", i, j), ("v", ip, j), ("h", i, jp), ("v", i, j)]
            starts = [k for k in range(4) if c[k] and not c[(k + 1) % 4]]
            ends = [k for k in range(4) if not c[k] and c[(k + 1) % 4]]
            if len(starts) == 1:
                nxt[edges[starts[0]]] = edges[ends[0]]
            else:
                centre = 0.25 * (F[i, j] + F[ip, j] + F[ip, jp] + F[i, jp])
                step = 1 if centre >= 0 else -1
                for k in starts:
                    nxt[edges[k]] = edges[(k + step) % 4]
    out = []
    seen = set()
    for start in list(nxt):
        if start in seen:
            continue
        chain = [start]
        seen.add(start)
        cur = nxt[start]
        closed = False
        while True:
            if cur == start:
                closed = True
                break
            if cur in seen or cur not in nxt:
                break
            chain.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        pts = wrap_to_B(np.array([edge_point(k) for k in chain]))
        out.append(Polyline(band, pts, closed))
    return out


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

@dataclass
class RefinedPolyline:
    band: int
    points: np.ndarray
    grads: np.ndarray
    mus: np.ndarray
    multiple: np.ndarray
    closed: bool
    dropped: List[int] = field(default_factory=list)


def refine_point(medium: MediumSpec, alpha, lam: float, band: int, J_max: int, max_iter: int = 20):
    """Newton along the gradient; returns (alpha, grad, mu, multiplicity, converged)."""
    a = np.asarray(alpha, dtype=float).copy()
    for it in range(max_iter + 1):
        b = bands_at(medium, a, band, J_max)[band - 1]
        if b.multiplicity > 1:
            return a, np.full(a.size, np.nan), b.mu, b.multiplicity, abs(b.mu - lam) <= RESIDUAL_TOL
        g = hf_gradient(medium, a, b, J_max)
        r = b.mu - lam
        if abs(r) <= 1e-14 * max(1.0, abs(lam)):
            return a, g, b.mu, 1, True
        gn = float(g @ g)
        if gn == 0.0 or it == max_iter:
            break
        step = r * g / gn
        a = wrap_to_B(a - step)
        if np.linalg.norm(step) < 1e-16:
            break
    return a, g, b.mu, 1, abs(b.mu - lam) <= RESIDUAL_TOL


def refine_points(medium: MediumSpec, polyline: Polyline, lam: float, band: int,
                  J_max: int) -> RefinedPolyline:
    pts, grads, mus, mult, dropped = [], [], [], [], []
    for k, p in enumerate(polyline.points):
        a, g, mu, m, ok = refine_point(medium, p, lam, band, J_max)
        if not ok:
            dropped.append(k)
            continue
        pts.append(a)
        grads.append(g)
        mus.append(mu)
        mult.append(m > 1)
    dim = medium.dim
    return RefinedPolyline(band, np.array(pts).reshape(-1, dim), np.array(grads).reshape(-1, dim),
                           np.array(mus), np.array(mult, dtype=bool), polyline.closed, dropped)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class DPoint:
    band: int
    alpha: np.ndarray
    grad: np.ndarray
    a0: float
    component: int


@dataclass
class PlusRun:
    component: int
    indices: np.ndarray  # indices of plus points along the component
    start: Optional[int]  # index into LevelSetData.d_points (None for a closed run)
    end: Optional[int]


@dataclass
class Component:
    band: int
    points: np.ndarray
    grads: np.ndarray
    tags: List[str]
    weights: np.ndarray
    closed: bool


@dataclass
class LevelSetData:
    lam: float
    frame: DirectionalFrame
    components: List[Component]
    d_points: List[DPoint]
    runs: List[PlusRun]

    def plus_points(self):
        out = []
        for c in self.components:
            for k, t in enumerate(c.tags):
                if t == "plus":
                    out.append((c.band, c.points[k], c.grads[k], c.weights[k]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = self.frame.dim
        w.writerow(["band", "segment", "point"] + [f"alpha{k + 1}" for k in range(dim)]
                   + [f"grad{k + 1}" for k in range(dim)] + ["grad_dot_n", "tag"])
        for ci, c in enumerate(self.components):
            for k in range(c.points.shape[0]):
                w.writerow([c.band, ci, k] + [_fmt(v) for v in c.points[k]] + [_fmt(v) for v in c.grads[k]]
                           + [_fmt(c.grads[k] @ self.frame.n_hat), c.tags[k]])
        return buf.getvalue()


def _tag(g, n_hat, rtol=DEGENERATE_RTOL):
    gn = float(g @ n_hat)
    if abs(gn) <= rtol * float(np.linalg.norm(g)):
        return "degenerate"
    return "plus" if gn > 0 else "minus"


def _arclength_weights(points, tags, closed):
    K = points.shape[0]
    w = np.zeros(K)
    if K < 2:
        return np.where(np.array(tags) == "plus", 1.0, 0.0) if K else w
    for k in range(K if closed else K - 1):
        k2 = (k + 1) % K
        if tags[k] == "plus" and tags[k2] == "plus":
            d = float(np.linalg.norm(_min_image(points[k2] - points[k])))
            w[k] += 0.5 * d
            w[k2] += 0.5 * d
    return w


def locate_degenerate(medium: MediumSpec, frame: DirectionalFrame, lam: float, band: int,
                      guess, J_max: int, max_iter: int = 30) -> DPoint:
    """Newton on (mu - lambda, dmu/ds) = 0 with a finite-difference Hessian."""
    n = frame.n_hat
    a = np.asarray(guess, dtype=float).copy()
    Hs = band_hessian(medium, a, band, J_max)
    for it in range(max_iter):
        b = bands_at(medium, a, band, J_max)[band - 1]
        g = hf_gradient(medium, a, b, J_max)
        F = np.array([b.mu - lam, g @ n])
        if abs(F[0]) <= 1e-13 * max(1.0, abs(lam)) and abs(F[1]) <= 1e-11 * np.linalg.norm(g):
            break
        Jm = np.vstack([g, Hs @ n])
        step = np.linalg.solve(Jm, F)
        a = wrap_to_B(a - step)
        if it % 3 == 2:
            Hs = band_hessian(medium, a, band, J_max)
    b = bands_at(medium, a, band, J_max)[band - 1]
    g = hf_gradient(medium, a, b, J_max)
    Hs = band_hessian(medium, a, band, J_max)
    a0 = 0.5 * float(n @ Hs @ n)
    return DPoint(band, a, g, a0, -1)


def classify(refined: Sequence[RefinedPolyline], frame: DirectionalFrame, lam: float,
             medium: Optional[MediumSpec] = None, J_max: Optional[int] = None) -> LevelSetData:
    """Tag points plus/minus/degenerate along n_hat; locate D points between runs (2D)."""
    comps, dpts, runs = [], [], []
    for ci, r in enumerate(refined):
        tags = [_tag(g, frame.n_hat) for g in r.grads]
        if frame.dim == 1 and "degenerate" in tags:
            raise IrregularLevelError("dmu/ds vanishes on the level set in one dimension")
        comps.append(Component(r.band, r.points, r.grads, tags, _arclength_weights(r.points, tags, r.closed),
                               r.closed))
    if frame.dim == 1:
        for ci, c in enumerate(comps):
            if c.tags and c.tags[0] == "plus":
                runs.append(PlusRun(ci, np.array([0]), None, None))
        return LevelSetData(lam, frame, comps, dpts, runs)
    for ci, c in enumerate(comps):
        K = len(c.tags)
        plus = np.array([t == "plus" for t in c.tags])
        if K == 0 or not plus.any():
            continue
        if plus.all() and c.closed:
            runs.append(PlusRun(ci, np.arange(K), None, None))
            continue
        if not c.closed:
            raise DomainError("open level-set polyline on the torus")
        # rotate so index 0 is not plus
        first = int(np.flatnonzero(~plus)[0])
        order = np.roll(np.arange(K), -first)
        k = 0
        while k < K:
            if not plus[order[k]]:
                k += 1
                continue
            j = k
            while j < K and plus[order[j]]:
                j += 1
            idx = order[k:j]
            prev_pt = c.points[order[k - 1]]
            next_pt = c.points[order[j % K]]
            ends = []
            if medium is None:
                raise DomainError("medium and J_max are required to locate degenerate points in 2D")
            for a_in, a_out in ((c.points[idx[0]], prev_pt), (c.points[idx[-1]], next_pt)):
                guess = wrap_to_B(a_in + 0.5 * _min_image(a_out - a_in))
                d = locate_degenerate(medium, frame, lam, c.band, guess, J_max)
                d.component = ci
                ends.append(_register(dpts, d))
            runs.append(PlusRun(ci, idx, ends[0], ends[1]))
            k = j
    return LevelSetData(lam, frame, comps, dpts, runs)


def _register(dpts: List[DPoint], d: DPoint) -> int:
    for i, e in enumerate(dpts):
        if e.band == d.band and np.linalg.norm(_min_image(e.alpha - d.alpha)) < 1e-9:
            return i
    dpts.append(d)
    return len(dpts) - 1


def level_set(grid: BandGrid, lam: float, frame: DirectionalFrame, bands: Sequence[int]) -> LevelSetData:
    """extract + refine + classify for the listed bands."""
    refined = []
    for b in bands:
        for poly in extract_level_set(grid, lam, b):
            r = refine_points(grid.medium, poly, lam, b, grid.J_max)
            if r.points.shape[0]:
                refined.append(r)
    return classify(refined, frame, lam, grid.medium, grid.J_max)


# ---------------------------------------------------------------------------
# analytic continuation of a band
# ---------------------------------------------------------------------------

class AnalyticBand:
    """A band continued analytically from a real seed point.

    Constant media: the band near the seed is the diagonal symbol of one
    plane-wave mode, evaluated in closed form.  Otherwise eigenpairs are
    continued by inverse iteration, each evaluation seeded by the previous
    one, so points should be visited along a path.
    """

    def __init__(self, medium: MediumSpec, J_max: int, alpha0, band: int):
        self.model: CellModel = cell_model(medium, J_max)
        self.alpha0 = np.asarray(alpha0, dtype=float)
        b = bands_at(medium, self.alpha0, band, J_max)[band - 1]
        self.band = band
        self._seed_vec = b.coeffs
        self._seed_mu = complex(b.mu)
        self.mode = int(np.argmax(np.abs(b.coeffs))) if self.model.diagonal else None

    def at(self, alpha_c):
        """(mu, grad, right, left) at complex alpha (unwrapped relative to the seed)."""
        alpha_c = np.asarray(alpha_c, dtype=complex)
        m = self.model
        if m.diagonal:
            k = self.mode
            mu = complex(m.symbol(alpha_c[None])[0, k])
            grad = m.symbol_grad(alpha_c[None])[0, k]
            e = np.zeros(m.size, dtype=complex)
            e[k] = 1.0
            return mu, grad, e, e
        ce = continue_eigenpair(m, alpha_c, self._seed_vec, self._seed_mu)
        self._seed_vec, self._seed_mu = ce.right, ce.mu
        return ce.mu, ce.dmu(m), ce.right, ce.left


def complex_root(band: AnalyticBand, frame: DirectionalFrame, lam: float, gamma: float, s_guess: complex,
                 max_iter: int = 50) -> complex:
    """Root s of mu(gamma t + s n) = lambda by complex Newton."""
    s = complex(s_guess)
    for _ in range(max_iter):
        a = frame.point(gamma, s).reshape(frame.dim)
        mu, grad, _, _ = band.at(a)
        f = mu - lam
        df = complex(grad @ frame.n_hat)
        if df == 0:
            break
        step = f / df
        s -= step
        if abs(step) <= 1e-15 * max(1.0, abs(s)):
            break
    a = frame.point(gamma, s).reshape(frame.dim)
    mu, _, _, _ = band.at(a)
    if abs(mu - lam) > 1e-9 * max(1.0, abs(lam)):
        raise BranchContinuationError(f"complex root did not converge (|mu-lambda|={abs(mu - lam):.2e})")
    return s


# ---------------------------------------------------------------------------
# complex extension near D points
# ---------------------------------------------------------------------------

@dataclass
class ComplexBranch:
    anchor: np.ndarray
    band: int
    a0: float
    side: int  # +1 or -1: direction in gamma where real roots vanish
    gamma_anchor: float
    gamma_end: float
    gamma_samples: np.ndarray
    gamma_weights: np.ndarray  # quadrature weights in gamma
    s_values: np.ndarray
    weights: np.ndarray  # G_s
    surface_factor: np.ndarray  # sqrt(1 + |ds/dgamma|^2)
    sign_s: int
    csign: np.ndarray  # complex sign of dmu/ds, dmu_s / |dmu_s|
    dmu_s: np.ndarray
    alphas: np.ndarray  # complex quasi-momenta (unwrapped near the anchor)
    right: List[np.ndarray]
    left: List[np.ndarray]
    model: CellModel = None

    def to_rows(self):
        for g, s, G in zip(self.gamma_samples, self.s_values, self.weights):
            yield g, s, G, self.sign_s


def complex_extension(medium: MediumSpec, anchor: DPoint, frame: DirectionalFrame, band: int,
                      gamma_window=None, samples: int = 16, J_max: int = 16,
                      sigma: Optional[float] = None,
                      target: Optional[Callable[[complex, float], float]] = None) -> ComplexBranch:
    """Root s(gamma) with Im s > 0 on the side of the anchor where the real roots vanish.

    ``gamma_window`` may be ``(g0, g1)`` in frame coordinates.  Otherwise the
    window runs from the anchor until Im s reaches ``target(s, gamma)``
    (default ``0.5 * sigma``).
    """
    if frame.dim != 2:
        raise DomainError("complex extension applies to two-dimensional level sets")
    a0 = anchor.a0
    if abs(a0) < A0_MIN:
        raise HigherOrderDegeneracyError(f"|a0|={abs(a0):.2e} below {A0_MIN}; higher-order branch point")
    t = frame.tangents[0]
    gD, sD = frame.coords(anchor.alpha)
    gD, sD = float(gD), float(sD)
    b1 = float(anchor.grad @ t)
    if b1 == 0.0:
        raise HigherOrderDegeneracyError("gradient vanishes at the degenerate point")
    side = 1 if b1 * a0 > 0 else -1
    ab = AnalyticBand(medium, J_max, anchor.alpha, band)

    def model_root(dg):
        return sD + 1j * math.sqrt(abs(b1 * dg / a0))

    def root(dg, guess=None):
        return complex_root(ab, frame, anchor_lam, gD + side * dg, model_root(dg) if guess is None else guess)

    anchor_lam = float(bands_at(medium, anchor.alpha, band, J_max)[band - 1].mu)
    if gamma_window is not None:
        dg_end = abs(gamma_window[1] - gamma_window[0])
    else:
        if target is None:
            if sigma is None:
                raise DomainError("complex_extension needs gamma_window, sigma or target")
            target = lambda s, g: 0.5 * sigma
        dg_end = window_end(root, target, gD, side, a0, b1)
    # t^2 substitution removes the square-root endpoint behaviour
    tq, wq = np.polynomial.legendre.leggauss(samples)
    tq = 0.5 * (tq + 1.0)
    wq = 0.5 * wq
    dgs = dg_end * tq ** 2
    dgw = dg_end * 2.0 * tq * wq
    s_vals, Gs, fac, cs, dms, alphas, rights, lefts = [], [], [], [], [], [], [], []
    prev = None
    for dg in dgs:
        s = root(dg, prev)
        prev = s
        g = gD + side * dg
        a = frame.point(g, s).reshape(2)
        mu, grad, x, y = ab.at(a)
        dmu_s = complex(grad @ frame.n_hat)
        dmu_g = complex(grad @ t)
        ds_dg = -dmu_g / dmu_s
        sf = math.sqrt(1.0 + abs(ds_dg) ** 2)
        s_vals.append(s)
        Gs.append(abs(dmu_s) * sf)
        fac.append(sf)
        cs.append(dmu_s / abs(dmu_s))
        dms.append(dmu_s)
        alphas.append(a)
        rights.append(x)
        lefts.append(y)
    return ComplexBranch(anchor.alpha.copy(), band, a0, side, gD, gD + side * dg_end, gD + side * dgs, dgw,
                         np.array(s_vals), np.array(Gs), np.array(fac), 1, np.array(cs), np.array(dms),
                         np.array(alphas), rights, lefts, ab.model)


def window_end(root, target, gD, side, a0, b1, max_expand: int = 60) -> float:
    """Distance in gamma from the anchor to where Im s(gamma) meets target(s, gamma)."""
    def excess(dg, guess=None):
        s = root(dg, guess)
        return s.imag - target(s, gD + side * dg), s

    # quadratic-model first guess of the crossing
    tau = max(target(complex(0.0), gD), 1e-12)
    dg = max(tau * tau * abs(a0 / b1), 1e-12)
    lo, hi = 0.0, None
    prev = None
    for _ in range(max_expand):
        e, s = excess(dg, prev)
        if e >= 0:
            hi = dg
            break
        lo, prev = dg, s
        dg *= 1.5
    if hi is None:
        raise BranchContinuationError("complex branch never reaches the contour height")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        e, _ = excess(mid)
        if e >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def complex_csv(branches: Sequence[ComplexBranch]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["band", "anchor1", "anchor2", "gamma", "re_s", "im_s", "G", "sign"])
    for br in branches:
        for g, s, G, sg in br.to_rows():
            w.writerow([br.band, _fmt(br.anchor[0]), _fmt(br.anchor[1]), _fmt(g), _fmt(s.real), _fmt(s.imag),
                        _fmt(G), sg])
    return buf.getvalue()
