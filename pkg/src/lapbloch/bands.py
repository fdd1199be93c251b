"""Band sampling over B, slice relabelling by eigenvector overlap, regularity checks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cell import _quad_form_grad, bands_at, cell_model, hf_gradient
from .errors import CrossingAmbiguityError, DomainError
from .lattice import DirectionalFrame, clip_line
from .medium import MediumSpec

OVERLAP_MIN = 0.9
AMBIGUITY_GAP = 0.05
RANGE_MARGIN = 1e-6
DEGENERATE_DIRECTION_RTOL = 1e-8


def grid_axis(N: int) -> np.ndarray:
    """Nodes -1/2 + (i+1)/N, i = 0..N-1 (the last node sits on the face +1/2)."""
    return -0.5 + (np.arange(N) + 1.0) / N


@dataclass
class BandGrid:
    medium: MediumSpec
    J_max: int
    N: int
    axis: np.ndarray
    mu: np.ndarray  # (N,)*dim + (num_bands,)
    grad: np.ndarray  # (N,)*dim + (num_bands, dim); nan where not simple
    multiplicity: np.ndarray
    symmetry_defect: float

    @property
    def dim(self) -> int:
        return self.medium.dim

    @property
    def num_bands(self) -> int:
        return self.mu.shape[-1]

    def nodes(self) -> np.ndarray:
        grids = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    def band_range(self, band: int):
        v = self.mu[..., band - 1]
        return float(v.min()), float(v.max())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = [f"alpha{k + 1}" for k in range(self.dim)] + ["band", "mu"] + [f"dmu{k + 1}" for k in range(self.dim)]
        w.writerow(head)
        nodes = self.nodes().reshape(-1, self.dim)
        mu = self.mu.reshape(-1, self.num_bands)
        gr = self.grad.reshape(-1, self.num_bands, self.dim)
        for i, a in enumerate(nodes):
            for b in range(self.num_bands):
                w.writerow([_fmt(v) for v in a] + [b + 1, _fmt(mu[i, b])] + [_fmt(v) for v in gr[i, b]])
        return buf.getvalue()


def _fmt(v) -> str:
    v = float(v)
    return f"{v:.17g}"


def sample_grid(medium: MediumSpec, N: int, num_bands: int, J_max: int, executor=None) -> BandGrid:
    """Bands and Hellmann-Feynman gradients on the uniform N^dim grid of B."""
    if N < 8:
        raise DomainError("band grid needs N >= 8")
    dim = medium.dim
    axis = grid_axis(N)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    cell_model(medium, J_max)

    def work(a):
        bands = bands_at(medium, a, num_bands, J_max)
        mu = np.array([b.mu for b in bands])
        mult = np.array([b.multiplicity for b in bands])
        g = np.full((num_bands, dim), np.nan)
        for k, b in enumerate(bands):
            if b.simple:
                g[k] = hf_gradient(medium, a, b, J_max)
        return mu, g, mult

    results = list(executor.map(work, nodes)) if executor is not None else [work(a) for a in nodes]
    mu = np.array([r[0] for r in results]).reshape((N,) * dim + (num_bands,))
    grad = np.array([r[1] for r in results]).reshape((N,) * dim + (num_bands, dim))
    mult = np.array([r[2] for r in results]).reshape((N,) * dim + (num_bands,))
    # alpha_i -> -alpha_i maps index i to N-2-i (mod N)
    flip = (N - 2 - np.arange(N)) % N
    mirrored = mu
    for d in range(dim):
        mirrored = np.take(mirrored, flip, axis=d)
    defect = float(np.max(np.abs(mirrored - mu)))
    return BandGrid(medium, J_max, N, axis, mu, grad, mult, defect)


# ---------------------------------------------------------------------------
# slice relabelling
# ---------------------------------------------------------------------------

@dataclass
class Branch:
    mu: np.ndarray
    coeffs: np.ndarray  # (n_nodes, N_modes)
    dmu_ds: np.ndarray


@dataclass
class SliceBranches:
    gamma: Optional[float]
    s_nodes: np.ndarray
    branches: List[Branch]
    crossings: List[float] = field(default_factory=list)


def relabel_slice(medium: MediumSpec, frame: DirectionalFrame, gamma, num_branches: int,
                  s_resolution: int, J_max: int, extra: int = 2) -> SliceBranches:
    """Follow analytic branches along a slice by greedy eigenvector-overlap matching."""
    seg = clip_line(frame, 0.0 if gamma is None else gamma)
    if seg is None:
        raise DomainError("slice does not meet B")
    model = cell_model(medium, J_max)
    s_nodes = np.array([0.5 * (seg.ell1 + seg.ell2)]) if s_resolution <= 1 else \
        np.linspace(seg.ell1, seg.ell2, s_resolution)
    g = 0.0 if gamma is None else gamma
    M = num_branches + extra
    mus, vecs, dmus = [], [], []
    for s in s_nodes:
        a = frame.point(g, s).reshape(medium.dim)
        bands = bands_at(medium, a, M, J_max)
        mus.append(np.array([b.mu for b in bands]))
        V = np.stack([b.coeffs for b in bands], axis=1)
        vecs.append(V)
        dmus.append(np.array([(_quad_form_grad(model, a, V[:, k]) @ frame.n_hat).real for k in range(V.shape[1])]))
    M = vecs[0].shape[1]
    labels = [np.arange(M)]  # labels[k][branch] = sorted index at node k
    crossings = []
    for k in range(1, len(s_nodes)):
        O = np.abs(vecs[k - 1][:, labels[-1]].conj().T @ vecs[k])  # rows: branches
        perm = np.full(M, -1)
        taken = set()
        # most confident branches first
        for b in np.argsort(-O.max(axis=1)):
            row = O[b].copy()
            row[list(taken)] = -1.0
            order = np.argsort(-row)
            best = order[0]
            if b < num_branches and len(order) > 1 and row[order[1]] > 0 and row[best] - row[order[1]] < AMBIGUITY_GAP:
                raise CrossingAmbiguityError("ambiguous eigenvector matching", float(s_nodes[k]))
            perm[b] = best
            taken.add(best)
        if not np.array_equal(perm, labels[-1]):
            crossings.append(float(s_nodes[k]))
        labels.append(perm)
    branches = []
    for b in range(num_branches):
        idx = [labels[k][b] for k in range(len(s_nodes))]
        branches.append(Branch(np.array([mus[k][i] for k, i in enumerate(idx)]),
                               np.array([vecs[k][:, i] for k, i in enumerate(idx)]),
                               np.array([dmus[k][i] for k, i in enumerate(idx)])))
    return SliceBranches(None if gamma is None else float(gamma), s_nodes, branches, crossings)


# ---------------------------------------------------------------------------
# regularity
# ---------------------------------------------------------------------------

@dataclass
class RegularityReport:
    lam: float
    bands: List[int]
    min_grad_norm: float
    degenerate_direction_points: int
    extremum_hits: List[int]
    multiple_points: int
    verdict: str

    @property
    def regular(self) -> bool:
        return self.verdict == "regular"


def bands_at_level(grid: BandGrid, lam: float, margin: float = RANGE_MARGIN) -> List[int]:
    """J(lambda): bands whose sampled range brackets lambda (with margin)."""
    out = []
    for b in range(1, grid.num_bands + 1):
        lo, hi = grid.band_range(b)
        if lo - margin <= lam <= hi + margin:
            out.append(b)
    return out


def band_extremum(grid: BandGrid, band: int, kind: str = "min", iters: int = 40) -> float:
    """Refined extreme value of a band by damped Newton from the best grid node."""
    from .cell import band_hessian

    vals = grid.mu[..., band - 1]
    flat = int(np.argmin(vals) if kind == "min" else np.argmax(vals))
    idx = np.unravel_index(flat, vals.shape)
    a = np.array([grid.axis[i] for i in idx], dtype=float)
    medium, J = grid.medium, grid.J_max
    best = float(vals[idx])
    for _ in range(iters):
        b = bands_at(medium, a, band, J)[band - 1]
        best = min(best, b.mu) if kind == "min" else max(best, b.mu)
        if not b.simple:
            break
        g = hf_gradient(medium, a, b, J)
        if np.linalg.norm(g) < 1e-12:
            break
        Hs = band_hessian(medium, a, band, J, h=1e-4)
        try:
            step = -np.linalg.solve(Hs, g)
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(step) > 0.5 / grid.N:
            step *= 0.5 / grid.N / np.linalg.norm(step)
        a = a + step
        if np.linalg.norm(step) < 1e-13:
            break
    return best


def check_regularity(grid: BandGrid, lam: float, frame: DirectionalFrame,
                     grad_threshold: float = 1e-6) -> RegularityReport:
    """Sampled test of the level-set assumptions at lambda."""
    from .fermi import extract_level_set, refine_points

    J = bands_at_level(grid, lam)
    if not J:
        return RegularityReport(lam, [], float("inf"), 0, [], 0, "regular")
    min_grad = float("inf")
    n_deg = 0
    n_mult = 0
    hits = []
    for b in J:
        for kind in ("min", "max"):
            ext = band_extremum(grid, b, kind)
            if abs(ext - lam) <= 1e-8 * max(1.0, abs(lam)):
                hits.append(b)
                min_grad = 0.0
        for poly in extract_level_set(grid, lam, b):
            ref = refine_points(grid.medium, poly, lam, b, grid.J_max)
            n_mult += int(np.sum(ref.multiple))
            if ref.points.shape[0]:
                norms = np.linalg.norm(ref.grads, axis=1)
                min_grad = min(min_grad, float(np.min(norms)))
                n_deg += int(np.sum(np.abs(ref.grads @ frame.n_hat) <= DEGENERATE_DIRECTION_RTOL * norms))
    irregular = min_grad < grad_threshold or n_mult > 0 or bool(hits)
    if grid.dim == 1 and n_deg:
        irregular = True
    return RegularityReport(lam, J, min_grad, n_deg, hits, n_mult, "irregular" if irregular else "regular")
