"""Self-contained numerical checks runnable from the command line.

Each check returns a :class:`CheckResult`; the defaults finish in seconds,
the two-dimensional solves take about a minute each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cell import bands_at, hf_gradient
from .lap import LapConfig, lap_solve, propagating_term, residue_line_check
from .lattice import build_frame
from .medium import (SourceSpec, cell_grid, cosine_medium, floquet_transform, free_space,
                     parseval_defect, uniform_alpha_grid)
from .special import bessel_j0, greens_free_1d, greens_free_2d, struve_h0


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


def check_greens_1d() -> CheckResult:
    k = 0.3
    cfg = LapConfig(sigma1=2.5, sigma2=2.5, J_max=32, nodes_per_slice=512)
    res = lap_solve(free_space(1), SourceSpec(1), k * k, build_frame([1.0]), [[4.0], [5.0], [8.0]], cfg)
    err = max(abs(r.total - greens_free_1d(k, r.x[0])) for r in res)
    return CheckResult("greens1d", err, 1e-6)


def check_sigma_1d() -> CheckResult:
    m, src = free_space(1), SourceSpec(1)
    vals = []
    for s1, s2 in ((0.03, 0.03), (0.05, 0.08)):
        cfg = LapConfig(sigma1=s1, sigma2=s2, J_max=128, nodes_per_slice=2048)
        vals.append(lap_solve(m, src, 0.09, build_frame([1.0]), [[5.0]], cfg)[0].total)
    return CheckResult("sigma1d", abs(vals[0] - vals[1]), 2e-6)


def check_residue() -> CheckResult:
    r = residue_line_check(lambda s: s * s, lambda s: 2 * s, lambda s: 1.0, 0.09, 1e-3, 0.1)
    return CheckResult("residue", r.diff, 1e-10)


def check_hf() -> CheckResult:
    rng = np.random.default_rng(7)
    m = cosine_medium(1, 2.0)
    worst, h = 0.0, 1e-5
    for a in rng.uniform(-0.45, 0.45, size=(8, 1)):
        b = bands_at(m, a, 2, 16)[1]
        g = hf_gradient(m, a, b, 16)[0]
        fd = (bands_at(m, a + h, 2, 16)[1].mu - bands_at(m, a - h, 2, 16)[1].mu) / (2 * h)
        worst = max(worst, abs(g - fd) / max(abs(g), 1e-12))
    return CheckResult("hf", worst, 1e-6)


def check_parseval() -> CheckResult:
    rng = np.random.default_rng(11)
    pts = cell_grid(1, 16)
    cells = {(m,): rng.normal(size=16) + 1j * rng.normal(size=16) for m in range(-2, 3)}
    field_ = floquet_transform(cells, uniform_alpha_grid(1, 5), pts)
    return CheckResult("parseval", parseval_defect(cells, field_), 1e-10)


def check_greens_2d() -> CheckResult:
    k = 0.3
    cfg = LapConfig(sigma1=0.05, sigma2=0.001, halo=0.05, J_max=24, N=64, nodes_per_slice=256, min_panel=1e-8)
    r = lap_solve(free_space(2), SourceSpec(2), k * k, None, [[2.0, 0.0]], cfg)[0]
    ref = greens_free_2d(k, 2.0)
    return CheckResult("greens2d", abs(r.evanescent + r.propagating - ref) / abs(ref), 1e-2)


def check_propagating_2d() -> CheckResult:
    from .lap import prepare

    k, r = 0.3, 2.0
    m = free_space(2)
    cfg = LapConfig(J_max=24, N=64)
    frame = build_frame([1.0, 0.0])
    prep = prepare(m, k * k, frame, cfg)
    val = propagating_term(prep.level, m, SourceSpec(2), [[r, 0.0]], cfg.J_max)[0] / (2j * math.pi)
    ref = (bessel_j0(k * r) + 1j * struve_h0(k * r)) / (8 * math.pi)
    return CheckResult("propagating2d", abs(val - ref), 1e-4)


CHECKS = {
    "greens1d": check_greens_1d,
    "sigma1d": check_sigma_1d,
    "residue": check_residue,
    "hf": check_hf,
    "parseval": check_parseval,
    "greens2d": check_greens_2d,
    "propagating2d": check_propagating_2d,
}

DEFAULT_CHECKS = ["greens1d", "sigma1d", "residue", "hf", "parseval"]
