import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lapbloch.cell import cell_model
from lapbloch.errors import ContourConstructionError, DomainError
from lapbloch.fermi import RefinedPolyline, classify, complex_extension
from lapbloch.lap import (LapConfig, _coefficients, _field_values, build_contour, complex_extension_term,
                          damped_solve, evanescent_term, lap_solve, prepare, propagating_term,
                          propagating_term_points, residue_line_check, smooth_step, solution_csv)
from lapbloch.lattice import build_frame, translate_boundary
from lapbloch.medium import (SourceEvaluator, SourceSpec, cosine_medium, free_space, source_from_function)
from lapbloch.special import convolve_reference, greens_free_1d

K = 0.3
LAM = K * K
X1 = build_frame([1.0])


def bump(dim, p=6):
    return source_from_function(lambda y: np.prod(np.cos(y / 2) ** (2 * p), axis=-1), dim, p)


def zero_source(dim):
    return SourceSpec(dim, "fourier", {(0,) * dim: 0.0})


# ---------------------------------------------------------------------------
# residue identity on a single line
# ---------------------------------------------------------------------------

def test_residue_line_parabola():
    r = residue_line_check(lambda s: s * s, lambda s: 2 * s, lambda s: 1.0, LAM, 1e-3, 0.1)
    assert r.diff <= 1e-10
    assert not r.inconclusive
    # only the root with mu' > 0 moves into the upper half plane
    assert len(r.poles) == 1
    assert r.poles[0] == pytest.approx(cmath.sqrt(LAM + 1e-3j), abs=1e-14)


def test_residue_line_no_roots():
    r = residue_line_check(lambda s: s * s, lambda s: 2 * s, lambda s: 1.0, -1.0, 1e-3, 0.1)
    assert r.poles == [] and r.diff <= 1e-10


def test_residue_line_two_roots_nonconstant_fhat():
    mu = lambda s: s * s + 0.2 * s ** 3
    dmu = lambda s: 2 * s + 0.6 * s * s
    fh = lambda s: cmath.exp(1j * s)
    r = residue_line_check(mu, dmu, fh, 0.05, 1e-3, 0.08)
    assert len(r.poles) == 1 and r.poles[0].real > 0
    assert r.diff <= 1e-10


def test_residue_line_flags_edge_pole():
    top = cmath.sqrt(LAM + 0.06j).imag
    r = residue_line_check(lambda s: s * s, lambda s: 2 * s, lambda s: 1.0, LAM, 0.06, top)
    assert r.inconclusive and math.isnan(r.diff)


# ---------------------------------------------------------------------------
# contour
# ---------------------------------------------------------------------------

def test_smooth_step_shape():
    u = np.linspace(-0.5, 1.5, 201)
    v, dv = smooth_step(u)
    assert np.all(v[u <= 0] == 0) and np.all(v[u >= 1] == 1)
    assert np.all(np.diff(v) >= 0)
    assert np.allclose(np.gradient(v, u)[20:180], dv[20:180], atol=2e-2)


def test_contour_1d_constant():
    spec = build_contour(None, X1, 0.05, 0.05, 0.1, 1, 512, free_space(1), LAM, 8)
    assert spec.retries == 0
    # relative margin: min over s of |(s + i sigma)^2 - lambda| over the largest diagonal entry
    s = -0.5 + (np.arange(512) + 0.5) / 512 + 0.05j
    S = (s[:, None] + np.arange(-8, 9)) ** 2
    expect = np.min(np.abs(S - LAM).min(axis=1) / np.abs(S).max(axis=1))
    assert spec.margin == pytest.approx(expect, rel=1e-12)
    sig, dsig = spec.sigma(np.array([[0.1], [0.4]]))
    assert np.allclose(sig, 0.05) and np.allclose(dsig, 0.0)


@pytest.fixture(scope="module")
def free2_prep():
    cfg = LapConfig(sigma1=0.05, sigma2=0.05, halo=0.1, N=32, J_max=4, nodes_per_slice=128, slices=16)
    return prepare(free_space(2), LAM, build_frame([1.0, 0.0]), cfg)


def test_contour_2d_free(free2_prep):
    c = free2_prep.contour
    assert c.retries == 0 and c.sigma2 == 0.05
    assert c.d_points.shape == (2, 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_sigma_profile(a1, a2):
    """sigma2 inside the halo, sigma1 beyond twice the halo, periodic across faces."""
    fr = build_frame([1.0, 0.0])
    lvl = classify([], fr, LAM)
    spec = build_contour(lvl, fr, 0.05, 0.01, 0.1, 8, 64)
    spec.d_points = np.array([[0.0, 0.3], [0.0, -0.3]])
    a = np.array([a1, a2])
    d = min(np.linalg.norm((a - p) - np.round(a - p)) for p in spec.d_points)
    sig = spec.sigma(a[None])[0][0]
    if d <= 0.1:
        assert sig == pytest.approx(0.01)
    elif d >= 0.2:
        assert sig == pytest.approx(0.05)
    else:
        assert 0.01 <= sig <= 0.05
    assert spec.sigma((a + np.array([1.0, -1.0]))[None])[0][0] == pytest.approx(sig, abs=1e-14)


def test_contour_rejects_bad_parameters():
    with pytest.raises(DomainError):
        build_contour(None, X1, 0.0, 0.05, 0.1, 1, 64)
    with pytest.raises(DomainError):
        build_contour(None, build_frame([1.0, 0.0]), 0.05, 0.05, 0.3, 8, 64)


def test_contour_retries_exhausted(monkeypatch):
    import lapbloch.lap as lap

    monkeypatch.setattr(lap, "POLE_FREE_MARGIN", 10.0)
    with pytest.raises(ContourConstructionError) as info:
        build_contour(None, X1, 0.05, 0.05, 0.1, 1, 64, free_space(1), LAM, 4, max_retries=2)
    assert info.value.margin < 10.0 and info.value.alpha is not None


# ---------------------------------------------------------------------------
# Bloch field
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("medium", [free_space(2), cosine_medium(2, 0.5)], ids=["free", "cosine"])
@pytest.mark.parametrize("alpha", [[0.5, 0.2], [0.5, -0.5], [-0.13, 0.5]])
def test_face_periodicity(medium, alpha):
    """w(alpha, x) = w(T alpha, x) on the boundary of B."""
    J = 12
    model = cell_model(medium, J)
    src = SourceEvaluator(bump(2, 10), J)
    a = np.array([alpha])
    b = translate_boundary(alpha)[None]
    x = np.array([[2.0, 0.5], [-1.0, 3.0]])
    wa = _field_values(model, _coefficients(model, src, a, LAM + 0.01j), a, x)
    wb = _field_values(model, _coefficients(model, src, b, LAM + 0.01j), b, x)
    assert np.max(np.abs(wa - wb)) <= 1e-10


# ---------------------------------------------------------------------------
# terms
# ---------------------------------------------------------------------------

def test_greens_1d_terms():
    cfg = LapConfig(sigma1=2.5, sigma2=2.5, J_max=32, nodes_per_slice=512)
    res = lap_solve(free_space(1), SourceSpec(1), LAM, X1, [[5.0]], cfg)[0]
    assert res.total == pytest.approx(1j * cmath.exp(1.5j) / 0.6, abs=1e-6)
    assert abs(res.evanescent) <= 1e-8
    assert res.complex_ext == 0


def test_propagating_1d_closed_form():
    prep = prepare(free_space(1), LAM, X1, LapConfig(J_max=8, N=32))
    for x in (0.5, 3.0, 7.0):
        val = propagating_term(prep.level, free_space(1), SourceSpec(1), [[x]], 8)[0]
        assert val == pytest.approx(greens_free_1d(K, x), abs=1e-12)


def test_degenerate_exclusion_is_first_order():
    """Dropping surface points within r of the tangency points changes the sum by O(r)."""
    m = free_space(2)
    n = 4000
    th = 2 * math.pi * (np.arange(n) + 0.25) / n
    P = K * np.stack([np.cos(th), np.sin(th)], axis=1)
    ref = RefinedPolyline(1, P, 2 * P, np.full(n, LAM), np.zeros(n, dtype=bool), True)
    lvl = classify([ref], build_frame([1.0, 0.0]), LAM, m, 2)
    x = [[2.0, 0.0]]
    full = propagating_term_points(lvl, m, SourceSpec(2), x, 2)[0]
    radii = (0.02, 0.01, 0.005)
    d = [abs(propagating_term_points(lvl, m, SourceSpec(2), x, 2, r)[0] - full) for r in radii]
    slopes = [math.log(d[i] / d[i + 1]) / math.log(2) for i in range(2)]
    assert all(0.8 <= s <= 1.2 for s in slopes)


def test_complex_extension_field_decay(free2_prep):
    """|phi(alpha_c, x)| = exp(-Im(s) r) / (2 pi) on the free-space branch."""
    br = free2_prep.branches[0]
    model = br.model
    for r in (1.0, 3.0):
        x = np.array([[r, 0.0]])
        for k in range(len(br.alphas)):
            phi = _field_values(model, br.right[k][None], br.alphas[k][None], x)[0, 0]
            assert abs(phi) == pytest.approx(math.exp(-br.s_values[k].imag * r) / (2 * math.pi), rel=1e-12)


def test_complex_extension_window_vanishes(free2_prep):
    m = free_space(2)
    fr = free2_prep.contour.frame
    d = free2_prep.level.d_points[0]
    vals = []
    for w in (1e-2, 1e-4, 1e-6):
        br = complex_extension(m, d, fr, 1, gamma_window=(0.0, w), J_max=4)
        vals.append(abs(complex_extension_term([br], m, SourceSpec(2), [[2.0, 0.0]], 4)[0]))
    assert vals[0] > vals[1] > vals[2]
    # the integrand behaves like 1/sqrt(gamma) near the anchor
    assert vals[2] / vals[0] == pytest.approx(1e-2, rel=0.2)


def test_complex_extension_empty():
    assert np.all(complex_extension_term([], free_space(1), SourceSpec(1), [[1.0], [2.0]], 4) == 0)


@pytest.mark.parametrize("dim", [1, 2])
def test_zero_source(dim):
    m = free_space(dim)
    x = [[3.0] + [0.0] * (dim - 1)]
    frame = build_frame([1.0] + [0.0] * (dim - 1))
    cfg = LapConfig(sigma1=0.05, sigma2=0.05, halo=0.1, N=16, J_max=3, slices=8, nodes_per_slice=64)
    r = lap_solve(m, zero_source(dim), LAM, frame, x, cfg)[0]
    assert r.total == 0
    assert damped_solve(m, zero_source(dim), LAM, 0.5, x, J_max=3)[0] == 0


def test_assembly_identity():
    cfg = LapConfig(sigma1=0.5, sigma2=0.5, J_max=16, nodes_per_slice=256)
    for r in lap_solve(free_space(1), bump(1), LAM, X1, [[2.0], [4.5]], cfg):
        assert r.total == r.evanescent + r.propagating + r.complex_ext


def test_below_spectrum_real_cell():
    """lambda = -1: no band meets lambda, the cell integral is taken over real B."""
    src = bump(1, 4)
    cfg = LapConfig(J_max=16, nodes_per_slice=256)
    res = lap_solve(free_space(1), src, -1.0, X1, [[4.0], [5.0]], cfg)
    assert res[0].diagnostics["sigma2_used"] == 0.0
    for r in res:
        ref = convolve_reference(lambda d: np.exp(-np.abs(d[..., 0])) / 2, src.evaluate, r.x, ([-np.pi], [np.pi]))
        assert r.total == pytest.approx(ref, abs=1e-10)
        assert r.propagating == 0


def test_evaluation_point_checks():
    cfg = LapConfig(J_max=8, nodes_per_slice=128)
    with pytest.raises(DomainError):
        lap_solve(free_space(1), SourceSpec(1), LAM, X1, [[-2.0]], cfg)
    with pytest.raises(DomainError):
        lap_solve(free_space(1), SourceSpec(1), LAM, X1, [[1.0, 2.0]], cfg)
    with pytest.raises(DomainError):
        lap_solve(free_space(2), SourceSpec(2), LAM, None, [[0.0, 0.0]], cfg)


def test_solution_csv_header():
    cfg = LapConfig(sigma1=0.5, sigma2=0.5, J_max=8, nodes_per_slice=128)
    text = solution_csv(lap_solve(free_space(1), SourceSpec(1), LAM, X1, [[2.0]], cfg))
    lines = text.split("\n")
    assert lines[0] == "x1,re_total,im_total,re_evan,im_evan,re_prop,im_prop,re_cext,im_cext"
    assert text.endswith("\n") and len(lines) == 3


# ---------------------------------------------------------------------------
# damped problem
# ---------------------------------------------------------------------------

def test_damped_large_epsilon():
    """epsilon = 1 against adaptive quadrature of the damped Green's function."""
    lam, eps = LAM, 1.0
    kappa = cmath.sqrt(lam + 1j * eps)
    src = bump(1, 6)
    f = lambda y: math.cos(y / 2) ** 12
    for x in (0.0, 2.0, 5.0):
        g = lambda y: 1j * cmath.exp(1j * kappa * abs(x - y)) / (2 * kappa) * f(y)
        pts = [x] if -math.pi < x < math.pi else None
        re = integrate.quad(lambda y: g(y).real, -math.pi, math.pi, points=pts, epsabs=1e-13, limit=400)[0]
        im = integrate.quad(lambda y: g(y).imag, -math.pi, math.pi, points=pts, epsabs=1e-13, limit=400)[0]
        val = damped_solve(free_space(1), src, lam, eps, [[x]], N_alpha=64, J_max=24)[0]
        assert val == pytest.approx(complex(re, im), abs=1e-8)


def test_damped_halving_1d():
    u = lap_solve(free_space(1), SourceSpec(1), LAM, X1, [[5.0]],
                  LapConfig(sigma1=2.5, sigma2=2.5, J_max=32, nodes_per_slice=512))[0].total
    errs = [abs(damped_solve(free_space(1), SourceSpec(1), LAM, e, [[5.0]], J_max=32)[0] - u)
            for e in (0.1, 0.05)]
    assert errs[1] < errs[0]


def test_damped_rejects_nonpositive():
    with pytest.raises(DomainError):
        damped_solve(free_space(1), SourceSpec(1), LAM, 0.0, [[1.0]])


def test_evanescent_1d_vanishes():
    """No poles lie above the real line, so only truncation leaves a trace, damped by exp(-sigma x)."""
    vals = [abs(evanescent_term(free_space(1), SourceSpec(1), build_contour(None, X1, s, s, 0.1, 1, 512),
                                LAM, [[5.0]], 32)[0]) for s in (0.5, 2.5)]
    assert vals[1] <= 1e-8
    assert vals[1] < vals[0]
