import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lapbloch.errors import DomainError, InvalidDirectionError
from lapbloch.lattice import (build_frame, clip_line, face_of, orbit_family, translate_boundary,
                              wrap_complex, wrap_to_B)

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)


@pytest.mark.parametrize("n", [[1.0, 0.0], [0.0, -2.0], [3.0, 4.0], [1.0, 1.0]])
def test_frame_orthonormal(n):
    f = build_frame(n)
    t = f.tangents[0]
    assert np.isclose(np.linalg.norm(f.n_hat), 1.0)
    assert np.isclose(t @ f.n_hat, 0.0)
    # t is n rotated counter-clockwise
    assert np.isclose(f.n_hat[0] * t[1] - f.n_hat[1] * t[0], 1.0)


@pytest.mark.parametrize("bad", [[0.0, 0.0], [np.nan, 1.0], [1.0, 2.0, 3.0], [0.0]])
def test_frame_rejects(bad):
    with pytest.raises(InvalidDirectionError):
        build_frame(bad)


def test_invalid_direction_is_domain_error():
    assert issubclass(InvalidDirectionError, DomainError)


@given(finite, finite)
def test_coords_roundtrip(a1, a2):
    f = build_frame([0.6, 0.8])
    g, s = f.coords(np.array([a1, a2]))
    assert np.allclose(f.point(g, s), [a1, a2], atol=1e-12)


def test_clip_line_axis_and_diagonal():
    f = build_frame([1.0, 0.0])
    seg = clip_line(f, 0.2)
    assert (seg.ell1, seg.ell2) == pytest.approx((-0.5, 0.5))
    assert clip_line(f, 0.7) is None
    d = build_frame([1.0, 1.0])
    seg = clip_line(d, 0.0)
    assert seg.ell2 - seg.ell1 == pytest.approx(math.sqrt(2))


def test_clip_line_1d():
    seg = clip_line(build_frame([1.0]))
    assert (seg.ell1, seg.ell2) == (-0.5, 0.5)


@given(st.lists(finite, min_size=2, max_size=2))
def test_wrap_lands_in_B(a):
    w = wrap_to_B(np.array(a))
    assert np.all(w > -0.5) and np.all(w <= 0.5)
    assert np.allclose(np.round(np.array(a) - w), np.array(a) - w, atol=1e-9)


def test_wrap_half_open():
    assert wrap_to_B(np.array([-0.5]))[0] == 0.5
    assert wrap_to_B(np.array([0.5]))[0] == 0.5


def test_wrap_complex_keeps_imaginary():
    z = wrap_complex(np.array([1.3 + 0.2j, -0.7 - 0.1j]))
    assert np.allclose(z, [0.3 + 0.2j, 0.3 - 0.1j])


def test_translate_boundary():
    assert np.allclose(translate_boundary([0.5, 0.1]), [-0.5, 0.1])
    assert np.allclose(translate_boundary([0.5, -0.5]), [-0.5, 0.5])
    assert face_of([0.2, -0.5]) == [(1, -1)]
    with pytest.raises(DomainError):
        translate_boundary([0.1, 0.2])


@pytest.mark.parametrize("n,L", [([1, 0], 1.0), ([1, 1], math.sqrt(2)), ([2, 1], math.sqrt(5)),
                                 ([-3, 1], math.sqrt(10))])
def test_orbit_lengths(n, L):
    fam = orbit_family(build_frame(n))
    assert fam.length == pytest.approx(L)
    assert fam.period == pytest.approx(1 / L)
    v = np.array(fam.shift, dtype=float)
    assert v @ fam.frame.tangents[0] == pytest.approx(fam.period)


def test_orbit_irrational_direction():
    with pytest.raises(InvalidDirectionError):
        orbit_family(build_frame([1.0, math.sqrt(2)]))


@settings(max_examples=50)
@given(st.sampled_from([[1, 0], [1, 1], [2, 1], [1, -3]]),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_orbit_covers_torus(n, a1, a2):
    """Every torus point maps to an orbit coordinate that reproduces it modulo the lattice."""
    fam = orbit_family(build_frame(n))
    a = np.array([a1, a2])
    g, s = fam.to_orbit(a)
    assert -fam.period / 2 - 1e-12 <= g < fam.period / 2 + 1e-12
    assert -fam.length / 2 - 1e-12 <= s < fam.length / 2 + 1e-12
    back = fam.point(g, s)
    d = back - a
    assert np.allclose(d, np.round(d), atol=1e-9)
