import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lapbloch.errors import ConfigError, DomainError
from lapbloch.medium import (MediumSpec, SourceEvaluator, SourceSpec, cell_grid, cosine_medium,
                             floquet_transform, free_space, index_set, inverse_floquet, load_medium,
                             load_source, medium_from_dict, parseval_defect, source_fourier_batch,
                             source_fourier_vector, source_from_dict, source_from_function,
                             uniform_alpha_grid)


def test_free_space_is_diagonal():
    m = free_space(2)
    assert m.is_diagonal
    assert m.support_radius == 0
    assert m.min_ellipticity() == pytest.approx(1.0)


def test_cosine_medium_coefficients():
    m = cosine_medium(2, 0.5)
    assert not m.is_diagonal
    assert m.V_coeffs[(1, 0)] == 0.25
    assert m.potential_lower_bound() == pytest.approx(-1.0, abs=1e-2)


@pytest.mark.parametrize("A,V", [
    ({(0,): [[1.0]], (1,): [[0.2]]}, {}),             # A(1) without its conjugate partner
    ({(0, 0): [[1.0, 0.3], [0.0, 1.0]]}, {}),          # not symmetric
    ({(0,): [[1.0]]}, {(1,): 1.0, (-1,): 2.0}),        # V not real
    ({(0,): [[1.0]], (1,): [[0.6]], (-1,): [[0.6]]}, {}),  # ellipticity fails below c0
])
def test_medium_validation(A, V):
    dim = len(next(iter(A)))
    with pytest.raises(ConfigError):
        MediumSpec(dim, A, V, 0.5)


def test_medium_dimension_mismatch():
    with pytest.raises(ConfigError):
        MediumSpec(1, {(0, 0): [[1.0]]}, {}, 1.0)


def test_index_set_order():
    idx = index_set(2, 1)
    assert idx.shape == (9, 2)
    assert idx[0].tolist() == [-1, -1] and idx[-1].tolist() == [1, 1]
    assert idx[4].tolist() == [0, 0]


def test_delta_source_vector():
    g = source_fourier_vector(SourceSpec(2), np.array([0.1, 0.2]), 3)
    assert g.shape == (49,)
    assert np.allclose(g, 1 / (2 * math.pi))


def test_single_mode_table_at_zero():
    src = SourceSpec(1, "fourier", {(0,): 1.0})
    g = source_fourier_vector(src, np.array([0.0]), 4)
    expect = np.zeros(9)
    expect[4] = 1.0
    assert np.allclose(g, expect)


def test_table_source_shift_relation():
    """g_j(alpha + e) = g_{j+e}(alpha): the source vector is a shifted copy across cells."""
    src = SourceSpec(2, "fourier", {(0, 0): 1.0, (1, -1): 0.3 + 0.1j, (-1, 1): 0.3 - 0.1j})
    a = np.array([0.13 + 0.02j, -0.21])
    g0 = source_fourier_vector(src, a, 5).reshape(11, 11)
    g1 = source_fourier_vector(src, a + np.array([1.0, 0.0]), 5).reshape(11, 11)
    assert np.allclose(g1[:-1, :], g0[1:, :], atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, 0.2), st.floats(0, 0.2))
def test_evaluator_matches_batch(a1, a2, b1, b2):
    src = source_from_function(lambda y: np.prod(np.cos(y / 2) ** 8, axis=-1) * (1 + 0.2 * np.sin(y[..., 0])), 2, 5)
    a = np.array([[a1 + 1j * b1, a2 + 1j * b2]])
    assert np.allclose(SourceEvaluator(src, 7)(a), source_fourier_batch(src, a, 7), atol=1e-13)


def test_source_from_function_exact_for_trig_polynomials():
    f = lambda y: 1.0 + np.cos(y[..., 0]) + 0.5 * np.sin(2 * y[..., 0])
    src = source_from_function(f, 1, 3)
    y = np.linspace(-3, 3, 7)[:, None]
    assert np.allclose(src.evaluate(y), f(y), atol=1e-13)
    assert src.evaluate(np.array([[4.0]]))[0] == 0.0


def test_delta_has_no_pointwise_values():
    with pytest.raises(DomainError):
        SourceSpec(1).evaluate(np.zeros((1, 1)))


def test_json_roundtrip(tmp_path):
    med = {"dimension": 1, "A": [{"j": [0], "matrix": [[1.0]]}], "V": [{"j": [1], "re": 1.0}, {"j": [-1], "re": 1.0}]}
    p = tmp_path / "m.json"
    p.write_text(json.dumps(med))
    m = load_medium(p)
    assert m.V_coeffs[(1,)] == 1.0
    s = tmp_path / "s.json"
    s.write_text(json.dumps({"type": "fourier", "coeffs": [{"j": [0], "re": 2.0}]}))
    assert load_source(s, 1).table[(0,)] == 2.0
    assert source_from_dict({"type": "delta"}, 2).kind == "delta"


@pytest.mark.parametrize("bad", [{"dimension": 1}, {"A": []}, {"dimension": 1, "A": [{"j": [0]}]}])
def test_medium_from_dict_errors(bad):
    with pytest.raises(ConfigError):
        medium_from_dict(bad)


def test_unknown_source_type():
    with pytest.raises(ConfigError):
        source_from_dict({"type": "gaussian"}, 1)


# ---------------------------------------------------------------------------
# discrete Floquet-Bloch transform
# ---------------------------------------------------------------------------

def _random_cells(rng, dim, span, M):
    pts = cell_grid(dim, M)
    offs = range(-(span // 2), span - span // 2)
    keys = [(m,) for m in offs] if dim == 1 else [(a, b) for a in offs for b in offs]
    return pts, {k: rng.normal(size=pts.shape[0]) + 1j * rng.normal(size=pts.shape[0]) for k in keys}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.integers(1, 4))
def test_parseval(seed, dim, span):
    rng = np.random.default_rng(seed)
    pts, cells = _random_cells(rng, dim, span, 6)
    field_ = floquet_transform(cells, uniform_alpha_grid(dim, span), pts)
    assert parseval_defect(cells, field_) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_inverse_recovers_cells(seed):
    rng = np.random.default_rng(seed)
    pts, cells = _random_cells(rng, 2, 3, 4)
    field_ = floquet_transform(cells, uniform_alpha_grid(2, 3), pts)
    for m, vals in cells.items():
        assert np.allclose(inverse_floquet(field_, m), vals, atol=1e-12)


def test_quasi_periodicity():
    rng = np.random.default_rng(3)
    pts, cells = _random_cells(rng, 1, 4, 8)
    field_ = floquet_transform(cells, uniform_alpha_grid(1, 4), pts)
    for k, a in enumerate(field_.alpha_nodes):
        shifted = field_.evaluate_shifted(k, (1,))
        assert np.allclose(shifted, np.exp(2j * math.pi * a[0]) * field_.values[k], atol=1e-12)


def test_nonuniform_grid_rejected():
    pts = cell_grid(1, 4)
    with pytest.raises(DomainError):
        floquet_transform({(0,): np.ones(4)}, np.array([[0.0], [0.1], [0.4]]), pts)
