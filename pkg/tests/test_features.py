from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nested_opinf.features import (
    MonomialIndexMap,
    ModelForm,
    Term,
    condense_symmetric,
    condensed_product,
    feature_matrix,
    feature_vector,
    monomial_indices,
    num_monomials,
    restrict_feature_columns,
)
from oracles import condensed_brute, monomials_brute


def test_condensed_product_examples():
    np.testing.assert_array_equal(condensed_product([1, 2, 3], 2), [1, 2, 4, 3, 6, 9])
    np.testing.assert_array_equal(condensed_product([0, 0], 2), [0, 0, 0])
    np.testing.assert_array_equal(condensed_product([2], 3), [8])


def test_condensed_product_empty():
    with pytest.raises(ValueError, match="empty state"):
        condensed_product([], 2)


@pytest.mark.parametrize("s", range(1, 7))
@pytest.mark.parametrize("d", [1, 2, 3])
def test_ordering_matches_brute_force(s, d):
    assert [tuple(r) for r in monomial_indices(s, d)] == monomials_brute(s, d)
    w = np.random.default_rng(s * 10 + d).standard_normal(s)
    np.testing.assert_allclose(condensed_product(w, d), condensed_brute(w, d), rtol=1e-15)


def test_index_map_one_based():
    assert MonomialIndexMap(2, 2).index_list == [(1, 1), (1, 2), (2, 2)]
    assert len(MonomialIndexMap(3, 3)) == 10


@given(st.integers(1, 12), st.integers(1, 3))
def test_length_is_binomial(s, d):
    assert condensed_product(np.ones(s), d).size == comb(s + d - 1, d) == num_monomials(s, d)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 11), st.integers(1, 11), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_prefix_property(s, extra, d, seed):
    s_large = min(s + extra, 12)
    rng = np.random.default_rng(seed)
    w_large = rng.standard_normal(s_large)
    form = ModelForm((Term(d),))
    cols = restrict_feature_columns(s, s_large, form)
    np.testing.assert_array_equal(condensed_product(w_large[:s], d), condensed_product(w_large, d)[cols])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_condensed_symmetric_matches_quadratic_form(s, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(s)
    S = rng.standard_normal((s, s))
    S = S + S.T
    h = condense_symmetric(S)
    lhs = h @ condensed_product(w, 2)
    rhs = w @ S @ w
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs), np.abs(S).sum() * (w**2).sum())


def test_feature_vector_examples():
    np.testing.assert_array_equal(feature_vector([1, 2], "c,A,H", [1]), [1, 1, 2, 1, 2, 4])
    np.testing.assert_array_equal(feature_vector([2, 4], "A:1", [1, 0.5]), [1, 2])
    f = feature_vector([1, 1, 1], "c,A,H,G", [1])
    assert f.size == 20 and np.all(f == 1)


def test_feature_vector_theta_mismatch():
    with pytest.raises(ValueError, match="mismatched theta length"):
        feature_vector([1.0, 2.0], "A:1,G", [1.0])


def test_feature_matrix_rows_match_vectors():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((5, 3))
    thetas = rng.uniform(size=(5, 2))
    F = feature_matrix(W, "c,A:1,H,G", thetas)
    for k in range(5):
        np.testing.assert_array_equal(F[k], feature_vector(W[k], "c,A:1,H,G", thetas[k]))


def test_restrict_feature_columns_examples():
    np.testing.assert_array_equal(restrict_feature_columns(1, 2, "c,A,H"), [0, 1, 3])
    form = ModelForm.parse("c,A,H,G")
    np.testing.assert_array_equal(restrict_feature_columns(4, 4, form), np.arange(form.n_columns(4)))
    np.testing.assert_array_equal(restrict_feature_columns(2, 3, "H"), [0, 1, 2])


def test_restrict_feature_columns_bad_sizes():
    with pytest.raises(ValueError):
        restrict_feature_columns(3, 2, "A")


def test_model_form_parse_roundtrip():
    form = ModelForm.parse("c, A:1, H, G:2")
    assert str(form) == "c,A:1,H,G:2"
    assert form.n_groups == 3
    assert form.widths(2) == [1, 2, 3, 4]
    assert ModelForm.parse(str(form)) == form
    for bad in ("", "X", "A:x", "A,A"):
        with pytest.raises(ValueError):
            ModelForm.parse(bad)
