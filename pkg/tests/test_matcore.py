import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyhup.errors import DimensionMismatch, NotPositiveDefinite, SingularTriangular
from hyhup.matcore import max_rel_diff, reference_cholesky, residual_fro, solve_right_upper, sym_low_rank_form

from conftest import random_spd


def test_cholesky_2x2_by_hand():
    L = reference_cholesky([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], rtol=1e-15)


def test_cholesky_identity():
    np.testing.assert_array_equal(reference_cholesky(np.eye(5)), np.eye(5))


def test_cholesky_indefinite_reports_pivot():
    with pytest.raises(NotPositiveDefinite) as exc:
        reference_cholesky([[1.0, 2.0], [2.0, 1.0]])
    assert exc.value.index == 1


def test_cholesky_rejects_nonsquare():
    with pytest.raises(DimensionMismatch):
        reference_cholesky(np.ones((2, 3)))


def test_low_rank_form_examples():
    L = [[2.0, 0.0], [1.0, math.sqrt(2.0)]]
    np.testing.assert_allclose(sym_low_rank_form(L, [[1.0], [1.0]], [1.0]), [[5.0, 3.0], [3.0, 4.0]])
    np.testing.assert_allclose(sym_low_rank_form([[2.0]], [[1.0]], [-1.0]), [[3.0]])
    L = np.tril(np.arange(1.0, 10.0).reshape(3, 3))
    np.testing.assert_allclose(sym_low_rank_form(L, np.zeros((3, 0)), []), L @ L.T)


def test_low_rank_form_ignores_upper_triangle():
    L = np.array([[2.0, 99.0], [1.0, 1.0]])
    np.testing.assert_array_equal(sym_low_rank_form(L, np.zeros((2, 0)), []), [[4.0, 2.0], [2.0, 2.0]])


def test_low_rank_form_exactly_symmetric(rng):
    L = np.tril(rng.standard_normal((7, 7)))
    H = sym_low_rank_form(L, rng.standard_normal((7, 3)), [1.0, -0.5, 2.0])
    np.testing.assert_array_equal(H, H.T)


def test_solve_right_upper_examples():
    np.testing.assert_allclose(solve_right_upper([[2.0, 3.0]], [[1.0, 1.0], [0.0, 2.0]]), [[2.0, 0.5]])
    X = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(solve_right_upper(X, np.eye(3)), X)
    with pytest.raises(SingularTriangular):
        solve_right_upper([[1.0, 1.0]], [[1.0, 1.0], [0.0, 0.0]])


def test_residual_examples(rng):
    H = random_spd(rng, 9)
    assert residual_fro(reference_cholesky(H), H) <= 1e-14
    assert residual_fro(np.eye(3), np.eye(3)) == 0.0
    assert residual_fro([[2.0]], [[5.0]]) == pytest.approx(0.2)


def test_max_rel_diff_scales_by_reference():
    assert max_rel_diff([[1.0, 2.0]], [[1.0, 4.0]]) == pytest.approx(0.5)
    assert max_rel_diff(np.zeros((0, 2)), np.zeros((0, 2))) == 0.0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 128), seed=st.integers(0, 2**32 - 1))
def test_oracle_self_consistency(n, seed):
    H = random_spd(np.random.default_rng(seed), n)
    assert residual_fro(reference_cholesky(H), H) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 24), k=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_solve_right_upper_round_trip(n, k, seed):
    g = np.random.default_rng(seed)
    T = np.triu(g.standard_normal((k, k))) + 3.0 * np.eye(k)
    X = g.standard_normal((n, k))
    W = solve_right_upper(X, T)
    assert max_rel_diff(W @ T, X) <= 1e-12
