import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyhup import backend
from hyhup.errors import DegeneratePivot, DimensionMismatch, IndefiniteUpdate
from hyhup.kernels import (
    CompactWY,
    hyh_apply_block,
    hyh_update,
    hyh_update_block,
    hyh_update_inplace,
    make_reflector,
    reconstruct_q,
)
from hyhup.matcore import max_rel_diff, reference_cholesky, residual_fro, sym_low_rank_form
from hyhup.probgen import GenConfig, gen_spd_factor, gen_update

SQ2 = math.sqrt(2.0)
SQ5 = math.sqrt(5.0)


def instance(seed, n, m, signs=None):
    cfg = GenConfig(seed=seed, n=n, m=m)
    L = gen_spd_factor(cfg)
    if signs is None:
        signs = np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
    A, sigma = gen_update(cfg, L, signs)
    return L, A, sigma


# reflector scalars

def test_reflector_unit_update():
    ref = make_reflector(2.0, [1.0], [1.0])
    beta = 2.0 + SQ5
    assert ref.lambda_new == pytest.approx(SQ5, rel=1e-15)
    assert ref.beta == pytest.approx(beta, rel=1e-15)
    assert ref.tau_inv == pytest.approx(2 * beta**2 / (1 + beta**2), rel=1e-15)
    np.testing.assert_allclose(ref.b, [1.0 / beta], rtol=1e-15)


def test_reflector_zero_row_is_identity():
    ref = make_reflector(2.0, [0.0], [1.0])
    assert ref.lambda_new == 2.0
    assert ref.tau_inv == 2.0
    np.testing.assert_array_equal(ref.b, [0.0])


def test_reflector_keeps_sign_of_pivot():
    assert make_reflector(-2.0, [1.0], [1.0]).lambda_new == pytest.approx(-SQ5)


def test_reflector_indefinite():
    with pytest.raises(IndefiniteUpdate):
        make_reflector(1.0, [2.0], [-1.0])


def test_reflector_semidefinite_limit_errors():
    # lambda^2 + alpha^2 == 0 exactly
    with pytest.raises(IndefiniteUpdate):
        make_reflector(1.0, [1.0], [-1.0])


# unblocked block update

def test_block_update_1x1(kern):
    L, W = hyh_update_block([[2.0]], [[1.0]], [1.0], kernels=kern)
    assert L[0, 0] == pytest.approx(SQ5, rel=1e-15)
    assert W.k == 1 and W.m == 1


def test_block_update_2x2(kern):
    L, _ = hyh_update_block([[2.0, 0.0], [1.0, SQ2]], [[1.0], [1.0]], [1.0], kernels=kern)
    expect = [[SQ5, 0.0], [3.0 / SQ5, math.sqrt(11.0 / 5.0)]]
    np.testing.assert_allclose(np.tril(L), expect, rtol=1e-14)


@pytest.mark.parametrize("m", [0, 3])
def test_block_update_zero_rows_leave_factor(kern, m):
    L0 = np.asfortranarray(np.tril(np.arange(1.0, 17.0).reshape(4, 4)) + 4 * np.eye(4))
    L, W = hyh_update_block(L0.copy(order="F"), np.zeros((4, m), order="F"), np.ones(m), kernels=kern)
    np.testing.assert_array_equal(np.tril(L), np.tril(L0))
    np.testing.assert_array_equal(W.B, np.zeros((4, m)))
    np.testing.assert_array_equal(np.diag(W.T), np.full(4, 0.5))


def test_block_update_overwrites_inputs(kern):
    L = np.asfortranarray([[2.0]])
    A = np.asfortranarray([[1.0]])
    Lout, W = hyh_update_block(L, A, [1.0], kernels=kern)
    assert Lout is L and W.B is A
    assert A[0, 0] == pytest.approx(1.0 / (2.0 + SQ5))


def test_block_update_indefinite_index(kern):
    with pytest.raises(IndefiniteUpdate) as exc:
        hyh_update_block(np.eye(2), [[0.0], [2.0]], [-1.0], kernels=kern)
    assert exc.value.index == 1


# tail application

def test_apply_identity_block(kern, rng):
    W = CompactWY(B=np.zeros((3, 2), order="F"), T=np.asfortranarray(0.5 * np.eye(3)), tau_inv=np.full(3, 2.0))
    L21 = rng.standard_normal((5, 3))
    A2 = rng.standard_normal((5, 2))
    out_L, out_A = hyh_apply_block(L21.copy(order="F"), A2.copy(order="F"), [1.0, -1.0], W, kernels=kern)
    np.testing.assert_allclose(out_L, L21, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out_A, A2, rtol=0, atol=1e-15)


def test_apply_empty_tail(kern):
    W = CompactWY(B=np.zeros((1, 1), order="F"), T=np.full((1, 1), 0.5, order="F"), tau_inv=np.full(1, 2.0))
    out_L, out_A = hyh_apply_block(np.zeros((0, 1), order="F"), np.zeros((0, 1), order="F"), [1.0], W, kernels=kern)
    assert out_L.shape == (0, 1) and out_A.shape == (0, 1)


def test_apply_matches_dense_reflector(kern):
    _, W = hyh_update_block([[2.0]], [[1.0]], [1.0], kernels=kern)
    Q = reconstruct_q(W, [1.0])
    out_L, out_A = hyh_apply_block([[1.0]], [[1.0]], [1.0], W, kernels=kern)
    expect = np.array([[1.0, 1.0]]) @ Q
    np.testing.assert_allclose([out_L[0, 0], out_A[0, 0]], expect[0], rtol=1e-14)


def test_apply_rejects_singular_t(kern):
    W = CompactWY(B=np.zeros((1, 1)), T=np.zeros((1, 1)), tau_inv=np.zeros(1))
    with pytest.raises(ArithmeticError):
        hyh_apply_block([[1.0]], [[1.0]], [1.0], W, kernels=kern)


# blocked driver

def test_update_small_case_block_sizes(kern):
    L = [[2.0, 0.0], [1.0, SQ2]]
    a = hyh_update(L, [[1.0], [1.0]], [1.0], 1, kernels=kern)
    b = hyh_update(L, [[1.0], [1.0]], [1.0], 2, kernels=kern)
    np.testing.assert_allclose(np.tril(a), np.tril(b), rtol=1e-12)
    np.testing.assert_allclose(np.tril(a), reference_cholesky([[5.0, 3.0], [3.0, 4.0]]), rtol=1e-12)


def test_update_zero_weights_exact(kern, rng):
    L, A, _ = instance(3, 20, 5)
    out = hyh_update(L, A, np.zeros(5), 4, kernels=kern)
    np.testing.assert_array_equal(np.tril(out), np.tril(L))


def test_update_mixed_signs_64x8(kern):
    L, A, sigma = instance(11, 64, 8)
    out = hyh_update(L, A, sigma, 4, kernels=kern)
    assert residual_fro(out, sym_low_rank_form(L, A, sigma)) <= 1e-10


def test_update_does_not_modify_inputs(kern):
    L, A, sigma = instance(2, 10, 3)
    L0, A0 = L.copy(), A.copy()
    hyh_update(L, A, sigma, 4, kernels=kern)
    np.testing.assert_array_equal(L, L0)
    np.testing.assert_array_equal(A, A0)


def test_update_ignores_upper_triangle(kern):
    L, A, sigma = instance(4, 12, 3)
    dirty = L + np.triu(np.full(L.shape, 7.0), 1)
    np.testing.assert_array_equal(np.tril(hyh_update(dirty, A, sigma, 4, kernels=kern)),
                                  np.tril(hyh_update(L, A, sigma, 4, kernels=kern)))


def test_update_indefinite_reports_global_column(kern):
    with pytest.raises(IndefiniteUpdate) as exc:
        hyh_update(np.eye(6), np.eye(6)[:, [4]] * 2.0, [-1.0], 2, kernels=kern)
    assert exc.value.index == 4


def test_update_dimension_errors(kern):
    with pytest.raises(DimensionMismatch):
        hyh_update(np.eye(3), np.ones((2, 1)), [1.0], kernels=kern)
    with pytest.raises(DimensionMismatch):
        hyh_update(np.eye(3), np.ones((3, 2)), [1.0], kernels=kern)
    with pytest.raises(ValueError):
        hyh_update(np.eye(3), np.ones((3, 1)), [1.0], 0, kernels=kern)


def test_inplace_needs_column_major(kern):
    with pytest.raises(TypeError):
        hyh_update_inplace(np.ascontiguousarray(np.eye(3) + np.tril(np.ones((3, 3)), -1)),
                           np.ones((3, 2), order="F"), [1.0, 1.0], kernels=kern)


def test_inplace_column_range(kern):
    L, A, sigma = instance(8, 16, 4)
    Lw, Aw = np.array(L, order="F"), np.array(A, order="F")
    hyh_update_inplace(Lw, Aw, sigma, 4, start=0, stop=8, kernels=kern)
    hyh_update_inplace(Lw, Aw, sigma, 4, start=8, kernels=kern)
    assert max_rel_diff(np.tril(Lw), reference_cholesky(sym_low_rank_form(L, A, sigma))) <= 1e-12


def test_block_size_above_compiled_limit(kern):
    L, A, sigma = instance(6, 100, 4)
    out = hyh_update(L, A, sigma, 100, kernels=kern)
    assert residual_fro(out, sym_low_rank_form(L, A, sigma)) <= 1e-12


@pytest.mark.skipif("compiled" not in backend.available(), reason="extension not built")
def test_status_codes_decode():
    from hyhup.kernels import _raise_status

    with pytest.raises(IndefiniteUpdate):
        _raise_status(3)
    with pytest.raises(DegeneratePivot) as exc:
        _raise_status(-5)
    assert exc.value.index == 3


# dense reconstruction of the compact WY form

def test_reconstruct_identity_block():
    W = CompactWY(B=np.zeros((3, 2)), T=0.5 * np.eye(3), tau_inv=np.full(3, 2.0))
    np.testing.assert_allclose(reconstruct_q(W, [1.0, -1.0]), np.eye(5), atol=1e-15)


def test_reconstruct_single_reflector_annihilates(kern):
    _, W = hyh_update_block([[2.0]], [[1.0]], [1.0], kernels=kern)
    row = np.array([[2.0, 1.0]]) @ reconstruct_q(W, [1.0])
    np.testing.assert_allclose(row, [[SQ5, 0.0]], atol=1e-15)


def test_reconstruct_passes_extra_rows_through(kern):
    _, W = hyh_update_block([[2.0]], [[1.0]], [1.0], kernels=kern)
    Q = reconstruct_q(W, [1.0], n=3)
    assert Q.shape == (4, 4)
    np.testing.assert_array_equal(Q[1:3, 1:3], np.eye(2))


# properties

shapes = st.tuples(st.integers(1, 48), st.integers(0, 12), st.sampled_from([1, 2, 3, 4, 8]))


@settings(max_examples=30, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**32 - 1))
def test_property_reconstruction_and_signs(kern, shape, seed):
    n, m, r = shape
    g = np.random.default_rng(seed)
    signs = np.where(g.random(m) < 0.5, -1.0, 1.0) * g.uniform(0.25, 3.0, m)
    L, A, sigma = instance(seed, n, m, signs)
    out = hyh_update(L, A, sigma, r, kernels=kern)
    assert residual_fro(out, sym_low_rank_form(L, A, sigma)) <= 1e-10
    assert np.all(np.diag(out) > 0.0)
    assert max_rel_diff(np.tril(out), reference_cholesky(sym_low_rank_form(L, A, sigma))) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 40), m=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
def test_property_block_size_independence(kern, n, m, seed):
    L, A, sigma = instance(seed, n, m)
    outs = [np.tril(hyh_update(L, A, sigma, r, kernels=kern)) for r in (1, 2, 4, 8)]
    for o in outs[1:]:
        assert max_rel_diff(o, outs[0]) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 40), m=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_property_update_then_downdate(kern, n, m, seed):
    L, A, sigma = instance(seed, n, m)
    there = hyh_update(L, A, sigma, 4, kernels=kern)
    back = hyh_update(there, A, -sigma, 4, kernels=kern)
    assert max_rel_diff(np.tril(back), np.tril(L)) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 32), m=st.integers(0, 10), seed=st.integers(0, 2**32 - 1))
def test_property_s_orthogonal_and_annihilating(kern, k, m, seed):
    L, A, sigma = instance(seed, k, m)
    LA = np.hstack((L, A))
    Lt, W = hyh_update_block(np.array(L, order="F"), np.array(A, order="F"), sigma, kernels=kern)
    Q = reconstruct_q(W, sigma)
    S = np.diag(np.concatenate((np.ones(k), sigma)))
    assert np.linalg.norm(Q @ S @ Q.T - S) <= 1e-11 * (1 + np.linalg.norm(S))
    target = np.hstack((np.tril(Lt), np.zeros((k, m))))
    assert np.linalg.norm(LA @ Q - target) <= 1e-11 * np.linalg.norm(LA)


@pytest.mark.skipif(len(backend.available()) < 2, reason="needs both backends")
@settings(max_examples=20, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**32 - 1))
def test_property_backends_agree(shape, seed):
    n, m, r = shape
    L, A, sigma = instance(seed, n, m)
    a = hyh_update(L, A, sigma, r, kernels=backend.load("compiled"))
    b = hyh_update(L, A, sigma, r, kernels=backend.load("python"))
    assert max_rel_diff(np.tril(a), np.tril(b)) <= 1e-12
