import numpy as np
import pytest

from hyhup.counted import FlopCounter, closed_form_fma, hyh_update_counted
from hyhup.kernels import hyh_update
from hyhup.matcore import max_rel_diff
from hyhup.probgen import GenConfig, gen_spd_factor, gen_update


def counted(n, m, r, seed=5):
    cfg = GenConfig(seed=seed, n=n, m=m)
    L = gen_spd_factor(cfg)
    A, sigma = gen_update(cfg, L, np.where(np.arange(m) % 2 == 0, 1.0, -1.0))
    c = FlopCounter()
    out = hyh_update_counted(L, A, sigma, r, c)
    return c, out, (L, A, sigma)


def test_closed_form_values():
    assert closed_form_fma(8, 2, 1) == 128
    assert closed_form_fma(16, 4, 4) == 1288


def test_rank_two_unblocked_counts():
    c, _, _ = counted(8, 2, 1)
    assert abs(c.fma - 128) <= 32
    assert c.sqrt == 8
    assert c.div == 16


def test_blocked_counts():
    c, _, _ = counted(16, 4, 4)
    assert abs(c.fma - 1288) <= 64
    assert (c.sqrt, c.div) == (16, 32)


@pytest.mark.parametrize("n,m,r", [(5, 3, 2), (13, 1, 4), (20, 6, 8), (9, 4, 1)])
def test_fma_offset_is_linear_in_n(n, m, r):
    # the scalar path differs from the closed form by (3 - r) n / 2 fma
    c, _, _ = counted(n, m, r)
    ragged = n % r != 0
    if not ragged:
        assert c.fma - closed_form_fma(n, m, r) == pytest.approx((3 - r) * n / 2)
    assert abs(c.fma - closed_form_fma(n, m, r)) <= 4 * n


def test_counted_matches_fast_kernel():
    _, out, (L, A, sigma) = counted(24, 5, 4)
    assert max_rel_diff(out, np.tril(hyh_update(L, A, sigma, 4))) <= 1e-13


def test_counter_accumulates_and_resets():
    cfg = GenConfig(seed=1, n=6, m=1)
    L = gen_spd_factor(cfg)
    A, s = gen_update(cfg, L, [1.0])
    c = FlopCounter()
    hyh_update_counted(L, A, s, 2, c)
    once = c.as_dict()
    hyh_update_counted(L, A, s, 2, c)
    assert c.fma == 2 * once["fma"]
    c.reset()
    assert c.as_dict() == dict(fma=0, mul=0, add=0, div=0, sqrt=0)


def test_counted_needs_unit_weights():
    with pytest.raises(ValueError):
        hyh_update_counted(np.eye(2), np.ones((2, 1)), [0.5], 1)


def test_counted_empty_update_is_free():
    c = FlopCounter()
    out = hyh_update_counted(np.eye(3), np.zeros((3, 0)), [], 2, c)
    np.testing.assert_array_equal(out, np.eye(3))
    assert c.as_dict() == dict(fma=0, mul=0, add=0, div=0, sqrt=0)
