import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.errors import InvalidArgument, NumericFault
from fedsim.numcore import RngStream, SgdState, clip_global_norm, dirichlet_sample, global_norm, sgd_step


def test_dirichlet_single_component():
    assert dirichlet_sample(0.3, 1, RngStream(0)).tolist() == [1.0]


def test_dirichlet_concentrates_at_uniform():
    rng = RngStream(1)
    draws = np.array([dirichlet_sample(1000.0, 4, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.25) < 0.01)


def test_small_alpha_is_more_skewed():
    rng = RngStream(2)
    low = np.mean([dirichlet_sample(0.1, 20, rng).max() for _ in range(10_000)])
    high = np.mean([dirichlet_sample(5.0, 20, rng).max() for _ in range(10_000)])
    assert low > high


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), alpha=st.sampled_from([0.1, 0.5, 1.0, 5.0]), n=st.integers(1, 100))
def test_dirichlet_on_simplex(seed, alpha, n):
    p = dirichlet_sample(alpha, n, RngStream(seed))
    assert p.shape == (n,)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_dirichlet_tiny_alpha_underflow_path():
    p = dirichlet_sample(1e-4, 50, RngStream(3))
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) <= 1e-12


@pytest.mark.parametrize("alpha,n", [(0.0, 3), (-1.0, 3), (1.0, 0)])
def test_dirichlet_rejects_bad_args(alpha, n):
    with pytest.raises(InvalidArgument):
        dirichlet_sample(alpha, n, RngStream(0))


def test_streams_are_reproducible_and_distinct():
    a = RngStream(7, 1).generator.random(5)
    b = RngStream(7, 1).generator.random(5)
    c = RngStream(7, 2).generator.random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_child_streams_do_not_depend_on_creation_order():
    root = RngStream(11)
    first = [root.child("client", i).generator.random(3) for i in range(4)]
    root2 = RngStream(11)
    second = [root2.child("client", i).generator.random(3) for i in reversed(range(4))][::-1]
    for x, y in zip(first, second):
        assert np.array_equal(x, y)


def test_sgd_zero_lr_is_identity():
    w = np.array([1.0, -2.0, 3.0])
    out = sgd_step(w, np.array([5.0, 6.0, 7.0]), SgdState(lr=0.0))
    assert np.array_equal(out, w)


@settings(max_examples=50, deadline=None)
@given(
    w=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
    seed=st.integers(0, 1000),
    m=st.floats(0, 0.99),
)
def test_sgd_zero_lr_identity_property(w, seed, m):
    w = np.array(w)
    g = np.random.default_rng(seed).normal(size=w.size)
    assert np.array_equal(sgd_step(w, g, SgdState(lr=0.0, momentum=m)), w)


def test_plain_gradient_step():
    out = sgd_step(np.array([2.0]), np.array([3.0]), SgdState(lr=1.0, momentum=0.0, weight_decay=0.0))
    assert out.tolist() == [-1.0]


def test_two_momentum_steps_match_scalar_recurrence():
    lr, m, wd = 0.1, 0.9, 1e-4
    w0, g1, g2 = 0.7, 0.3, -1.2
    # hand-unrolled: v <- m v + (g + wd w); w <- w - lr v
    v1 = g1 + wd * w0
    w1 = w0 - lr * v1
    v2 = m * v1 + (g2 + wd * w1)
    w2 = w1 - lr * v2

    state = SgdState(lr, m, wd)
    out = sgd_step(np.array([w0]), np.array([g1]), state)
    out = sgd_step(out, np.array([g2]), state)
    assert out[0] == pytest.approx(w2, abs=1e-15)
    assert state.velocity[0] == pytest.approx(v2, abs=1e-15)


def test_sgd_errors():
    with pytest.raises(InvalidArgument):
        sgd_step(np.zeros(2), np.zeros(3), SgdState(0.1))
    with pytest.raises(NumericFault):
        sgd_step(np.zeros(2), np.array([0.0, np.nan]), SgdState(0.1))
    with pytest.raises(InvalidArgument):
        SgdState(0.1, momentum=1.0)


def test_sgd_mask_freezes_coordinates():
    w = np.array([1.0, 2.0, 3.0])
    mask = np.array([True, False, True])
    state = SgdState(0.5)
    for _ in range(3):
        w2 = sgd_step(w, np.ones(3), state, mask)
        assert w2[1] == 2.0
        w = w2
    assert state.velocity[1] == 0.0


def test_clip_under_threshold_unchanged():
    g = np.array([3.0, 4.0])
    assert np.array_equal(clip_global_norm(g, 20.0), g)


def test_clip_exact_scaling():
    assert clip_global_norm(np.array([30.0, 40.0]), 20.0).tolist() == [12.0, 16.0]


def test_clip_random_vector_norm():
    g = np.random.default_rng(0).normal(size=1000)
    g *= 100.0 / global_norm(g)
    # independent recomputation of the norm
    out = clip_global_norm(g, 20.0)
    assert abs(np.sqrt(sum(float(x) ** 2 for x in out)) - 20.0) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(
    vals=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
    max_norm=st.floats(1e-3, 1e3),
)
def test_clip_idempotent_and_bounded(vals, max_norm):
    g = np.array(vals)
    once = clip_global_norm(g, max_norm)
    assert np.array_equal(clip_global_norm(once, max_norm), once)
    assert global_norm(once) <= max_norm + 1e-9


def test_clip_errors():
    with pytest.raises(InvalidArgument):
        clip_global_norm(np.ones(2), 0.0)
    with pytest.raises(NumericFault):
        clip_global_norm(np.array([np.inf]), 1.0)
