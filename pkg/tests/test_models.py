import math

import numpy as np
import pytest

from fedsim.errors import InvalidArgument
from fedsim.models import (
    ALL,
    BODY,
    BUNDLED_ARCHS,
    HEAD,
    ArchLayer,
    ArchSpec,
    MlpModel,
    ParamVector,
    Segment,
    backward_ce,
    bundled_arch,
    format_arch,
    forward,
    kl_grad,
    load_arch,
    merge_views,
    param_count,
    parse_arch,
    split_view,
)
from fedsim.numcore import RngStream
from published import LAYER_COUNTS
from oracles import central_diff, grad_mismatch, mlp_forward_loss, softmax_rows


def random_model(sizes, seed):
    return MlpModel(sizes).initialized(RngStream(seed))


def test_zero_model_is_uniform():
    m = MlpModel([5, 7, 4])
    probs, _ = forward(m, np.random.default_rng(0).normal(size=(6, 5)))
    assert np.allclose(probs, 0.25, atol=0, rtol=0)


def test_hand_computed_single_layer():
    m = MlpModel([2, 2]).with_values([1.0, 2.0, 3.0, 4.0, 0.5, -0.5])
    probs, _ = forward(m, np.array([[1.0, -1.0]]))
    # logits = x @ W + b = [1 - 3 + 0.5, 2 - 4 - 0.5]
    expected = softmax_rows([[-1.5, -2.5]])[0]
    assert probs[0] == pytest.approx(expected, abs=1e-15)


def test_duplicate_rows_give_identical_outputs():
    m = random_model([3, 8, 4], 1)
    x = np.random.default_rng(1).normal(size=(1, 3))
    probs, _ = forward(m, np.vstack([x, x, x]))
    assert np.array_equal(probs[0], probs[1]) and np.array_equal(probs[1], probs[2])


def test_rows_normalized():
    m = random_model([6, 16, 9, 5], 2)
    probs, _ = forward(m, 10 * np.random.default_rng(2).normal(size=(50, 6)))
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-9)


def test_forward_shape_mismatch():
    with pytest.raises(InvalidArgument):
        forward(MlpModel([3, 2]), np.zeros((2, 4)))


def test_uniform_loss_is_log_c():
    m = MlpModel([4, 6])
    _, cache = forward(m, np.ones((3, 4)))
    loss, grads = backward_ce(m, cache, [0, 3, 5])
    assert abs(loss - math.log(6)) <= 1e-12
    assert len(grads) == m.n_params


def test_confident_correct_predictions_have_near_zero_loss():
    m = MlpModel([1, 2]).with_values([0.0, 0.0, 50.0, -50.0])
    _, cache = forward(m, np.zeros((4, 1)))
    loss, _ = backward_ce(m, cache, [0, 0, 0, 0])
    assert loss < 1e-40


def test_out_of_range_label():
    m = MlpModel([2, 3])
    _, cache = forward(m, np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        backward_ce(m, cache, [0, 3])


def test_loss_matches_independent_forward():
    sizes = [4, 5, 3]
    m = random_model(sizes, 3)
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
    _, cache = forward(m, x)
    loss, _ = backward_ce(m, cache, y)
    ref, _ = mlp_forward_loss(sizes, m.params.values, x, y)
    assert loss == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_ce_gradient_matches_finite_differences(seed):
    sizes = [4, 6, 3]
    m = random_model(sizes, seed)
    rng = np.random.default_rng(100 + seed)
    x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
    _, cache = forward(m, x)
    _, grads = backward_ce(m, cache, y)
    numeric = central_diff(lambda w: mlp_forward_loss(sizes, w, x, y)[0], m.params.values)
    assert grad_mismatch(grads.values, numeric).size == 0


def test_kl_identical_is_zero():
    p = np.array(softmax_rows([[0.1, 2.0, -1.0], [3.0, 0.0, 0.0]]))
    r = kl_grad(p, p)
    assert r.value == 0.0
    assert np.array_equal(r.grad, np.zeros_like(p))


def test_kl_closed_form():
    r = kl_grad(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))
    assert r.value == pytest.approx(math.log(2), abs=1e-15)
    assert not r.clamped


def test_kl_clamps_zero_student_mass():
    r = kl_grad(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))
    assert r.clamped and np.isfinite(r.value)


@pytest.mark.parametrize("seed", range(5))
def test_kl_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, 5))
    t = np.array(softmax_rows(rng.normal(size=(4, 5))))

    def kl_of_logits(flat):
        s = np.array(softmax_rows(flat.reshape(4, 5)))
        return float(np.sum(t * (np.log(t) - np.log(s))) / 4)

    r = kl_grad(np.array(softmax_rows(z)), t)
    numeric = central_diff(kl_of_logits, z.ravel())
    assert r.value == pytest.approx(kl_of_logits(z.ravel()), rel=1e-12)
    assert grad_mismatch(r.grad.ravel(), numeric).size == 0


@pytest.mark.parametrize("name", BUNDLED_ARCHS)
def test_bundled_per_layer_counts(name):
    spec = bundled_arch(name)
    assert [l.params for l in spec.layers] == LAYER_COUNTS[name]
    assert param_count(spec, ALL) == sum(LAYER_COUNTS[name])
    assert param_count(spec, ALL) == param_count(spec, BODY) + param_count(spec, HEAD)


def test_param_count_examples():
    assert param_count(bundled_arch("mnist"), ALL) == 1_199_882
    assert param_count(bundled_arch("femnist"), ALL) == 1_206_590
    assert param_count(bundled_arch("cifar10"), HEAD) == 530_442


def test_param_count_bad_selector():
    with pytest.raises(InvalidArgument):
        param_count(bundled_arch("mnist"), "TAIL")


def test_arch_roundtrip_and_file(tmp_path):
    spec = bundled_arch("sent140")
    assert parse_arch(format_arch(spec)) == spec
    p = tmp_path / "tiny.arch"
    p.write_text("name = tiny\nlayer = linear 12 BODY\nlayer = linear 5 HEAD  # out\n")
    tiny = load_arch(p)
    assert tiny.total == 17 and param_count(tiny, HEAD) == 5


@pytest.mark.parametrize(
    "text",
    ["layer = linear 3 BODY\n", "name = x\nlayer = linear -3 BODY\n", "name = x\nlayer = linear 3 MID\n",
     "name = x\nwidth = 3\n", "name = x\nlayer = linear BODY\n"],
)
def test_arch_parse_errors(text):
    with pytest.raises(InvalidArgument):
        parse_arch(text)


def test_archspec_rejects_negative():
    with pytest.raises(InvalidArgument):
        ArchSpec("bad", (ArchLayer("linear", -1, BODY),))


def test_split_view_head_of_mlp():
    m = random_model([4, 8, 3], 0)
    head = split_view(m.params, HEAD)
    assert len(head) == 8 * 3 + 3
    body = split_view(m.params, BODY)
    assert len(body) == 4 * 8 + 8
    merged = merge_views(body, head)
    assert merged.values.tobytes() == m.params.values.tobytes()
    assert merged.segments == m.params.segments
    assert merge_views(head, body).values.tobytes() == m.params.values.tobytes()


def test_split_view_single_head_segment():
    pv = ParamVector(np.arange(5.0), [Segment("w", 0, 5, HEAD)])
    assert np.array_equal(split_view(pv, HEAD).values, pv.values)
    with pytest.raises(InvalidArgument):
        split_view(pv, BODY)


def test_param_vector_invariants():
    with pytest.raises(InvalidArgument):
        ParamVector(np.zeros(4), [Segment("a", 0, 2, BODY), Segment("b", 3, 1, HEAD)])
    with pytest.raises(InvalidArgument):
        ParamVector(np.zeros(4), [Segment("a", 0, 3, BODY)])
    with pytest.raises(InvalidArgument):
        ParamVector(np.zeros(2), [Segment("a", 0, 2, "X")])


def test_mlp_arch_spec_matches_layout():
    m = MlpModel([20, 32, 10])
    spec = m.arch_spec()
    assert param_count(spec) == m.n_params
    assert param_count(spec, HEAD) == 32 * 10 + 10


def test_init_is_bounded_and_seeded():
    a = random_model([9, 4, 2], 5)
    b = random_model([9, 4, 2], 5)
    assert np.array_equal(a.params.values, b.params.values)
    w0 = a.params.segment("W0")
    assert np.all(np.abs(w0) <= 1 / 3)
    assert np.all(np.abs(a.params.segment("W1")) <= 0.5)
