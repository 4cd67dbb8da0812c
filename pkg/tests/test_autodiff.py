"""Tensor/tape ops: worked examples, gradient checks, and reduction properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maglev import autodiff as ad
from maglev.errors import ArcIndexError, BatchError, DimensionError


def t(data, requires_grad=False):
    return ad.Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def test_matmul_identity():
    m = t([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(None, t(np.eye(2)), m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_hand_case():
    out = ad.matmul(None, t([[1.0, 2.0], [3.0, 4.0]]), t([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(None, t(np.zeros((2, 3))), t(np.zeros((2, 3))))


def test_matmul_gradient_vs_finite_differences():
    rng = np.random.default_rng(0)
    a = t(rng.normal(size=(4, 3)), requires_grad=True)
    b = t(rng.normal(size=(3, 5)), requires_grad=True)
    w = t(rng.normal(size=(5, 1)), requires_grad=False)  # reduce to a scalar

    def f(tape):
        prod = ad.matmul(tape, a, b)
        col = ad.matmul(tape, prod, w)
        ones = t(np.ones((1, 4)))
        return ad.matmul(tape, ones, col)

    assert ad.finite_diff_check(f, {"a": a, "b": b}) < 1e-6


# ---------------------------------------------------------------------------
# relu / leaky_relu
# ---------------------------------------------------------------------------


def test_relu_values():
    out = ad.relu(None, t([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])


def test_leaky_relu_values():
    out = ad.leaky_relu(None, t([-1.0, 2.0]), slope=0.2)
    np.testing.assert_allclose(out.data, [[-0.2, 2.0]])


def test_leaky_relu_gradient_negative_side():
    x = t([[-3.0]], requires_grad=True)
    tape = ad.Tape()
    y = ad.leaky_relu(tape, x, slope=0.2)
    tape.backward(y)
    assert x.grad[0, 0] == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# concat_cols
# ---------------------------------------------------------------------------


def test_concat_cols_basic():
    out = ad.concat_cols(None, t([[1.0]]), t([[2.0]]))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0]])


def test_concat_cols_empty_block_identity():
    b = t(np.arange(6.0).reshape(3, 2))
    out = ad.concat_cols(None, t(np.zeros((3, 0))), b)
    np.testing.assert_array_equal(out.data, b.data)


def test_concat_cols_row_mismatch():
    with pytest.raises(DimensionError):
        ad.concat_cols(None, t(np.zeros((2, 1))), t(np.zeros((3, 1))))


def test_concat_cols_gradient_split():
    rng = np.random.default_rng(1)
    a = t(rng.normal(size=(3, 2)), requires_grad=True)
    b = t(rng.normal(size=(3, 4)), requires_grad=True)
    w = t(rng.normal(size=(6, 1)))

    def f(tape):
        cat = ad.concat_cols(tape, a, b)
        col = ad.matmul(tape, cat, w)
        return ad.matmul(tape, t(np.ones((1, 3))), col)

    assert ad.finite_diff_check(f, {"a": a, "b": b}) < 1e-6


# ---------------------------------------------------------------------------
# gather_rows
# ---------------------------------------------------------------------------


def test_gather_duplicates_row():
    x = t([[7.0, 8.0]])
    out = ad.gather_rows(None, x, [0, 0])
    np.testing.assert_array_equal(out.data, [[7.0, 8.0], [7.0, 8.0]])


def test_gather_empty_index():
    out = ad.gather_rows(None, t(np.zeros((4, 3))), [])
    assert out.shape == (0, 3)


def test_gather_out_of_range_names_arc():
    with pytest.raises(ArcIndexError, match="arc 1"):
        ad.gather_rows(None, t(np.zeros((2, 2))), [0, 5])


def test_gather_scatter_add_accumulates_duplicates():
    x = t(np.ones((1, 3)), requires_grad=True)
    tape = ad.Tape()
    g = ad.gather_rows(tape, x, [0, 0])
    s = ad.matmul(tape, t(np.ones((1, 2))), ad.matmul(tape, g, t(np.ones((3, 1)))))
    tape.backward(s)
    np.testing.assert_array_equal(x.grad, 2.0 * np.ones((1, 3)))


# ---------------------------------------------------------------------------
# segment_reduce
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["sum", "mean", "max"])
def test_segment_reduce_one_message_per_node_is_identity(mode):
    msgs = t([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = ad.segment_reduce(None, msgs, [0, 1, 2], 3, mode)
    np.testing.assert_array_equal(out.data, msgs.data)


def test_segment_reduce_mean():
    out = ad.segment_reduce(None, t([[2.0], [4.0]]), [0, 0], 1, "mean")
    np.testing.assert_array_equal(out.data, [[3.0]])


def test_segment_reduce_empty_segment_is_zero():
    out = ad.segment_reduce(None, t([[5.0]]), [2], 4, "max")
    np.testing.assert_array_equal(out.data, [[0.0], [0.0], [5.0], [0.0]])


def test_segment_max_tie_routes_to_first_arc():
    msgs = t([[5.0], [5.0]], requires_grad=True)
    tape = ad.Tape()
    red = ad.segment_reduce(tape, msgs, [0, 0], 1, "max")
    tape.backward(red)
    np.testing.assert_array_equal(msgs.grad, [[1.0], [0.0]])


@pytest.mark.parametrize("mode", ["sum", "mean", "max"])
def test_segment_reduce_gradients(mode):
    rng = np.random.default_rng(2)
    msgs = t(rng.normal(size=(6, 3)), requires_grad=True)
    dst = [0, 2, 2, 1, 0, 2]
    w = t(rng.normal(size=(3, 1)))

    def f(tape):
        red = ad.segment_reduce(tape, msgs, dst, 4, mode)
        return ad.matmul(tape, t(np.ones((1, 4))), ad.matmul(tape, red, w))

    assert ad.finite_diff_check(f, {"msgs": msgs}) < 1e-6


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_segment_reduce_permutation_invariance(data):
    n = data.draw(st.integers(1, 6))
    e = data.draw(st.integers(0, 20))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    msgs = rng.normal(size=(e, 3))
    dst = rng.integers(0, n, size=e)
    perm = rng.permutation(e)
    for mode in ("sum", "mean", "max"):
        base = ad.segment_reduce(None, t(msgs), dst, n, mode).data
        shuf = ad.segment_reduce(None, t(msgs[perm]), dst[perm], n, mode).data
        if mode == "max":
            np.testing.assert_array_equal(base, shuf)
        else:
            np.testing.assert_allclose(base, shuf, atol=1e-12)


# ---------------------------------------------------------------------------
# segment_softmax
# ---------------------------------------------------------------------------


def test_segment_softmax_equal_scores_uniform():
    out = ad.segment_softmax(None, t([[1.0], [1.0], [1.0]]), [0, 0, 0], 1)
    np.testing.assert_allclose(out.data, np.full((3, 1), 1.0 / 3.0))


def test_segment_softmax_single_arc():
    out = ad.segment_softmax(None, t([[42.0]]), [0], 1)
    np.testing.assert_allclose(out.data, [[1.0]])


def test_segment_softmax_closed_form():
    out = ad.segment_softmax(None, t([[0.0], [math.log(3.0)]]), [0, 0], 1)
    np.testing.assert_allclose(out.data, [[0.25], [0.75]], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_segment_softmax_sums_to_one(data):
    n = data.draw(st.integers(1, 5))
    e = data.draw(st.integers(1, 25))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    scores = rng.normal(scale=10.0, size=(e, 1))
    dst = rng.integers(0, n, size=e)
    alpha = ad.segment_softmax(None, t(scores), dst, n).data[:, 0]
    assert np.all(alpha > 0.0)
    sums = np.zeros(n)
    np.add.at(sums, dst, alpha)
    present = np.bincount(dst, minlength=n) > 0
    np.testing.assert_allclose(sums[present], 1.0, atol=1e-12)


def test_segment_softmax_gradient():
    rng = np.random.default_rng(3)
    scores = t(rng.normal(size=(5, 1)), requires_grad=True)
    dst = [0, 1, 0, 1, 0]
    w = t(rng.normal(size=(5, 1)))

    def f(tape):
        alpha = ad.segment_softmax(tape, scores, dst, 2)
        weighted = ad.mul(tape, alpha, w)
        return ad.matmul(tape, t(np.ones((1, 5))), weighted)

    assert ad.finite_diff_check(f, {"scores": scores}) < 1e-6


# ---------------------------------------------------------------------------
# softmax_cross_entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_uniform_logits_is_log_c():
    for c in (2, 5, 289):
        logits = t(np.zeros((3, c)))
        loss = ad.softmax_cross_entropy(None, logits, [0, 1, 0], [True, True, True])
        assert loss.item() == pytest.approx(math.log(c), abs=1e-12)


def test_cross_entropy_vanishes_with_margin():
    margins = [5.0, 20.0, 60.0]
    losses = []
    for m in margins:
        logits = np.zeros((1, 4))
        logits[0, 2] = m
        losses.append(ad.softmax_cross_entropy(None, t(logits), [2], [True]).item())
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-20


def test_cross_entropy_empty_mask_rejected():
    with pytest.raises(BatchError):
        ad.softmax_cross_entropy(None, t(np.zeros((2, 3))), [0, 1], [False, False])


def test_cross_entropy_masked_rows_get_no_gradient():
    logits = t(np.random.default_rng(5).normal(size=(4, 3)), requires_grad=True)
    tape = ad.Tape()
    loss = ad.softmax_cross_entropy(tape, logits, [0, 1, 2, 0], [True, False, True, False])
    tape.backward(loss)
    np.testing.assert_array_equal(logits.grad[1], 0.0)
    np.testing.assert_array_equal(logits.grad[3], 0.0)


def test_cross_entropy_gradient_vs_finite_differences():
    rng = np.random.default_rng(4)
    logits = t(rng.normal(size=(3, 5)), requires_grad=True)
    labels = [1, 4, 0]
    mask = [True, True, True]

    def f(tape):
        return ad.softmax_cross_entropy(tape, logits, labels, mask)

    assert ad.finite_diff_check(f, {"logits": logits}) < 1e-6


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = t([[1.0, -2.0]], requires_grad=True)
    state = ad.AdamState(lr=0.1)
    ad.adam_step({"p": p}, {"p": np.zeros((1, 2))}, state)
    np.testing.assert_array_equal(p.data, [[1.0, -2.0]])


def test_adam_first_step_is_minus_lr():
    p = t([[0.0]], requires_grad=True)
    state = ad.AdamState(lr=0.01)
    ad.adam_step({"p": p}, {"p": np.ones((1, 1))}, state)
    assert p.data[0, 0] == pytest.approx(-0.01, rel=1e-6)


def test_adam_runs_are_bit_identical():
    rng = np.random.default_rng(6)
    grads = [rng.normal(size=(2, 3)) for _ in range(5)]

    def run():
        p = t(np.ones((2, 3)), requires_grad=True)
        state = ad.AdamState(lr=0.05)
        for g in grads:
            ad.adam_step({"p": p}, {"p": g}, state)
        return p.data

    np.testing.assert_array_equal(run(), run())


def test_adam_shape_mismatch():
    p = t(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(DimensionError):
        ad.adam_step({"p": p}, {"p": np.zeros((2, 3))}, ad.AdamState())


def test_sgd_matches_manual_update():
    p = t([[1.0]], requires_grad=True)
    ad.sgd_step({"p": p}, {"p": np.array([[2.0]])}, ad.SgdState(lr=0.25))
    assert p.data[0, 0] == pytest.approx(0.5)


def test_adam_step_counter_increments():
    p = t([[0.0]], requires_grad=True)
    state = ad.AdamState()
    for k in range(1, 4):
        ad.adam_step({"p": p}, {"p": np.ones((1, 1))}, state)
        assert state.step_count == k


# ---------------------------------------------------------------------------
# finite_diff_check itself
# ---------------------------------------------------------------------------


def test_finite_diff_exact_on_linear_map():
    rng = np.random.default_rng(7)
    x = t(rng.normal(size=(3, 4)), requires_grad=True)
    w = t(rng.normal(size=(4, 1)))

    def f(tape):
        return ad.matmul(tape, t(np.ones((1, 3))), ad.matmul(tape, x, w))

    assert ad.finite_diff_check(f, {"x": x}) < 1e-9


def test_finite_diff_constant_function_is_zero_error():
    x = t([[1.0, 2.0]], requires_grad=True)

    def f(tape):
        return t([[3.0]])

    assert ad.finite_diff_check(f, {"x": x}) == 0.0


# ---------------------------------------------------------------------------
# misc op plumbing
# ---------------------------------------------------------------------------


def test_bias_row_broadcast_gradient():
    rng = np.random.default_rng(8)
    x = t(rng.normal(size=(4, 3)), requires_grad=True)
    b = t(rng.normal(size=(1, 3)), requires_grad=True)

    def f(tape):
        s = ad.add(tape, x, b)
        return ad.matmul(tape, t(np.ones((1, 4))), ad.matmul(tape, s, t(np.ones((3, 1)))))

    assert ad.finite_diff_check(f, {"x": x, "b": b}) < 1e-6


def test_scale_rows_gradient():
    rng = np.random.default_rng(9)
    x = t(rng.normal(size=(5, 3)), requires_grad=True)
    s = t(rng.normal(size=(5, 1)), requires_grad=True)

    def f(tape):
        out = ad.scale_rows(tape, x, s)
        return ad.matmul(tape, t(np.ones((1, 5))), ad.matmul(tape, out, t(np.ones((3, 1)))))

    assert ad.finite_diff_check(f, {"x": x, "s": s}) < 1e-6


def test_concat_rows_gradient():
    rng = np.random.default_rng(10)
    a = t(rng.normal(size=(2, 3)), requires_grad=True)
    b = t(rng.normal(size=(4, 3)), requires_grad=True)

    def f(tape):
        cat = ad.concat_rows(tape, [a, b])
        return ad.matmul(tape, t(np.ones((1, 6))), ad.matmul(tape, cat, t(np.ones((3, 1)))))

    assert ad.finite_diff_check(f, {"a": a, "b": b}) < 1e-6


def test_dropout_scales_and_masks_deterministically():
    x = t(np.ones((100, 4)))
    out1 = ad.dropout(None, x, 0.5, np.random.default_rng(11))
    out2 = ad.dropout(None, x, 0.5, np.random.default_rng(11))
    np.testing.assert_array_equal(out1.data, out2.data)
    kept = out1.data != 0.0
    np.testing.assert_allclose(out1.data[kept], 2.0)


def test_forward_outputs_stay_finite():
    rng = np.random.default_rng(12)
    x = t(rng.normal(scale=50.0, size=(6, 4)))
    alpha = ad.segment_softmax(None, t(rng.normal(scale=100.0, size=(8, 1))),
                               [0, 0, 1, 2, 3, 3, 4, 5], 6)
    loss = ad.softmax_cross_entropy(None, t(rng.normal(scale=200.0, size=(4, 7))),
                                    [0, 1, 2, 3], [True] * 4)
    for arr in (ad.relu(None, x).data, alpha.data, [[loss.item()]]):
        assert np.all(np.isfinite(arr))
