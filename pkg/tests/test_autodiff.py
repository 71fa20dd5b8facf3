"""Reverse-mode gradients checked against central finite differences,
optimizer behavior, and the non-finite guard."""

import numpy as np
import pytest

from difex.autodiff import (
    AdamW,
    NonFiniteError,
    Tensor,
    add_bias,
    backward,
    concat_cols,
    finite_difference_grad,
    matmul,
    rowwise_div,
    softmax_cross_entropy,
    squash_rows,
    sum_all,
    sum_rows,
    take_rows,
)


def rel_err(got, want):
    scale = max(np.abs(got).max(), np.abs(want).max(), 1e-12)
    return np.abs(got - want).max() / scale


def fd_check(build, x0, tol=1e-5):
    """build maps one ndarray to a scalar Tensor; compare both gradients.

    The probe point is copied so in-place perturbation never reaches
    arrays a builder closure captured as constants.
    """
    leaf = Tensor(x0)
    build(leaf).backward()
    numeric = finite_difference_grad(
        lambda a: float(build(Tensor(a)).data), x0.copy()
    )
    assert rel_err(leaf.grad, numeric) < tol


# -- op values ------------------------------------------------------------


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((a @ b).data, b.data)


def test_matmul_hand_product():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_shape_errors():
    with pytest.raises(ValueError):
        matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))
    with pytest.raises(ValueError):
        matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))


def test_relu_values_and_zero_subgradient():
    x = Tensor([-1.0, 0.0, 2.0])
    out = x.relu()
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])
    sum_all(out).backward()
    # the kink at exactly 0 contributes nothing
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_add_zero_is_identity():
    x = Tensor([[1.5, -2.0]])
    out = x + Tensor([[0.0, 0.0]])
    assert np.array_equal(out.data, x.data)


def test_elementwise_shape_mismatch():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]) * Tensor([[1.0, 2.0]])


# -- finite-difference agreement, op by op --------------------------------


def test_matmul_grads_match_differences():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a0 = rng.normal(size=(5, 4))
        b0 = rng.normal(size=(4, 3))
        w = rng.normal(size=(5, 3))  # fixed projection to a scalar
        fd_check(lambda t: sum_all(matmul(t, Tensor(b0)) * Tensor(w)), a0)
        fd_check(lambda t: sum_all(matmul(Tensor(a0), t) * Tensor(w)), b0)


def test_unary_grads_match_differences():
    rng = np.random.default_rng(1)
    for seed in range(5):
        x0 = rng.normal(size=(3, 4))
        x0 += 0.2 * np.sign(x0)  # keep clear of relu/abs kinks
        fd_check(lambda t: sum_all(t.relu()), x0)
        fd_check(lambda t: sum_all(t.abs()), x0)
        fd_check(lambda t: sum_all(t.tanh() * Tensor(x0)), x0)
        fd_check(lambda t: sum_all((t * t).sqrt()), x0)
        fd_check(lambda t: sum_all(t.scale(-2.5) * Tensor(x0)), x0)
        fd_check(lambda t: sum_all((-t) * Tensor(x0)), x0)
        fd_check(lambda t: sum_all(t.T @ Tensor(x0)), x0)


def test_binary_grads_match_differences():
    rng = np.random.default_rng(2)
    y0 = rng.normal(size=(3, 4))
    for _ in range(5):
        x0 = rng.normal(size=(3, 4))
        fd_check(lambda t: sum_all((t + Tensor(y0)) * (t - Tensor(y0))), x0)
        fd_check(lambda t: sum_all(t * Tensor(y0) * t), x0)


def test_structural_op_grads_match_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x0 = rng.normal(size=(4, 3))
        b0 = rng.normal(size=3)
        s0 = rng.uniform(0.5, 2.0, size=4)
        w = rng.normal(size=(4, 3))
        fd_check(lambda t: sum_all(add_bias(t, Tensor(b0)) * Tensor(w)), x0)
        fd_check(lambda t: sum_all(add_bias(Tensor(x0), t) * Tensor(w)), b0)
        fd_check(lambda t: sum_all(sum_rows(t * t)), x0)
        fd_check(lambda t: sum_all(rowwise_div(t, Tensor(s0)) * Tensor(w)), x0)
        fd_check(lambda t: sum_all(rowwise_div(Tensor(x0), t) * Tensor(w)), s0)
        fd_check(
            lambda t: sum_all(concat_cols(t, t.scale(2.0)) * Tensor(np.hstack([w, w]))),
            x0,
        )


def test_take_rows_scatter_adds_duplicates():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(4, 3))
    idx = np.array([0, 0, 2, 3, 0])
    w = rng.normal(size=(5, 3))
    fd_check(lambda t: sum_all(take_rows(t, idx) * Tensor(w)), x0)
    # row 0 is gathered three times, so its gradient accumulates three terms
    leaf = Tensor(x0)
    sum_all(take_rows(leaf, idx)).backward()
    assert np.array_equal(leaf.grad[0], [3.0, 3.0, 3.0])
    assert np.array_equal(leaf.grad[1], [0.0, 0.0, 0.0])


def test_squash_rows_grads_match_differences():
    rng = np.random.default_rng(5)
    for scale in (0.1, 1.0, 30.0):
        x0 = rng.normal(size=(5, 3)) * scale
        w = rng.normal(size=(5, 3))
        fd_check(lambda t: sum_all(squash_rows(t) * Tensor(w)), x0)
        fd_check(lambda t: sum_all(squash_rows(t, radius=2.5) * Tensor(w)), x0)


def test_squash_rows_bounds_and_liveness():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(6, 4)) * 100.0)
    out = squash_rows(x)
    norms = np.sqrt((out.data**2).sum(axis=1))
    assert np.all(norms < 1.0)
    # even far outside the ball the map stays responsive: no dead rows
    sum_all(out * Tensor(rng.normal(size=(6, 4)))).backward()
    assert np.all(np.abs(x.grad).max(axis=1) > 0)


def test_squash_rows_rejects_bad_inputs():
    with pytest.raises(ValueError):
        squash_rows(Tensor([1.0, 2.0]))
    with pytest.raises(ValueError):
        squash_rows(Tensor([[1.0, 2.0]]), radius=0.0)


def test_softmax_cross_entropy_uniform_logits():
    # all-equal logits: loss is exactly log C
    loss = softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
    assert float(loss.data) == np.log(4.0)
    assert float(loss.data) >= 0.0


def test_softmax_cross_entropy_saturated_no_overflow():
    loss = softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [0])
    assert 0.0 <= float(loss.data) < 1e-12
    assert np.isfinite(loss.data)


def test_softmax_cross_entropy_grads_match_differences():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 5, size=8)
    for _ in range(5):
        x0 = rng.normal(size=(8, 5))
        fd_check(lambda t: softmax_cross_entropy(t, labels), x0)


def test_softmax_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0])
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros(3)), [0])


# -- backward pass mechanics ----------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    sum_all(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_zero_scale_is_zero():
    x = Tensor([1.0, 2.0, 3.0])
    sum_all(x.scale(0.0)).backward()
    assert np.array_equal(x.grad, np.zeros(3))


def test_backward_handles_reused_nodes():
    # d/dx sum(y + y) with y = x*x is 4x, visiting y's rule exactly once
    x = Tensor([1.0, -2.0, 3.0])
    y = x * x
    sum_all(y + y).backward()
    assert np.allclose(x.grad, 4.0 * x.data)


def test_backward_root_must_be_scalar():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).backward()


def test_backward_zero_fills_unreachable_params():
    w = Tensor(np.ones((2, 2)))
    x = Tensor([3.0])
    backward(sum_all(x * x), params=[w, x])
    assert np.array_equal(w.grad, np.zeros((2, 2)))
    assert np.array_equal(x.grad, [6.0])


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(8)
    for _ in range(5):
        x0 = rng.normal(size=(3, 3))
        a, b = rng.uniform(0.5, 2.0, size=2)

        def l1(t):
            return sum_all(t * t)

        def l2(t):
            return sum_all(t.tanh() * Tensor(x0))

        t = Tensor(x0)
        (l1(t).scale(a) + l2(t).scale(b)).backward()
        combined = t.grad.copy()
        t1 = Tensor(x0)
        l1(t1).backward()
        t2 = Tensor(x0)
        l2(t2).backward()
        assert np.abs(combined - (a * t1.grad + b * t2.grad)).max() < 1e-10


# -- the oracle itself ----------------------------------------------------


def test_finite_difference_of_sum_is_ones():
    got = finite_difference_grad(lambda a: float(a.sum()), np.zeros((2, 2)))
    assert np.allclose(got, 1.0, atol=1e-9)


def test_finite_difference_of_half_norm():
    got = finite_difference_grad(
        lambda a: 0.5 * float((a * a).sum()), np.array([1.0, 2.0])
    )
    assert np.abs(got - [1.0, 2.0]).max() < 1e-8


def test_finite_difference_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda a: 0.0, np.zeros(2), h=0.0)


# -- optimizer ------------------------------------------------------------


def test_adamw_zero_grad_zero_decay_keeps_params():
    p = Tensor([1.0, -2.0])
    opt = AdamW([p], weight_decay=0.0)
    before = p.data.copy()
    for _ in range(3):
        opt.zero_grad()
        opt.step()
    assert np.array_equal(p.data, before)


def test_adamw_descends_a_parabola():
    p = Tensor([1.0])
    opt = AdamW([p], lr=1e-3, weight_decay=0.0)
    loss0 = float(p.data[0] ** 2)
    opt.zero_grad()
    sum_all(p * p).backward()
    opt.step()
    assert float(p.data[0] ** 2) < loss0


def test_adamw_converges_on_quadratic():
    # f(w) = (w - 3)^2; 200 steps at lr 0.1 land within 1e-3 of the minimizer
    p = Tensor([0.0])
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    for _ in range(200):
        diff = p - Tensor([3.0])
        opt.zero_grad()
        sum_all(diff * diff).backward()
        opt.step()
    assert abs(float(p.data[0]) - 3.0) < 1e-3


def test_adamw_decoupled_decay_is_geometric():
    # with zero gradient the update reduces to p *= (1 - lr*wd) each step
    lr, wd = 1e-2, 0.5
    p = Tensor([2.0])
    opt = AdamW([p], lr=lr, weight_decay=wd)
    for _ in range(4):
        opt.zero_grad()
        opt.step()
    assert abs(float(p.data[0]) - 2.0 * (1 - lr * wd) ** 4) < 1e-15


def test_adamw_first_step_matches_hand_update():
    # bias-corrected first step with wd=0 moves by lr * g/(|g| + eps)
    g = np.array([0.3, -4.0])
    p = Tensor([1.0, 1.0])
    opt = AdamW([p], lr=1e-3, weight_decay=0.0)
    p.grad = g.copy()
    opt.step()
    want = 1.0 - 1e-3 * g / (np.abs(g) + 1e-8)
    assert np.abs(p.data - want).max() < 1e-12


def test_adamw_rejects_mismatched_grad():
    p = Tensor([1.0, 2.0])
    opt = AdamW([p])
    p.grad = np.zeros(3)
    with pytest.raises(ValueError):
        opt.step()


# -- non-finite guard -----------------------------------------------------


def test_tensor_rejects_non_finite_values():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.inf])
    with pytest.raises(NonFiniteError):
        Tensor([[np.nan]])


def test_optimizer_step_guards_parameters():
    # at lr 1e308 the first update lands near -1e308 (finite); the second
    # overflows and must be caught rather than written back
    p = Tensor([1.0])
    opt = AdamW([p], lr=1e308, weight_decay=0.0)
    with np.errstate(over="ignore"):
        p.grad = np.array([1.0])
        opt.step()
        assert np.isfinite(p.data).all()
        p.grad = np.array([1.0])
        with pytest.raises(NonFiniteError):
            opt.step()


# -- determinism ----------------------------------------------------------


def test_training_loop_is_bit_deterministic():
    def run():
        rng = np.random.default_rng(11)
        w = Tensor(rng.normal(size=(4, 3)))
        b = Tensor(np.zeros(3))
        opt = AdamW([w, b], lr=1e-3)
        x = rng.normal(size=(8, 4))
        y = rng.integers(0, 3, size=8)
        for _ in range(5):
            logits = add_bias(matmul(Tensor(x), w), b)
            loss = softmax_cross_entropy(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
        return w.data.copy(), b.data.copy()

    w1, b1 = run()
    w2, b2 = run()
    assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
