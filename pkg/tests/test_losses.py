import numpy as np
import pytest
from hypothesis import given, strategies as st

from constrained_nn.losses import (LOSS_KINDS, NonDifferentiableLoss, OuterConstraint, ScalarLoss, eval_loss,
                                   eval_loss_grad, eval_outer, eval_outer_grad, sgn)
from constrained_nn.problem import _surrogate_for

SURROGATE_PAIRS = [(m, _surrogate_for(m, s)) for m in ("zero-one-match", "neg-zero-one-match", "misclassification")
                   for s in (0.0, 0.1)]
CONVEX_KINDS = ["hinge", "smoothed-hinge", "reverse-hinge", "smoothed-reverse-hinge", "cross-entropy-on-score", "zero"]
SMOOTH_KINDS = ["smoothed-hinge", "smoothed-reverse-hinge", "cross-entropy-on-score"]
labels = st.sampled_from([-1.0, 1.0])
ys = st.floats(-20, 20)


def test_hand_values():
    assert eval_loss(ScalarLoss("hinge"), 0.0, 1) == 1.0
    assert eval_loss(ScalarLoss("hinge"), 2.0, 1) == 0.0
    assert eval_loss(ScalarLoss("reverse-hinge"), -0.5, 1) == -0.5
    assert eval_loss(ScalarLoss("reverse-hinge"), -3.0, 1) == -1.0
    assert eval_loss(ScalarLoss("zero-one-match"), 0.3, 1) == 1.0
    assert eval_loss(ScalarLoss("neg-zero-one-match"), -0.5, 1) == 0.0
    assert eval_loss(ScalarLoss("misclassification"), -0.5, 1) == 1.0
    assert np.isclose(eval_loss(ScalarLoss("cross-entropy-on-score"), 0.0, 1), np.log(2))


def test_smoothed_hinge_is_quadratic_near_kink():
    loss = ScalarLoss("smoothed-hinge", 0.1)
    # (v + s)^2 / (4 s) with v = 1 - y
    assert np.isclose(eval_loss(loss, 1.0, 1), 0.1**2 / 0.4)
    assert np.isclose(eval_loss(loss, 0.5, 1), 0.5)
    assert eval_loss(loss, 1.2, 1) == 0.0


def test_sign_of_zero_is_negative():
    assert sgn(0.0) == -1
    assert eval_loss(ScalarLoss("zero-one-match"), 0.0, -1) == 1.0
    assert eval_loss(ScalarLoss("zero-one-match"), 0.0, 1) == 0.0


def test_rejects_bad_labels():
    with pytest.raises(ValueError):
        eval_loss(ScalarLoss("hinge"), 0.0, 0)


def test_gradient_examples():
    hinge = ScalarLoss("hinge")
    assert eval_loss_grad(hinge, 0.0, 1) == -1.0
    assert eval_loss_grad(hinge, 2.0, 1) == 0.0
    for kind in ("zero-one-match", "neg-zero-one-match", "misclassification"):
        with pytest.raises(NonDifferentiableLoss):
            eval_loss_grad(ScalarLoss(kind), 0.3, 1)


def test_paper_reverse_surrogate_fails_domination():
    # max(-1, zy) at y = -0.5, z = 1 is below -1{match} = 0; the shipped surrogate is not
    assert eval_loss(ScalarLoss("reverse-hinge"), -0.5, 1) < eval_loss(ScalarLoss("neg-zero-one-match"), -0.5, 1)
    shipped = _surrogate_for("neg-zero-one-match", 0.0)
    assert eval_loss(shipped, -0.5, 1) >= 0.0


@pytest.mark.parametrize("metric,surrogate", SURROGATE_PAIRS, ids=lambda v: getattr(v, "kind", v))
@pytest.mark.parametrize("D", [1.0, 10.0])
def test_surrogates_dominate_metrics_on_grid(metric, surrogate, D):
    y = np.arange(-3 * D, 3 * D + 1e-3, 1e-3)
    y = np.append(y, 0.0)
    for z in (-1.0, 1.0):
        zz = np.full_like(y, z)
        assert np.all(surrogate(y, zz) >= ScalarLoss(metric)(y, zz))


@pytest.mark.parametrize("kind", CONVEX_KINDS)
@given(u=ys, v=ys, z=labels)
def test_midpoint_convexity(kind, u, v, z):
    f = ScalarLoss(kind)
    assert eval_loss(f, (u + v) / 2, z) <= (eval_loss(f, u, z) + eval_loss(f, v, z)) / 2 + 1e-12


@pytest.mark.parametrize("kind", CONVEX_KINDS)
@given(u=ys, v=ys, z=labels)
def test_lipschitz_constant_holds(kind, u, v, z):
    f = ScalarLoss(kind)
    assert abs(eval_loss(f, u, z) - eval_loss(f, v, z)) <= f.lipschitz * abs(u - v) + 1e-12
    assert abs(eval_loss_grad(f, u, z)) <= f.lipschitz + 1e-12


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
@given(u=ys, v=ys, z=labels)
def test_smoothness_constant_holds(kind, u, v, z):
    f = ScalarLoss(kind)
    assert abs(eval_loss_grad(f, u, z) - eval_loss_grad(f, v, z)) <= f.smoothness * abs(u - v) + 1e-12


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
@given(y=ys, z=labels)
def test_gradient_matches_finite_difference(kind, y, z):
    f = ScalarLoss(kind)
    h = 1e-6
    fd = (eval_loss(f, y + h, z) - eval_loss(f, y - h, z)) / (2 * h)
    assert abs(fd - eval_loss_grad(f, y, z)) <= 1e-5


@pytest.mark.parametrize("kind", sorted(LOSS_KINDS))
@pytest.mark.parametrize("D", [0.5, 1.0, 10.0])
def test_sup_bound_covers_grid(kind, D):
    f = ScalarLoss(kind)
    y = np.linspace(-2 * D, 2 * D, 4001)
    for z in (-1.0, 1.0):
        assert np.max(np.abs(f(y, np.full_like(y, z)))) <= f.sup_abs(D) + 1e-12


def test_sup_bound_closed_forms():
    assert ScalarLoss("hinge").sup_abs(1.0) == 3.0
    assert ScalarLoss("zero").sup_abs(1.0) == 0.0
    assert np.isclose(ScalarLoss("cross-entropy-on-score").sup_abs(1.0), np.log1p(np.e**2))
    assert np.isclose(ScalarLoss("cross-entropy-on-score").sup_abs(1.0), 2.1269, atol=1e-4)


def test_linear_outer_example():
    g = OuterConstraint("linear-combination", (1, 0, 0, 1))
    xi = np.array([0.2, 0.9, 0.1, 0.3])
    assert np.isclose(eval_outer(g, xi), 0.5)
    assert np.array_equal(eval_outer_grad(g, xi), [1, 0, 0, 1])
    assert np.array_equal(eval_outer_grad(g, -xi), [1, 0, 0, 1])


def test_mean_outer_examples():
    gm = OuterConstraint("g-mean")
    assert eval_outer(gm, np.array([-1.0, -1.0])) == 0.0
    assert np.isclose(eval_outer(gm, np.array([-0.64, -0.81])), 0.28)
    hm = OuterConstraint("h-mean")
    assert np.isclose(eval_outer(hm, np.array([-0.5, -1.0])), 1 - 2 / (2 + 1))
    assert eval_outer(gm, np.array([0.0, -0.5])) == 1.0
    assert eval_outer(hm, np.array([0.0, 0.0])) == 1.0
    assert np.isclose(eval_outer(OuterConstraint("g-mean", threshold=0.2), np.array([-0.64, -0.81])), 0.08)


def test_mean_outer_gradient_is_bounded_at_zero_rate():
    for kind in ("g-mean", "h-mean"):
        g = OuterConstraint(kind)
        grad = eval_outer_grad(g, np.array([0.0, -0.5]))
        assert np.all(np.isfinite(grad)) and np.sum(np.abs(grad)) <= g.lipschitz + 1e-9


rates = st.floats(0.05, 1.0)


@pytest.mark.parametrize("kind", ["g-mean", "h-mean"])
@given(a1=rates, a2=rates, b1=rates, b2=rates)
def test_mean_outer_convex_and_increasing(kind, a1, a2, b1, b2):
    g = OuterConstraint(kind)
    u, v = -np.array([a1, a2]), -np.array([b1, b2])
    assert g((u + v) / 2) <= (g(u) + g(v)) / 2 + 1e-12
    assert np.all(g.grad(u) >= 0)
    assert abs(g(u) - g(v)) <= g.lipschitz * np.max(np.abs(u - v)) + 1e-12


@pytest.mark.parametrize("kind", ["g-mean", "h-mean"])
@given(a1=rates, a2=rates)
def test_mean_outer_gradient_matches_finite_difference(kind, a1, a2):
    g = OuterConstraint(kind)
    xi = -np.array([min(a1, 0.99), min(a2, 0.99)])
    h = 1e-7
    fd = [(g(xi + h * e) - g(xi - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(fd, g.grad(xi), atol=1e-5)
