"""Disentanglement checks: projections, reversal identities, loss wiring."""

import numpy as np
import pytest

from ddsrec.adversary import (
    adversarial_losses,
    discriminate,
    dual_disentangle,
    init_branch_adversary,
    init_discriminator,
    init_projection_pair,
    project_components,
)
from ddsrec.numerics import (
    DiffMatrix,
    Tape,
    add,
    grad_check,
    mul,
    scale,
    sum_all,
)

D = 6
NC = 4


def branch_params(rng, prefix=""):
    p = init_branch_adversary(D, NC, rng)
    return {prefix + k: v for k, v in p.items()} if prefix else p


# ---------------------------------------------------------------------------
# projections


def test_project_zero_input_gives_biases():
    rng = np.random.default_rng(0)
    p = init_projection_pair(D, rng)
    p["cat.b"] = DiffMatrix(rng.normal(size=(1, D)))
    p["free.b"] = DiffMatrix(rng.normal(size=(1, D)))
    h = DiffMatrix(np.zeros((1, D)))
    h_cat, h_free = project_components(h, p, "")
    np.testing.assert_allclose(h_cat.values, p["cat.b"].values)
    np.testing.assert_allclose(h_free.values, p["free.b"].values)


def test_project_identity_and_zero_maps():
    p = {
        "cat.w": DiffMatrix(np.eye(D)),
        "cat.b": DiffMatrix(np.zeros((1, D))),
        "free.w": DiffMatrix(np.zeros((D, D))),
        "free.b": DiffMatrix(np.full((1, D), 0.25)),
    }
    h = DiffMatrix(np.random.default_rng(1).normal(size=(1, D)))
    h_cat, h_free = project_components(h, p, "")
    np.testing.assert_allclose(h_cat.values, h.values)
    np.testing.assert_allclose(h_free.values, np.full((1, D), 0.25))


def test_project_grad_check():
    rng = np.random.default_rng(2)
    p = init_projection_pair(D, rng)
    h = DiffMatrix(rng.normal(size=(1, D)))
    w1 = rng.normal(size=(1, D))
    w2 = rng.normal(size=(1, D))
    params = dict(p)
    params["h"] = h

    def build():
        h_cat, h_free = project_components(h, p, "")
        return add(sum_all(mul(h_cat, DiffMatrix(w1))), sum_all(mul(h_free, DiffMatrix(w2))))

    report = grad_check(build, params)
    assert report.passed, report.summary()


# ---------------------------------------------------------------------------
# adversarial losses


def test_forward_value_unaffected_by_reversal():
    rng = np.random.default_rng(3)
    p = init_discriminator(D, NC, rng)
    h = DiffMatrix(rng.normal(size=(1, D)))
    t = np.array([1.0, 0.0, 1.0, 0.0])
    # loss through the reversal equals loss computed directly
    from ddsrec.numerics import multilabel_cross_entropy

    direct = multilabel_cross_entropy(discriminate(h, p, ""), t)
    h2 = DiffMatrix(h.values.copy())
    _, via_reversal = adversarial_losses(h2, h2, p, "", t)
    np.testing.assert_allclose(via_reversal.item(), direct.item(), atol=1e-15)


def grads_of_free_branch(weight, rng_seed=4, reverse=True):
    """Gradients of weight * free-branch loss, with or without reversal."""
    rng = np.random.default_rng(rng_seed)
    p = init_discriminator(D, NC, rng)
    h = DiffMatrix(rng.normal(size=(1, D)))
    t = (rng.random(NC) < 0.5).astype(float)
    from ddsrec.numerics import grad_reverse, multilabel_cross_entropy

    with Tape() as tape:
        x = grad_reverse(h, 1.0) if reverse else h
        loss = scale(multilabel_cross_entropy(discriminate(x, p, ""), t), weight)
        tape.backward(loss)
    return h.grad.copy(), {k: v.grad.copy() for k, v in p.items()}


def test_reversal_identity_minus_lambda2():
    for lam2 in (0.25, 0.5, 1.0, 2.0):
        g_rev, d_rev = grads_of_free_branch(lam2, reverse=True)
        g_plain, d_plain = grads_of_free_branch(1.0, reverse=False)
        np.testing.assert_allclose(g_rev, -lam2 * g_plain, atol=1e-12)
        # discriminator still receives plain minimization gradients, scaled
        for k in d_rev:
            np.testing.assert_allclose(d_rev[k], lam2 * d_plain[k], atol=1e-12)


def test_zero_weight_silences_upstream():
    g_rev, d_rev = grads_of_free_branch(0.0, reverse=True)
    np.testing.assert_allclose(g_rev, np.zeros_like(g_rev))
    for g in d_rev.values():
        np.testing.assert_allclose(g, np.zeros_like(g))


def test_losses_length_mismatch():
    rng = np.random.default_rng(5)
    p = init_discriminator(D, NC, rng)
    h = DiffMatrix(rng.normal(size=(1, D)))
    from ddsrec.numerics import ShapeMismatch

    with pytest.raises(ShapeMismatch):
        adversarial_losses(h, h, p, "", np.ones(NC + 1))


def test_cat_branch_grad_check():
    # the cat side has no reversal, so finite differences certify it
    rng = np.random.default_rng(6)
    p = init_discriminator(D, NC, rng)
    h = DiffMatrix(rng.normal(size=(1, D)))
    t = np.array([0.0, 1.0, 0.0, 1.0])
    params = dict(p)
    params["h"] = h

    def build():
        loss_cat, _ = adversarial_losses(h, DiffMatrix(np.zeros((1, D))), p, "", t)
        return loss_cat

    report = grad_check(build, params)
    assert report.passed, report.summary()


# ---------------------------------------------------------------------------
# dual branch


def test_dual_symmetry_identical_inputs_and_params():
    rng = np.random.default_rng(7)
    shared = init_branch_adversary(D, NC, np.random.default_rng(99))
    params = {}
    for k, v in shared.items():
        params[f"madv.{k}"] = DiffMatrix(v.values.copy())
        params[f"dadv.{k}"] = DiffMatrix(v.values.copy())
    h = DiffMatrix(rng.normal(size=(1, D)))
    h2 = DiffMatrix(h.values.copy())
    t = np.array([1.0, 0.0, 0.0, 1.0])
    out = dual_disentangle(h, h2, params, t)
    np.testing.assert_allclose(out.trend_cat.values, out.discrete_cat.values)
    np.testing.assert_allclose(out.trend_free.values, out.discrete_free.values)
    np.testing.assert_allclose(out.loss_trend_cat.item(), out.loss_discrete_cat.item())
    np.testing.assert_allclose(out.loss_trend_free.item(), out.loss_discrete_free.item())


def test_dual_shapes_and_finite_nonnegative_losses():
    rng = np.random.default_rng(8)
    params = {}
    params.update({f"madv.{k}": v for k, v in init_branch_adversary(D, NC, rng).items()})
    params.update({f"dadv.{k}": v for k, v in init_branch_adversary(D, NC, rng).items()})
    for _ in range(50):
        h_m = DiffMatrix(rng.normal(size=(1, D)))
        h_d = DiffMatrix(rng.normal(size=(1, D)))
        t = (rng.random(NC) < 0.5).astype(float)
        out = dual_disentangle(h_m, h_d, params, t)
        for v in (out.trend_cat, out.trend_free, out.discrete_cat, out.discrete_free):
            assert v.shape == (1, D)
        for l in (
            out.loss_trend_cat,
            out.loss_trend_free,
            out.loss_discrete_cat,
            out.loss_discrete_free,
        ):
            val = l.item()
            assert np.isfinite(val) and val >= 0.0


def test_branches_are_independent():
    # gradient from the trend losses must not touch discrete-branch params
    rng = np.random.default_rng(9)
    params = {}
    params.update({f"madv.{k}": v for k, v in init_branch_adversary(D, NC, rng).items()})
    params.update({f"dadv.{k}": v for k, v in init_branch_adversary(D, NC, rng).items()})
    h_m = DiffMatrix(rng.normal(size=(1, D)))
    h_d = DiffMatrix(rng.normal(size=(1, D)))
    t = np.ones(NC)
    with Tape() as tape:
        out = dual_disentangle(h_m, h_d, params, t)
        loss = add(out.loss_trend_cat, out.loss_trend_free)
        tape.backward(loss)
    for k, v in params.items():
        if k.startswith("dadv."):
            np.testing.assert_allclose(v.grad, np.zeros_like(v.grad))
    assert np.any(params["madv.disc.w1"].grad != 0)
    assert np.any(h_m.grad != 0)
    np.testing.assert_allclose(h_d.grad, np.zeros_like(h_d.grad))
