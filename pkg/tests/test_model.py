"""Model assembly checks: variant wiring, fusion pairing, scoring, gradients."""

import numpy as np
import pytest

from ddsrec.encoders import TransformerConfig
from ddsrec.masking import MaskConfig
from ddsrec.model import (
    VARIANTS,
    build_params,
    cross_fuse,
    forward,
    param_count,
    score_items,
)
from ddsrec.numerics import DiffMatrix, grad_check, mul, sum_all

D = 8
N_ITEMS = 12
N_CATS = 4


def cfg(**kw):
    base = dict(d=D, blocks=1, heads=2, ffn_mult=2, dropout=0.0, emb_dropout=0.0, max_len=10)
    base.update(kw)
    return TransformerConfig(**base)


MASK = MaskConfig(theta_m=0.5, proxy_window=3)


def params_for(variant, seed=0, c=None):
    rng = np.random.default_rng(seed)
    return build_params(N_ITEMS, N_CATS, c or cfg(), variant, rng)


# ---------------------------------------------------------------------------
# parameters


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        params_for("wo_everything")
    with pytest.raises(ValueError):
        forward(params_for("full"), [0], cfg(), MASK, variant="nope")


def test_variant_param_groups():
    full = set(params_for("full"))
    wo_dd = set(params_for("wo_dd"))
    wo_sd = set(params_for("wo_sd"))
    wo_rd = set(params_for("wo_rd"))
    assert any(k.startswith("madv.") for k in full)
    assert any(k.startswith("dadv.") for k in full)
    assert "proxy_w" in full and any(k.startswith("discrete.") for k in full)
    # wo_dd: transformer and items only
    assert wo_dd == {k for k in full if k == "items" or k.startswith("trend.")}
    # wo_sd: no masking or discrete branch, one adversary set, full fusion
    assert "proxy_w" not in wo_sd
    assert not any(k.startswith(("discrete.", "dadv.")) for k in wo_sd)
    assert any(k.startswith("madv.") for k in wo_sd)
    assert {"fuse.inner1.w", "fuse.inner2.w", "fuse.outer.w"} <= wo_sd
    # wo_rd: masking branches kept, no adversary, concat head
    assert "proxy_w" in wo_rd and any(k.startswith("discrete.") for k in wo_rd)
    assert not any(k.startswith(("madv.", "dadv.")) for k in wo_rd)
    assert {"fuse.concat.w", "fuse.concat.b"} <= wo_rd


def test_param_count_audit_full_vs_wo_sd():
    full = params_for("full")
    wo_sd = params_for("wo_sd")
    d, c = D, N_CATS
    proxy = d * d
    discrete = (d * d + d) * 2 + d  # two affine layers plus the empty vector
    adversary = (d * d + d) * 2 + (d * d + d) + (d * c + c)  # pair + MLP
    expect_delta = proxy + discrete + adversary
    assert param_count(full) - param_count(wo_sd) == expect_delta
    extra = set(full) - set(wo_sd)
    assert extra == {"proxy_w"} | {k for k in full if k.startswith(("discrete.", "dadv."))}


# ---------------------------------------------------------------------------
# fusion and scoring


def fuse_params(rng):
    return {
        "fuse.inner1.w": DiffMatrix(rng.normal(size=(2 * D, D))),
        "fuse.inner1.b": DiffMatrix(rng.normal(size=(1, D))),
        "fuse.inner2.w": DiffMatrix(rng.normal(size=(2 * D, D))),
        "fuse.inner2.b": DiffMatrix(rng.normal(size=(1, D))),
        "fuse.outer.w": DiffMatrix(rng.normal(size=(2 * D, D))),
        "fuse.outer.b": DiffMatrix(rng.normal(size=(1, D))),
    }


def test_cross_fuse_zero_inputs_zero_biases():
    rng = np.random.default_rng(1)
    p = fuse_params(rng)
    p["fuse.inner1.b"] = DiffMatrix(np.zeros((1, D)))
    p["fuse.inner2.b"] = DiffMatrix(np.zeros((1, D)))
    p["fuse.outer.b"] = DiffMatrix(np.zeros((1, D)))
    z = DiffMatrix(np.zeros((1, D)))
    out = cross_fuse(z, z, z, z, p)
    np.testing.assert_allclose(out.values, np.zeros((1, D)))


def test_cross_fuse_pairing_matters():
    rng = np.random.default_rng(2)
    p = fuse_params(rng)
    tc, tf, dc, df = (DiffMatrix(rng.normal(size=(1, D))) for _ in range(4))
    base = cross_fuse(tc, tf, dc, df, p).values
    swapped = cross_fuse(tc, tf, df, dc, p).values
    assert not np.allclose(base, swapped)


def test_cross_fuse_grad_check():
    rng = np.random.default_rng(3)
    p = fuse_params(rng)
    vecs = {n: DiffMatrix(rng.normal(size=(1, D))) for n in ("tc", "tf", "dc", "df")}
    w = rng.normal(size=(1, D))
    params = dict(p)
    params.update(vecs)

    def build():
        out = cross_fuse(vecs["tc"], vecs["tf"], vecs["dc"], vecs["df"], p)
        return sum_all(mul(out, DiffMatrix(w)))

    report = grad_check(build, params)
    assert report.passed, report.summary()


def test_score_items_orthonormal_argmax():
    emb = DiffMatrix(np.eye(5))
    user = DiffMatrix(emb.values[3:4].copy())
    scores = score_items(user, emb)
    assert int(np.argmax(scores.values[0])) == 3


def test_score_items_zero_user():
    emb = DiffMatrix(np.random.default_rng(4).normal(size=(6, D)))
    scores = score_items(DiffMatrix(np.zeros((1, D))), emb)
    np.testing.assert_allclose(scores.values, np.zeros((1, 6)))


def test_score_items_grad_check():
    rng = np.random.default_rng(5)
    user = DiffMatrix(rng.normal(size=(1, D)))
    emb = DiffMatrix(rng.normal(size=(7, D)))
    w = rng.normal(size=(1, 7))

    def build():
        return sum_all(mul(score_items(user, emb), DiffMatrix(w)))

    report = grad_check(build, {"user": user, "emb": emb})
    assert report.passed, report.summary()


# ---------------------------------------------------------------------------
# forward wiring


def test_forward_shapes_all_variants():
    seq = [0, 3, 7, 2, 9]
    cats = np.array([1.0, 0.0, 1.0, 0.0])
    for variant in VARIANTS:
        p = params_for(variant)
        res = forward(p, seq, cfg(), MASK, variant, target_cats=cats)
        assert res.logits.shape == (1, N_ITEMS)
        assert res.user_vec.shape == (1, D)
        if variant == "full":
            assert set(res.adv_losses) == {
                "trend_cat",
                "trend_free",
                "discrete_cat",
                "discrete_free",
            }
            assert res.mask is not None and len(res.mask) == len(seq)
            assert res.trend_len + res.discrete_len == len(seq)
        elif variant == "wo_sd":
            assert set(res.adv_losses) == {"trend_cat", "trend_free"}
        else:
            assert res.adv_losses == {}


def test_forward_eval_mode_no_adv_losses():
    p = params_for("full")
    res = forward(p, [1, 2, 3], cfg(), MASK, "full")
    assert res.adv_losses == {}


def test_forward_empty_sequence_all_variants():
    for variant in VARIANTS:
        p = params_for(variant)
        res = forward(p, [], cfg(), MASK, variant)
        assert res.logits.shape == (1, N_ITEMS)
        assert np.isfinite(res.logits.values).all()


def test_forward_truncates_to_max_len():
    p = params_for("wo_dd", c=cfg(max_len=4))
    long_seq = [1, 2, 3, 4, 5, 6, 7, 8]
    res = forward(p, long_seq, cfg(max_len=4), MASK, "wo_dd")
    res_tail = forward(p, long_seq[-4:], cfg(max_len=4), MASK, "wo_dd")
    np.testing.assert_allclose(res.logits.values, res_tail.logits.values)


def test_forward_deterministic_eval():
    p = params_for("full")
    a = forward(p, [5, 1, 8, 2], cfg(), MASK, "full")
    b = forward(p, [5, 1, 8, 2], cfg(), MASK, "full")
    np.testing.assert_allclose(a.logits.values, b.logits.values)
    np.testing.assert_allclose(a.mask, b.mask)


def test_forward_mask_routes_subsequences():
    # with theta_m = -1 every position is trend; with theta_m = 1 nearly all
    # (random embeddings) land discrete
    p = params_for("full")
    seq = [0, 1, 2, 3, 4, 5]
    res_all = forward(p, seq, cfg(), MaskConfig(theta_m=-1.0, proxy_window=3), "full")
    assert res_all.trend_len == len(seq)
    assert res_all.discrete_len == 0
    res_none = forward(p, seq, cfg(), MaskConfig(theta_m=1.0, proxy_window=3), "full")
    assert res_none.discrete_len >= len(seq) - 1


def mask_margin(p, seq, mask_cfg):
    """Smallest |cosine - theta| over positions: finite differences flip a
    mask bit when this is tiny, so gradient checks need a safe margin."""
    from ddsrec.masking import proxy_vector

    proxy = proxy_vector(seq, p["items"], p["proxy_w"], mask_cfg.proxy_window)
    pv = proxy.values[0]
    margins = []
    for it in seq:
        ev = p["items"].values[it]
        denom = np.linalg.norm(ev) * np.linalg.norm(pv)
        cos = 0.0 if denom == 0 else float(ev @ pv) / denom
        margins.append(abs(cos - mask_cfg.theta_m))
    return min(margins)


def healthy_point(p, rng, scale=0.35):
    """Move parameters to O(1)-ish magnitudes: near-zero init values pile
    ReLU pre-activations onto the kink, where finite differences measure
    half the one-sided slope."""
    for name, q in p.items():
        if name.endswith((".gain",)):
            q.values[:] = rng.normal(1.0, 0.1, q.shape)
        else:
            q.values[:] = rng.normal(0.0, scale, q.shape)


def safe_margin_params(seq, mask_cfg, variant="full"):
    """Params at a healthy-magnitude point whose mask decision is not
    knife-edge, so finite differences cannot flip the hard routing."""
    for seed in range(60):
        p = params_for(variant, seed=seed)
        healthy_point(p, np.random.default_rng(1000 + seed))
        if mask_margin(p, seq, mask_cfg) > 1e-3:
            return p
    raise AssertionError("no safe-margin seed found")


def test_forward_end_to_end_grad_check_full():
    # Finite differences certify the conservative part of the objective:
    # recommendation CE plus the category adversarial terms. The reversed
    # free terms have no scalar potential by construction and are certified
    # by the exact dual-tape identity below.
    from ddsrec.numerics import add, cross_entropy_softmax, scale

    c = cfg()
    seq = [2, 5, 1, 8, 4, 0]
    target = 7
    cats = np.array([1.0, 0.0, 0.0, 1.0])
    p = safe_margin_params(seq, MASK)

    def build():
        res = forward(p, seq, c, MASK, "full", target_cats=cats)
        node = cross_entropy_softmax(res.logits, target)
        for k in ("trend_cat", "discrete_cat"):
            node = add(node, scale(res.adv_losses[k], 0.5))
        return node

    report = grad_check(build, p, step=1e-5, tol=1e-3)
    assert report.passed, report.summary()


def test_forward_reversal_identity_whole_model():
    # dual-tape oracle: gradients of the weighted free terms, taken through
    # the forward pass as trained, equal exactly -lambda2 times the gradients
    # of the same losses rebuilt without the reversal boundary; discriminator
    # parameters instead receive +lambda2 times their plain gradients.
    from ddsrec.adversary import discriminate
    from ddsrec.numerics import Tape, add, multilabel_cross_entropy, scale

    c = cfg()
    seq = [2, 5, 1, 8, 4, 0]
    cats = np.array([1.0, 0.0, 0.0, 1.0])
    lam2 = 0.5
    p = safe_margin_params(seq, MASK)

    def run(with_reversal):
        for q in p.values():
            q.zero_grad()
        with Tape() as tape:
            res = forward(p, seq, c, MASK, "full", target_cats=cats)
            if with_reversal:
                node = add(
                    scale(res.adv_losses["trend_free"], lam2),
                    scale(res.adv_losses["discrete_free"], lam2),
                )
            else:
                lt = multilabel_cross_entropy(
                    discriminate(res.components["trend_free"], p, "madv.disc."), cats
                )
                ld = multilabel_cross_entropy(
                    discriminate(res.components["discrete_free"], p, "dadv.disc."), cats
                )
                node = add(lt, ld)
            tape.backward(node)
        return {k: q.grad.copy() for k, q in p.items()}

    g_rev = run(True)
    g_plain = run(False)
    for name in p:
        if ".disc." in name:
            np.testing.assert_allclose(g_rev[name], lam2 * g_plain[name], atol=1e-12, err_msg=name)
        else:
            np.testing.assert_allclose(g_rev[name], -lam2 * g_plain[name], atol=1e-12, err_msg=name)
