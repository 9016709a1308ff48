"""Full model assembly: parameters, variant wiring, cross-fusion, scoring.

The full pipeline per user: adaptive masking splits the interaction sequence
into trend and discrete subsequences; the transformer encodes the trend, the
pooled MLP the discrete part; each branch representation is projected into
category / category-free components with adversarial supervision; pairwise
cross-fusion merges the four components into one user vector; scores are
inner products with the (tied) item embedding table.

Variants drop stages: wo_dd encodes the whole sequence and scores it
directly; wo_sd skips masking but keeps representation disentanglement on
the single encoder output; wo_rd keeps masking but concatenates the two
branch representations straight into a linear head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adversary import adversarial_losses, init_branch_adversary, project_components
from .encoders import (
    TransformerConfig,
    init_discrete_params,
    init_transformer_params,
    mlp_encode_discrete,
    transformer_encode,
)
from .masking import MaskConfig, adaptive_mask, proxy_vector, split_sequence
from .numerics import (
    DiffMatrix,
    add_bias,
    concat_cols,
    matmul,
    relu,
    transpose,
)

__all__ = [
    "VARIANTS",
    "ForwardResult",
    "build_params",
    "cross_fuse",
    "score_items",
    "forward",
    "param_count",
]

VARIANTS = ("full", "wo_dd", "wo_sd", "wo_rd")


def _normal(rng, rows, cols, std=None):
    if std is None:
        std = 1.0 / np.sqrt(rows)
    return DiffMatrix(rng.normal(0.0, std, size=(rows, cols)))


def build_params(
    n_items: int,
    n_categories: int,
    cfg: TransformerConfig,
    variant: str,
    rng: np.random.Generator,
) -> dict[str, DiffMatrix]:
    """All learnable tensors for a variant, flat dict keyed by dotted names.

    Groups: items (embedding table), trend.* (transformer), proxy_w (the
    masking transform), discrete.* (pooled MLP), madv.*/dadv.* (per-branch
    projections and discriminators), fuse.* (cross-fusion maps).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    d = cfg.d
    params: dict[str, DiffMatrix] = {"items": _normal(rng, n_items, d, std=1.0 / np.sqrt(d))}
    params.update({f"trend.{k}": v for k, v in init_transformer_params(cfg, rng).items()})
    if variant in ("full", "wo_rd"):
        # Identity start: the proxy begins as the plain mean of the recent
        # embeddings, so mask cosines measure real similarity from epoch
        # one. A random rotation here would make the routing threshold
        # meaningless until the transform happened to re-align, and it has
        # no gradient path to do so.
        params["proxy_w"] = DiffMatrix(np.eye(d))
        params.update({f"discrete.{k}": v for k, v in init_discrete_params(cfg, rng).items()})
    if variant in ("full", "wo_sd"):
        params.update({f"madv.{k}": v for k, v in init_branch_adversary(d, n_categories, rng).items()})
    if variant == "full":
        params.update({f"dadv.{k}": v for k, v in init_branch_adversary(d, n_categories, rng).items()})
    if variant in ("full", "wo_sd"):
        params["fuse.inner1.w"] = _normal(rng, 2 * d, d)
        params["fuse.inner1.b"] = DiffMatrix(np.zeros((1, d)))
        params["fuse.inner2.w"] = _normal(rng, 2 * d, d)
        params["fuse.inner2.b"] = DiffMatrix(np.zeros((1, d)))
        params["fuse.outer.w"] = _normal(rng, 2 * d, d)
        params["fuse.outer.b"] = DiffMatrix(np.zeros((1, d)))
    if variant == "wo_rd":
        params["fuse.concat.w"] = _normal(rng, 2 * d, d)
        params["fuse.concat.b"] = DiffMatrix(np.zeros((1, d)))
    return params


def param_count(params: dict[str, DiffMatrix]) -> int:
    return sum(p.values.size for p in params.values())


def cross_fuse(
    trend_cat: DiffMatrix,
    trend_free: DiffMatrix,
    discrete_cat: DiffMatrix,
    discrete_free: DiffMatrix,
    params: dict[str, DiffMatrix],
) -> DiffMatrix:
    """Pairwise cross-fusion into the user vector.

    Inner map 1 mixes the trend category component with the discrete
    category-free component; inner map 2 mixes the complementary pair; the
    outer map fuses both. Inner maps use ReLU; the outer map is affine so
    the user vector is unconstrained in sign.
    """
    pair1 = relu(
        add_bias(matmul(concat_cols([trend_cat, discrete_free]), params["fuse.inner1.w"]), params["fuse.inner1.b"])
    )
    pair2 = relu(
        add_bias(matmul(concat_cols([trend_free, discrete_cat]), params["fuse.inner2.w"]), params["fuse.inner2.b"])
    )
    return add_bias(matmul(concat_cols([pair1, pair2]), params["fuse.outer.w"]), params["fuse.outer.b"])


def score_items(user_vec: DiffMatrix, item_emb: DiffMatrix) -> DiffMatrix:
    """Logit per item: inner product with the tied embedding table (1 x |I|)."""
    return matmul(user_vec, transpose(item_emb))


@dataclass
class ForwardResult:
    logits: DiffMatrix
    user_vec: DiffMatrix
    adv_losses: dict[str, DiffMatrix] = field(default_factory=dict)
    components: dict[str, DiffMatrix] = field(default_factory=dict)
    mask: np.ndarray | None = None
    trend_len: int = 0
    discrete_len: int = 0


def forward(
    params: dict[str, DiffMatrix],
    seq: list[int],
    cfg: TransformerConfig,
    mask_cfg: MaskConfig,
    variant: str = "full",
    target_cats: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> ForwardResult:
    """One user's pipeline pass. Adversarial losses are computed only when
    target_cats (the target item's category multi-hot) is given, i.e. during
    training; evaluation never sees the target. Sequences longer than the
    position table keep their most recent cfg.max_len items."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    seq = list(seq[-cfg.max_len:])
    items = params["items"]

    if variant == "wo_dd":
        user = transformer_encode(seq, items, params, cfg, "trend.", rng, training)
        return ForwardResult(score_items(user, items), user)

    if variant == "wo_sd":
        h = transformer_encode(seq, items, params, cfg, "trend.", rng, training)
        h_cat, h_free = project_components(h, params, "madv.proj.")
        adv: dict[str, DiffMatrix] = {}
        if target_cats is not None:
            l_cat, l_free = adversarial_losses(h_cat, h_free, params, "madv.disc.", target_cats)
            adv = {"trend_cat": l_cat, "trend_free": l_free}
        user = cross_fuse(h_cat, h_free, h_cat, h_free, params)
        comps = {"trend_cat": h_cat, "trend_free": h_free}
        return ForwardResult(score_items(user, items), user, adv, comps)

    # masking variants: full and wo_rd
    if seq:
        proxy = proxy_vector(seq, items, params["proxy_w"], mask_cfg.proxy_window)
        bits = adaptive_mask(seq, items.values, proxy.values, mask_cfg.theta_m)
        split = split_sequence(seq, bits)
        trend_seq = [seq[j] for j in split.trend]
        discrete_seq = [seq[j] for j in split.discrete]
    else:
        bits = np.zeros(0, dtype=np.int8)
        trend_seq, discrete_seq = [], []
    h_m = transformer_encode(trend_seq, items, params, cfg, "trend.", rng, training)
    h_d = mlp_encode_discrete(discrete_seq, items, params, cfg, "discrete.", rng, training)

    if variant == "wo_rd":
        user = add_bias(matmul(concat_cols([h_m, h_d]), params["fuse.concat.w"]), params["fuse.concat.b"])
        return ForwardResult(
            score_items(user, items), user, mask=bits, trend_len=len(trend_seq), discrete_len=len(discrete_seq)
        )

    t_cat, t_free = project_components(h_m, params, "madv.proj.")
    d_cat, d_free = project_components(h_d, params, "dadv.proj.")
    adv = {}
    if target_cats is not None:
        lt_cat, lt_free = adversarial_losses(t_cat, t_free, params, "madv.disc.", target_cats)
        ld_cat, ld_free = adversarial_losses(d_cat, d_free, params, "dadv.disc.", target_cats)
        adv = {
            "trend_cat": lt_cat,
            "trend_free": lt_free,
            "discrete_cat": ld_cat,
            "discrete_free": ld_free,
        }
    user = cross_fuse(t_cat, t_free, d_cat, d_free, params)
    comps = {
        "trend_cat": t_cat,
        "trend_free": t_free,
        "discrete_cat": d_cat,
        "discrete_free": d_free,
    }
    return ForwardResult(
        score_items(user, items),
        user,
        adv,
        comps,
        mask=bits,
        trend_len=len(trend_seq),
        discrete_len=len(discrete_seq),
    )
