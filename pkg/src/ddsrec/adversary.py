"""Adversarial category disentanglement.

Each branch representation h is projected by two learned affine maps into a
category component h_cat and a category-free component h_free. A per-branch
discriminator (two-layer MLP to category logits) is trained to recover the
target item's categories from both components. The cat component cooperates
with the discriminator; the free component fights it through a gradient
reversal placed between the component and the discriminator input, so one
joint optimization implements the min/max game.

The reversal boundary here always uses factor 1; the adversarial loss weight
is applied once where the total training objective is assembled. That keeps
three facts simultaneously true: upstream gradients scale as minus the
configured weight, discriminators receive plain minimization gradients at
that same weight, and a zero weight silences the entire adversarial path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    DiffMatrix,
    add_bias,
    grad_reverse,
    matmul,
    multilabel_cross_entropy,
    relu,
)

__all__ = [
    "DisentangleOutput",
    "init_projection_pair",
    "init_discriminator",
    "init_branch_adversary",
    "project_components",
    "discriminate",
    "adversarial_losses",
    "dual_disentangle",
]


def _normal(rng, rows, cols, std=None):
    if std is None:
        std = 1.0 / np.sqrt(rows)
    return DiffMatrix(rng.normal(0.0, std, size=(rows, cols)))


def init_projection_pair(d: int, rng: np.random.Generator) -> dict[str, DiffMatrix]:
    """Two affine d -> d maps: 'cat' for the category component, 'free' for
    the category-independent one."""
    return {
        "cat.w": _normal(rng, d, d),
        "cat.b": DiffMatrix(np.zeros((1, d))),
        "free.w": _normal(rng, d, d),
        "free.b": DiffMatrix(np.zeros((1, d))),
    }


def init_discriminator(d: int, n_categories: int, rng: np.random.Generator) -> dict[str, DiffMatrix]:
    """Two-layer MLP d -> d -> |C| producing category logits."""
    return {
        "w1": _normal(rng, d, d),
        "b1": DiffMatrix(np.zeros((1, d))),
        "w2": _normal(rng, d, n_categories),
        "b2": DiffMatrix(np.zeros((1, n_categories))),
    }


def init_branch_adversary(d: int, n_categories: int, rng: np.random.Generator) -> dict[str, DiffMatrix]:
    """Projection pair plus discriminator for one branch, flat key space."""
    params = {f"proj.{k}": v for k, v in init_projection_pair(d, rng).items()}
    params.update({f"disc.{k}": v for k, v in init_discriminator(d, n_categories, rng).items()})
    return params


def project_components(
    h: DiffMatrix, params: dict[str, DiffMatrix], prefix: str
) -> tuple[DiffMatrix, DiffMatrix]:
    """h_cat = h A1 + b1, h_free = h A2 + b2; both 1 x d, differentiable."""
    h_cat = add_bias(matmul(h, params[f"{prefix}cat.w"]), params[f"{prefix}cat.b"])
    h_free = add_bias(matmul(h, params[f"{prefix}free.w"]), params[f"{prefix}free.b"])
    return h_cat, h_free


def discriminate(h: DiffMatrix, params: dict[str, DiffMatrix], prefix: str) -> DiffMatrix:
    """Category logits (1 x |C|) from a component vector."""
    hidden = relu(add_bias(matmul(h, params[f"{prefix}w1"]), params[f"{prefix}b1"]))
    return add_bias(matmul(hidden, params[f"{prefix}w2"]), params[f"{prefix}b2"])


def adversarial_losses(
    h_cat: DiffMatrix,
    h_free: DiffMatrix,
    params: dict[str, DiffMatrix],
    prefix: str,
    multi_hot,
) -> tuple[DiffMatrix, DiffMatrix]:
    """Multilabel CE of the discriminator on both components.

    The cat loss is a plain minimization term. The free loss passes h_free
    through a gradient reversal before the discriminator: forward value is
    unchanged, but the backward signal into h_free (and everything upstream)
    is negated, while the discriminator itself still receives minimization
    gradients. Scaling by the adversarial weight happens in the caller's
    objective, not here.
    """
    t = np.asarray(multi_hot, dtype=np.float64).reshape(-1)
    loss_cat = multilabel_cross_entropy(discriminate(h_cat, params, prefix), t)
    reversed_free = grad_reverse(h_free, 1.0)
    loss_free = multilabel_cross_entropy(discriminate(reversed_free, params, prefix), t)
    return loss_cat, loss_free


@dataclass
class DisentangleOutput:
    trend_cat: DiffMatrix
    trend_free: DiffMatrix
    discrete_cat: DiffMatrix
    discrete_free: DiffMatrix
    loss_trend_cat: DiffMatrix
    loss_trend_free: DiffMatrix
    loss_discrete_cat: DiffMatrix
    loss_discrete_free: DiffMatrix


def dual_disentangle(
    h_trend: DiffMatrix,
    h_discrete: DiffMatrix,
    params: dict[str, DiffMatrix],
    multi_hot,
    trend_prefix: str = "madv.",
    discrete_prefix: str = "dadv.",
) -> DisentangleOutput:
    """Independent projection pair + discriminator per branch; returns the
    four component vectors and the four adversarial loss terms."""
    t_cat, t_free = project_components(h_trend, params, f"{trend_prefix}proj.")
    d_cat, d_free = project_components(h_discrete, params, f"{discrete_prefix}proj.")
    lt_cat, lt_free = adversarial_losses(t_cat, t_free, params, f"{trend_prefix}disc.", multi_hot)
    ld_cat, ld_free = adversarial_losses(d_cat, d_free, params, f"{discrete_prefix}disc.", multi_hot)
    return DisentangleOutput(t_cat, t_free, d_cat, d_free, lt_cat, lt_free, ld_cat, ld_free)
