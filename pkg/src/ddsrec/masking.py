"""Adaptive sequence masking: split a sequence into trend and discrete parts.

A proxy vector summarizes the user's recent window (mean of transformed
embeddings over the last p items). Each position's embedding is compared to
the proxy by cosine; positions at or above the threshold form the trend
subsequence, the rest the discrete subsequence, both keeping original order.
Routing is a hard decision: no gradient flows through the comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import DiffMatrix, gather_rows, matmul, reduce_rows

__all__ = ["MaskConfig", "SequenceSplit", "proxy_vector", "adaptive_mask", "split_sequence"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskConfig:
    theta_m: float = 0.5
    proxy_window: int = 5

    def __post_init__(self):
        if not -1.0 <= self.theta_m <= 1.0:
            raise ValueError(f"theta_m must be in [-1, 1], got {self.theta_m}")
        if self.proxy_window < 1:
            raise ValueError(f"proxy_window must be >= 1, got {self.proxy_window}")


@dataclass
class SequenceSplit:
    """Positions routed to each side; both lists strictly increasing."""

    trend: list[int]
    discrete: list[int]
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int8)


def proxy_vector(seq: list[int], item_emb: DiffMatrix, w_s: DiffMatrix, p: int) -> DiffMatrix:
    """Mean of W_s-transformed embeddings over the last p items (1 x d).

    With fewer than p items the whole sequence is used. Differentiable in
    both the embeddings and W_s; note the mask comparison downstream is not,
    so gradients reach W_s only through other consumers of this vector.
    """
    if not seq:
        raise ValueError("proxy_vector: empty sequence")
    window = seq[-p:]
    picked = gather_rows(item_emb, window)
    transformed = matmul(picked, w_s)
    return reduce_rows(transformed, "mean")


def adaptive_mask(seq: list[int], item_emb: np.ndarray, proxy: np.ndarray, theta_m: float) -> np.ndarray:
    """Bit per position: 1 when cosine(embedding, proxy) >= theta_m.

    Cosine with a zero-norm vector on either side is defined as 0 (and
    logged), which lands below any positive threshold. Operates on plain
    values: this is the non-differentiated routing decision.
    """
    pv = np.asarray(proxy, dtype=np.float64).reshape(-1)
    pn = float(np.linalg.norm(pv))
    bits = np.zeros(len(seq), dtype=np.int8)
    degenerate = 0
    for j, item in enumerate(seq):
        ev = item_emb[item]
        en = float(np.linalg.norm(ev))
        if pn == 0.0 or en == 0.0:
            cos = 0.0
            degenerate += 1
        else:
            cos = float(ev @ pv) / (en * pn)
        bits[j] = 1 if cos >= theta_m else 0
    if degenerate:
        log.debug("adaptive_mask: %d zero-norm comparisons treated as cosine 0", degenerate)
    return bits


def split_sequence(seq: list[int], mask: np.ndarray) -> SequenceSplit:
    """Route positions by mask bit, preserving order on both sides."""
    mask = np.asarray(mask)
    if len(mask) != len(seq):
        raise ValueError(f"mask length {len(mask)} != sequence length {len(seq)}")
    trend = [j for j in range(len(seq)) if mask[j]]
    discrete = [j for j in range(len(seq)) if not mask[j]]
    return SequenceSplit(trend, discrete, mask)
