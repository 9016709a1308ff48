"""Sequence encoders: a causal self-attention stack for the trend branch and
an order-free pooled MLP for the discrete branch.

The trend encoder follows the stacked-block convention of attention-based
sequential recommenders: per block, multi-head causal self-attention and a
position-wise feed-forward network, each wrapped in a residual connection
followed by layer normalization; the sequence representation is read at the
last position. The discrete encoder mean-pools item embeddings (no position
information) and applies a two-layer MLP. Either branch may receive an empty
sequence, in which case it returns its learned empty-representation vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    DiffMatrix,
    add,
    add_bias,
    concat_cols,
    dropout,
    gather_rows,
    layer_norm_rows,
    matmul,
    reduce_rows,
    relu,
    scale,
    softmax_rows,
    transpose,
)

__all__ = [
    "TransformerConfig",
    "embed_with_positions",
    "mhsa",
    "ffn",
    "transformer_encode",
    "mlp_encode_discrete",
    "init_transformer_params",
    "init_discrete_params",
]

_NEG_INF = -1e9


@dataclass(frozen=True)
class TransformerConfig:
    d: int = 64
    blocks: int = 2
    heads: int = 2
    ffn_mult: int = 4
    dropout: float = 0.1
    emb_dropout: float = 0.3
    max_len: int = 50

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.emb_dropout < 1.0):
            raise ValueError("dropout rates must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def ffn_width(self) -> int:
        return self.d * self.ffn_mult


def embed_with_positions(
    seq: list[int],
    item_emb: DiffMatrix,
    pos_emb: DiffMatrix,
    cfg: TransformerConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> DiffMatrix:
    """Row j = item embedding + position embedding for slot j.

    Positions index slots of the given (sub)sequence, not the original
    sequence, so a routed subsequence is embedded as its own sequence.
    """
    if len(seq) > pos_emb.rows:
        raise ValueError(f"sequence length {len(seq)} exceeds position table {pos_emb.rows}")
    e = add(gather_rows(item_emb, seq), gather_rows(pos_emb, list(range(len(seq)))))
    if training and cfg.emb_dropout > 0.0:
        e = dropout(e, cfg.emb_dropout, rng, training=True)
    return e


def _causal_bias(length: int) -> DiffMatrix:
    """Additive attention bias: large negative above the diagonal so softmax
    assigns exactly zero weight to future positions (the constant underflows)."""
    bias = np.triu(np.full((length, length), _NEG_INF), k=1)
    return DiffMatrix(bias)


def mhsa(
    e: DiffMatrix,
    params: dict[str, DiffMatrix],
    prefix: str,
    cfg: TransformerConfig,
    weights_out: list | None = None,
) -> DiffMatrix:
    """Multi-head causal self-attention: per head, scaled dot-product over
    query/key/value projections; heads concatenated then mixed by an output
    projection. Position j attends only to positions <= j."""
    length = e.rows
    causal = _causal_bias(length)
    inv_scale = 1.0 / math.sqrt(cfg.head_dim)
    head_outputs = []
    for h in range(cfg.heads):
        q = matmul(e, params[f"{prefix}head{h}.wq"])
        k = matmul(e, params[f"{prefix}head{h}.wk"])
        v = matmul(e, params[f"{prefix}head{h}.wv"])
        scores = add(scale(matmul(q, transpose(k)), inv_scale), causal)
        attn = softmax_rows(scores)
        if weights_out is not None:
            weights_out.append(attn.values.copy())
        head_outputs.append(matmul(attn, v))
    stacked = concat_cols(head_outputs) if len(head_outputs) > 1 else head_outputs[0]
    return matmul(stacked, params[f"{prefix}wh"])


def ffn(e: DiffMatrix, params: dict[str, DiffMatrix], prefix: str) -> DiffMatrix:
    """Position-wise two-layer network, ReLU between."""
    hidden = relu(add_bias(matmul(e, params[f"{prefix}w1"]), params[f"{prefix}b1"]))
    return add_bias(matmul(hidden, params[f"{prefix}w2"]), params[f"{prefix}b2"])


def transformer_encode(
    seq: list[int],
    item_emb: DiffMatrix,
    params: dict[str, DiffMatrix],
    cfg: TransformerConfig,
    prefix: str = "",
    rng: np.random.Generator | None = None,
    training: bool = False,
    attention_out: list | None = None,
) -> DiffMatrix:
    """Encode a sequence to a 1 x d vector read at the last position.

    Block structure, applied cfg.blocks times: attention sublayer with
    residual then layer norm, feed-forward sublayer with residual then
    layer norm. An empty sequence returns the learned empty vector.
    """
    if not seq:
        return params[f"{prefix}empty"]
    x = embed_with_positions(seq, item_emb, params[f"{prefix}positions"], cfg, rng, training)
    for b in range(cfg.blocks):
        a = mhsa(x, params, f"{prefix}block{b}.attn.", cfg, weights_out=attention_out)
        if training and cfg.dropout > 0.0:
            a = dropout(a, cfg.dropout, rng, training=True)
        x = layer_norm_rows(
            add(x, a), params[f"{prefix}block{b}.ln1.gain"], params[f"{prefix}block{b}.ln1.bias"]
        )
        f = ffn(x, params, f"{prefix}block{b}.ffn.")
        if training and cfg.dropout > 0.0:
            f = dropout(f, cfg.dropout, rng, training=True)
        x = layer_norm_rows(
            add(x, f), params[f"{prefix}block{b}.ln2.gain"], params[f"{prefix}block{b}.ln2.bias"]
        )
    return gather_rows(x, [len(seq) - 1])


def mlp_encode_discrete(
    seq: list[int],
    item_emb: DiffMatrix,
    params: dict[str, DiffMatrix],
    cfg: TransformerConfig,
    prefix: str = "",
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> DiffMatrix:
    """Mean-pool item embeddings (order-free), then a d -> d -> d MLP.

    An empty sequence returns the learned empty vector.
    """
    if not seq:
        return params[f"{prefix}empty"]
    e = gather_rows(item_emb, seq)
    if training and cfg.emb_dropout > 0.0:
        e = dropout(e, cfg.emb_dropout, rng, training=True)
    pooled = reduce_rows(e, "mean")
    hidden = relu(add_bias(matmul(pooled, params[f"{prefix}mlp.w1"]), params[f"{prefix}mlp.b1"]))
    return add_bias(matmul(hidden, params[f"{prefix}mlp.w2"]), params[f"{prefix}mlp.b2"])


# ---------------------------------------------------------------------------
# initialization


def _normal(rng: np.random.Generator, rows: int, cols: int, std: float | None = None) -> DiffMatrix:
    """Weight init scaled by fan-in (rows, for x @ W layouts) unless given."""
    if std is None:
        std = 1.0 / np.sqrt(rows)
    return DiffMatrix(rng.normal(0.0, std, size=(rows, cols)))


def init_transformer_params(cfg: TransformerConfig, rng: np.random.Generator) -> dict[str, DiffMatrix]:
    """Fresh trend-encoder parameters (positions, blocks, empty vector).

    Lookup tables scale by 1/sqrt(d) so every row has roughly unit norm."""
    d, dh, f = cfg.d, cfg.head_dim, cfg.ffn_width
    params: dict[str, DiffMatrix] = {
        "positions": _normal(rng, cfg.max_len, d, std=1.0 / np.sqrt(d)),
        "empty": DiffMatrix(np.zeros((1, d))),
    }
    for b in range(cfg.blocks):
        pre = f"block{b}."
        for h in range(cfg.heads):
            params[f"{pre}attn.head{h}.wq"] = _normal(rng, d, dh)
            params[f"{pre}attn.head{h}.wk"] = _normal(rng, d, dh)
            params[f"{pre}attn.head{h}.wv"] = _normal(rng, d, dh)
        params[f"{pre}attn.wh"] = _normal(rng, d, d)
        params[f"{pre}ln1.gain"] = DiffMatrix(np.ones((1, d)))
        params[f"{pre}ln1.bias"] = DiffMatrix(np.zeros((1, d)))
        params[f"{pre}ffn.w1"] = _normal(rng, d, f)
        params[f"{pre}ffn.b1"] = DiffMatrix(np.zeros((1, f)))
        params[f"{pre}ffn.w2"] = _normal(rng, f, d)
        params[f"{pre}ffn.b2"] = DiffMatrix(np.zeros((1, d)))
        params[f"{pre}ln2.gain"] = DiffMatrix(np.ones((1, d)))
        params[f"{pre}ln2.bias"] = DiffMatrix(np.zeros((1, d)))
    return params


def init_discrete_params(cfg: TransformerConfig, rng: np.random.Generator) -> dict[str, DiffMatrix]:
    """Fresh discrete-encoder parameters (pooling MLP, empty vector)."""
    d = cfg.d
    return {
        "mlp.w1": _normal(rng, d, d),
        "mlp.b1": DiffMatrix(np.zeros((1, d))),
        "mlp.w2": _normal(rng, d, d),
        "mlp.b2": DiffMatrix(np.zeros((1, d))),
        "empty": DiffMatrix(np.zeros((1, d))),
    }
