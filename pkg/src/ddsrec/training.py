"""Loss assembly, Adam, the training loop, and checkpoints.

The objective combines the recommendation cross entropy with the four
adversarial terms. The category terms enter with weight lambda1. The
category-free terms carry a minus sign in the reported objective; in the
backward pass that sign is realized by the gradient-reversal boundary inside
the adversarial branch, so here they are weighted by plus lambda2: the
reversal flips the sign for everything upstream of the discriminator while
the discriminator itself descends. The scalar written to logs is the literal
signed combination.

Training is deterministic per seed: parameter init, shuffling, and dropout
draw from independent derived streams, and batch gradients are plain sums
over users divided by the batch size.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, seeded_rng
from .data import SplitDataset
from .encoders import TransformerConfig
from .masking import MaskConfig
from .metrics import evaluate
from .model import build_params, forward
from .numerics import DiffMatrix, NumericalError, Tape, add, cross_entropy_softmax, scale

__all__ = [
    "AdamState",
    "TrainResult",
    "init_adam",
    "adam_step",
    "total_loss",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "write_history",
]

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_TENSORS = "params.bin"


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam(params: dict[str, DiffMatrix]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.values) for k, p in params.items()},
        v={k: np.zeros_like(p.values) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, DiffMatrix],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    grad_scale: float = 1.0,
) -> None:
    """One bias-corrected Adam update from the accumulated .grad buffers.

    grad_scale converts accumulated sums into means (1/batch). Aborts with
    the parameter name on any non-finite gradient or resulting value.
    """
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name in sorted(params):
        p = params[name]
        g = p.grad * grad_scale
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in {name} at step {state.t}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if not np.isfinite(p.values).all():
            raise NumericalError(f"non-finite values in {name} after step {state.t}")


# ---------------------------------------------------------------------------
# objective


def total_loss(
    ce: DiffMatrix,
    adv_losses: dict[str, DiffMatrix],
    lambda1: float,
    lambda2: float,
) -> tuple[DiffMatrix, float]:
    """Backward node and reported scalar for one example.

    Reported value: CE + lambda1 * (category terms) - lambda2 * (free terms).
    The backward node weights the free terms by +lambda2 because the sign
    flip already lives on the reversal boundary; with lambda1 = lambda2 = 0
    no adversarial gradient reaches any parameter.
    """
    cat = [v for k, v in adv_losses.items() if k.endswith("_cat")]
    free = [v for k, v in adv_losses.items() if k.endswith("_free")]
    node = ce
    if lambda1 > 0.0:
        for term in cat:
            node = add(node, scale(term, lambda1))
    if lambda2 > 0.0:
        for term in free:
            node = add(node, scale(term, lambda2))
    reported = (
        ce.item()
        + lambda1 * sum(t.item() for t in cat)
        - lambda2 * sum(t.item() for t in free)
    )
    return node, reported


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: dict[str, DiffMatrix]
    history: list[dict]
    best_epoch: int
    best_val_ndcg: float
    stopped_epoch: int
    variant: str = "full"


def _snapshot(params: dict[str, DiffMatrix]) -> dict[str, DiffMatrix]:
    return {k: DiffMatrix(p.values.copy()) for k, p in params.items()}


_ADV_COLUMNS = {
    "full": ["adv_trend_cat", "adv_trend_free", "adv_discrete_cat", "adv_discrete_free"],
    "wo_sd": ["adv_trend_cat", "adv_trend_free"],
    "wo_dd": [],
    "wo_rd": [],
}

_ADV_KEY = {
    "adv_trend_cat": "trend_cat",
    "adv_trend_free": "trend_free",
    "adv_discrete_cat": "discrete_cat",
    "adv_discrete_free": "discrete_free",
}


def train(
    dataset: SplitDataset,
    model_cfg: TransformerConfig,
    mask_cfg: MaskConfig,
    tc: TrainConfig,
    eval_threads: int | None = None,
) -> TrainResult:
    """Fit a variant on the training split with early stopping.

    Per epoch: users are shuffled (seeded) and each contributes the final
    next-item example (all train items but the last as input, the last as
    target) plus, when the sequence allows, one freshly sampled interior
    prefix example. Fixed final targets alone get memorized within tens of
    epochs on small corpora; the resampled interior targets change every
    epoch, which regularizes without adding a config knob. The target
    item's categories supervise the discriminators. Gradients are averaged
    per batch and applied with Adam. Validation runs after every epoch;
    the parameters with the best validation NDCG@10 are returned.
    train_recall@1 in the history counts only the final-target examples,
    so it still measures memorization of the training pairs.
    """
    if dataset.n_users == 0:
        raise ValueError("empty dataset")
    catalog = dataset.catalog
    init_rng = seeded_rng(tc.seed, "init")
    shuffle_rng = seeded_rng(tc.seed, "shuffle")
    dropout_rng = seeded_rng(tc.seed, "dropout")
    params = build_params(catalog.n_items, catalog.n_categories, model_cfg, tc.variant, init_rng)

    state = init_adam(params)
    adv_cols = _ADV_COLUMNS[tc.variant]
    history: list[dict] = []
    best_ndcg = -1.0
    best_epoch = -1
    best_params = _snapshot(params)
    patience_left = tc.patience
    epoch = -1

    for epoch in range(tc.epochs):
        order = shuffle_rng.permutation(dataset.n_users)
        sums = {"loss": 0.0, "ce": 0.0, **{c: 0.0 for c in adv_cols}}
        seen = 0
        final_hits = 0
        final_seen = 0
        for start in range(0, len(order), tc.batch_size):
            batch = order[start : start + tc.batch_size]
            for p in params.values():
                p.zero_grad()
            examples = 0
            for u in batch:
                seq = dataset.train[u]
                pairs = [(seq[:-1], seq[-1], True)]
                if len(seq) >= 3:
                    cut = int(shuffle_rng.integers(1, len(seq) - 1))
                    pairs.append((seq[:cut], seq[cut], False))
                for inp, target, is_final in pairs:
                    target_cats = catalog.multi_hot[target]
                    with Tape() as tape:
                        res = forward(
                            params,
                            inp,
                            model_cfg,
                            mask_cfg,
                            tc.variant,
                            target_cats=target_cats,
                            rng=dropout_rng,
                            training=True,
                        )
                        ce = cross_entropy_softmax(res.logits, target)
                        node, reported = total_loss(ce, res.adv_losses, tc.lambda1, tc.lambda2)
                        tape.backward(node)
                    if not np.isfinite(reported):
                        raise NumericalError(f"non-finite loss at epoch {epoch}, user index {int(u)}")
                    sums["loss"] += reported
                    sums["ce"] += ce.item()
                    for col in adv_cols:
                        sums[col] += res.adv_losses[_ADV_KEY[col]].item()
                    if is_final:
                        final_hits += int(int(np.argmax(res.logits.values[0])) == target)
                        final_seen += 1
                    seen += 1
                    examples += 1
            adam_step(params, state, tc.lr, grad_scale=1.0 / examples)

        val = evaluate(
            params, dataset, model_cfg, mask_cfg, tc.variant, "validation", threads=eval_threads
        )
        row = {"epoch": epoch}
        for key, total in sums.items():
            row[key] = total / seen
        row["train_recall@1"] = final_hits / final_seen
        row["val_recall@10"] = val.means["recall@10"]
        row["val_ndcg@10"] = val.means["ndcg@10"]
        history.append(row)

        if val.means["ndcg@10"] > best_ndcg:
            best_ndcg = val.means["ndcg@10"]
            best_epoch = epoch
            best_params = _snapshot(params)
            patience_left = tc.patience
        else:
            patience_left -= 1
            if patience_left < 0:
                break

    return TrainResult(best_params, history, best_epoch, best_ndcg, epoch, tc.variant)


# ---------------------------------------------------------------------------
# persistence


def save_checkpoint(params: dict[str, DiffMatrix], out_dir: str, extra: dict | None = None) -> None:
    """Write params.bin (concatenated little-endian float64 tensors in sorted
    name order) plus manifest.json describing shapes and run metadata. The
    format carries no timestamps, so identical params give identical bytes."""
    os.makedirs(out_dir, exist_ok=True)
    names = sorted(params)
    manifest = {
        "format_version": 1,
        "tensors": [
            {"name": n, "rows": params[n].rows, "cols": params[n].cols} for n in names
        ],
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, CHECKPOINT_TENSORS), "wb") as fh:
        for n in names:
            fh.write(params[n].values.astype("<f8").tobytes())
    with open(os.path.join(out_dir, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(in_dir: str) -> tuple[dict[str, DiffMatrix], dict]:
    with open(os.path.join(in_dir, CHECKPOINT_MANIFEST), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
    params: dict[str, DiffMatrix] = {}
    with open(os.path.join(in_dir, CHECKPOINT_TENSORS), "rb") as fh:
        raw = fh.read()
    offset = 0
    for spec in manifest["tensors"]:
        n = spec["rows"] * spec["cols"]
        block = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += n * 8
        params[spec["name"]] = DiffMatrix(block.reshape(spec["rows"], spec["cols"]).copy())
    if offset != len(raw):
        raise ValueError(f"checkpoint has {len(raw) - offset} trailing bytes")
    return params, manifest


def write_history(history: list[dict], path: str) -> None:
    """One CSV row per epoch; columns follow the first row's key order."""
    if not history:
        raise ValueError("empty history")
    columns = list(history[0].keys())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in history:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns) + "\n")
