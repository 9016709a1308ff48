"""Top-K ranking and the four evaluation metrics.

Accuracy: Recall@K (hit rate for the single held-out target) and NDCG@K
(rank-discounted, ideal DCG is 1). Diversity: CE@K, the Shannon entropy of
the category distribution over the recommended list (multi-category items
spread fractional weight across their categories; natural log by default),
and CC@K, the fraction of all categories covered by the list.

Ranking excludes items the user has already interacted with and breaks score
ties by ascending item index so reports are reproducible.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Catalog, SplitDataset
from .encoders import TransformerConfig
from .masking import MaskConfig
from .model import forward

__all__ = [
    "DEFAULT_KS",
    "MetricsReport",
    "topk",
    "recall_at_k",
    "ndcg_at_k",
    "ce_at_k",
    "cc_at_k",
    "evaluate",
    "write_report",
]

DEFAULT_KS = (5, 10, 20)

METRIC_COLUMNS = [f"{m}@{k}" for m in ("recall", "ndcg", "ce", "cc") for k in DEFAULT_KS]


def topk(scores, k: int, exclude=()) -> list[int]:
    """Indices of the k highest scores outside the exclusion set, descending
    score, ties by ascending index. Returns fewer than k only when fewer
    non-excluded items exist."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    blocked = np.zeros(s.size, dtype=bool)
    for i in exclude:
        blocked[i] = True
    order = np.lexsort((np.arange(s.size), -s))
    out = []
    for i in order:
        if not blocked[i]:
            out.append(int(i))
            if len(out) == k:
                break
    return out


def recall_at_k(ranked: list[int], target: int) -> float:
    """1 when the held-out target appears in the list, else 0."""
    return 1.0 if target in ranked else 0.0


def ndcg_at_k(ranked: list[int], target: int) -> float:
    """1/log2(rank+1) at the target's 1-based rank; 0 when absent. The ideal
    DCG for a single relevant item is 1, so this is already normalized."""
    for pos, item in enumerate(ranked, start=1):
        if item == target:
            return 1.0 / np.log2(pos + 1.0)
    return 0.0


def ce_at_k(ranked: list[int], catalog: Catalog, base: float | None = None) -> float:
    """Entropy of the category distribution over the list.

    Each item contributes total weight 1 split evenly across its categories;
    the weights are normalized to a probability vector; entropy uses the
    natural log unless a base is given. Empty lists score 0.
    """
    if not ranked:
        return 0.0
    weights = np.zeros(catalog.n_categories)
    for item in ranked:
        if not 0 <= item < catalog.n_items:
            raise IndexError(f"item {item} outside catalog of {catalog.n_items}")
        bits = catalog.multi_hot[item]
        n = bits.sum()
        weights += bits / n
    p = weights / weights.sum()
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    if base is not None:
        h /= float(np.log(base))
    return h


def cc_at_k(ranked: list[int], catalog: Catalog) -> float:
    """Fraction of all categories that appear in the list (every category of
    every listed item counts, no fractional weighting)."""
    if not ranked:
        return 0.0
    seen = np.zeros(catalog.n_categories, dtype=bool)
    for item in ranked:
        if not 0 <= item < catalog.n_items:
            raise IndexError(f"item {item} outside catalog of {catalog.n_items}")
        seen |= catalog.multi_hot[item] > 0
    return float(seen.sum()) / catalog.n_categories


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    n_users: int
    per_user: dict[str, np.ndarray]
    means: dict[str, float]

    def to_json(self) -> str:
        payload = {"users": self.n_users, "ks": list(self.ks), "means": self.means}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _user_metrics(scores: np.ndarray, target: int, exclude: set[int], catalog: Catalog, ks) -> dict[str, float]:
    out = {}
    ranked_max = topk(scores, max(ks), exclude)
    for k in ks:
        ranked = ranked_max[:k]
        out[f"recall@{k}"] = recall_at_k(ranked, target)
        out[f"ndcg@{k}"] = ndcg_at_k(ranked, target)
        out[f"ce@{k}"] = ce_at_k(ranked, catalog)
        out[f"cc@{k}"] = cc_at_k(ranked, catalog)
    return out


def evaluate(
    params,
    dataset: SplitDataset,
    model_cfg: TransformerConfig,
    mask_cfg: MaskConfig,
    variant: str = "full",
    split: str = "validation",
    ks: tuple[int, ...] = DEFAULT_KS,
    threads: int | None = None,
) -> MetricsReport:
    """Rank the full catalog for every user and average the metrics.

    For the validation split the input is the training sequence and the
    training items are excluded from ranking; for the test split the
    validation item is appended to the input and excluded as well. Users may
    be scored in parallel worker threads; results merge in user order, so
    the report does not depend on the thread count.
    """
    if split not in ("validation", "test"):
        raise ValueError(f"split must be validation or test, got {split!r}")
    if threads is None:
        threads = int(os.environ.get("DDSREC_THREADS", "1"))

    def one_user(u: int) -> dict[str, float]:
        seq = list(dataset.train[u])
        exclude = set(seq)
        if split == "test":
            seq.append(dataset.val[u])
            exclude.add(dataset.val[u])
            target = dataset.test[u]
        else:
            target = dataset.val[u]
        result = forward(params, seq, model_cfg, mask_cfg, variant, training=False)
        return _user_metrics(result.logits.values[0], target, exclude, dataset.catalog, ks)

    n = dataset.n_users
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one_user, range(n)))
    else:
        rows = [one_user(u) for u in range(n)]

    names = [f"{m}@{k}" for m in ("recall", "ndcg", "ce", "cc") for k in ks]
    per_user = {name: np.array([r[name] for r in rows]) for name in names}
    means = {name: float(per_user[name].mean()) for name in names}
    return MetricsReport(tuple(ks), n, per_user, means)


def write_report(report: MetricsReport, out_dir: str, prefix: str) -> None:
    """Aggregate JSON plus a per-user CSV with the fixed column order."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{prefix}_metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    names = [f"{m}@{k}" for m in ("recall", "ndcg", "ce", "cc") for k in report.ks]
    with open(os.path.join(out_dir, f"{prefix}_per_user.csv"), "w", encoding="utf-8") as fh:
        fh.write("user," + ",".join(names) + "\n")
        for u in range(report.n_users):
            row = ",".join(repr(float(report.per_user[n][u])) for n in names)
            fh.write(f"{u},{row}\n")
