"""Interaction-log ingestion, preprocessing, and synthetic data.

The pipeline is: load raw events, 5-core filter, sort per user by time,
build a dense catalog of surviving items and categories, then split each
sequence leave-one-out style (last item test, second-to-last validation).
Timestamp ties keep input file order. A generator plants multi-interest
structure for controlled experiments.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataFormatError",
    "EmptyDatasetError",
    "InteractionRecord",
    "ColumnFormat",
    "LoadResult",
    "Catalog",
    "SplitDataset",
    "SynthSpec",
    "SynthResult",
    "load_interactions",
    "five_core_filter",
    "build_sequences",
    "leave_one_out_split",
    "synthesize_dataset",
    "dataset_stats",
    "write_dataset_dir",
    "read_dataset_dir",
]


class DataFormatError(ValueError):
    """Raised when an input file yields no usable rows or is malformed."""


class EmptyDatasetError(ValueError):
    """Raised when filtering removes every interaction."""


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int
    categories: frozenset[str]


@dataclass(frozen=True)
class ColumnFormat:
    """Column positions in a delimiter-separated interaction log."""

    user: int = 0
    item: int = 1
    timestamp: int = 2
    categories: int = 3
    delimiter: str = "\t"
    category_sep: str = "|"


@dataclass
class LoadResult:
    records: list[InteractionRecord]
    skipped: int


def load_interactions(path: str, fmt: ColumnFormat = ColumnFormat()) -> LoadResult:
    """Parse an interaction log; malformed rows are skipped and counted.

    A row is malformed if any mapped column is missing, the timestamp is
    not numeric, or the category list is empty. Duplicate (user, item,
    timestamp) rows are kept as distinct events.
    """
    records: list[InteractionRecord] = []
    skipped = 0
    needed = max(fmt.user, fmt.item, fmt.timestamp, fmt.categories) + 1
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split(fmt.delimiter)
            if len(parts) < needed:
                skipped += 1
                continue
            user = parts[fmt.user].strip()
            item = parts[fmt.item].strip()
            raw_ts = parts[fmt.timestamp].strip()
            raw_cats = parts[fmt.categories].strip()
            cats = frozenset(c.strip() for c in raw_cats.split(fmt.category_sep) if c.strip())
            if not user or not item or not cats:
                skipped += 1
                continue
            try:
                ts = int(float(raw_ts))
            except ValueError:
                skipped += 1
                continue
            records.append(InteractionRecord(user, item, ts, cats))
    if not records:
        raise DataFormatError(f"no parseable rows in {path} ({skipped} skipped)")
    return LoadResult(records, skipped)


def five_core_filter(records: list[InteractionRecord]) -> list[InteractionRecord]:
    """Iteratively drop users and items with fewer than 5 interactions.

    Repeats until a fixpoint: every surviving user and every surviving item
    participates in at least 5 of the surviving interactions.
    """
    current = list(records)
    while True:
        user_counts: dict[str, int] = {}
        item_counts: dict[str, int] = {}
        for r in current:
            user_counts[r.user] = user_counts.get(r.user, 0) + 1
            item_counts[r.item] = item_counts.get(r.item, 0) + 1
        keep_users = {u for u, n in user_counts.items() if n >= 5}
        keep_items = {i for i, n in item_counts.items() if n >= 5}
        nxt = [r for r in current if r.user in keep_users and r.item in keep_items]
        if len(nxt) == len(current):
            break
        current = nxt
    if not current:
        raise EmptyDatasetError("5-core filtering removed every interaction")
    return current


def build_sequences(records: list[InteractionRecord]) -> dict[str, list[InteractionRecord]]:
    """Group records per user, sorted by timestamp; ties keep input order."""
    if not records:
        raise DataFormatError("no records to sequence")
    by_user: dict[str, list[InteractionRecord]] = {}
    for r in records:
        by_user.setdefault(r.user, []).append(r)
    for seq in by_user.values():
        seq.sort(key=lambda r: r.timestamp)
    return by_user


@dataclass
class Catalog:
    """Dense index space over items and categories, token-sorted."""

    item_tokens: list[str]
    category_tokens: list[str]
    multi_hot: np.ndarray
    item_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.item_index:
            self.item_index = {tok: i for i, tok in enumerate(self.item_tokens)}

    @property
    def n_items(self) -> int:
        return len(self.item_tokens)

    @property
    def n_categories(self) -> int:
        return len(self.category_tokens)

    def categories_of(self, item_idx: int) -> np.ndarray:
        return self.multi_hot[item_idx]

    @classmethod
    def from_records(cls, records: list[InteractionRecord]) -> "Catalog":
        item_cats: dict[str, set[str]] = {}
        all_cats: set[str] = set()
        for r in records:
            item_cats.setdefault(r.item, set()).update(r.categories)
            all_cats.update(r.categories)
        item_tokens = sorted(item_cats)
        category_tokens = sorted(all_cats)
        cat_index = {c: j for j, c in enumerate(category_tokens)}
        hot = np.zeros((len(item_tokens), len(category_tokens)))
        for i, tok in enumerate(item_tokens):
            for c in item_cats[tok]:
                hot[i, cat_index[c]] = 1.0
        return cls(item_tokens, category_tokens, hot)


@dataclass
class SplitDataset:
    """Leave-one-out split: per user, train prefix / validation / test.

    total_interactions counts events before train truncation so corpus
    statistics reflect the full filtered dataset.
    """

    users: list[str]
    train: list[list[int]]
    val: list[int]
    test: list[int]
    catalog: Catalog
    max_len: int
    total_interactions: int
    dropped_users: int = 0

    @property
    def n_users(self) -> int:
        return len(self.users)


def leave_one_out_split(
    sequences: dict[str, list[InteractionRecord]],
    catalog: Catalog,
    max_len: int = 50,
) -> SplitDataset:
    """Split each user chronologically: test = last item, validation =
    second-to-last, train = the rest (most recent max_len kept). Users with
    fewer than 3 interactions cannot fill all three roles and are dropped;
    the count is recorded on the result.
    """
    users, train, val, test = [], [], [], []
    dropped = 0
    total = 0
    for user in sorted(sequences):
        seq = sequences[user]
        if len(seq) < 3:
            dropped += 1
            continue
        idx = [catalog.item_index[r.item] for r in seq]
        total += len(idx)
        users.append(user)
        train.append(idx[:-2][-max_len:])
        val.append(idx[-2])
        test.append(idx[-1])
    if not users:
        raise EmptyDatasetError("every user was shorter than 3 interactions")
    return SplitDataset(users, train, val, test, catalog, max_len, total, dropped)


def dataset_stats(split: SplitDataset) -> dict:
    """Corpus summary; density is interactions over the user-item grid."""
    users = split.n_users
    items = split.catalog.n_items
    return {
        "users": users,
        "items": items,
        "interactions": split.total_interactions,
        "categories": split.catalog.n_categories,
        "density": split.total_interactions / (users * items),
    }


# ---------------------------------------------------------------------------
# synthetic data with planted interests


@dataclass(frozen=True)
class SynthSpec:
    users: int = 1000
    items: int = 200
    categories: int = 8
    interests_per_user: int = 2
    noise_rate: float = 0.1
    seed: int = 0
    min_events: int = 30
    max_events: int = 60
    persistence: float = 0.8


@dataclass
class SynthResult:
    records: list[InteractionRecord]
    interest_labels: list[int]
    """Per record: planted interest slot (0-based) or -1 for a noise event."""


def synthesize_dataset(spec: SynthSpec) -> SynthResult:
    """Plant multi-interest structure: each user runs a few category-coherent
    processes plus uniform noise, so interest separation is recoverable.

    Items are partitioned evenly across categories. Each user draws k
    distinct interest categories; at every step the active interest persists
    with the configured probability, and with probability noise_rate the
    event is replaced by a uniform draw over the whole catalog. All draws
    are without replacement within a user, so the final items of a sequence
    are unseen earlier in it. Deterministic per seed.
    """
    if spec.items < spec.categories:
        raise ValueError("need at least one item per category")
    if spec.interests_per_user < 1 or spec.interests_per_user > spec.categories:
        raise ValueError("interests_per_user must be in [1, categories]")
    if spec.min_events < 3:
        raise ValueError("users need at least 3 events to survive splitting")
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.items - 1))
    item_tokens = [f"i{i:0{width}d}" for i in range(spec.items)]
    cat_of_item = np.arange(spec.items) % spec.categories
    cat_tokens = [f"c{c:02d}" for c in range(spec.categories)]
    items_by_cat = [np.flatnonzero(cat_of_item == c) for c in range(spec.categories)]

    records: list[InteractionRecord] = []
    labels: list[int] = []
    uw = len(str(spec.users - 1))
    for u in range(spec.users):
        user = f"u{u:0{uw}d}"
        interests = rng.choice(spec.categories, size=spec.interests_per_user, replace=False)
        n_events = int(rng.integers(spec.min_events, spec.max_events))
        seen: set[int] = set()
        active = 0
        for t in range(n_events):
            if rng.random() < spec.noise_rate:
                pool = [i for i in range(spec.items) if i not in seen]
                label = -1
            else:
                if rng.random() >= spec.persistence and spec.interests_per_user > 1:
                    active = int(rng.integers(0, spec.interests_per_user))
                pool = [i for i in items_by_cat[interests[active]] if i not in seen]
                label = active
                if not pool:
                    # interest exhausted: try the other slots; with all slots
                    # empty fall back to noise, or stop the user when noise
                    # is disabled so interest purity holds
                    for alt in range(spec.interests_per_user):
                        pool = [i for i in items_by_cat[interests[alt]] if i not in seen]
                        if pool:
                            active = alt
                            label = alt
                            break
                    else:
                        if spec.noise_rate <= 0.0:
                            break
                        pool = [i for i in range(spec.items) if i not in seen]
                        label = -1
            if not pool:
                break
            pick = int(pool[rng.integers(0, len(pool))])
            seen.add(pick)
            cat = frozenset({cat_tokens[cat_of_item[pick]]})
            records.append(InteractionRecord(user, item_tokens[pick], t, cat))
            labels.append(label)
    return SynthResult(records, labels)


# ---------------------------------------------------------------------------
# dataset directory round trip

_CATALOG_FILE = "catalog.tsv"
_SEQUENCES_FILE = "sequences.tsv"
_STATS_FILE = "stats.json"


def write_dataset_dir(split: SplitDataset, out_dir: str) -> None:
    """Persist a split as three plain-text files: catalog.tsv (item token,
    index, pipe-separated categories; category order on a # header line),
    sequences.tsv (user, comma-separated train indices, val, test), and
    stats.json. Output is byte-deterministic for a given split."""
    os.makedirs(out_dir, exist_ok=True)
    cat = split.catalog
    with open(os.path.join(out_dir, _CATALOG_FILE), "w", encoding="utf-8") as fh:
        fh.write("#categories\t" + "|".join(cat.category_tokens) + "\n")
        for i, tok in enumerate(cat.item_tokens):
            bits = np.flatnonzero(cat.multi_hot[i])
            names = "|".join(cat.category_tokens[j] for j in bits)
            fh.write(f"{tok}\t{i}\t{names}\n")
    with open(os.path.join(out_dir, _SEQUENCES_FILE), "w", encoding="utf-8") as fh:
        for u, user in enumerate(split.users):
            tr = ",".join(str(i) for i in split.train[u])
            fh.write(f"{user}\t{tr}\t{split.val[u]}\t{split.test[u]}\n")
    stats = dataset_stats(split)
    stats["max_len"] = split.max_len
    stats["dropped_users"] = split.dropped_users
    with open(os.path.join(out_dir, _STATS_FILE), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_dataset_dir(in_dir: str) -> SplitDataset:
    """Inverse of write_dataset_dir."""
    cat_path = os.path.join(in_dir, _CATALOG_FILE)
    with open(cat_path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("#categories\t"):
            raise DataFormatError(f"{cat_path}: missing #categories header")
        category_tokens = header.split("\t", 1)[1].split("|")
        item_tokens: list[str] = []
        item_cats: list[list[str]] = []
        for line in fh:
            tok, idx, names = line.rstrip("\n").split("\t")
            if int(idx) != len(item_tokens):
                raise DataFormatError(f"{cat_path}: indices out of order at {tok}")
            item_tokens.append(tok)
            item_cats.append(names.split("|"))
    cat_index = {c: j for j, c in enumerate(category_tokens)}
    hot = np.zeros((len(item_tokens), len(category_tokens)))
    for i, names in enumerate(item_cats):
        for c in names:
            hot[i, cat_index[c]] = 1.0
    catalog = Catalog(item_tokens, category_tokens, hot)

    users, train, val, test = [], [], [], []
    total = 0
    with open(os.path.join(in_dir, _SEQUENCES_FILE), "r", encoding="utf-8") as fh:
        for line in fh:
            user, tr, v, t = line.rstrip("\n").split("\t")
            users.append(user)
            seq = [int(x) for x in tr.split(",")] if tr else []
            train.append(seq)
            val.append(int(v))
            test.append(int(t))
            total += len(seq) + 2
    with open(os.path.join(in_dir, _STATS_FILE), "r", encoding="utf-8") as fh:
        stats = json.load(fh)
    return SplitDataset(
        users,
        train,
        val,
        test,
        catalog,
        int(stats["max_len"]),
        int(stats.get("interactions", total)),
        int(stats.get("dropped_users", 0)),
    )
