"""Command-line surface: preprocess, synthesize, train, evaluate, ablate,
gradient-check, and export plot data.

Setting precedence, lowest to highest: built-in defaults, values from the
--config file, repeatable --set group.field=value overrides, then the
dedicated --seed and --variant flags. Every command that writes artifacts
persists its resolved configuration next to them (config.txt) and guards the
output directory with a .lock file, so two commands never write the same
directory at once. Given identical inputs and seed, every command produces
byte-identical outputs.

Exit codes: 0 success, 1 usage error (bad flags, bad config keys, held
lock), 2 data error (missing or malformed inputs, shape mismatches), 3
numerical failure (training divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import numerics
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    load_config_file,
    parse_overrides,
    serialize_config,
)
from .data import (
    Catalog,
    DataFormatError,
    EmptyDatasetError,
    build_sequences,
    dataset_stats,
    five_core_filter,
    leave_one_out_split,
    load_interactions,
    read_dataset_dir,
    synthesize_dataset,
    write_dataset_dir,
)
from .encoders import TransformerConfig
from .masking import MaskConfig
from .metrics import DEFAULT_KS, evaluate, write_report
from .model import VARIANTS, build_params, forward
from .numerics import GradCheckReport, NumericalError, Tape, grad_check
from .training import load_checkpoint, save_checkpoint, train, write_history

__all__ = ["main", "gradcheck_battery", "LockHeld"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_CONFIG_FILE = "config.txt"
_LOCK_FILE = ".lock"
_METRIC_NAMES = [f"{m}@{k}" for m in ("recall", "ndcg", "ce", "cc") for k in DEFAULT_KS]


class LockHeld(RuntimeError):
    """Another command holds the output directory's lock file."""


class _OutputLock:
    """Exclusive .lock file in the output directory, removed on exit."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, _LOCK_FILE)
        self._fd = None

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeld(f"output directory is locked by another run: {self.path}")
        os.write(self._fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            os.unlink(self.path)
        return False


# ---------------------------------------------------------------------------
# config plumbing


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, cfg)
    if getattr(args, "overrides", None):
        cfg = parse_overrides(args.overrides, cfg)
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = RunConfig(
            model=cfg.model,
            mask=cfg.mask,
            train=dataclasses.replace(cfg.train, seed=seed),
            synth=dataclasses.replace(cfg.synth, seed=seed),
        )
    variant = getattr(args, "variant", None)
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r} (expected one of {VARIANTS})")
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, variant=variant))
    return cfg


def _persist_config(cfg: RunConfig, out_dir: str, command: str) -> None:
    with open(os.path.join(out_dir, _CONFIG_FILE), "w", encoding="utf-8") as fh:
        fh.write(f"# command: {command}\n")
        fh.write(serialize_config(cfg))


def _print_stats(stats: dict) -> None:
    cols = ["users", "items", "interactions", "categories", "density"]
    values = [str(stats[c]) for c in cols[:-1]] + [f"{stats['density'] * 100:.2f}%"]
    widths = [max(len(c), len(v)) for c, v in zip(cols, values)]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    print("  ".join(v.rjust(w) for v, w in zip(values, widths)))


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    with _OutputLock(args.out):
        loaded = load_interactions(args.input)
        if loaded.skipped:
            print(f"skipped {loaded.skipped} malformed rows in {args.input}")
        records = five_core_filter(loaded.records)
        catalog = Catalog.from_records(records)
        split = leave_one_out_split(build_sequences(records), catalog, cfg.model.max_len)
        write_dataset_dir(split, args.out)
        _persist_config(cfg, args.out, f"preprocess {args.input}")
        _print_stats(dataset_stats(split))
        if split.dropped_users:
            print(f"dropped {split.dropped_users} users shorter than 3 interactions")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    with _OutputLock(args.out):
        result = synthesize_dataset(cfg.synth)
        catalog = Catalog.from_records(result.records)
        split = leave_one_out_split(build_sequences(result.records), catalog, cfg.model.max_len)
        write_dataset_dir(split, args.out)
        _persist_config(cfg, args.out, "synth")
        _print_stats(dataset_stats(split))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    with _OutputLock(args.out):
        dataset = read_dataset_dir(args.data)
        result = train(dataset, cfg.model, cfg.mask, cfg.train)
        extra = {
            "variant": result.variant,
            "config_hash": config_hash(cfg),
            "best_epoch": result.best_epoch,
            "best_val_ndcg@10": result.best_val_ndcg,
        }
        save_checkpoint(result.params, args.out, extra=extra)
        write_history(result.history, os.path.join(args.out, "history.csv"))
        _persist_config(cfg, args.out, f"train {args.data}")
        print(
            f"variant={result.variant} epochs={len(result.history)} "
            f"best_epoch={result.best_epoch} best_val_ndcg@10={result.best_val_ndcg:.6f}"
        )
    return EXIT_OK


def _check_checkpoint_shapes(params, dataset, model_cfg: TransformerConfig) -> None:
    items = params.get("items")
    if items is None:
        raise DataFormatError("checkpoint has no item embedding table")
    if items.rows != dataset.catalog.n_items or items.cols != model_cfg.d:
        raise DataFormatError(
            f"checkpoint items table is {items.rows}x{items.cols}, but the dataset has "
            f"{dataset.catalog.n_items} items and the config asks for d={model_cfg.d}"
        )


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    with _OutputLock(args.out):
        params, manifest = load_checkpoint(args.checkpoint)
        dataset = read_dataset_dir(args.data)
        _check_checkpoint_shapes(params, dataset, cfg.model)
        variant = args.variant or manifest.get("variant", cfg.train.variant)
        split = "validation" if args.split == "val" else "test"
        report = evaluate(params, dataset, cfg.model, cfg.mask, variant, split=split)
        write_report(report, args.out, prefix=args.split)
        _persist_config(cfg, args.out, f"eval {args.checkpoint} {args.data} --split {args.split}")
        print(f"split={args.split} variant={variant} users={report.n_users}")
        for name in _METRIC_NAMES:
            print(f"{name} = {report.means[name]:.6f}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    with _OutputLock(args.out):
        dataset = read_dataset_dir(args.data)
        rows = []
        for variant in VARIANTS:
            tc = dataclasses.replace(cfg.train, variant=variant)
            result = train(dataset, cfg.model, cfg.mask, tc)
            write_history(result.history, os.path.join(args.out, f"history_{variant}.csv"))
            report = evaluate(result.params, dataset, cfg.model, cfg.mask, variant, split="test")
            rows.append((variant, report.means))
        with open(os.path.join(args.out, "ablation.csv"), "w", encoding="utf-8") as fh:
            fh.write("variant," + ",".join(_METRIC_NAMES) + "\n")
            for variant, means in rows:
                fh.write(variant + "," + ",".join(repr(means[n]) for n in _METRIC_NAMES) + "\n")
        _persist_config(cfg, args.out, f"ablate {args.data}")
        width = max(len(v) for v in VARIANTS)
        print("variant".ljust(width) + "  " + "  ".join(n.rjust(9) for n in _METRIC_NAMES))
        for variant, means in rows:
            print(variant.ljust(width) + "  " + "  ".join(f"{means[n]:9.4f}" for n in _METRIC_NAMES))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = gradcheck_battery(seed=args.seed if args.seed is not None else 0)
    failed = []
    for name, report in reports:
        print(f"{name}: {report.summary()}")
        if not report.passed:
            failed.append(name)
    if failed:
        print(f"FAILED ops: {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"all {len(reports)} checks passed")
    return EXIT_OK


def cmd_export_plots(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    with _OutputLock(args.out):
        rows = []
        for path in args.files:
            rows.extend(_plot_rows(path))
        out_path = os.path.join(args.out, "plots.csv")
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("run,variant,step,metric,K,value\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
        _persist_config(cfg, args.out, "export-plots " + " ".join(args.files))
        print(f"wrote {len(rows)} rows to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot-data reshaping


def _run_context(path: str) -> tuple[str, str]:
    """Run name from the parent directory, variant from its stored config."""
    parent = os.path.dirname(os.path.abspath(path))
    run = os.path.basename(parent)
    variant = ""
    cfg_path = os.path.join(parent, _CONFIG_FILE)
    if os.path.exists(cfg_path):
        with open(cfg_path, "r", encoding="utf-8") as fh:
            for line in fh:
                text = line.split("#", 1)[0].strip()
                if text.startswith("train.variant"):
                    variant = text.split("=", 1)[1].strip()
    return run, variant


def _metric_and_k(column: str) -> tuple[str, str]:
    if "@" in column:
        metric, k = column.rsplit("@", 1)
        return metric, k
    return column, ""


def _plot_rows(path: str) -> list[tuple[str, ...]]:
    """Long-format rows (run, variant, step, metric, K, value) for one file.

    History CSVs contribute one row per epoch per metric column; metrics
    JSON reports contribute one row per mean with an empty step. The
    ablation table contributes one row per variant per metric, with the
    variant taken from its own column."""
    run, variant = _run_context(path)
    base = os.path.basename(path)
    if base.startswith("history_"):
        variant = base[len("history_"):].rsplit(".", 1)[0]
    rows: list[tuple[str, ...]] = []
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        for name in sorted(payload["means"]):
            metric, k = _metric_and_k(name)
            rows.append((run, variant, "", metric, k, repr(float(payload["means"][name]))))
        return rows
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        body = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if header and header[0] == "variant":
        for parts in body:
            for col, value in zip(header[1:], parts[1:]):
                metric, k = _metric_and_k(col)
                rows.append((run, parts[0], "", metric, k, value))
        return rows
    if not header or header[0] != "epoch":
        raise DataFormatError(f"{path}: expected a history CSV, a variant table, or a metrics JSON")
    for parts in body:
        for col, value in zip(header[1:], parts[1:]):
            metric, k = _metric_and_k(col)
            rows.append((run, variant, parts[0], metric, k, value))
    return rows


# ---------------------------------------------------------------------------
# gradient-check battery


def _weighted(out, weights: np.ndarray):
    """Scalar probe sum(out * fixed random weights), so finite differences
    see a non-uniform upstream gradient."""
    return numerics.sum_all(numerics.mul(out, numerics.DiffMatrix(weights)))


def _op_cases(rng: np.random.Generator):
    """One (params, build) pair per op, freshly randomized.

    Values keep a healthy distance from ReLU kinks, where a central
    difference measures half the one-sided slope."""

    def mat(r, c, lo=0.2, hi=1.2):
        return numerics.DiffMatrix(rng.uniform(lo, hi, (r, c)) * rng.choice([-1.0, 1.0], (r, c)))

    cases: dict[str, tuple[dict, callable]] = {}

    p = {"a": mat(2, 3), "b": mat(3, 4)}
    w = rng.normal(0.0, 1.0, (2, 4))
    cases["matmul"] = (p, lambda p=p, w=w: _weighted(numerics.matmul(p["a"], p["b"]), w))

    p = {"a": mat(3, 2)}
    w = rng.normal(0.0, 1.0, (2, 3))
    cases["transpose"] = (p, lambda p=p, w=w: _weighted(numerics.transpose(p["a"]), w))

    p = {"a": mat(2, 3), "b": mat(2, 3)}
    w = rng.normal(0.0, 1.0, (2, 3))
    cases["add"] = (p, lambda p=p, w=w: _weighted(numerics.add(p["a"], p["b"]), w))
    p = {"a": mat(2, 3), "b": mat(2, 3)}
    cases["mul"] = (p, lambda p=p, w=w: _weighted(numerics.mul(p["a"], p["b"]), w))

    p = {"a": mat(2, 4)}
    w = rng.normal(0.0, 1.0, (2, 4))
    cases["relu"] = (p, lambda p=p, w=w: _weighted(numerics.relu(p["a"]), w))
    c = float(rng.uniform(0.5, 2.0))
    p = {"a": mat(2, 4)}
    cases["scale"] = (p, lambda p=p, w=w, c=c: _weighted(numerics.scale(p["a"], c), w))
    for kind in ("add", "mul", "relu", "scale"):
        p = {"a": mat(2, 4)} if kind in ("relu", "scale") else {"a": mat(2, 4), "b": mat(2, 4)}
        cases[f"elementwise:{kind}"] = (
            p,
            lambda p=p, w=w, kind=kind, c=c: _weighted(
                numerics.elementwise(p["a"], kind, other=p.get("b"), c=c), w
            ),
        )

    p = {"a": mat(3, 4), "bias": mat(1, 4)}
    w = rng.normal(0.0, 1.0, (3, 4))
    cases["add_bias"] = (p, lambda p=p, w=w: _weighted(numerics.add_bias(p["a"], p["bias"]), w))

    for kind in ("mean", "sum"):
        p = {"a": mat(3, 4)}
        w1 = rng.normal(0.0, 1.0, (1, 4))
        cases[f"reduce_rows:{kind}"] = (
            p,
            lambda p=p, w1=w1, kind=kind: _weighted(numerics.reduce_rows(p["a"], kind), w1),
        )

    p = {"a": mat(2, 3)}
    cases["sum_all"] = (p, lambda p=p: numerics.sum_all(p["a"]))

    p = {"a": mat(2, 2), "b": mat(2, 3), "c": mat(2, 1)}
    w = rng.normal(0.0, 1.0, (2, 6))
    cases["concat_cols"] = (
        p,
        lambda p=p, w=w: _weighted(numerics.concat_cols([p["a"], p["b"], p["c"]]), w),
    )

    idx = rng.integers(0, 6, size=5)
    p = {"table": mat(6, 3)}
    w = rng.normal(0.0, 1.0, (5, 3))
    cases["gather_rows"] = (p, lambda p=p, w=w, idx=idx: _weighted(numerics.gather_rows(p["table"], idx), w))

    p = {"a": numerics.DiffMatrix(rng.normal(0.0, 1.5, (3, 5)))}
    w = rng.normal(0.0, 1.0, (3, 5))
    cases["softmax_rows"] = (p, lambda p=p, w=w: _weighted(numerics.softmax_rows(p["a"]), w))

    p = {
        "a": numerics.DiffMatrix(rng.normal(0.0, 1.0, (3, 6))),
        "gain": numerics.DiffMatrix(rng.normal(1.0, 0.1, (1, 6))),
        "bias": numerics.DiffMatrix(rng.normal(0.0, 0.3, (1, 6))),
    }
    w = rng.normal(0.0, 1.0, (3, 6))
    cases["layer_norm_rows"] = (
        p,
        lambda p=p, w=w: _weighted(numerics.layer_norm_rows(p["a"], p["gain"], p["bias"]), w),
    )

    target = int(rng.integers(0, 7))
    p = {"logits": numerics.DiffMatrix(rng.normal(0.0, 1.5, (1, 7)))}
    cases["cross_entropy_softmax"] = (
        p,
        lambda p=p, target=target: numerics.cross_entropy_softmax(p["logits"], target),
    )

    hot = (rng.random(6) < 0.5).astype(np.float64)
    p = {"logits": numerics.DiffMatrix(rng.normal(0.0, 1.5, (1, 6)))}
    cases["multilabel_cross_entropy"] = (
        p,
        lambda p=p, hot=hot: numerics.multilabel_cross_entropy(p["logits"], hot),
    )

    drop_seed = int(rng.integers(0, 2**31 - 1))
    p = {"a": mat(3, 4)}
    w = rng.normal(0.0, 1.0, (3, 4))

    def drop_build(p=p, w=w, drop_seed=drop_seed):
        gen = np.random.default_rng(drop_seed)
        return _weighted(numerics.dropout(p["a"], 0.3, gen, training=True), w)

    cases["dropout"] = (p, drop_build)
    return cases


def _check_grad_reverse(rng: np.random.Generator) -> GradCheckReport:
    """Exact identity check: for loss = sum(x) + sum(reverse(x, f)) the
    gradient of x must be exactly (1 - f) everywhere. Finite differences
    cannot certify the reversal because its backward map is deliberately
    not the derivative of its forward map."""
    report = GradCheckReport()
    for _ in range(100):
        factor = float(rng.uniform(0.25, 4.0))
        x = numerics.DiffMatrix(rng.normal(0.0, 1.0, (3, 4)))
        with Tape() as tape:
            loss = numerics.add(
                numerics.sum_all(x), numerics.sum_all(numerics.grad_reverse(x, factor))
            )
            tape.backward(loss)
        expect = (1.0 - factor) * np.ones_like(x.values)
        err = float(np.abs(x.grad - expect).max())
        report.entries_checked += x.values.size
        report.max_rel_err = max(report.max_rel_err, err)
        if err > 1e-12:
            report.failures.append(
                numerics.GradCheckFailure("x", (0, 0), float(x.grad.reshape(-1)[0]), float(expect.reshape(-1)[0]), err)
            )
    return report


def _micro_model_case(seed: int):
    """A tiny full-variant model whose mask decisions sit safely away from
    the routing threshold and populate both branches, so finite differences
    cannot flip the routing and no branch degenerates to the all-zero empty
    vector (which would park downstream ReLUs exactly on their kink)."""
    from .masking import adaptive_mask
    from .numerics import add, cross_entropy_softmax, scale

    cfg = TransformerConfig(d=8, blocks=1, heads=2, ffn_mult=2, dropout=0.0, emb_dropout=0.0, max_len=8)
    mask_cfg = MaskConfig()
    seq = [2, 5, 1, 8, 4, 0]
    target = 7
    cats = np.array([1.0, 0.0, 1.0, 0.0])
    for attempt in range(1000):
        rng = np.random.default_rng([seed, attempt])
        params = build_params(12, 4, cfg, "full", rng)
        if _mask_margin(params, seq, mask_cfg) <= 1e-3:
            continue
        emb = params["items"].values
        window = emb[seq[-mask_cfg.proxy_window:]] @ params["proxy_w"].values
        bits = adaptive_mask(seq, emb, window.mean(axis=0), mask_cfg.theta_m)
        if 0 < int(bits.sum()) < len(seq):
            break
    else:
        raise NumericalError("no initialization with a safe, two-branch mask found")

    def build():
        res = forward(params, seq, cfg, mask_cfg, "full", target_cats=cats)
        loss = cross_entropy_softmax(res.logits, target)
        loss = add(loss, scale(res.adv_losses["trend_cat"], 0.5))
        return add(loss, scale(res.adv_losses["discrete_cat"], 0.5))

    return params, build


def _mask_margin(params, seq: list[int], mask_cfg: MaskConfig) -> float:
    emb = params["items"].values
    window = emb[seq[-mask_cfg.proxy_window:]] @ params["proxy_w"].values
    proxy = window.mean(axis=0)
    rows = emb[seq]
    norms = np.linalg.norm(rows, axis=1) * np.linalg.norm(proxy)
    cos = np.where(norms > 0, rows @ proxy / np.where(norms > 0, norms, 1.0), 0.0)
    return float(np.abs(cos - mask_cfg.theta_m).min())


def gradcheck_battery(per_op: int = 100, seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    """Finite-difference sweep over every differentiable op (randomized
    instances each), the exact reversal identity, and one end-to-end check
    of the full model's conservative objective (recommendation loss plus
    category-discriminator terms; the reversed terms are covered by the
    identity check). Returns (name, report) pairs in a stable order."""
    rng = np.random.default_rng(seed)
    totals: dict[str, GradCheckReport] = {}
    order: list[str] = []
    for _ in range(per_op):
        for name, (params, build) in _op_cases(rng).items():
            report = grad_check(build, params)
            if name not in totals:
                totals[name] = GradCheckReport()
                order.append(name)
            agg = totals[name]
            agg.entries_checked += report.entries_checked
            agg.max_rel_err = max(agg.max_rel_err, report.max_rel_err)
            agg.failures.extend(report.failures)
    results = [(name, totals[name]) for name in order]
    results.append(("grad_reverse", _check_grad_reverse(rng)))
    params, build = _micro_model_case(seed)
    results.append(("model-end-to-end", grad_check(build, params, tol=1e-3)))
    return results


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(sub: argparse.ArgumentParser, *, out_required: bool = True) -> None:
    sub.add_argument("--config", help="key = value settings file")
    sub.add_argument("--seed", type=int, help="root seed (overrides train.seed and synth.seed)")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="GROUP.FIELD=VALUE",
        help="override one config value (repeatable)",
    )
    if out_required:
        sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddsrec", description=__doc__.split("\n\n")[0])
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = commands.add_parser("preprocess", help="filter a raw interaction log into a dataset directory")
    p.add_argument("input", help="tab-separated interaction log")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = commands.add_parser("synth", help="generate a synthetic dataset with planted interests")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser("train", help="fit one variant and write checkpoint plus history")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--variant", choices=VARIANTS, help="model variant (overrides train.variant)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", help="rank the catalog for every user and report metrics")
    p.add_argument("checkpoint", help="checkpoint directory")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--variant", choices=VARIANTS, help="override the checkpoint's variant")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("ablate", help="train all variants under one seed and tabulate metrics")
    p.add_argument("data", help="dataset directory")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = commands.add_parser("gradcheck", help="finite-difference battery over ops and the full model")
    p.add_argument("--seed", type=int, help="battery seed")
    p.set_defaults(func=cmd_gradcheck)

    p = commands.add_parser("export-plots", help="reshape histories and reports into one long CSV")
    p.add_argument("files", nargs="+", help="history CSVs, ablation tables, or metrics JSON reports")
    _add_common(p)
    p.set_defaults(func=cmd_export_plots)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ConfigError, LockHeld) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, EmptyDatasetError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
