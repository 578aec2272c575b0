"""Command-line entry point: ``pagm <subcommand> [flags]``.

Option precedence is built-in defaults, then ``--config FILE`` (JSON keyed by
the option names shown in ``--help``, with dashes as underscores), then
explicit flags.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import data as data_mod
from .embed import grad_check, init_params
from .errors import KinkProximity, PagmError
from .trainer import (
    TrainConfig,
    cross_category,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    split_by_category,
    train,
    write_eval_csv,
    write_matrix_csv,
    write_reports_csv,
)


class UsageError(Exception):
    pass


def _widths(text: str) -> tuple:
    try:
        out = tuple(int(w) for w in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("widths must be positive")
    return out


def _opt(parser, flag, default, help, **kw):
    """Add a flag whose default is applied later, so config files can slot in between."""
    shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
    text = help if default is None else f"{help} (default: {shown})"
    parser.add_argument(flag, default=argparse.SUPPRESS, help=text, **kw)
    parser.set_defaults(**{"_default_" + flag.lstrip("-").replace("-", "_"): default})


def _common(p):
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option values; flags override it")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (default: all cores)")


def _train_opts(p):
    d = TrainConfig()
    _opt(p, "--lr", d.lr, "Adam learning rate", type=float)
    _opt(p, "--batch-size", d.batch_size, "pairs per optimizer step", type=int)
    _opt(p, "--max-steps", d.max_steps, "optimizer steps", type=int)
    _opt(p, "--adam-beta1", d.adam_beta1, "Adam beta1", type=float)
    _opt(p, "--adam-beta2", d.adam_beta2, "Adam beta2", type=float)
    _opt(p, "--adam-eps", d.adam_eps, "Adam epsilon", type=float)
    _opt(p, "--sinkhorn-iters", d.sinkhorn_iters, "Sinkhorn iterations", type=int)
    _opt(p, "--temperature", d.temperature, "Sinkhorn temperature", type=float)
    _opt(p, "--r", d.r, "hop-distance ceiling for position coefficients", type=int)
    _opt(p, "--hidden-widths", d.hidden_widths, "comma-separated layer widths", type=_widths)
    _opt(p, "--seed", d.seed, "seed for initialisation and batch sampling", type=int)
    _opt(p, "--aggregator", d.aggregator, "anchor aggregation", choices=["sum", "mean"])
    _opt(p, "--coefficients", d.coefficients, "anchor weighting ('uniform' ablates position)", choices=["position", "uniform"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pagm", description="Position-aware deep graph matching.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset (JSONL)")
    _common(p)
    _opt(p, "--out", None, "output dataset path (required)")
    _opt(p, "--family", "standard", "pair family", choices=["standard", "ambiguous", "categories"])
    _opt(p, "--pairs", 100, "pairs to generate (per category for --family categories)", type=int)
    _opt(p, "--categories", 3, "number of preset categories for --family categories", type=int)
    _opt(p, "--n", 10, "source node count", type=int)
    _opt(p, "--m", None, "target node count, >= n (defaults to n)", type=int)
    _opt(p, "--edge-model", "erdos_renyi", "edge model", choices=["erdos_renyi", "random_geometric"])
    _opt(p, "--p", 0.3, "Erdos-Renyi edge probability", type=float)
    _opt(p, "--radius", 0.4, "random geometric connection radius", type=float)
    _opt(p, "--feature-dim", 16, "node feature width", type=int)
    _opt(p, "--feature-noise-sigma", 0.0, "Gaussian feature noise on target nodes", type=float)
    _opt(p, "--edge-flip-prob", 0.0, "independent edge flip probability in the target", type=float)
    _opt(p, "--seed", 0, "generator seed", type=int)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    _opt(p, "--data", None, "training dataset (required)")
    _opt(p, "--out", None, "checkpoint output path (required)")
    _opt(p, "--report", None, "per-step CSV path (default: <out>.steps.csv)")
    _opt(p, "--resume", None, "checkpoint to continue from")
    _train_opts(p)

    p = sub.add_parser("eval", help="report matching accuracy of a checkpoint")
    _common(p)
    _opt(p, "--ckpt", None, "checkpoint path (required)")
    _opt(p, "--data", None, "evaluation dataset (required)")
    _opt(p, "--csv", None, "also write the accuracy table to this CSV")

    p = sub.add_parser("match", help="print the predicted mapping for one pair as JSON")
    _common(p)
    _opt(p, "--ckpt", None, "checkpoint path (required)")
    _opt(p, "--data", None, "dataset containing the pair (required)")
    _opt(p, "--index", 0, "0-based pair index in the dataset", type=int)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    _common(p)
    _opt(p, "--instances", 20, "random instances to check", type=int)
    _opt(p, "--n", 6, "nodes per graph", type=int)
    _opt(p, "--feature-dim", 4, "node feature width", type=int)
    _opt(p, "--hidden-widths", (8, 8), "comma-separated layer widths", type=_widths)
    _opt(p, "--r", 3, "hop-distance ceiling", type=int)
    _opt(p, "--sinkhorn-iters", 20, "Sinkhorn iterations", type=int)
    _opt(p, "--h", 1e-5, "central-difference step", type=float)
    _opt(p, "--tol", 1e-4, "relative error tolerance", type=float)
    _opt(p, "--seed", 0, "base seed", type=int)

    p = sub.add_parser("xcat", help="cross-category generalisation matrix (CSV)")
    _common(p)
    _opt(p, "--train-data", None, "training dataset with category labels (required)")
    _opt(p, "--test-data", None, "test dataset with category labels (required)")
    _opt(p, "--out", None, "CSV output path (required)")
    _train_opts(p)
    return parser


def _resolve(ns: argparse.Namespace) -> dict:
    raw = vars(ns)
    defaults = {k[len("_default_"):]: v for k, v in raw.items() if k.startswith("_default_")}
    opts = dict(defaults)
    if "config" in raw:
        try:
            with open(raw["config"], encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {raw['config']}: {exc}")
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys for {ns.command}: {sorted(unknown)}")
        if "hidden_widths" in cfg:
            cfg["hidden_widths"] = tuple(cfg["hidden_widths"])
        opts.update(cfg)
    opts.update({k: v for k, v in raw.items() if not k.startswith("_default_") and k not in ("config", "command")})
    opts.setdefault("threads", os.cpu_count() or 1)
    return opts


def _require(opts, *names):
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _train_config(opts) -> TrainConfig:
    return TrainConfig(**{f.name: opts[f.name] for f in fields(TrainConfig) if f.name in opts})


def cmd_gen_data(opts, out):
    _require(opts, "out")
    if opts["family"] == "ambiguous":
        ds = data_mod.gen_ambiguous_dataset(opts["n"], opts["pairs"], opts["seed"], opts["feature_dim"])
    else:
        cfg = data_mod.PairGenConfig(
            n=opts["n"],
            m=opts["m"],
            edge_model=opts["edge_model"],
            p=opts["p"],
            radius=opts["radius"],
            feature_dim=opts["feature_dim"],
            feature_noise_sigma=opts["feature_noise_sigma"],
            edge_flip_prob=opts["edge_flip_prob"],
            seed=opts["seed"],
        )
        if opts["family"] == "categories":
            specs = data_mod.default_categories(opts["categories"], opts["feature_dim"])
            ds = data_mod.gen_category_dataset(specs, opts["pairs"], opts["seed"])
        else:
            ds = data_mod.gen_dataset(cfg, opts["pairs"])
    data_mod.save_dataset(ds, opts["out"])
    print(f"wrote {len(ds)} pairs to {opts['out']}", file=out)


def cmd_train(opts, out):
    _require(opts, "data", "out")
    ds = data_mod.load_dataset(opts["data"])
    cfg = _train_config(opts)
    resume = load_checkpoint(opts["resume"]) if opts["resume"] else None
    ckpt, reports = train(ds, cfg, resume=resume, workers=opts["threads"])
    save_checkpoint(ckpt, opts["out"])
    report = opts["report"] or str(opts["out"]) + ".steps.csv"
    write_reports_csv(reports, report)
    last = reports[-1] if reports else None
    msg = f"trained to step {ckpt.step}"
    if last:
        msg += f"; final loss {last.loss:.6g}, batch accuracy {last.accuracy:.4f}"
    print(msg, file=out)


def cmd_eval(opts, out):
    _require(opts, "ckpt", "data")
    ckpt = load_checkpoint(opts["ckpt"])
    ds = data_mod.load_dataset(opts["data"])
    res = evaluate(ds, ckpt, workers=opts["threads"])
    print("category,accuracy", file=out)
    for label, acc in res.per_category.items():
        print(f"{label},{acc:.6f}", file=out)
    print(f"mean,{res.mean_accuracy:.6f}", file=out)
    if opts["csv"]:
        write_eval_csv(res, opts["csv"])


def cmd_match(opts, out):
    _require(opts, "ckpt", "data")
    ckpt = load_checkpoint(opts["ckpt"])
    ds = data_mod.load_dataset(opts["data"])
    if not 0 <= opts["index"] < len(ds):
        raise UsageError(f"--index {opts['index']} outside 0..{len(ds) - 1}")
    pair = ds[opts["index"]]
    from .assignment import matching_accuracy

    pred, _ = predict(pair, ckpt.params, ckpt.config)
    json.dump(
        {"index": opts["index"], "mapping": list(pred.mapping), "accuracy": matching_accuracy(pred, pair.gt)},
        out,
    )
    out.write("\n")


def cmd_gradcheck(opts, out):
    n, f = opts["n"], opts["feature_dim"]
    failures = 0
    seed = opts["seed"]
    for k in range(opts["instances"]):
        while True:
            pair = data_mod.gen_pair(data_mod.PairGenConfig(n=n, feature_dim=f, p=0.4, seed=seed))
            params = init_params(f, opts["hidden_widths"], seed)
            seed += 1
            try:
                rep = grad_check(pair, params, opts["h"], opts["tol"], opts["r"], opts["sinkhorn_iters"])
                break
            except KinkProximity:
                continue
        failures += not rep.passed
        print(
            f"instance {k} seed {seed - 1}: max_rel_err={rep.max_rel_err:.3e} "
            f"max_abs_err={rep.max_abs_err:.3e} {'PASS' if rep.passed else 'FAIL'}",
            file=out,
        )
    print(f"{opts['instances'] - failures}/{opts['instances']} passed", file=out)
    return 1 if failures else 0


def cmd_xcat(opts, out):
    _require(opts, "train_data", "test_data", "out")
    train_ds = split_by_category(data_mod.load_dataset(opts["train_data"]))
    test_ds = split_by_category(data_mod.load_dataset(opts["test_data"]))
    missing = set(train_ds) ^ set(test_ds)
    if missing:
        raise UsageError(f"categories present in only one dataset: {sorted(missing)}")
    labels, mat = cross_category({k: (train_ds[k], test_ds[k]) for k in train_ds}, _train_config(opts), opts["threads"])
    write_matrix_csv(labels, mat, opts["out"])
    with np.printoptions(precision=4, suppress=True):
        print("rows=train, cols=test:", ",".join(labels), file=out)
        print(mat, file=out)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "match": cmd_match,
    "gradcheck": cmd_gradcheck,
    "xcat": cmd_xcat,
}


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = _resolve(ns)
        return COMMANDS[ns.command](opts, out) or 0
    except UsageError as exc:
        parser.print_usage(err)
        print(f"pagm {ns.command}: error: {exc}", file=err)
        return 2
    except (PagmError, OSError, ValueError) as exc:
        print(f"pagm {ns.command}: {type(exc).__name__}: {exc}", file=err)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
