"""Command-line experiment runner.

Every subcommand writes ``manifest.json``, ``results.csv`` and per-run
curves under ``curves/`` into ``--out``. Artifacts are assembled in a
scratch directory and moved into place only when the run succeeds.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import shutil
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .constructive import (
    CURVE_CSV_COLUMNS,
    LAYER_CURVE_COLUMNS,
    CandidatePoolConfig,
    auto_forward_thinking,
    caser_re_train,
    cascor_train,
    forward_thinking_train,
    prune_to_tradeoff,
)
from .data import default_mnist_dir, load_mnist, synthetic_splits
from .errors import ArchforgeError, ConfigError, ContractError, DataError
from .network import ACTIVATIONS, ArchitectureSpec, build_layered, init_weights
from .numerics import Rng, derive_seed
from .parallel import pmap
from .search import (
    EvolutionParams,
    SearchSpace,
    evaluations_from_history,
    evolve,
    exploration_report,
    random_search,
    search_rows,
    write_search_csv,
)
from .training import RUN_CSV_COLUMNS, TrainConfig, evaluate, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
SUBCOMMANDS = ("train", "random-search", "evolve", "cascor", "caser", "forward-thinking", "aft")


# -- argument parsing ----------------------------------------------------------

class _Builder:
    """Adds arguments, optionally with every default suppressed.

    The suppressed variant reveals which options were typed on the command
    line, so that those (and only those) override the ``--config`` file.
    """

    def __init__(self, suppress):
        self.suppress = suppress

    def __call__(self, parser, *flags, **kw):
        if self.suppress:
            kw["default"] = argparse.SUPPRESS
        parser.add_argument(*flags, **kw)


def _build_parser(suppress=False):
    add = _Builder(suppress)
    parser = argparse.ArgumentParser(prog="archforge", description="Architecture search and constructive training.")
    parser.add_argument("--version", action="version", version=f"archforge {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    add(common, "--seed", type=int, default=0, help="master seed")
    add(common, "--synthetic", action="store_true", default=False, help="use the 2-D polygon task instead of MNIST")
    add(common, "--synthetic-n", type=int, default=2000, help="polygon points (train+val); the test set has half as many")
    add(common, "--mnist-dir", default=None, help="directory with the MNIST IDX files (default: $ARCHFORGE_MNIST_DIR)")
    add(common, "--subset", action="store_true", default=False, help="MNIST desk-scale subset: 10k train, 2k val")
    add(common, "--out", default=None, help="output directory (default: runs/<subcommand>)")
    add(common, "--config", default=None, help="JSON file of option values; command-line flags win")
    add(common, "--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    add(common, "--deterministic", action="store_true", default=False,
        help="leave wall-time columns of CSV outputs blank so replays are byte-identical")
    add(common, "--batch-size", type=int, default=128)
    add(common, "--lr", type=float, default=None, help="learning rate (default 0.001 rmsprop, 0.01 sgd)")
    add(common, "--max-epochs", type=int, default=100)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one fixed architecture")
    add(p, "--depth", type=int, default=2)
    add(p, "--width", type=int, default=512)
    add(p, "--activation", choices=ACTIVATIONS, default="tanh")
    add(p, "--optimizer", choices=("sgd", "rmsprop"), default="rmsprop")
    add(p, "--patience", type=int, default=5)
    add(p, "--monitor", choices=("val_accuracy", "val_loss"), default="val_accuracy")
    add(p, "--runs", type=int, default=1, help="independent repeats")

    for name, helptext in (("random-search", "uniform random architecture search"),
                           ("evolve", "evolutionary architecture search")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        add(p, "--runs", type=int, default=3, help="training runs per fitness evaluation")
        add(p, "--epochs", type=int, default=3, help="epochs per fitness run")
        add(p, "--dedupe", action="store_true", default=False)
        if name == "random-search":
            add(p, "--n", type=int, default=200, help="number of sampled architectures")
        else:
            add(p, "--population", type=int, default=50)
            add(p, "--mutation", type=float, default=0.10)
            add(p, "--retain", type=float, default=0.40)
            add(p, "--random-select", type=float, default=0.10)
            add(p, "--budget", type=int, default=200, help="architectures to evaluate")

    for name in ("cascor", "caser"):
        p = sub.add_parser(name, parents=[common], help=f"{name} cascade construction")
        add(p, "--pool", type=int, default=8)
        add(p, "--activation", choices=ACTIVATIONS, default="tanh")
        add(p, "--patience", type=int, default=3)
        add(p, "--optimizer", choices=("sgd", "rmsprop"), default="rmsprop")
        add(p, "--runs", type=int, default=1, help="independent repeats")
        if name == "cascor":
            add(p, "--max-units", type=int, default=10)
            add(p, "--candidate-epochs", type=int, default=2)
        else:
            add(p, "--max-insertions", type=int, default=10)
            add(p, "--candidate-epochs", type=int, default=1)
            add(p, "--reuse", default="never", help="never | always | pool_member | threshold(DROP)")
            add(p, "--insert", choices=("unit", "layer"), default="unit")
            add(p, "--layer-width", type=int, default=50)

    p = sub.add_parser("forward-thinking", parents=[common], help="greedy layer-wise training")
    add(p, "--layers", default="512,512", help="comma-separated hidden widths")
    add(p, "--activation", choices=ACTIVATIONS, default="tanh")
    add(p, "--patience", type=int, default=2)
    add(p, "--last-patience", type=int, default=3)
    add(p, "--monitor", choices=("val_accuracy", "val_loss"), default="val_loss")
    add(p, "--runs", type=int, default=1, help="independent repeats")

    p = sub.add_parser("aft", parents=[common], help="automated forward thinking with pruning")
    add(p, "--pool", type=int, default=8)
    add(p, "--min-width", type=int, default=50)
    add(p, "--max-width", type=int, default=1000)
    add(p, "--width-step", type=int, default=50)
    add(p, "--candidate-epochs", type=int, default=2)
    add(p, "--max-layers", type=int, default=10)
    add(p, "--no-monotone", action="store_true", default=False)
    add(p, "--epsilon", type=float, default=0.001, help="pruning tolerance on validation accuracy")
    add(p, "--activation", choices=ACTIVATIONS, default="tanh")
    add(p, "--patience", type=int, default=2)
    add(p, "--monitor", choices=("val_accuracy", "val_loss"), default="val_loss")
    add(p, "--runs", type=int, default=1, help="independent repeats")
    return parser


def parse_args(argv):
    """Parse ``argv`` and merge a ``--config`` JSON file under the explicit flags."""
    args = _build_parser().parse_args(argv)
    explicit = vars(_build_parser(suppress=True).parse_args(argv))
    if args.config:
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest in ("command", "config"):
                continue
            if not hasattr(args, dest):
                raise ConfigError(f"unknown option {key!r} for {args.command}")
            if dest not in explicit:
                setattr(args, dest, value)
    _validate(args)
    return args


def _validate(args):
    if args.synthetic and (args.mnist_dir or args.subset):
        raise ConfigError("--synthetic cannot be combined with --mnist-dir or --subset")
    for name in ("jobs", "batch_size", "max_epochs", "runs", "synthetic_n"):
        if getattr(args, name, 1) < 1:
            raise ConfigError(f"--{name.replace('_', '-')} must be >= 1")
    if args.synthetic and args.synthetic_n < 10:
        raise ConfigError("--synthetic-n must be >= 10")


# -- helpers -------------------------------------------------------------------

def _load_data(args):
    if args.synthetic:
        return synthetic_splits(args.synthetic_n, args.seed)
    directory = args.mnist_dir or default_mnist_dir()
    if not directory:
        raise DataError("no MNIST directory: pass --mnist-dir, set ARCHFORGE_MNIST_DIR or use --synthetic")
    return load_mnist(directory, subset=args.subset)


def _train_cfg(args, **overrides):
    base = {
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "max_epochs": args.max_epochs,
        "seed": args.seed,
    }
    base.update(overrides)
    return TrainConfig(**base)


def _write_csv(path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _run_rows(record, timing):
    return record.csv_rows(timing=timing)


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def _print_table(rows, columns, stream):
    if not rows:
        return
    cells = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)), file=stream)
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)), file=stream)


def _seeds(args):
    return [derive_seed(args.seed, r) for r in range(args.runs)]


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


# -- subcommands -----------------------------------------------------------------

def _train_job(data, job):
    spec, cfg, seed = job
    rng = Rng(seed)
    net = init_weights(build_layered(data.train.dim, spec.hidden, data.train.class_count), rng.derive(0))
    t0 = time.perf_counter()
    net, rec = fit(net, data.train, data.val, cfg, rng.derive(1))
    rec.test_acc = evaluate(net, data.test)[1] if len(data.test) else None
    return rec, time.perf_counter() - t0


def cmd_train(args, data, out, timing):
    try:
        spec = ArchitectureSpec(args.depth, args.width, args.activation, args.optimizer)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = _train_cfg(args, optimizer=args.optimizer, patience=args.patience, monitor=args.monitor)
    seeds = _seeds(args)
    results = pmap(_train_job, [(spec, cfg, s) for s in seeds], args.jobs, shared=data)
    rows = []
    for r, (seed, (rec, secs)) in enumerate(zip(seeds, results)):
        _write_csv(out / "curves" / f"run_{r:03d}.csv", RUN_CSV_COLUMNS, _run_rows(rec, timing))
        rows.append({
            "run": r, "seed": seed, "architecture": spec.label(), "activation": spec.activation,
            "optimizer": spec.optimizer, "epochs": rec.epochs, "best_epoch": rec.best_epoch,
            "val_acc": rec.best("val_acc"), "test_acc": rec.test_acc,
            "seconds": f"{secs:.4f}" if timing else "",
        })
    columns = list(rows[0])
    _write_csv(out / "results.csv", columns, rows)
    timings = {"main_seconds": sum(s for _, s in results), "candidate_seconds": 0.0}
    summary = {"mean_test_acc": _mean([r["test_acc"] for r in rows]),
               "mean_val_acc": _mean([r["val_acc"] for r in rows]),
               "mean_epochs": _mean([r["epochs"] for r in rows])}
    return rows, ["run", "architecture", "epochs", "best_epoch", "val_acc", "test_acc"], summary, timings


def _search_common(args):
    return SearchSpace(), _train_cfg(args)


def _write_exploration(out, report):
    _write_csv(out / "curves" / "exploration.csv", ("dimension", "value", "visits"), report.csv_rows())


def cmd_random_search(args, data, out, timing):
    space, cfg = _search_common(args)
    ranked = random_search(space, args.n, data, Rng(args.seed), args.runs, args.epochs,
                           args.dedupe, args.jobs, cfg)
    write_search_csv(out / "results.csv", search_rows("random", ranked, None, timing))
    report = exploration_report(ranked, space)
    _write_exploration(out, report)
    rows = [{"rank": i + 1, "architecture": e.spec.label(), "activation": e.spec.activation,
             "optimizer": e.spec.optimizer, "fitness": e.fitness} for i, e in enumerate(ranked[:10])]
    summary = {"best_fitness": ranked[0].fitness, "best": asdict(ranked[0].spec),
               "distinct_specs": report.distinct_specs, "space_fraction": report.space_fraction,
               "diverged": sum(e.diverged for e in ranked)}
    timings = {"main_seconds": sum(e.seconds for e in ranked), "candidate_seconds": 0.0}
    return rows, list(rows[0]), summary, timings


def cmd_evolve(args, data, out, timing):
    space, cfg = _search_common(args)
    params = EvolutionParams(args.population, args.mutation, args.retain, args.random_select,
                             args.dedupe, args.budget)
    final, history = evolve(space, params, data, Rng(args.seed), args.runs, args.epochs, args.jobs, cfg)
    evaluations = evaluations_from_history(history)
    initial = [e.spec for e in history[0]]
    write_search_csv(out / "results.csv", search_rows("evolve", evaluations, initial, timing))
    report = exploration_report(evaluations, space, initial)
    _write_exploration(out, report)
    rows, best = [], 0.0
    for g, members in enumerate(history):
        fit_ = [e.fitness for e in members]
        best = max(best, max(fit_))
        rows.append({"generation": g, "population": len(members), "best_fitness": max(fit_),
                     "mean_fitness": float(np.mean(fit_)), "best_so_far": best})
    _write_csv(out / "curves" / "generations.csv", list(rows[0]), rows)
    top = min(final, key=lambda e: (-e.fitness, e.spec))
    summary = {"best_fitness": top.fitness, "best": asdict(top.spec), "generations": len(history),
               "evaluations": len(evaluations), "distinct_specs": report.distinct_specs,
               "space_fraction": report.space_fraction, "initial_fraction": report.initial_fraction,
               "params": asdict(params)}
    timings = {"main_seconds": sum(e.seconds for e in evaluations), "candidate_seconds": 0.0}
    return rows, list(rows[0]), summary, timings


def _cascade_job(data, job):
    kind, n, pool, cfg, seed = job
    algo = cascor_train if kind == "cascor" else caser_re_train
    net, rec = algo(data, n, pool, cfg, Rng(seed))
    return net.widths, net.parameter_count, rec


def cmd_cascade(args, data, out, timing):
    cfg = _train_cfg(args, optimizer=args.optimizer, patience=args.patience, monitor="val_accuracy")
    if args.command == "cascor":
        pool = CandidatePoolConfig(args.pool, args.candidate_epochs, "correlation_max", activation=args.activation)
        n = args.max_units
    else:
        policy, drop = CandidatePoolConfig.parse_policy(args.reuse)
        extra = {"threshold_drop": drop} if drop is not None else {}
        pool = CandidatePoolConfig(args.pool, args.candidate_epochs, "loss_min", policy,
                                   insert_kind=args.insert, layer_width=args.layer_width,
                                   activation=args.activation, **extra)
        n = args.max_insertions
    seeds = _seeds(args)
    results = pmap(_cascade_job, [(args.command, n, pool, cfg, s) for s in seeds], args.jobs, shared=data)
    rows = []
    cand_s = main_s = 0.0
    for r, (seed, (widths, params, rec)) in enumerate(zip(seeds, results)):
        _write_csv(out / "curves" / f"run_{r:03d}.csv", CURVE_CSV_COLUMNS, rec.curve_rows())
        cand_s += rec.candidate_seconds
        main_s += rec.main_seconds
        rows.append({
            "run": r, "seed": seed, "algorithm": rec.algorithm, "insertions": len(rec.insertions),
            "widths": " ".join(map(str, widths)), "parameter_count": params,
            "val_acc": rec.final_val_acc, "test_acc": rec.test_acc,
            "reused": sum(i.reused_output for i in rec.insertions),
            "candidate_seconds": f"{rec.candidate_seconds:.4f}" if timing else "",
            "main_seconds": f"{rec.main_seconds:.4f}" if timing else "",
        })
    _write_csv(out / "results.csv", list(rows[0]), rows)
    summary = {"mean_val_acc": _mean([r["val_acc"] for r in rows]),
               "mean_test_acc": _mean([r["test_acc"] for r in rows]),
               "pool": asdict(pool)}
    return rows, ["run", "insertions", "parameter_count", "val_acc", "test_acc"], summary, \
        {"candidate_seconds": cand_s, "main_seconds": main_s}


def _ft_job(data, job):
    plan, cfg, last_patience, seed = job
    t0 = time.perf_counter()
    net, recs = forward_thinking_train(data, plan, cfg, Rng(seed), last_patience)
    return net.widths, net.parameter_count, recs, time.perf_counter() - t0


def cmd_forward_thinking(args, data, out, timing):
    try:
        widths = [int(w) for w in str(args.layers).split(",") if w.strip()]
    except ValueError as exc:
        raise ConfigError(f"--layers must be comma-separated integers: {exc}") from exc
    plan = [(w, args.activation) for w in widths]
    cfg = _train_cfg(args, patience=args.patience, monitor=args.monitor)
    seeds = _seeds(args)
    results = pmap(_ft_job, [(plan, cfg, args.last_patience, s) for s in seeds], args.jobs, shared=data)
    rows = []
    for r, (seed, (w, params, recs, secs)) in enumerate(zip(seeds, results)):
        curve_rows = [{"layer": i + 1, **row} for i, rec in enumerate(recs) for row in _run_rows(rec, timing)]
        _write_csv(out / "curves" / f"run_{r:03d}.csv", ("layer",) + RUN_CSV_COLUMNS, curve_rows)
        rows.append({
            "run": r, "seed": seed, "widths": " ".join(map(str, w)), "parameter_count": params,
            "epochs": sum(rec.epochs for rec in recs), "val_acc": recs[-1].best("val_acc"),
            "test_acc": recs[-1].test_acc, "seconds": f"{secs:.4f}" if timing else "",
        })
    _write_csv(out / "results.csv", list(rows[0]), rows)
    summary = {"mean_val_acc": _mean([r["val_acc"] for r in rows]),
               "mean_test_acc": _mean([r["test_acc"] for r in rows])}
    return rows, ["run", "widths", "epochs", "val_acc", "test_acc"], summary, \
        {"candidate_seconds": 0.0, "main_seconds": sum(x[3] for x in results)}


def _aft_job(data, job):
    opts, cfg, prune_cfg, eps, seed = job
    rng = Rng(seed)
    net, curve = auto_forward_thinking(data, cfg=cfg, rng=rng.derive(0), **opts)
    t0 = time.perf_counter()
    pruned, depth, head = prune_to_tradeoff(curve, net, eps, data, prune_cfg, rng.derive(1))
    prune_s = time.perf_counter() - t0
    return curve, pruned.widths, pruned.parameter_count, depth, head, prune_s


def cmd_aft(args, data, out, timing):
    if args.min_width < 1 or args.width_step < 1 or args.max_width < args.min_width:
        raise ConfigError("width range is empty")
    opts = {
        "pool_size": args.pool,
        "widths": tuple(range(args.min_width, args.max_width + 1, args.width_step)),
        "candidate_epochs": args.candidate_epochs,
        "monotone": not args.no_monotone,
        "max_layers": args.max_layers,
        "activation": args.activation,
    }
    cfg = _train_cfg(args, patience=args.patience, monitor=args.monitor)
    prune_cfg = cfg.with_(patience=3)
    seeds = _seeds(args)
    results = pmap(_aft_job, [(opts, cfg, prune_cfg, args.epsilon, s) for s in seeds], args.jobs, shared=data)
    rows = []
    cand_s = main_s = 0.0
    for r, (seed, (curve, widths, params, depth, head, prune_s)) in enumerate(zip(seeds, results)):
        _write_csv(out / "curves" / f"run_{r:03d}.csv", CURVE_CSV_COLUMNS, curve.curve_rows())
        _write_csv(out / "curves" / f"run_{r:03d}_layers.csv", LAYER_CURVE_COLUMNS, curve.rows())
        cand_s += curve.candidate_seconds
        main_s += curve.main_seconds + prune_s
        rows.append({
            "run": r, "seed": seed, "built_widths": " ".join(map(str, curve.widths)),
            "built_max_val_acc": max(curve.val_acc), "pruned_depth": depth,
            "pruned_widths": " ".join(map(str, widths)), "parameter_count": params,
            "val_acc": head.best("val_acc"), "test_acc": head.test_acc,
            "flags": "; ".join(curve.flags),
        })
    _write_csv(out / "results.csv", list(rows[0]), rows)
    summary = {"mean_val_acc": _mean([r["val_acc"] for r in rows]),
               "mean_test_acc": _mean([r["test_acc"] for r in rows]),
               "std_test_acc": float(np.std([r["test_acc"] for r in rows])) if rows[0]["test_acc"] is not None else None}
    return rows, ["run", "pruned_widths", "pruned_depth", "val_acc", "test_acc"], summary, \
        {"candidate_seconds": cand_s, "main_seconds": main_s}


COMMANDS = {
    "train": cmd_train,
    "random-search": cmd_random_search,
    "evolve": cmd_evolve,
    "cascor": cmd_cascade,
    "caser": cmd_cascade,
    "forward-thinking": cmd_forward_thinking,
    "aft": cmd_aft,
}


def _manifest(args, data, summary, timings, wall):
    config = {k: v for k, v in sorted(vars(args).items())}
    return {
        "tool": "archforge",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "config": config,
        "data": data.description,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timings": {"wall_seconds": wall, **timings},
        "summary": summary,
    }


def run_experiment(args, stream=None):
    """Run one parsed command; artifacts land in ``args.out`` only on success."""
    stream = stream or sys.stdout
    out = Path(args.out or Path("runs") / args.command)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        t0 = time.perf_counter()
        data = _load_data(args)
        rows, columns, summary, timings = COMMANDS[args.command](args, data, scratch, not args.deterministic)
        manifest = _manifest(args, data, summary, timings, time.perf_counter() - t0)
        (scratch / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        out.mkdir(exist_ok=True)
        for item in sorted(scratch.rglob("*")):
            target = out / item.relative_to(scratch)
            if item.is_dir():
                target.mkdir(exist_ok=True)
            else:
                os.replace(item, target)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    print(f"{args.command} on {data.description} -> {out}", file=stream)
    _print_table(rows, columns, stream)
    for key, value in summary.items():
        if isinstance(value, (int, float)) or value is None:
            print(f"{key}: {_fmt(value)}", file=stream)
    return manifest


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        run_experiment(args)
    except ConfigError as exc:
        print(f"archforge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"archforge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArchforgeError, ArithmeticError, ValueError, OSError, MemoryError) as exc:
        print(f"archforge: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
