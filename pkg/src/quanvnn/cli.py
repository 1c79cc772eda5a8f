"""Command-line entry point: ``generate``, ``train``, ``evaluate`` and ``compare``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numeric failure.
Relative default output locations live under ``$QUANVNN_OUTPUT_ROOT``
(current directory when unset).
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .ansatz import AnsatzKind
from .errors import NumericError
from .experiment import (FORMAT_VERSION, OUTPUT_ROOT_ENV, SPLIT_NAMES, ExperimentManifest, compare_manifest,
                         load_dataset, output_root, run_manifest, select, train_run, write_table)
from .metrics import MetricsReport, evaluate
from .model import FRONTENDS, GRAD_BACKENDS
from .specgen import DIFFICULTIES, build_dataset, save_jsonl, save_splits, splits_path, stratified_split
from .trainer import SpsaConfig, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("quanvnn")


def _write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")


# ------------------------------------------------------------------ subcommands


def cmd_generate(args) -> int:
    out = Path(args.out) if args.out else output_root() / f"{args.kind}-s{args.seed}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    data = build_dataset(args.kind, args.seed)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    train, val, test = stratified_split(data, seed=split_seed)
    save_jsonl(data, out)
    save_splits(splits_path(out), train, val, test, split_seed)
    by_diff = Counter(s.difficulty for s in data)
    print(f"wrote {len(data)} spectra to {out}")
    print("by difficulty: " + ", ".join(f"{d}={by_diff[d]}" for d in DIFFICULTIES if by_diff[d]))
    print(f"zero-peak spectra: {sum(s.count == 0 for s in data)}")
    print(f"splits: train={len(train)} val={len(val)} test={len(test)}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    spsa = SpsaConfig(args.spsa_a, args.spsa_c, args.spsa_A, args.spsa_alpha, args.spsa_gamma)
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr_max=args.lr_max, lr_min=args.lr_min,
        dropout=args.dropout, seed=args.seed, frontend=args.frontend,
        ansatz=AnsatzKind(args.ansatz, args.ansatz_seed, args.gate_count),
        learnable_frontend=not args.static_frontend, noisy=args.noisy, noisy_start_epoch=args.noisy_start_epoch,
        noise_gamma=args.gamma, spsa=spsa, spsa_all=args.spsa_all, grad_backend=args.grad_backend,
        output_activation="softmax" if args.softmax else "logistic",
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    if args.out:
        out = Path(args.out)
    else:
        name = "classical" if config.frontend == "classical" else f"quantum-{config.ansatz.name}"
        out = output_root() / "runs" / f"{name}-s{config.seed}"

    def progress(epoch, train_loss, val_loss):
        if not args.quiet:
            print(f"epoch {epoch + 1}/{config.epochs} train={train_loss:.5f} val={val_loss:.5f}", flush=True)

    rundir, record = train_run(args.dataset, config, out, args.limit, args.val_limit, progress)
    print(f"run written to {rundir} ({record.wall_time:.1f} s)")
    return EXIT_OK


def _checkpoint_list(args) -> list[str]:
    paths = list(args.checkpoint or [])
    if args.checkpoints:
        matched = sorted(glob.glob(args.checkpoints))
        if not matched:
            raise FileNotFoundError(f"no checkpoints match {args.checkpoints!r}")
        paths += matched
    if not paths:
        raise ValueError("give --checkpoint and/or --checkpoints")
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
    return paths


def cmd_evaluate(args) -> int:
    paths = _checkpoint_list(args)
    spectra, splits = load_dataset(args.dataset)
    subset = select(spectra, splits, args.split)
    report = evaluate(paths, subset, args.difficulty, args.noisy, args.gamma)
    doc = {"format_version": FORMAT_VERSION, **report.to_dict(), "checkpoints": paths, "split": args.split,
           "difficulty": args.difficulty, "noisy": args.noisy}
    out = Path(args.out) if args.out else output_root() / "report.json"
    _write_json(out, doc)
    if args.csv:
        write_table(args.csv, {args.name: report})
    print(f"F1={report.f1:.4f} recall={report.recall:.4f} precision={report.precision:.4f} "
          f"MAE={report.mae:.4f} MSE={report.mse:.5f} support={report.support} -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    if not args.skip_training:
        run_manifest(manifest, jobs=args.jobs, reuse=args.reuse)
    report = compare_manifest(manifest, noisy=args.noisy)
    out = Path(args.out) if args.out else Path(manifest.out) / "compare.json"
    _write_json(out, report)
    if args.csv:
        write_table(args.csv, {k: MetricsReport.from_dict(v) for k, v in report["groups"].items()})
    for name, g in report["groups"].items():
        print(f"{name}: F1={g['f1']:.4f} MAE={g['mae']:.4f} support={g['support']}")
    for name, t in report["tests"].items():
        print(f"{name} vs {report['baseline']}: p(F1 higher)={t['f1_greater_p']:.4g} "
              f"p(MAE lower)={t['mae_lower_p']:.4g}")
    print(f"report written to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="quanvnn", description="Quanvolutional vs classical peak finding on synthetic spectra.",
        epilog=f"Default output locations are relative to ${OUTPUT_ROOT_ENV} (current directory if unset).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset (JSON Lines) and its split sidecar")
    g.add_argument("--kind", choices=("mixed", "hard"), required=True,
                   help="mixed: 550 hard + 350 medium + 250 easy; hard: 1000 hard spectra")
    g.add_argument("--seed", type=int, default=0, help="dataset seed")
    g.add_argument("--split-seed", type=int, default=None, help="seed for the 80/10/10 split (default: --seed)")
    g.add_argument("--out", help="output .jsonl path; splits go to <out>.splits.json")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and write a run directory")
    t.add_argument("--dataset", required=True, help="dataset .jsonl written by generate")
    t.add_argument("--frontend", choices=FRONTENDS, default="quantum", help="quantum or classical front end")
    t.add_argument("--ansatz", choices=("se", "td", "random"), default="se",
                   help="se: strongly entangling, td: two-design, random: seeded random circuit")
    t.add_argument("--ansatz-seed", type=int, default=0, help="seed of the random ansatz")
    t.add_argument("--gate-count", type=int, default=30, help="gate count of the random ansatz")
    t.add_argument("--seed", type=int, default=0, help="run seed (initialisation, shuffling, dropout, SPSA)")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr-max", type=float, default=0.01)
    t.add_argument("--lr-min", type=float, default=1e-4)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--noisy", action="store_true", help="switch to readout damping and SPSA for the late epochs")
    t.add_argument("--noisy-start-epoch", type=int, default=80, help="first noisy epoch (0-based)")
    t.add_argument("--gamma", type=float, default=0.02, help="readout damping strength")
    t.add_argument("--spsa-all", action="store_true", help="in the noisy phase, train every parameter by SPSA")
    t.add_argument("--spsa-a", type=float, default=0.2)
    t.add_argument("--spsa-c", type=float, default=0.1)
    t.add_argument("--spsa-A", type=float, default=10.0)
    t.add_argument("--spsa-alpha", type=float, default=0.602)
    t.add_argument("--spsa-gamma", type=float, default=0.101)
    t.add_argument("--static-frontend", action="store_true", help="keep front-end parameters at their initial values")
    t.add_argument("--grad-backend", choices=GRAD_BACKENDS, default="adjoint",
                   help="circuit gradient method (identical values, different cost)")
    t.add_argument("--softmax", action="store_true", help="softmax output instead of element-wise logistic")
    t.add_argument("--limit", type=int, default=None, help="train on a stratified subset of this size")
    t.add_argument("--val-limit", type=int, default=None, help="validate on a stratified subset of this size")
    t.add_argument("--quiet", action="store_true", help="no per-epoch lines")
    t.add_argument("--out", help="run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score one or more checkpoints on a dataset split")
    e.add_argument("--checkpoint", action="append", help="checkpoint.json path (repeatable)")
    e.add_argument("--checkpoints", help="glob of checkpoint paths, aggregated with mean and std")
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=SPLIT_NAMES, default="test")
    e.add_argument("--difficulty", choices=("all",) + DIFFICULTIES, default="all")
    e.add_argument("--noisy", action="store_true", help="read the quantum front end out through damping")
    e.add_argument("--gamma", type=float, default=None, help="damping strength for --noisy")
    e.add_argument("--out", help="report JSON path")
    e.add_argument("--csv", help="also write a table (F1, Recall, Precision, MAE, MSE, Support)")
    e.add_argument("--name", default="model", help="row label in the CSV table")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="train a manifest of runs and compare groups with Wilcoxon tests")
    c.add_argument("--manifest", required=True, help="experiment manifest JSON")
    c.add_argument("--jobs", type=int, default=1, help="parallel training runs")
    c.add_argument("--reuse", action="store_true", help="skip runs whose checkpoint already exists")
    c.add_argument("--skip-training", action="store_true", help="only evaluate existing checkpoints")
    c.add_argument("--noisy", action="store_true", help="evaluate quantum runs under readout damping")
    c.add_argument("--out", help="comparison report path (default <manifest out>/compare.json)")
    c.add_argument("--csv", help="also write a per-group table")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except json.JSONDecodeError as exc:
        print(f"unreadable input: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
