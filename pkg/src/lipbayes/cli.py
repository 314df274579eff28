"""Command-line workbench: inject | train | suspect | fuse | quality | eval | report | run.

Each subcommand is a thin wrapper over one library operation, reading and
writing the package's file formats. Exit codes: 0 on success, 1 when sweep
cells failed, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .evalkit import ScoredTruth, auc_pr, auc_roc, perturbation_sweep, precision_recall_at
from .experiment import ExperimentConfig, run_experiment, report_json, write_report_files
from .fileio import (
    read_checkpoint,
    read_features,
    read_noise_plan,
    read_suspicion_report,
    write_checkpoint,
    write_features,
    write_noise_plan,
    write_suspicion_report,
    write_table,
)
from .header import predict_mc
from .noiselab import inject_random, inject_spce
from .numkit import RngStream
from .quality import (
    constant_map_baseline,
    fit_response_model,
    leave_one_seed_out,
    lookup_histogram,
)
from .suspicion import fuse_adaptive, knn_suspicion, uncertainty_suspicion

__all__ = ["main", "entrypoint"]


def _cmd_inject(args) -> int:
    ds = read_features(args.features)
    stream = RngStream(root_seed=args.seed, purpose="inject")
    if args.regime == "random":
        corrupted, plan = inject_random(ds, args.eta, stream)
    else:
        corrupted, plan = inject_spce(ds, args.eta, args.knn_k, stream)
    write_features(corrupted, args.out)
    write_noise_plan(plan, args.plan)
    print(f"corrupted {len(plan)} of {len(ds)} labels ({args.regime}) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    ds = read_features(args.features)
    config = ExperimentConfig(
        variant=args.variant,
        hidden_dim=args.hidden_dim,
        beta=args.beta,
        prior_std=args.prior_std,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        mc_samples=args.mc_samples,
    )
    from .experiment import train_variant

    header, history = train_variant(
        args.variant, ds, config, args.seed, RngStream(root_seed=args.seed, purpose="cli-train")
    )
    write_checkpoint(header, args.checkpoint)
    if args.history:
        cols = sorted(history[-1]) if history else ["epoch"]
        write_table(args.history, cols, [[h[c] for c in cols] for h in history])
    last = history[-1] if history else {}
    print(f"trained {args.variant} for {args.epochs} epochs -> {args.checkpoint} {last}")
    return 0


def _cmd_suspect(args) -> int:
    ds = read_features(args.features)
    header = read_checkpoint(args.checkpoint)
    summary = predict_mc(
        header, ds.features, args.mc_samples, RngStream(root_seed=args.seed, purpose="suspect")
    )
    s_knn = knn_suspicion(ds, args.knn_k)
    s_unc = uncertainty_suspicion(summary)
    rows = [(int(i), float(a), float(b)) for i, a, b in zip(ds.ids, s_knn, s_unc)]
    write_table(args.out, ["id", "s_knn", "s_unc"], rows)
    print(f"scored {len(ds)} samples -> {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    from .fileio import _read_table

    _, columns, rows = _read_table(args.scores)
    if columns[:3] != ["id", "s_knn", "s_unc"]:
        print(f"error: unexpected score columns {columns}", file=sys.stderr)
        return 2
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    s_knn = np.array([float(r[1]) for r in rows])
    s_unc = np.array([float(r[2]) for r in rows])
    report = fuse_adaptive(s_knn, s_unc, args.expected_rate, ids=ids)
    write_suspicion_report(report, args.out)
    print(
        f"fused {len(report)} samples (w_knn={report.w_knn:.3f}, "
        f"flagged={int(report.flagged.sum())}) -> {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    if args.perturb is not None:
        if not args.features or not args.checkpoint or not args.out:
            print("error: --perturb needs --features, --checkpoint and --out", file=sys.stderr)
            return 2
        return _cmd_eval_perturb(args)
    if not args.report or not args.plan:
        print("error: eval needs --report and --plan (or --perturb)", file=sys.stderr)
        return 2
    report = read_suspicion_report(args.report)
    plan = read_noise_plan(args.plan)
    bad = set(e.sample_id for e in plan.entries)
    truth = np.array([int(i) in bad for i in report.ids], dtype=bool)
    rows = []
    for name, scores in (
        ("knn", report.s_knn),
        ("unc", report.s_unc),
        ("fused", report.s_fused),
    ):
        st = ScoredTruth(scores=scores, truth=truth, ids=report.ids)
        prec, rec = precision_recall_at(st, args.fraction)
        rows.append((name, auc_roc(st), auc_pr(st), prec, rec))
        print(
            f"{name}: auc_roc={rows[-1][1]:.4f} auc_pr={rows[-1][2]:.4f} "
            f"precision@{args.fraction}={prec:.4f} recall@{args.fraction}={rec:.4f}"
        )
    if args.out:
        write_table(
            args.out,
            ["score", "auc_roc", "auc_pr", "precision_at", "recall_at"],
            rows,
            metadata={"fraction": args.fraction},
        )
    return 0


def _cmd_eval_perturb(args) -> int:
    ds = read_features(args.features)
    header = read_checkpoint(args.checkpoint)
    scales = [float(s) for s in args.perturb.split(",")]
    per_seed = []
    for seed in args.seeds:
        points = perturbation_sweep(
            header.clone(),
            ds,
            scales,
            S=args.mc_samples,
            stream=RngStream(root_seed=seed, purpose="perturb"),
        )
        per_seed.append(points)
    rows = []
    for i, scale in enumerate(scales):
        acc = np.array([p[i].accuracy for p in per_seed])
        conf = np.array([p[i].mean_confidence for p in per_seed])
        unc = np.array([p[i].mean_uncertainty for p in per_seed])
        rows.append(
            (
                scale,
                acc.mean(), conf.mean(), unc.mean(),
                acc.std(), conf.std(), unc.std(),
            )
        )
    write_table(
        args.out,
        ["scale", "accuracy", "confidence", "uncertainty",
         "accuracy_std", "confidence_std", "uncertainty_std"],
        rows,
    )
    print(f"perturbation sweep over {len(scales)} scales -> {args.out}")
    return 0


def _signals_from_report(report: dict, signal: str) -> dict[float, list[float]]:
    key = "inv_confidence" if signal == "inv-confidence" else "uncertainty"
    raw = report["signals"][key]
    return {float(eta): list(vals) for eta, vals in raw.items()}


def _cmd_quality(args) -> int:
    report = json.loads(Path(args.report).read_text())
    calibration = _signals_from_report(report, args.signal)
    if any(len(v) < 3 for v in calibration.values()):
        print("error: need >= 3 seeds per rate for leave-one-seed-out", file=sys.stderr)
        return 2
    acc, conf = leave_one_seed_out(calibration, window=args.window)
    truths = [eta for eta, vals in calibration.items() for _ in vals]
    baseline = constant_map_baseline(truths, sorted(calibration), window=args.window)
    print(
        f"signal={args.signal} soft_accuracy={acc:.4f} soft_confidence={conf:.4f} "
        f"constant_map_baseline={baseline:.4f}"
    )
    if args.out:
        model = fit_response_model(calibration)
        rows = list(zip(model.eta_grid, model.means, model.stds, model.prior))
        write_table(
            args.out,
            ["eta", "mean", "std", "prior"],
            rows,
            metadata={
                "signal": args.signal,
                "soft_accuracy": acc,
                "soft_confidence": conf,
                "baseline": baseline,
            },
        )
    return 0


def _cmd_report(args) -> int:
    report = json.loads(Path(args.run).read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_files(report, out)
    for signal in ("uncertainty", "inv-confidence"):
        calibration = _signals_from_report(report, signal)
        observations = [
            (val, eta) for eta, vals in calibration.items() for val in vals
        ]
        hist = lookup_histogram(observations, args.bins)
        rows = []
        for b in range(hist.matrix.shape[0]):
            rows.append(
                [hist.bin_edges[b], hist.bin_edges[b + 1]]
                + list(hist.matrix[b])
                + [int(hist.empty_rows[b])]
            )
        write_table(
            out / f"lookup_{signal.replace('-', '_')}.tsv",
            ["bin_lo", "bin_hi"] + [f"eta_{e:.6g}" for e in hist.rates] + ["empty"],
            rows,
        )
        if all(len(v) >= 2 for v in calibration.values()):
            model = fit_response_model(calibration)
            write_table(
                out / f"response_{signal.replace('-', '_')}.tsv",
                ["eta", "mean", "std", "prior"],
                list(zip(model.eta_grid, model.means, model.stds, model.prior)),
            )
    print(f"aggregated report tables -> {out}")
    return 0


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_json(Path(args.config).read_text())
    if args.threads is not None:
        config.threads = args.threads
    if args.output_dir is not None:
        config.output_dir = args.output_dir
    if args.seeds is not None:
        config.seeds = [int(s) for s in args.seeds.split(",")]
    if args.etas is not None:
        config.etas = [float(e) for e in args.etas.split(",")]
    report = run_experiment(config)
    if not config.output_dir:
        print(report_json(report))
    ok = sum(1 for c in report["cells"] if c["status"] == "ok")
    print(f"{ok}/{len(report['cells'])} cells ok", file=sys.stderr)
    return 1 if report["failures"] else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipbayes",
        description="Label-noise workbench over precomputed feature embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject", help="corrupt labels and record the plan")
    p.add_argument("--features", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--regime", choices=["random", "spce"], default="random")
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("train", help="train a header variant on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--variant", choices=["standard", "bayes", "lipb-sn1", "lipb-sn5", "coteach", "lipb-coteach"], default="lipb-sn1")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--prior-std", type=float, default=0.01)
    p.add_argument("--mc-samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("suspect", help="kNN and uncertainty suspicion scores")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--mc-samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_suspect)

    p = sub.add_parser("fuse", help="adaptive fusion of suspicion channels")
    p.add_argument("--scores", required=True)
    p.add_argument("--expected-rate", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("eval", help="ranking metrics against a noise plan, or a perturbation sweep")
    p.add_argument("--report", default=None)
    p.add_argument("--plan", default=None)
    p.add_argument("--fraction", type=float, default=0.15)
    p.add_argument("--out", default=None)
    p.add_argument("--perturb", default=None, help="comma-separated noise scales")
    p.add_argument("--features", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--mc-samples", type=int, default=50)
    p.add_argument("--seeds", type=int, nargs="*", default=[0])
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("quality", help="soft accuracy/confidence of a sweep's quality signal")
    p.add_argument("--report", required=True)
    p.add_argument("--signal", choices=["uncertainty", "inv-confidence"], default="inv-confidence")
    p.add_argument("--window", type=float, default=0.02)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_quality)

    p = sub.add_parser("report", help="aggregate a sweep report into plot tables")
    p.add_argument("--run", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="execute a full experiment sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--seeds", default=None, help="comma-separated override")
    p.add_argument("--etas", default=None, help="comma-separated override")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
