"""End-to-end experiment driver over a (regime, noise rate, seed) grid.

Each cell corrupts a copy of the training split, trains the configured
model variant, evaluates on the clean held-out split, and scores mislabel
suspicion against the injection plan. Cells derive all randomness from
(seed, rate)-keyed streams, so results are independent of scheduling and a
fixed config reproduces its report byte for byte.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .coteach import CoteachState, coteach_train
from .evalkit import ScoredTruth, auc_pr, auc_roc, precision_recall_at
from .fileio import read_features, write_table
from .header import BayesHeader, TrainConfig, predict_mc, train
from .noiselab import (
    FeatureDataset,
    inject_random,
    inject_spce,
    make_blobs,
    make_confusable_blobs,
)
from .numkit import RngStream
from .suspicion import fuse_adaptive, knn_suspicion, uncertainty_suspicion

__all__ = [
    "ExperimentConfig",
    "VARIANTS",
    "build_header",
    "run_experiment",
    "train_variant",
]

VARIANTS = ("standard", "bayes", "lipb-sn1", "lipb-sn5", "coteach", "lipb-coteach")


@dataclass
class ExperimentConfig:
    """One sweep: a dataset source crossed with rates, seeds, and a variant."""

    dataset: dict = field(
        default_factory=lambda: {
            "kind": "blobs",
            "n": 600,
            "d": 8,
            "classes": 3,
            "spread": 0.6,
            "separation": 1.0,
            "seed": 7,
        }
    )
    regime: str = "random"
    etas: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    variant: str = "lipb-sn1"
    expected_rate: float | None = None
    eval_fraction: float = 0.2
    knn_k: int = 10
    spce_k: int = 10
    mc_samples: int = 50
    hidden_dim: int | None = None
    beta: float = 1e-4
    prior_std: float = 0.01
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    coteach_mode: str = "adaptive"
    coteach_tau: float = 0.15
    coteach_tk: int = 10
    threads: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        if self.regime not in ("random", "spce"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        for eta in self.etas:
            if not 0.0 <= eta <= 0.5:
                raise ValueError(f"eta {eta} outside [0, 0.5]")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def load_dataset(spec: dict) -> FeatureDataset:
    if spec.get("kind") == "file" or "path" in spec and "kind" not in spec:
        return read_features(spec["path"])
    if spec.get("kind") == "blobs":
        return make_blobs(
            n=spec["n"],
            d=spec["d"],
            n_classes=spec["classes"],
            spread=spec["spread"],
            separation=spec["separation"],
            stream=RngStream(root_seed=spec.get("seed", 0), purpose="dataset"),
        )
    if spec.get("kind") == "confusable-blobs":
        return make_confusable_blobs(
            n=spec["n"],
            d=spec["d"],
            n_classes=spec["classes"],
            spread=spec["spread"],
            stream=RngStream(root_seed=spec.get("seed", 0), purpose="dataset"),
            pair_angle=spec.get("pair_angle", 0.22),
            pair_radii=tuple(spec.get("pair_radii", (10.0, 16.0))),
            base_radius=spec.get("base_radius", 14.0),
        )
    raise ValueError(f"unknown dataset spec {spec!r}")


def split_dataset(
    ds: FeatureDataset, eval_fraction: float, stream: RngStream
) -> tuple[FeatureDataset, FeatureDataset]:
    """Deterministic train/eval split; ids carry over from the full set."""
    n = len(ds)
    n_eval = int(round(eval_fraction * n))
    if not 0 < n_eval < n:
        raise ValueError("eval_fraction leaves an empty split")
    perm = stream.child("split").generator().permutation(n)
    eval_idx = np.sort(perm[:n_eval])
    train_idx = np.sort(perm[n_eval:])

    def take(idx):
        return FeatureDataset(
            features=ds.features[idx],
            labels=ds.labels[idx],
            ids=ds.ids[idx],
            n_classes=ds.n_classes,
        )

    return take(train_idx), take(eval_idx)


def build_header(
    variant: str, in_dim: int, n_classes: int, config: ExperimentConfig, stream: RngStream
) -> BayesHeader:
    kw = dict(
        hidden_dim=config.hidden_dim,
        prior_std=config.prior_std,
        mc_samples_infer=config.mc_samples,
    )
    if variant == "standard":
        return BayesHeader.create(
            in_dim, n_classes, stream, beta=0.0, stochastic=False,
            spectral_norm=False, **kw,
        )
    if variant == "bayes":
        return BayesHeader.create(
            in_dim, n_classes, stream, beta=config.beta, spectral_norm=False, **kw
        )
    if variant == "lipb-sn1":
        return BayesHeader.create(in_dim, n_classes, stream, beta=config.beta, sn_iters=1, **kw)
    if variant == "lipb-sn5":
        return BayesHeader.create(in_dim, n_classes, stream, beta=config.beta, sn_iters=5, **kw)
    raise ValueError(f"{variant!r} is not a single-header variant")


def train_variant(
    variant: str,
    train_ds: FeatureDataset,
    config: ExperimentConfig,
    seed: int,
    stream: RngStream,
) -> tuple[BayesHeader, list[dict]]:
    """Train the configured variant and return the evaluation header."""
    tc = TrainConfig(
        epochs=config.epochs,
        batch_size=min(config.batch_size, len(train_ds)),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        seed=seed,
    )
    d, C = train_ds.dim, train_ds.n_classes
    if variant in ("coteach", "lipb-coteach"):
        base = "standard" if variant == "coteach" else "lipb-sn1"
        header_f = build_header(base, d, C, config, stream.child("init-f"))
        header_g = build_header(base, d, C, config, stream.child("init-g"))
        state = CoteachState(
            header_f=header_f,
            header_g=header_g,
            tau=config.coteach_tau,
            t_k=config.coteach_tk,
            mode=config.coteach_mode,
        )
        state, history = coteach_train(state, train_ds.features, train_ds.labels, tc)
        return state.header_f, history
    header = build_header(variant, d, C, config, stream.child("init"))
    header, history = train(header, train_ds.features, train_ds.labels, tc)
    return header, history


def _run_cell(
    config: ExperimentConfig,
    base_train: FeatureDataset,
    base_eval: FeatureDataset,
    eta: float,
    seed: int,
) -> dict:
    stream = RngStream(root_seed=seed, run_id=int(round(eta * 10000)), purpose="cell")
    if eta > 0:
        if config.regime == "random":
            train_ds, plan = inject_random(base_train, eta, stream.child("inject"))
        else:
            train_ds, plan = inject_spce(
                base_train, eta, config.spce_k, stream.child("inject")
            )
    else:
        train_ds, plan = base_train.copy(), None

    header, history = train_variant(config.variant, train_ds, config, seed, stream)

    eval_summary = predict_mc(
        header, base_eval.features, config.mc_samples, stream.child("eval-mc")
    )
    cell = {
        "eta": eta,
        "seed": seed,
        "status": "ok",
        "error": None,
        "train_accuracy": history[-1]["accuracy"] if history and "accuracy" in history[-1] else None,
        "clean_accuracy": float(
            (eval_summary.predicted_class == base_eval.labels).mean()
        ),
        "mean_confidence": float(eval_summary.confidence.mean()),
        "mean_uncertainty": float(eval_summary.uncertainty.mean()),
    }
    cell["mean_inv_confidence"] = 1.0 - cell["mean_confidence"]

    train_summary = predict_mc(
        header, train_ds.features, config.mc_samples, stream.child("suspect-mc")
    )
    s_knn = knn_suspicion(train_ds, config.knn_k)
    s_unc = uncertainty_suspicion(train_summary)
    rate_for_fusion = config.expected_rate if config.expected_rate else (eta if eta > 0 else 0.1)
    report = fuse_adaptive(s_knn, s_unc, rate_for_fusion, ids=train_ds.ids)

    suspicion: dict = {
        "w_knn": report.w_knn,
        "w_unc": report.w_unc,
        "fusion_degenerate": report.degenerate,
    }
    if plan is not None and len(plan):
        truth = plan.truth_mask(train_ds.ids)
        for name, scores in (
            ("knn", report.s_knn),
            ("unc", report.s_unc),
            ("fused", report.s_fused),
        ):
            st = ScoredTruth(scores=scores, truth=truth, ids=train_ds.ids)
            suspicion[f"auc_roc_{name}"] = auc_roc(st)
            suspicion[f"auc_pr_{name}"] = auc_pr(st)
            prec, rec = precision_recall_at(st, eta)
            suspicion[f"precision_at_rate_{name}"] = prec
            suspicion[f"recall_at_rate_{name}"] = rec
    cell["suspicion"] = suspicion
    return cell


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute the full grid and return the structured report.

    Failed cells are recorded with their error text and skipped in the
    aggregates; the report's ``failures`` count drives the CLI exit status.
    """
    full = load_dataset(config.dataset)
    dataset_seed = config.dataset.get("seed", 0) if isinstance(config.dataset, dict) else 0
    base_train, base_eval = split_dataset(
        full, config.eval_fraction, RngStream(root_seed=dataset_seed, purpose="split")
    )

    cells_spec = [(eta, seed) for eta in config.etas for seed in config.seeds]

    def run_one(spec):
        eta, seed = spec
        try:
            return _run_cell(config, base_train, base_eval, eta, seed)
        except Exception as exc:  # cell isolation: record and continue
            return {
                "eta": eta,
                "seed": seed,
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
            }

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            cells = list(pool.map(run_one, cells_spec))
    else:
        cells = [run_one(spec) for spec in cells_spec]
    cells.sort(key=lambda c: (c["eta"], c["seed"]))

    signals: dict[str, dict[str, list]] = {"uncertainty": {}, "inv_confidence": {}}
    for cell in cells:
        if cell["status"] != "ok":
            continue
        key = f"{cell['eta']:.6g}"
        signals["uncertainty"].setdefault(key, []).append(cell["mean_uncertainty"])
        signals["inv_confidence"].setdefault(key, []).append(cell["mean_inv_confidence"])

    config_echo = asdict(config)
    for execution_only in ("threads", "output_dir"):
        config_echo.pop(execution_only, None)
    report = {
        "config": config_echo,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "n_train": len(base_train),
        "n_eval": len(base_eval),
        "cells": cells,
        "signals": signals,
        "failures": sum(1 for c in cells if c["status"] != "ok"),
    }
    if config.output_dir:
        write_report_files(report, config.output_dir)
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def write_report_files(report: dict, output_dir) -> None:
    """report.json plus flat, plot-ready tables."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(report))
    columns = [
        "eta",
        "seed",
        "status",
        "clean_accuracy",
        "mean_confidence",
        "mean_uncertainty",
        "auc_pr_fused",
        "auc_roc_fused",
        "recall_at_rate_fused",
    ]
    rows = []
    for c in report["cells"]:
        susp = c.get("suspicion", {})
        rows.append(
            [
                c["eta"],
                c["seed"],
                c["status"],
                c.get("clean_accuracy", ""),
                c.get("mean_confidence", ""),
                c.get("mean_uncertainty", ""),
                susp.get("auc_pr_fused", ""),
                susp.get("auc_roc_fused", ""),
                susp.get("recall_at_rate_fused", ""),
            ]
        )
    write_table(out / "cells.tsv", columns, rows)
