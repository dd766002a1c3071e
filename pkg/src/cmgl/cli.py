"""Command-line entry point for the two-stage multi-omics pipeline.

Subcommands: synth, train, ablate, grid, kselect, export, cluster, subsample.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training error.
Every run writes its effective config snapshot and report under --out; wall
clock and timestamps go to a separate timings file so reports stay diffable.
The CMGL_LOG environment variable sets the log level (default INFO).
"""

import argparse
import dataclasses
import logging
import os
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, load_config, write_config
from .data import generate_synthetic, stratified_kfold, write_dataset
from .errors import ConfigError, DataError, TrainingError
from .evaluation import (
    export_embeddings,
    resolve_dataset,
    run_ablation,
    run_cv,
    run_grid,
    warmup_trainer,
    write_grid_report,
    write_report,
    write_timings,
)
from .evidence import train_stage1, write_confidence
from .gnn import load_checkpoint, save_checkpoint
from .graph import build_fold_graphs, score_k_candidates, write_edges
from .metrics import kmeans_cluster, silhouette
from .seeding import derive_seed

logger = logging.getLogger("cmgl")


def _setup_logging() -> None:
    level_name = os.environ.get("CMGL_LOG", "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s %(message)s")


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "dataset_dir", None):
        config.dataset_dir = args.dataset_dir
    if getattr(args, "k_candidates", None):
        try:
            config.graph.k_candidates = tuple(
                int(p) for p in args.k_candidates.split(",") if p.strip()
            )
        except ValueError as exc:
            raise ConfigError(f"--k-candidates: {exc}") from exc
    if getattr(args, "variant", None):
        config.variant = args.variant
    config.validate()
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_artifacts(out: Path, config: RunConfig, report, dataset) -> None:
    write_config(config, out / "config_snapshot.cfg")
    write_report(report, out / "report.txt")
    write_timings(report, out / "timings.txt")
    for fr in report.folds:
        save_checkpoint(out / f"checkpoint_fold{fr.fold_index}.npz", fr.checkpoint)
        write_confidence(out / f"confidence_fold{fr.fold_index}.tsv", dataset, fr.confidence)


def cmd_synth(args) -> int:
    config = _load_run_config(args)
    if config.synthetic is None:
        raise ConfigError("synth requires a [synthetic] config section")
    if getattr(args, "seed", None) is not None:
        config.synthetic = dataclasses.replace(config.synthetic, seed=args.seed)
    out = _out_dir(args)
    dataset = generate_synthetic(config.synthetic)
    write_dataset(dataset, out)
    write_config(config, out / "config_snapshot.cfg")
    logger.info(
        "wrote synthetic cohort: %d samples, %d modalities, %d classes -> %s",
        dataset.n_samples, dataset.n_modalities, dataset.num_classes, out,
    )
    return 0


def cmd_train(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    report = run_cv(dataset, config, jobs=args.jobs)
    _write_run_artifacts(out, config, report, dataset)
    logger.info(
        "train done: accuracy %s +- %s, macro_f1 %s +- %s",
        report.aggregate["accuracy_mean"], report.aggregate["accuracy_std"],
        report.aggregate["macro_f1_mean"], report.aggregate["macro_f1_std"],
    )
    return 0


def cmd_ablate(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    report = run_ablation(dataset, config.variant, config, jobs=args.jobs)
    _write_run_artifacts(out, config, report, dataset)
    logger.info(
        "ablation %s done: accuracy %s", config.variant, report.aggregate["accuracy_mean"]
    )
    return 0


def cmd_grid(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    grid = run_grid(dataset, config, jobs=args.jobs)
    write_config(config, out / "config_snapshot.cfg")
    write_grid_report(grid, out / "grid_report.txt")
    logger.info("grid done: %d cells", len(grid.cells))
    return 0


def cmd_kselect(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    write_config(config, out / "config_snapshot.cfg")
    splits = stratified_kfold(dataset, config.cv.n_folds, derive_seed(config.seed, "data"))

    fusion_config = config.fusion
    if config.variant == "no_cross_fusion":
        fusion_config = dataclasses.replace(config.fusion, use_attention=False)
    trainer = warmup_trainer(config, fusion_config, config.variant)

    lines = []
    for split in splits:
        fold = split.fold_index
        if config.variant in ("no_uncertainty", "no_two_stage"):
            conf = np.full((dataset.n_samples, dataset.n_modalities), 1.0 / dataset.n_modalities)
        else:
            try:
                conf = train_stage1(dataset, split, config.stage1, config.seed).confidence
            except TrainingError as exc:
                raise TrainingError(f"stage1, fold {fold}: {exc}") from exc
        try:
            scores = score_k_candidates(
                dataset, split, conf, config.graph.k_candidates,
                config.graph.warmup_epochs, config.seed, trainer=trainer,
            )
        except ValueError as exc:
            raise ConfigError(f"k selection, fold {fold}: {exc}") from exc
        best_k, best_score = scores[0]
        for k, score in scores[1:]:
            if score > best_score:
                best_k, best_score = k, score
        for k, score in scores:
            lines.append(f"fold = {fold}\tk = {k}\tval_macro_f1 = {score!r}")
        lines.append(f"fold = {fold}\tk_selected = {best_k}")
        graphs = build_fold_graphs(dataset, split, best_k)
        write_edges(out / f"edges_fold{fold}_k{best_k}.tsv", graphs["train"].edges)
    (out / "kselect.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("kselect done: %d folds scored", len(splits))
    return 0


def cmd_export(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    ckpt = load_checkpoint(args.checkpoint)
    export_embeddings(ckpt, dataset, out / "embeddings.tsv")
    logger.info("wrote embeddings for %d samples", dataset.n_samples)
    return 0


def cmd_cluster(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    ckpt = load_checkpoint(args.checkpoint)
    frame = export_embeddings(ckpt, dataset, None)
    emb_cols = [c for c in frame.columns if c.startswith("e_")]
    emb = frame[emb_cols].to_numpy(dtype=np.float64)
    try:
        cluster_counts = [int(p) for p in args.clusters.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"--clusters: {exc}") from exc
    if not cluster_counts:
        raise ConfigError("--clusters: no cluster counts given")
    lines = []
    for n_clusters in cluster_counts:
        assign, _ = kmeans_cluster(
            emb, n_clusters, derive_seed(config.seed, "cluster", n_clusters)
        )
        score = silhouette(emb, assign)
        lines.append(f"k = {n_clusters}\tsilhouette = {score!r}")
        table = frame[["sample_id"]].copy()
        table["cluster"] = assign
        table.to_csv(out / f"clusters_k{n_clusters}.tsv", sep="\t", index=False)
    (out / "cluster_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("cluster done: %s", "; ".join(lines))
    return 0


def cmd_subsample(args) -> int:
    config = _load_run_config(args)
    out = _out_dir(args)
    dataset = resolve_dataset(config)
    write_config(config, out / "config_snapshot.cfg")
    try:
        fractions = [float(p) for p in args.fractions.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"--fractions: {exc}") from exc
    if not fractions:
        raise ConfigError("--fractions: no fractions given")
    summary = []
    for fraction in fractions:
        report = run_cv(dataset, config, jobs=args.jobs, fraction=fraction)
        tag = f"{fraction:g}".replace(".", "p")
        write_report(report, out / f"report_fraction_{tag}.txt")
        write_timings(report, out / f"timings_fraction_{tag}.txt")
        summary.append(
            f"fraction = {fraction!r}\taccuracy_mean = {report.aggregate['accuracy_mean']!r}"
            f"\tmacro_f1_mean = {report.aggregate['macro_f1_mean']!r}"
        )
        logger.info("fraction %s done", fraction)
    (out / "subsample.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    return 0


def _add_common(sp, jobs: bool = True) -> None:
    sp.add_argument("--config", help="configuration file (key = value sections)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=None, help="root seed override")
    sp.add_argument("--dataset-dir", default=None, help="dataset directory override")
    sp.add_argument("--k-candidates", default=None,
                    help="comma-separated neighbor-count candidates")
    if jobs:
        sp.add_argument("--jobs", type=int, default=1,
                        help="fold-level parallel workers (1 = deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmgl",
        description="Confidence-guided multi-omics graph learning pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic cohort as a TSV directory")
    _add_common(sp, jobs=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="run stratified cross-validation")
    _add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ablate", help="run one ablation variant")
    _add_common(sp)
    sp.add_argument("--variant", required=True,
                    help="full | no_uncertainty | no_cross_fusion | no_two_stage")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("grid", help="sweep the [grid] config section")
    _add_common(sp)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("kselect", help="report per-candidate warmup validation scores")
    _add_common(sp, jobs=False)
    sp.add_argument("--variant", default=None,
                    help="full | no_uncertainty | no_cross_fusion | no_two_stage")
    sp.set_defaults(func=cmd_kselect)

    sp = sub.add_parser("export", help="frozen-inference embedding export")
    _add_common(sp, jobs=False)
    sp.add_argument("--checkpoint", required=True, help="checkpoint .npz path")
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("cluster", help="kmeans + silhouette on exported embeddings")
    _add_common(sp, jobs=False)
    sp.add_argument("--checkpoint", required=True, help="checkpoint .npz path")
    sp.add_argument("--clusters", default="2,3,4", help="comma-separated cluster counts")
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("subsample", help="training-set subsampling sweep")
    _add_common(sp)
    sp.add_argument("--fractions", default="1.0,0.5,0.3",
                    help="comma-separated training fractions")
    sp.set_defaults(func=cmd_subsample)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "jobs", 1) == 1:
        torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 1
    except DataError as exc:
        logger.error("data error: %s", exc)
        return 2
    except TrainingError as exc:
        logger.error("training error: %s", exc)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
