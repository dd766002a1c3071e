"""Cross-validation harness, ablation variants, grid sweeps, and exports.

One fold runs: Stage-1 training, confidence freezing, neighbor-count selection
on train/val, graph construction, Stage-2 training, then metrics on the test
graph. Reports are plain key=value text with repr-precision floats so repeated
runs under the same seed produce byte-identical files; wall-clock numbers are
kept out of the report and written to a separate timings file.
"""

import dataclasses
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .config import VARIANTS, RunConfig, set_value
from .data import (
    OmicsDataset,
    generate_synthetic,
    load_dataset,
    stratified_kfold,
    subsample_train,
)
from .errors import ConfigError, DataError, TrainingError
from .evidence import train_stage1
from .gnn import (
    Checkpoint,
    Stage2Model,
    checkpoint_payload,
    graph_tensors,
    load_checkpoint,
    train_joint,
    train_stage2,
)
from .graph import FoldGraph, build_fold_graphs, cohort_graph, select_k
from .metrics import MetricsReport, compute_metrics
from .seeding import derive_seed

logger = logging.getLogger(__name__)

METRIC_KEYS = ("accuracy", "macro_f1", "weighted_f1", "macro_recall", "macro_auc", "macro_auprc")


@dataclasses.dataclass
class FoldResult:
    fold_index: int
    seed: int
    k_selected: int
    metrics: MetricsReport
    confidence: np.ndarray
    checkpoint: Dict[str, object]
    notes: Tuple[str, ...]
    wall_clock: float


@dataclasses.dataclass
class RunReport:
    seed: int
    variant: str
    n_folds: int
    fraction: float
    folds: List[FoldResult]
    aggregate: Dict[str, Optional[float]]
    wall_clock: float


def resolve_dataset(config: RunConfig) -> OmicsDataset:
    if config.dataset_dir is not None:
        return load_dataset(config.dataset_dir)
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    raise ConfigError("config must provide dataset_dir or a [synthetic] section")


def warmup_trainer(config: RunConfig, fusion_config, variant: str):
    """Trainer callable handed to select_k; runs the run's own Stage-2 recipe."""

    def trainer(ds, sp, cf, graphs, epochs, rng_seed):
        cfg = dataclasses.replace(config.stage2, epochs=epochs, patience=max(epochs, 1))
        if variant == "no_two_stage":
            return train_joint(
                ds, sp, graphs, config.stage1, fusion_config, cfg, rng_seed
            ).best_val_f1
        return train_stage2(ds, sp, cf, graphs, fusion_config, cfg, rng_seed).best_val_f1

    return trainer


def predict_on_graph(dataset: OmicsDataset, model: Stage2Model, confidence: np.ndarray,
                     graph: FoldGraph):
    """Frozen forward pass; returns (probs, embeddings) over the graph's nodes."""
    xs, src, dst = graph_tensors(dataset, graph)
    r = torch.from_numpy(np.asarray(confidence, dtype=np.float64)[graph.nodes])
    model.eval()
    with torch.no_grad():
        _, emb, logits = model(xs, r, src, dst)
        probs = torch.softmax(logits, dim=-1)
    return probs.numpy(), emb.numpy()


def run_fold(
    dataset: OmicsDataset,
    split,
    config: RunConfig,
    seed: int,
    variant: Optional[str] = None,
    fraction: float = 1.0,
) -> FoldResult:
    """Execute one fold end to end. Test labels are touched only by compute_metrics."""
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    variant = variant or config.variant
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    fold = split.fold_index
    n, m = dataset.n_samples, dataset.n_modalities

    if fraction != 1.0:
        split = subsample_train(
            split, dataset.labels, fraction, derive_seed(seed, "data", fold, 1)
        )

    fusion_config = config.fusion
    if variant == "no_cross_fusion":
        fusion_config = dataclasses.replace(config.fusion, use_attention=False)

    stage1_model = None
    stage1_config = None
    if variant == "no_uncertainty":
        confidence = np.full((n, m), 1.0 / m)
    elif variant == "no_two_stage":
        confidence = np.full((n, m), 1.0 / m)  # placeholder until joint training
    else:
        try:
            s1 = train_stage1(dataset, split, config.stage1, seed)
        except TrainingError as exc:
            raise TrainingError(f"stage1, fold {fold}: {exc}") from exc
        stage1_model, confidence = s1.model, s1.confidence
        stage1_config = config.stage1

    trainer = warmup_trainer(config, fusion_config, variant)
    try:
        k = select_k(
            dataset,
            split,
            confidence,
            config.graph.k_candidates,
            config.graph.warmup_epochs,
            seed,
            trainer=trainer,
        )
    except ValueError as exc:
        raise ConfigError(f"k selection, fold {fold}: {exc}") from exc
    logger.info("fold %d: selected k=%d", fold, k)

    graphs = build_fold_graphs(dataset, split, k)
    rng_seed = derive_seed(seed, "stage2", fold)
    try:
        if variant == "no_two_stage":
            joint = train_joint(
                dataset, split, graphs, config.stage1, fusion_config, config.stage2, rng_seed
            )
            model, confidence = joint.model, joint.confidence
            stage1_model, stage1_config = joint.stage1, config.stage1
        else:
            s2 = train_stage2(
                dataset, split, confidence, graphs, fusion_config, config.stage2, rng_seed
            )
            model = s2.model
    except TrainingError as exc:
        raise TrainingError(f"stage2, fold {fold}: {exc}") from exc

    probs, _ = predict_on_graph(dataset, model, confidence, graphs["test"])
    test_local = np.arange(len(split.train_idx), graphs["test"].n_nodes)
    metrics = compute_metrics(
        probs[test_local],
        dataset.labels[graphs["test"].nodes[test_local]],
        dataset.num_classes,
    )

    payload = checkpoint_payload(
        model,
        fusion_config,
        config.stage2,
        k,
        confidence,
        dataset,
        stage1_model=stage1_model,
        stage1_config=stage1_config,
        variant=variant,
    )
    return FoldResult(
        fold_index=fold,
        seed=seed,
        k_selected=k,
        metrics=metrics,
        confidence=confidence,
        checkpoint=payload,
        notes=tuple(split.notes),
        wall_clock=time.perf_counter() - t0,
    )


def _aggregate(folds: List[FoldResult]) -> Dict[str, Optional[float]]:
    out: Dict[str, Optional[float]] = {}
    for key in METRIC_KEYS:
        vals = [getattr(f.metrics, key) for f in folds]
        if any(v is None for v in vals):
            out[f"{key}_mean"] = None
            out[f"{key}_std"] = None
        else:
            out[f"{key}_mean"] = float(np.mean(vals))
            out[f"{key}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return out


def run_cv(
    dataset: OmicsDataset,
    config: RunConfig,
    seed: Optional[int] = None,
    variant: Optional[str] = None,
    jobs: int = 1,
    fraction: float = 1.0,
) -> RunReport:
    """Stratified k-fold evaluation; folds are reduced in index order."""
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    seed = config.seed if seed is None else seed
    variant = variant or config.variant
    try:
        splits = stratified_kfold(dataset, config.cv.n_folds, derive_seed(seed, "data"))
    except DataError as exc:
        raise DataError(f"fold construction: {exc}") from exc

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(run_fold, dataset, sp, config, seed, variant, fraction)
                for sp in splits
            ]
            folds = [f.result() for f in futures]
    else:
        folds = [run_fold(dataset, sp, config, seed, variant, fraction) for sp in splits]
    folds.sort(key=lambda f: f.fold_index)

    return RunReport(
        seed=seed,
        variant=variant,
        n_folds=config.cv.n_folds,
        fraction=fraction,
        folds=folds,
        aggregate=_aggregate(folds),
        wall_clock=time.perf_counter() - t0,
    )


def run_ablation(
    dataset: OmicsDataset,
    variant: str,
    config: RunConfig,
    seed: Optional[int] = None,
    jobs: int = 1,
) -> RunReport:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return run_cv(dataset, config, seed=seed, variant=variant, jobs=jobs)


@dataclasses.dataclass
class GridCell:
    values: Dict[str, str]
    report: RunReport


@dataclasses.dataclass
class GridReport:
    keys: Tuple[str, ...]
    cells: List[GridCell]
    seed: int


def run_grid(
    dataset: OmicsDataset,
    config: RunConfig,
    seed: Optional[int] = None,
    jobs: int = 1,
) -> GridReport:
    """Cartesian sweep over the [grid] section; each cell is a full CV run."""
    if not config.grid:
        raise ConfigError("grid run requested but the config has no [grid] section")
    seed = config.seed if seed is None else seed
    keys = tuple(sorted(config.grid))
    cells: List[GridCell] = []
    for combo in itertools.product(*(config.grid[k] for k in keys)):
        cell_config = config.copy()
        cell_config.grid = {}
        for key, raw in zip(keys, combo):
            set_value(cell_config, key, raw)
        cell_config.validate()
        report = run_cv(dataset, cell_config, seed=seed, jobs=jobs)
        cells.append(GridCell(values=dict(zip(keys, combo)), report=report))
        logger.info(
            "grid cell %s: macro_f1_mean=%s",
            dict(zip(keys, combo)),
            report.aggregate["macro_f1_mean"],
        )
    return GridReport(keys=keys, cells=cells, seed=seed)


def _cohort_confidence(ckpt: Checkpoint, dataset: OmicsDataset) -> np.ndarray:
    if ckpt.stage1 is not None:
        with torch.no_grad():
            xs = [torch.from_numpy(mat) for mat in dataset.matrices]
            _, conf = ckpt.stage1(xs)
        return conf.r.numpy().copy()
    if ckpt.variant == "no_uncertainty":
        return np.full((dataset.n_samples, dataset.n_modalities), 1.0 / dataset.n_modalities)
    if ckpt.confidence.shape[0] == dataset.n_samples:
        return np.asarray(ckpt.confidence, dtype=np.float64)
    raise DataError(
        "checkpoint has no first-stage weights and its confidence table does not "
        "match this cohort size"
    )


def export_embeddings(ckpt, dataset: OmicsDataset, out_path=None):
    """Frozen inference over a whole cohort; returns the export table.

    Works for the training cohort and for a new cohort with matching modality
    widths (the intersection graph is rebuilt with the checkpoint's k).
    """
    import pandas as pd

    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    have = list(dataset.modality_dims)
    want = list(ckpt.modality_dims)
    if len(have) != len(want):
        raise DataError(f"dataset has {len(have)} modalities, checkpoint expects {len(want)}")
    for name, h, w in zip(dataset.modality_names, have, want):
        if h != w:
            raise DataError(f"modality '{name}': dataset width {h} != checkpoint width {w}")

    confidence = _cohort_confidence(ckpt, dataset)
    graph = cohort_graph(dataset, ckpt.k_selected)
    probs, emb = predict_on_graph(dataset, ckpt.model, confidence, graph)
    preds = probs.argmax(axis=1)
    frame = pd.DataFrame(
        {
            "sample_id": dataset.sample_ids,
            "pred": preds.astype(np.int64),
            "confidence": probs.max(axis=1),
        }
    )
    for j in range(emb.shape[1]):
        frame[f"e_{j}"] = emb[:, j]
    if out_path is not None:
        frame.to_csv(out_path, sep="\t", index=False)
    return frame


def _fmt(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_report(report: RunReport) -> str:
    lines = [
        "[run]",
        f"seed = {report.seed}",
        f"variant = {report.variant}",
        f"n_folds = {report.n_folds}",
        f"fraction = {_fmt(report.fraction)}",
    ]
    for fr in report.folds:
        lines.append("")
        lines.append(f"[fold {fr.fold_index}]")
        lines.append(f"fold = {fr.fold_index}")
        lines.append(f"seed = {fr.seed}")
        lines.append(f"k_selected = {fr.k_selected}")
        for key in METRIC_KEYS:
            lines.append(f"{key} = {_fmt(getattr(fr.metrics, key))}")
        lines.append(f"n_eval = {fr.metrics.n_eval}")
        if fr.metrics.absent_classes:
            lines.append(
                "absent_classes = " + ",".join(str(c) for c in fr.metrics.absent_classes)
            )
        for note in fr.notes:
            lines.append(f"note = {note}")
    lines.append("")
    lines.append("[aggregate]")
    for key in METRIC_KEYS:
        lines.append(f"{key}_mean = {_fmt(report.aggregate[f'{key}_mean'])}")
        lines.append(f"{key}_std = {_fmt(report.aggregate[f'{key}_std'])}")
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report))


def write_timings(report: RunReport, path) -> None:
    """Wall-clock numbers and the run timestamp, segregated from the report."""
    import datetime

    lines = [f"timestamp = {datetime.datetime.now().isoformat()}"]
    for fr in report.folds:
        lines.append(f"fold_{fr.fold_index}_seconds = {fr.wall_clock:.3f}")
    lines.append(f"total_seconds = {report.wall_clock:.3f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def format_grid_report(grid: GridReport) -> str:
    lines = ["[grid]", f"seed = {grid.seed}", "keys = " + ",".join(grid.keys)]
    for i, cell in enumerate(grid.cells):
        lines.append("")
        lines.append(f"[cell {i}]")
        for key in grid.keys:
            lines.append(f"{key} = {cell.values[key]}")
        agg = cell.report.aggregate
        for key in ("macro_f1", "accuracy"):
            lines.append(f"{key}_mean = {_fmt(agg[f'{key}_mean'])}")
            lines.append(f"{key}_std = {_fmt(agg[f'{key}_std'])}")
    return "\n".join(lines) + "\n"


def write_grid_report(grid: GridReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_grid_report(grid))
