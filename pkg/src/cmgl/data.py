"""Multi-omics dataset handling: TSV I/O, synthetic cohorts, stratified folds.

A dataset directory holds one ``<modality>.tsv`` per omics layer (first column
``sample_id``, then feature columns, header row) plus ``labels.tsv`` with
columns ``sample_id`` and ``label``. Modality rows may be stored in any order;
they are re-aligned to the labels-file order by sample_id on load. Matrices
are taken as-is: no scaling or feature selection is applied on ingest.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from .errors import AlignmentError, DataError

LABELS_FILENAME = "labels.tsv"


@dataclass
class OmicsDataset:
    """N patients x M modalities of real-valued features plus integer labels."""

    modality_names: list
    matrices: list          # one (N, d_m) float64 array per modality
    labels: np.ndarray      # (N,) int64, values in [0, num_classes)
    sample_ids: list        # N unique strings, row order of every matrix
    num_classes: int

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_modalities(self) -> int:
        return len(self.modality_names)

    @property
    def modality_dims(self) -> list:
        return [m.shape[1] for m in self.matrices]

    def validate(self) -> None:
        n = self.n_samples
        if len(self.modality_names) != len(self.matrices):
            raise DataError("modality_names and matrices length mismatch")
        for name, mat in zip(self.modality_names, self.matrices):
            if mat.ndim != 2 or mat.shape[0] != n:
                raise DataError(f"modality '{name}' has {mat.shape[0]} rows, expected {n}")
            if not np.all(np.isfinite(mat)):
                raise DataError(f"modality '{name}' contains NaN or infinite entries")
        if self.labels.shape != (n,):
            raise DataError("labels length does not match sample count")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(
                f"labels outside [0, {self.num_classes}): "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )
        present = np.unique(self.labels)
        missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
        if missing:
            raise DataError(f"classes never observed in labels: {missing}")
        if len(set(self.sample_ids)) != n:
            raise DataError("sample_ids are not pairwise distinct")

    def with_labels(self, labels) -> "OmicsDataset":
        """Copy of the dataset with replaced labels (matrices shared)."""
        labels = np.asarray(labels, dtype=np.int64)
        out = replace(self, labels=labels)
        out.validate()
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic multi-omics cohort with controllable separability."""

    n_samples: int
    num_classes: int
    modality_dims: Tuple[int, ...]
    informative_mask: Tuple[int, ...]
    class_separation: float = 4.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < self.num_classes:
            raise DataError("n_samples must be >= num_classes")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        if len(self.modality_dims) != len(self.informative_mask):
            raise DataError("modality_dims and informative_mask length mismatch")
        if any(d < 1 for d in self.modality_dims):
            raise DataError("all modality dims must be >= 1")
        if self.class_separation <= 0:
            raise DataError("class_separation must be > 0")
        if self.noise_scale <= 0:
            raise DataError("noise_scale must be > 0")


@dataclass
class FoldSplit:
    """One cross-validation fold: disjoint train/val/test index sets."""

    fold_index: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    notes: tuple = ()

    def all_indices(self) -> np.ndarray:
        return np.concatenate([self.train_idx, self.val_idx, self.test_idx])

    def validate(self, n_samples: int) -> None:
        combined = self.all_indices()
        if len(np.unique(combined)) != len(combined):
            raise DataError(f"fold {self.fold_index}: overlapping train/val/test sets")
        if len(combined) != n_samples or combined.min() < 0 or combined.max() >= n_samples:
            raise DataError(f"fold {self.fold_index}: sets do not cover 0..{n_samples - 1}")


def _read_tsv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    df = pd.read_csv(path, sep="\t", dtype=str)
    if "sample_id" not in df.columns:
        raise DataError(f"{path}: first column must be 'sample_id'")
    return df


def _numeric_matrix(df: pd.DataFrame, path: Path) -> np.ndarray:
    cells = df.drop(columns=["sample_id"])
    probe = cells.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.argwhere(np.isnan(probe) & ~cells.isna().to_numpy())
    if bad.size:
        r, c = bad[0]
        raise DataError(
            f"{path}: non-numeric cell {cells.iat[r, c]!r} at row {r + 2}, "
            f"column '{cells.columns[c]}'"
        )
    if np.isnan(probe).any():
        r, c = np.argwhere(np.isnan(probe))[0]
        raise DataError(f"{path}: empty cell at row {r + 2}, column '{cells.columns[c]}'")
    # numpy's parser is correctly rounded; pd.to_numeric is not
    return cells.to_numpy(dtype=str).astype(np.float64)


def load_dataset(dir_path) -> OmicsDataset:
    """Load a dataset directory. Rows are aligned by sample_id to the labels file."""
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise DataError(f"missing dataset directory: {dir_path}")

    labels_df = _read_tsv(dir_path / LABELS_FILENAME)
    if "label" not in labels_df.columns:
        raise DataError(f"{dir_path / LABELS_FILENAME}: missing 'label' column")
    sample_ids = labels_df["sample_id"].tolist()
    try:
        labels = labels_df["label"].astype(np.int64).to_numpy()
    except ValueError as exc:
        raise DataError(f"{dir_path / LABELS_FILENAME}: non-integer label ({exc})") from exc

    modality_paths = sorted(p for p in dir_path.glob("*.tsv") if p.name != LABELS_FILENAME)
    if not modality_paths:
        raise DataError(f"no modality .tsv files found in {dir_path}")

    order = {sid: i for i, sid in enumerate(sample_ids)}
    names, matrices = [], []
    for path in modality_paths:
        df = _read_tsv(path)
        ids = df["sample_id"].tolist()
        extra = sorted(set(ids) - set(order))
        missing = sorted(set(order) - set(ids))
        if extra or missing:
            raise AlignmentError(
                f"{path.name}: sample ids disagree with labels "
                f"(absent from labels: {extra or 'none'}; absent from {path.name}: "
                f"{missing or 'none'})"
            )
        mat = _numeric_matrix(df, path)
        aligned = np.empty_like(mat)
        for row, sid in enumerate(ids):
            aligned[order[sid]] = mat[row]
        names.append(path.stem)
        matrices.append(aligned)

    ds = OmicsDataset(
        modality_names=names,
        matrices=matrices,
        labels=labels,
        sample_ids=sample_ids,
        num_classes=int(labels.max()) + 1,
    )
    ds.validate()
    return ds


def write_dataset(dataset: OmicsDataset, dir_path) -> None:
    """Write a dataset as a TSV directory readable by load_dataset."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"sample_id": dataset.sample_ids, "label": dataset.labels}).to_csv(
        dir_path / LABELS_FILENAME, sep="\t", index=False
    )
    for name, mat in zip(dataset.modality_names, dataset.matrices):
        df = pd.DataFrame(mat, columns=[f"f{j}" for j in range(mat.shape[1])])
        df.insert(0, "sample_id", dataset.sample_ids)
        # %.17g keeps float64 exact across a write/load cycle
        df.to_csv(dir_path / f"{name}.tsv", sep="\t", index=False, float_format="%.17g")


def generate_synthetic(spec: SyntheticSpec) -> OmicsDataset:
    """Sample a synthetic cohort.

    Informative modalities draw from class-conditional Gaussians whose means sit
    on axis-aligned directions scaled by ``class_separation``; non-informative
    modalities draw from one class-independent Gaussian. Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n_samples, spec.num_classes
    labels = np.array([i % c for i in range(n)], dtype=np.int64)
    labels = labels[rng.permutation(n)]

    matrices = []
    for dim, informative in zip(spec.modality_dims, spec.informative_mask):
        noise = rng.standard_normal((n, dim)) * spec.noise_scale
        if informative:
            means = np.zeros((c, dim))
            for cls in range(c):
                means[cls, cls % dim] = spec.class_separation
            matrices.append(means[labels] + noise)
        else:
            matrices.append(noise)

    ds = OmicsDataset(
        modality_names=[f"omics{m}" for m in range(len(spec.modality_dims))],
        matrices=matrices,
        labels=labels,
        sample_ids=[f"S{i:05d}" for i in range(n)],
        num_classes=c,
    )
    ds.validate()
    return ds


def stratified_kfold(dataset: OmicsDataset, n_folds: int, seed: int) -> list:
    """Stratified k-fold splits with a 7:1 train/val split of each non-test remainder.

    Per class, indices are shuffled once by seed and dealt round-robin into the
    fold test sets; within each fold's remainder the first ceil(n/8) per class
    become validation. Deterministic given seed.
    """
    if n_folds < 2:
        raise DataError("n_folds must be >= 2")
    labels = dataset.labels
    counts = np.bincount(labels, minlength=dataset.num_classes)
    small = [int(cls) for cls in range(dataset.num_classes) if counts[cls] < n_folds]
    if small:
        raise DataError(
            f"stratification impossible: classes {small} have fewer than {n_folds} samples"
        )

    rng = np.random.default_rng(seed)
    by_class = []
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(labels == cls)
        by_class.append(idx[rng.permutation(len(idx))])

    splits = []
    for fold in range(n_folds):
        test_parts, val_parts, train_parts = [], [], []
        for idx in by_class:
            dealt_fold = np.arange(len(idx)) % n_folds
            test_parts.append(idx[dealt_fold == fold])
            remainder = idx[dealt_fold != fold]
            n_val = math.ceil(len(remainder) / 8)
            val_parts.append(remainder[:n_val])
            train_parts.append(remainder[n_val:])
        split = FoldSplit(
            fold_index=fold,
            train_idx=np.sort(np.concatenate(train_parts)),
            val_idx=np.sort(np.concatenate(val_parts)),
            test_idx=np.sort(np.concatenate(test_parts)),
        )
        split.validate(dataset.n_samples)
        splits.append(split)
    return splits


def subsample_train(split: FoldSplit, labels: np.ndarray, fraction: float, seed: int) -> FoldSplit:
    """Stratified subsample of the training set; val/test untouched.

    The subsample has round(fraction * |train|) indices with per-class quotas
    assigned by largest remainder, at least one sample per class. If the target
    is too small to cover every class, one per class is kept instead and the
    deviation is recorded in the returned split's notes.
    """
    if not 0 < fraction <= 1:
        raise DataError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return replace(split, train_idx=split.train_idx.copy())

    labels = np.asarray(labels)
    train_idx = split.train_idx
    train_labels = labels[train_idx]
    classes = np.unique(train_labels)
    n_train = len(train_idx)
    target = int(math.floor(fraction * n_train + 0.5))

    notes = []
    if target < len(classes):
        notes.append(
            f"fraction {fraction} would leave classes empty; kept 1 per class "
            f"({len(classes)} instead of {target})"
        )
        target = len(classes)

    quotas = {int(cls): target * np.sum(train_labels == cls) / n_train for cls in classes}
    take = {cls: int(math.floor(q)) for cls, q in quotas.items()}
    leftover = target - sum(take.values())
    for cls in sorted(quotas, key=lambda cls: (-(quotas[cls] - take[cls]), cls))[:leftover]:
        take[cls] += 1
    # enforce the one-per-class floor, rebalancing from the largest takes
    bumped = []
    for cls in sorted(take):
        if take[cls] == 0:
            take[cls] = 1
            bumped.append(cls)
            donor = max((d for d in take if take[d] > 1), key=lambda d: (take[d], d), default=None)
            if donor is not None:
                take[donor] -= 1
    if bumped:
        notes.append(f"fraction {fraction} rounded classes {bumped} to zero; kept 1 each")

    rng = np.random.default_rng(seed)
    kept = []
    for cls in sorted(take):
        cls_idx = train_idx[train_labels == cls]
        cls_idx = cls_idx[rng.permutation(len(cls_idx))]
        kept.append(cls_idx[: take[cls]])
    return replace(
        split, train_idx=np.sort(np.concatenate(kept)), notes=split.notes + tuple(notes)
    )
