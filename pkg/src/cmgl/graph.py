"""Patient graph construction and neighbor-count selection.

Per-modality k-NN graphs under cosine distance are intersected so an edge
survives only when every modality agrees on it. Evaluation nodes then receive
edges exclusively from training nodes, self-loops are added, and k is chosen
by a short warm-up of the downstream classifier scored on validation Macro-F1.
"""

import dataclasses
import logging
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .data import FoldSplit, OmicsDataset
from .seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class EdgeSet:
    edges: Set[Tuple[int, int]]
    n_nodes: int
    k: Optional[int] = None
    modality: str = ""

    def sorted_pairs(self) -> List[Tuple[int, int]]:
        return sorted(self.edges)

    def __len__(self) -> int:
        return len(self.edges)


@dataclasses.dataclass
class RoleMask:
    is_train: np.ndarray  # bool per node

    @classmethod
    def from_train_count(cls, n_nodes: int, n_train: int) -> "RoleMask":
        mask = np.zeros(n_nodes, dtype=bool)
        mask[:n_train] = True
        return cls(is_train=mask)


def knn_edges(x: np.ndarray, k: int, modality: str = "") -> EdgeSet:
    """Directed k-NN under cosine distance; ties go to the smaller index."""
    n = x.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k <= N-1, got k={k} with N={n}")
    norms = np.sqrt((x * x).sum(axis=1))
    norms = np.maximum(norms, 1e-12)
    dist = 1.0 - (x @ x.T) / np.outer(norms, norms)
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps ascending index order within exact distance ties
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    edges = {(i, int(j)) for i in range(n) for j in nearest[i]}
    return EdgeSet(edges=edges, n_nodes=n, k=k, modality=modality)


def intersect(edge_sets: Sequence[EdgeSet]) -> EdgeSet:
    if not edge_sets:
        raise ValueError("intersect requires at least one edge set")
    n = edge_sets[0].n_nodes
    if any(es.n_nodes != n for es in edge_sets):
        raise ValueError("edge sets cover different node counts")
    edges = set.intersection(*(set(es.edges) for es in edge_sets))
    ks = {es.k for es in edge_sets}
    return EdgeSet(edges=edges, n_nodes=n, k=ks.pop() if len(ks) == 1 else None,
                   modality="intersection")


def apply_edge_policy(edge_set: EdgeSet, roles: RoleMask) -> EdgeSet:
    """Keep an edge only if its source is a training node.

    This retains train-train edges as given, orients train-eval edges toward
    the evaluation node, and removes eval-eval and eval-train edges entirely.
    """
    if roles.is_train.shape[0] != edge_set.n_nodes:
        raise ValueError("role mask does not cover all nodes")
    kept = {(s, d) for (s, d) in edge_set.edges if roles.is_train[s]}
    return EdgeSet(edges=kept, n_nodes=edge_set.n_nodes, k=edge_set.k,
                   modality=edge_set.modality)


def add_self_loops(edge_set: EdgeSet, n_nodes: int) -> EdgeSet:
    edges = set(edge_set.edges)
    edges.update((i, i) for i in range(n_nodes))
    return EdgeSet(edges=edges, n_nodes=n_nodes, k=edge_set.k, modality=edge_set.modality)


@dataclasses.dataclass
class FoldGraph:
    """An intersection graph over a node subset, ready for message passing.

    nodes holds the dataset-level index of each local node; edges are in local
    coordinates with the transductive policy and self-loops already applied.
    """

    nodes: np.ndarray
    edges: EdgeSet
    roles: RoleMask

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def edge_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        pairs = self.edges.sorted_pairs()
        src = np.array([p[0] for p in pairs], dtype=np.int64)
        dst = np.array([p[1] for p in pairs], dtype=np.int64)
        return src, dst


def _build_graph(dataset: OmicsDataset, nodes: np.ndarray, n_train: int, k: int) -> FoldGraph:
    per_modality = [
        knn_edges(mat[nodes], k, modality=name)
        for name, mat in zip(dataset.modality_names, dataset.matrices)
    ]
    roles = RoleMask.from_train_count(len(nodes), n_train)
    edge_set = apply_edge_policy(intersect(per_modality), roles)
    return FoldGraph(nodes=nodes, edges=add_self_loops(edge_set, len(nodes)), roles=roles)


def build_fold_graphs(dataset: OmicsDataset, split: FoldSplit, k: int) -> Dict[str, FoldGraph]:
    """Build the train-only, train+val, and train+test graphs for one fold.

    k-NN is computed over exactly the nodes present in each graph; training
    nodes come first so local index < len(train) means role train.
    """
    train = np.asarray(split.train_idx, dtype=np.int64)
    graphs = {"train": _build_graph(dataset, train, len(train), k)}
    for name, extra in (("val", split.val_idx), ("test", split.test_idx)):
        nodes = np.concatenate([train, np.asarray(extra, dtype=np.int64)])
        graphs[name] = _build_graph(dataset, nodes, len(train), k)
    return graphs


def cohort_graph(dataset: OmicsDataset, k: int) -> FoldGraph:
    """Full-cohort intersection graph for frozen inference; all nodes train."""
    nodes = np.arange(dataset.n_samples, dtype=np.int64)
    return _build_graph(dataset, nodes, dataset.n_samples, k)


def score_k_candidates(
    dataset: OmicsDataset,
    split: FoldSplit,
    confidences: np.ndarray,
    candidates: Sequence[int],
    warmup_epochs: int = 30,
    seed: int = 0,
    trainer=None,
) -> List[Tuple[int, float]]:
    """Warm-up validation Macro-F1 for each candidate neighbor count.

    Each candidate gets its own derived RNG stream, so scores do not depend on
    evaluation order. Candidates too large for the training subset are skipped
    with a warning. Test indices are never consulted.
    """
    if not candidates:
        raise ValueError("no k candidates given")
    if trainer is None:
        from .gnn import warmup_score

        trainer = warmup_score
    scores: List[Tuple[int, float]] = []
    n_train = len(split.train_idx)
    for k in sorted(set(int(k) for k in candidates)):
        if k >= n_train:
            logger.warning("skipping k=%d: training subset has only %d nodes", k, n_train)
            continue
        graphs = {
            name: g
            for name, g in build_fold_graphs(dataset, split, k).items()
            if name in ("train", "val")
        }
        rng_seed = derive_seed(seed, "kselect", split.fold_index, k)
        score = trainer(dataset, split, confidences, graphs, warmup_epochs, rng_seed)
        logger.debug("fold %d k=%d warmup val macro-F1 %.4f", split.fold_index, k, score)
        scores.append((k, float(score)))
    if not scores:
        raise ValueError("every k candidate exceeded the training-set size")
    return scores


def select_k(
    dataset: OmicsDataset,
    split: FoldSplit,
    confidences: np.ndarray,
    candidates: Sequence[int] = (7, 11, 15, 19, 23),
    warmup_epochs: int = 30,
    seed: int = 0,
    trainer=None,
) -> int:
    """Pick the candidate with the best warm-up validation Macro-F1.

    Ties break toward the smaller k (candidates are scored in ascending order
    and only a strictly better score displaces the incumbent).
    """
    scores = score_k_candidates(
        dataset, split, confidences, candidates, warmup_epochs, seed, trainer=trainer
    )
    best_k, best_score = scores[0]
    for k, score in scores[1:]:
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def write_edges(path, edge_set: EdgeSet) -> None:
    """Dump an edge set as a two-column TSV for inspection."""
    import pandas as pd

    pairs = edge_set.sorted_pairs()
    frame = pd.DataFrame(pairs, columns=["src", "dst"])
    frame.to_csv(path, sep="\t", index=False)
