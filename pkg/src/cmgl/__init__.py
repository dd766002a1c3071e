"""Confidence-guided multi-omics graph learning.

Stage 1 scores each patient's omics modalities with evidential Dirichlet
heads and freezes a per-patient confidence simplex; Stage 2 fuses modalities
under attention and confidence gating, builds a consistency-intersection
patient graph, and classifies with a two-layer mean-aggregating GNN.
"""

from .config import CvConfig, GraphConfig, RunConfig, VARIANTS, load_config, write_config
from .data import (
    FoldSplit,
    OmicsDataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    stratified_kfold,
    subsample_train,
    write_dataset,
)
from .errors import AlignmentError, CmglError, ConfigError, DataError, TrainingError
from .evidence import (
    ConfidenceVector,
    EvidenceOutput,
    QualitySignals,
    Stage1Config,
    Stage1Model,
    confidence,
    dirichlet_stats,
    edl_loss,
    quality_signals,
    stage1_loss,
    train_stage1,
)
from .evaluation import (
    FoldResult,
    RunReport,
    export_embeddings,
    run_ablation,
    run_cv,
    run_fold,
    run_grid,
)
from .fusion import FusionConfig, FusionModel, MultiHeadSelfAttention, gate_and_fuse
from .gnn import (
    Checkpoint,
    GraphSage,
    Stage2Config,
    Stage2Model,
    ce_loss,
    class_weights,
    load_checkpoint,
    save_checkpoint,
    supcon_loss,
    train_joint,
    train_stage2,
)
from .graph import (
    EdgeSet,
    RoleMask,
    add_self_loops,
    apply_edge_policy,
    build_fold_graphs,
    intersect,
    knn_edges,
    select_k,
)
from .metrics import MetricsReport, compute_metrics, kmeans_cluster, silhouette

__version__ = "0.1.0"
