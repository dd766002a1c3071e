"""Two-layer mean-aggregating graph network, Stage-2 losses, and training.

The fused patient representations are refined over the intersection graph by
GraphSAGE-style layers (self features concatenated with the in-neighbor mean),
a residual projection, and a linear classifier. Training minimizes weighted
label-smoothing cross-entropy plus a supervised contrastive term, full batch,
with validation-Macro-F1 checkpointing and early stopping.
"""

import dataclasses
import json
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import FoldSplit, OmicsDataset
from .errors import ConfigError, DataError, TrainingError
from .evidence import Stage1Config, Stage1Model, stage1_loss
from .fusion import FusionConfig, FusionModel
from .graph import FoldGraph
from .metrics import macro_f1_score

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "CMGL1"


@dataclasses.dataclass
class Stage2Config:
    sage_hidden: int = 128
    embed_dim: int = 64
    sage_dropout: float = 0.0
    lambda_cls: float = 3.0
    lambda_con: float = 1.0
    label_smoothing: float = 0.1
    supcon_tau: float = 0.1
    epochs: int = 300
    patience: int = 30
    learning_rate: float = 1e-3

    def validate(self) -> None:
        if self.sage_hidden < 1 or self.embed_dim < 1:
            raise ConfigError("stage2 layer widths must be positive")
        if not 0.0 <= self.sage_dropout < 1.0:
            raise ConfigError("stage2 sage_dropout must lie in [0, 1)")
        if self.lambda_cls < 0 or self.lambda_con < 0:
            raise ConfigError("stage2 loss weights must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("stage2 label_smoothing must lie in [0, 1)")
        if self.supcon_tau <= 0:
            raise ConfigError("stage2 supcon_tau must be positive")
        if self.epochs < 0 or self.patience < 1:
            raise ConfigError("stage2 epochs must be >= 0 and patience >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("stage2 learning_rate must be positive")


def _neighbor_mean(h: torch.Tensor, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    n = h.shape[0]
    agg = torch.zeros_like(h)
    agg.index_add_(0, dst, h[src])
    deg = torch.zeros(n, dtype=h.dtype)
    deg.index_add_(0, dst, torch.ones(src.shape[0], dtype=h.dtype))
    if (deg == 0).any():
        raise ValueError("graph has nodes without in-edges; add self-loops first")
    return agg / deg.unsqueeze(1)


class GraphSage(nn.Module):
    """Two rounds of self||neighbor-mean aggregation; smooth nonlinearity between."""

    def __init__(self, in_dim: int, hidden: int = 128, out_dim: int = 64, dropout: float = 0.0):
        super().__init__()
        self.lin1 = nn.Linear(2 * in_dim, hidden)
        self.lin2 = nn.Linear(2 * hidden, out_dim)
        self.act = nn.SiLU()
        self.dropout = nn.Dropout(dropout) if dropout > 0 else None

    def forward(self, x: torch.Tensor, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        h = self.act(self.lin1(torch.cat([x, _neighbor_mean(x, src, dst)], dim=1)))
        if self.dropout is not None:
            h = self.dropout(h)
        return self.lin2(torch.cat([h, _neighbor_mean(h, src, dst)], dim=1))


class Stage2Model(nn.Module):
    """Fusion front end, graph layers, residual projection, and classifier."""

    def __init__(
        self,
        modality_dims,
        num_classes: int,
        fusion_config: Optional[FusionConfig] = None,
        config: Optional[Stage2Config] = None,
    ):
        super().__init__()
        config = config or Stage2Config()
        config.validate()
        self.fusion = FusionModel(modality_dims, fusion_config)
        dim = self.fusion.config.dim
        self.sage = GraphSage(dim, config.sage_hidden, config.embed_dim, config.sage_dropout)
        self.residual = nn.Linear(dim, config.embed_dim, bias=False)
        self.classifier = nn.Linear(config.embed_dim, num_classes)

    def sage_forward(self, z: torch.Tensor, src: torch.Tensor, dst: torch.Tensor):
        e = self.sage(z, src, dst) + self.residual(z)
        return e, self.classifier(e)

    def forward(self, xs, r, src, dst, detach_confidence: bool = True):
        fused = self.fusion(xs, r, detach_confidence=detach_confidence)
        e, logits = self.sage_forward(fused.z, src, dst)
        return fused, e, logits


def class_weights(labels, num_classes: int) -> np.ndarray:
    """Inverse-sqrt-frequency weights rescaled to mean 1."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes)
    for cls in range(num_classes):
        if counts[cls] == 0:
            raise ValueError(f"class {cls} has no training samples")
    raw = 1.0 / np.sqrt(counts.astype(np.float64))
    return raw / raw.mean()


def ce_loss(logits: torch.Tensor, labels: torch.Tensor, weights=None, label_smoothing: float = 0.0):
    """Class-weighted cross-entropy against smoothed targets, sample mean."""
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError("label_smoothing must lie in [0, 1)")
    c = logits.shape[-1]
    log_p = F.log_softmax(logits, dim=-1)
    targets = torch.full_like(log_p, label_smoothing / max(c - 1, 1))
    targets.scatter_(1, labels.unsqueeze(1), 1.0 - label_smoothing)
    per_sample = -(targets * log_p).sum(dim=-1)
    if weights is not None:
        per_sample = per_sample * weights[labels]
    return per_sample.mean()


def supcon_loss(embeddings: torch.Tensor, labels: torch.Tensor, tau: float = 0.1):
    """Supervised contrastive loss on L2-normalized embeddings.

    Returns (loss, n_anchors); anchors with no same-class partner are skipped,
    and a batch with no valid anchors yields (0, 0).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = embeddings.shape[0]
    if n < 2:
        return embeddings.new_zeros(()), 0
    en = embeddings / embeddings.norm(dim=1, keepdim=True).clamp_min(1e-12)
    sim = en @ en.T / tau
    eye = torch.eye(n, dtype=torch.bool)
    sim = sim.masked_fill(eye, float("-inf"))
    pos_mask = (labels.unsqueeze(0) == labels.unsqueeze(1)) & ~eye
    pos_counts = pos_mask.sum(dim=1)
    valid = pos_counts > 0
    if not valid.any():
        return embeddings.new_zeros(()), 0
    log_prob = sim - torch.logsumexp(sim, dim=1, keepdim=True)
    pos_sum = log_prob.masked_fill(~pos_mask, 0.0).sum(dim=1)
    per_anchor = -pos_sum[valid] / pos_counts[valid]
    return per_anchor.mean(), int(valid.sum())


def stage2_loss(logits, labels, embeddings, weights, config: Stage2Config):
    ce = ce_loss(logits, labels, weights, config.label_smoothing)
    con, n_anchors = supcon_loss(embeddings, labels, config.supcon_tau)
    return config.lambda_cls * ce + config.lambda_con * con, ce, con, n_anchors


@dataclasses.dataclass
class Stage2Result:
    model: Stage2Model
    best_val_f1: float
    best_epoch: int
    history: List[Tuple[float, float]]


def graph_tensors(dataset: OmicsDataset, graph: FoldGraph):
    xs = [torch.from_numpy(mat[graph.nodes]) for mat in dataset.matrices]
    src, dst = graph.edge_arrays()
    return xs, torch.from_numpy(src), torch.from_numpy(dst)


def _snapshot(module: nn.Module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _val_macro_f1(model, xs, r, src, dst, eval_local, y_eval, num_classes) -> float:
    model.eval()
    with torch.no_grad():
        _, _, logits = model(xs, r, src, dst)
    preds = logits[eval_local].numpy().argmax(axis=1)
    return macro_f1_score(y_eval, preds, num_classes)


def train_stage2(
    dataset: OmicsDataset,
    split: FoldSplit,
    confidences: np.ndarray,
    graphs: Dict[str, FoldGraph],
    fusion_config: Optional[FusionConfig] = None,
    config: Optional[Stage2Config] = None,
    rng_seed: int = 0,
) -> Stage2Result:
    """Full-batch training on the train graph with val-Macro-F1 checkpointing.

    Confidences arrive as a plain array and stay constant; only the train and
    val graphs are consulted, so test nodes never influence the fit.
    """
    config = config or Stage2Config()
    config.validate()
    torch.manual_seed(rng_seed)
    model = Stage2Model(dataset.modality_dims, dataset.num_classes, fusion_config, config).double()
    conf = np.asarray(confidences, dtype=np.float64)

    g_tr, g_va = graphs["train"], graphs["val"]
    xs_tr, src_tr, dst_tr = graph_tensors(dataset, g_tr)
    r_tr = torch.from_numpy(conf[g_tr.nodes])
    y_tr = torch.from_numpy(dataset.labels[g_tr.nodes])
    weights = torch.from_numpy(class_weights(dataset.labels[split.train_idx], dataset.num_classes))

    xs_va, src_va, dst_va = graph_tensors(dataset, g_va)
    r_va = torch.from_numpy(conf[g_va.nodes])
    val_local = np.arange(len(split.train_idx), g_va.n_nodes)
    y_va = dataset.labels[g_va.nodes[val_local]]

    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    best_f1, best_epoch, best_state = -1.0, -1, None
    stale = 0
    history: List[Tuple[float, float]] = []
    for epoch in range(config.epochs):
        model.train()
        opt.zero_grad()
        _, emb, logits = model(xs_tr, r_tr, src_tr, dst_tr)
        loss, _, _, _ = stage2_loss(logits, y_tr, emb, weights, config)
        if not torch.isfinite(loss):
            raise TrainingError(f"stage-2 loss became non-finite at epoch {epoch}")
        loss.backward()
        opt.step()

        f1 = _val_macro_f1(model, xs_va, r_va, src_va, dst_va, val_local, y_va, dataset.num_classes)
        history.append((float(loss.detach()), f1))
        if f1 > best_f1:
            best_f1, best_epoch, best_state = f1, epoch, _snapshot(model)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.debug("stage2 early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    if best_state is None:
        best_f1 = _val_macro_f1(
            model, xs_va, r_va, src_va, dst_va, val_local, y_va, dataset.num_classes
        )
    else:
        model.load_state_dict(best_state)
    return Stage2Result(model=model, best_val_f1=best_f1, best_epoch=best_epoch, history=history)


def warmup_score(dataset, split, confidences, graphs, epochs: int, rng_seed: int) -> float:
    """Short-run val Macro-F1 used to rank neighbor-count candidates."""
    cfg = Stage2Config(epochs=epochs, patience=max(epochs, 1))
    return train_stage2(dataset, split, confidences, graphs, None, cfg, rng_seed).best_val_f1


@dataclasses.dataclass
class JointResult:
    stage1: Stage1Model
    model: Stage2Model
    confidence: np.ndarray
    best_val_f1: float
    best_epoch: int
    history: List[Tuple[float, float]]


def train_joint(
    dataset: OmicsDataset,
    split: FoldSplit,
    graphs: Dict[str, FoldGraph],
    stage1_config: Optional[Stage1Config] = None,
    fusion_config: Optional[FusionConfig] = None,
    config: Optional[Stage2Config] = None,
    rng_seed: int = 0,
) -> JointResult:
    """Single-phase variant: both stages optimized together, confidences live.

    The first-stage objective is summed with the graph objective each epoch and
    gradients flow through r into the scorers. After training, confidences are
    computed in eval mode for all samples for reporting.
    """
    stage1_config = stage1_config or Stage1Config()
    stage1_config.validate()
    config = config or Stage2Config()
    config.validate()
    torch.manual_seed(rng_seed)
    stage1 = Stage1Model(dataset.modality_dims, dataset.num_classes, stage1_config).double()
    model = Stage2Model(dataset.modality_dims, dataset.num_classes, fusion_config, config).double()

    g_tr, g_va = graphs["train"], graphs["val"]
    xs_tr, src_tr, dst_tr = graph_tensors(dataset, g_tr)
    y_tr = torch.from_numpy(dataset.labels[g_tr.nodes])
    weights = torch.from_numpy(class_weights(dataset.labels[split.train_idx], dataset.num_classes))
    xs_va, src_va, dst_va = graph_tensors(dataset, g_va)
    val_local = np.arange(len(split.train_idx), g_va.n_nodes)
    y_va = dataset.labels[g_va.nodes[val_local]]

    params = list(stage1.parameters()) + list(model.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    best_f1, best_epoch, best_state = -1.0, -1, None
    stale = 0
    history: List[Tuple[float, float]] = []

    def val_f1() -> float:
        stage1.eval()
        model.eval()
        with torch.no_grad():
            _, conf_va = stage1(xs_va)
            _, _, logits = model(xs_va, conf_va.r, src_va, dst_va, detach_confidence=True)
        preds = logits[val_local].numpy().argmax(axis=1)
        return macro_f1_score(y_va, preds, dataset.num_classes)

    for epoch in range(config.epochs):
        stage1.train()
        model.train()
        opt.zero_grad()
        outs, conf = stage1(xs_tr)
        loss1 = stage1_loss(outs, conf, y_tr, stage1_config, epoch)
        _, emb, logits = model(xs_tr, conf.r, src_tr, dst_tr, detach_confidence=False)
        loss2, _, _, _ = stage2_loss(logits, y_tr, emb, weights, config)
        total = loss1 + loss2
        if not torch.isfinite(total):
            raise TrainingError(f"joint loss became non-finite at epoch {epoch}")
        total.backward()
        opt.step()

        f1 = val_f1()
        history.append((float(total.detach()), f1))
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            best_state = (_snapshot(stage1), _snapshot(model))
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    if best_state is not None:
        stage1.load_state_dict(best_state[0])
        model.load_state_dict(best_state[1])
    else:
        best_f1 = val_f1()
    stage1.eval()
    with torch.no_grad():
        xs_all = [torch.from_numpy(mat) for mat in dataset.matrices]
        _, conf_all = stage1(xs_all)
    return JointResult(
        stage1=stage1,
        model=model,
        confidence=conf_all.r.numpy().copy(),
        best_val_f1=best_f1,
        best_epoch=best_epoch,
        history=history,
    )


def checkpoint_payload(
    model: Stage2Model,
    fusion_config: FusionConfig,
    stage2_config: Stage2Config,
    k_selected: int,
    confidence: np.ndarray,
    dataset: OmicsDataset,
    stage1_model: Optional[Stage1Model] = None,
    stage1_config: Optional[Stage1Config] = None,
    variant: str = "full",
) -> Dict[str, object]:
    """Flatten everything needed for frozen inference into savable arrays."""
    meta = {
        "magic": CHECKPOINT_MAGIC,
        "variant": variant,
        "k_selected": int(k_selected),
        "num_classes": int(dataset.num_classes),
        "modality_dims": [int(d) for d in dataset.modality_dims],
        "modality_names": list(dataset.modality_names),
        "fusion_config": dataclasses.asdict(fusion_config),
        "stage2_config": dataclasses.asdict(stage2_config),
        "stage1_config": dataclasses.asdict(stage1_config) if stage1_config else None,
    }
    payload: Dict[str, object] = {"meta": json.dumps(meta, sort_keys=True)}
    payload["confidence"] = np.asarray(confidence, dtype=np.float64)
    for name, tensor in model.state_dict().items():
        payload["stage2." + name] = tensor.detach().cpu().numpy()
    if stage1_model is not None:
        for name, tensor in stage1_model.state_dict().items():
            payload["stage1." + name] = tensor.detach().cpu().numpy()
    return payload


def save_checkpoint(path, payload: Dict[str, object]) -> None:
    np.savez(path, **payload)


@dataclasses.dataclass
class Checkpoint:
    model: Stage2Model
    stage1: Optional[Stage1Model]
    fusion_config: FusionConfig
    stage2_config: Stage2Config
    stage1_config: Optional[Stage1Config]
    k_selected: int
    confidence: np.ndarray
    num_classes: int
    modality_dims: Tuple[int, ...]
    modality_names: Tuple[str, ...]
    variant: str


def load_checkpoint(path) -> Checkpoint:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    with data:
        if "meta" not in data.files:
            raise DataError(f"{path}: missing checkpoint metadata")
        meta = json.loads(str(data["meta"]))
        if meta.get("magic") != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: unrecognized checkpoint format")
        arrays = {name: data[name] for name in data.files if name != "meta"}

    fusion_config = FusionConfig(**meta["fusion_config"])
    stage2_config = Stage2Config(**meta["stage2_config"])
    stage1_config = Stage1Config(**meta["stage1_config"]) if meta["stage1_config"] else None
    dims = tuple(meta["modality_dims"])
    num_classes = meta["num_classes"]

    model = Stage2Model(dims, num_classes, fusion_config, stage2_config).double()
    model.load_state_dict(
        {
            name[len("stage2."):]: torch.from_numpy(arr)
            for name, arr in arrays.items()
            if name.startswith("stage2.")
        }
    )
    model.eval()
    stage1 = None
    stage1_arrays = {
        name[len("stage1."):]: torch.from_numpy(arr)
        for name, arr in arrays.items()
        if name.startswith("stage1.")
    }
    if stage1_arrays:
        if stage1_config is None:
            raise DataError(f"{path}: stage-1 weights present but config missing")
        stage1 = Stage1Model(dims, num_classes, stage1_config).double()
        stage1.load_state_dict(stage1_arrays)
        stage1.eval()
    return Checkpoint(
        model=model,
        stage1=stage1,
        fusion_config=fusion_config,
        stage2_config=stage2_config,
        stage1_config=stage1_config,
        k_selected=meta["k_selected"],
        confidence=arrays["confidence"],
        num_classes=num_classes,
        modality_dims=dims,
        modality_names=tuple(meta["modality_names"]),
        variant=meta.get("variant", "full"),
    )
