"""Stage 1: per-modality evidential heads and learned modality confidence.

Each modality gets its own encoder and evidence head. Evidence is mapped to
Dirichlet parameters, summarized into three quality signals, and a small
per-modality scorer turns those signals into a temperature-scaled softmax
confidence over modalities. After training, confidences are computed for every
sample and frozen for downstream use.
"""

import dataclasses
import logging
import math
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import FoldSplit, OmicsDataset
from .errors import ConfigError, TrainingError
from .seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class EvidenceOutput:
    """Dirichlet summary of one evidence batch; trailing dim indexes classes."""

    evidence: torch.Tensor
    alpha: torch.Tensor
    strength: torch.Tensor
    mean: torch.Tensor
    uncertainty: torch.Tensor

    @property
    def num_classes(self) -> int:
        return self.evidence.shape[-1]


@dataclasses.dataclass
class QualitySignals:
    log_strength: torch.Tensor
    norm_entropy: torch.Tensor
    max_prob: torch.Tensor

    def stacked(self) -> torch.Tensor:
        return torch.stack([self.log_strength, self.norm_entropy, self.max_prob], dim=-1)


@dataclasses.dataclass
class ConfidenceVector:
    """Per-sample simplex over modalities; trailing dim indexes modalities."""

    r: torch.Tensor
    temperature: float


def dirichlet_stats(evidence) -> EvidenceOutput:
    """Map non-negative evidence to Dirichlet parameters and uncertainty."""
    ev = evidence if torch.is_tensor(evidence) else torch.as_tensor(evidence, dtype=torch.float64)
    if ev.shape[-1] < 1:
        raise ValueError("evidence vector must have at least one class")
    if not torch.isfinite(ev).all():
        raise ValueError("evidence must be finite")
    if (ev < 0).any():
        raise ValueError("evidence must be non-negative")
    alpha = ev + 1.0
    strength = alpha.sum(dim=-1)
    mean = alpha / strength.unsqueeze(-1)
    uncertainty = ev.shape[-1] / strength
    return EvidenceOutput(ev, alpha, strength, mean, uncertainty)


def quality_signals(out: EvidenceOutput) -> QualitySignals:
    """Summarize an EvidenceOutput into the three scorer inputs."""
    c = out.num_classes
    if c < 2:
        raise ValueError("entropy normalization undefined for a single class")
    log_strength = torch.log1p(out.evidence.sum(dim=-1))
    # alpha >= 1 keeps every mean entry strictly positive, so log is safe
    norm_entropy = -(out.mean * torch.log(out.mean)).sum(dim=-1) / math.log(c)
    return QualitySignals(log_strength, norm_entropy, out.mean.max(dim=-1).values)


def confidence(signals: Sequence[QualitySignals], scorers, temperature: float = 1.0) -> ConfidenceVector:
    """Score each modality's signals and softmax across modalities."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if len(signals) < 2:
        raise ValueError("confidence needs at least two modalities")
    if len(scorers) != len(signals):
        raise ValueError("one scorer per modality required")
    logits = torch.stack(
        [scorer(sig.stacked()).squeeze(-1) for scorer, sig in zip(scorers, signals)], dim=-1
    )
    return ConfidenceVector(torch.softmax(logits / temperature, dim=-1), float(temperature))


def _kl_to_uniform_dirichlet(alpha: torch.Tensor) -> torch.Tensor:
    # closed-form KL(Dir(alpha) || Dir(1,...,1)) over the trailing class dim
    c = alpha.shape[-1]
    s = alpha.sum(dim=-1)
    kl = torch.lgamma(s) - torch.lgamma(alpha).sum(dim=-1) - math.lgamma(c)
    kl = kl + ((alpha - 1.0) * (torch.digamma(alpha) - torch.digamma(s).unsqueeze(-1))).sum(dim=-1)
    return kl


def edl_loss(out: EvidenceOutput, labels, epoch: int, anneal_step: int, reduction: str = "mean"):
    """Sum-of-squares Dirichlet risk plus annealed KL toward the flat Dirichlet.

    The KL is applied to evidence with the target class removed, and its weight
    ramps linearly from 0 to 1 over anneal_step epochs.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if anneal_step < 1:
        raise ValueError("anneal_step must be >= 1")
    labels = torch.as_tensor(labels, dtype=torch.long)
    y = F.one_hot(labels, out.num_classes).to(out.alpha.dtype)
    s = out.strength.unsqueeze(-1)
    risk = ((y - out.mean) ** 2 + out.mean * (1.0 - out.mean) / (s + 1.0)).sum(dim=-1)
    lam = min(1.0, epoch / anneal_step)
    alpha_off = y + (1.0 - y) * out.alpha
    loss = risk + lam * _kl_to_uniform_dirichlet(alpha_off)
    if reduction == "mean":
        return loss.mean()
    if reduction == "none":
        return loss
    raise ValueError(f"unknown reduction {reduction!r}")


def stage1_loss(outputs: Sequence[EvidenceOutput], conf: ConfidenceVector, labels, params, epoch: int):
    """Composite first-stage objective.

    Weighted sum of the per-modality evidential risk, the confidence-weighted
    cross-entropy on Dirichlet means, and the normalized entropy of the
    modality confidences (penalized so r is pushed away from uniform).
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    m = len(outputs)
    edl = torch.stack(
        [edl_loss(o, labels, epoch, params.anneal_step, reduction="none") for o in outputs], dim=-1
    )
    log_py = torch.stack(
        [
            torch.log(o.mean.gather(-1, labels.unsqueeze(-1)).squeeze(-1).clamp_min(1e-12))
            for o in outputs
        ],
        dim=-1,
    )
    cls = -(conf.r * log_py).sum(dim=-1)
    ent = -(conf.r * torch.log(conf.r.clamp_min(1e-12))).sum(dim=-1) / math.log(m)
    return params.lambda_edl * edl.mean() + params.lambda_cls * cls.mean() + params.lambda_div * ent.mean()


@dataclasses.dataclass
class Stage1Config:
    hidden_dim: int = 128
    scorer_hidden: int = 16
    dropout: float = 0.1
    temperature: float = 1.0
    lambda_edl: float = 1.5
    lambda_cls: float = 1.5
    lambda_div: float = 1.0
    anneal_step: int = 50
    epochs: int = 200
    learning_rate: float = 1e-3

    def validate(self) -> None:
        if self.hidden_dim < 1 or self.scorer_hidden < 1:
            raise ConfigError("stage1 hidden widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("stage1 dropout must lie in [0, 1)")
        if self.temperature <= 0:
            raise ConfigError("stage1 temperature must be positive")
        if min(self.lambda_edl, self.lambda_cls, self.lambda_div) < 0:
            raise ConfigError("stage1 loss weights must be non-negative")
        if self.anneal_step < 1:
            raise ConfigError("stage1 anneal_step must be >= 1")
        if self.epochs < 0:
            raise ConfigError("stage1 epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("stage1 learning_rate must be positive")


class Stage1Model(nn.Module):
    """Per-modality encoders, evidence heads, and quality scorers."""

    def __init__(self, modality_dims: Sequence[int], num_classes: int, config: Stage1Config):
        super().__init__()
        self.num_classes = num_classes
        self.temperature = config.temperature
        self.encoders = nn.ModuleList(
            nn.Sequential(
                nn.Linear(d, config.hidden_dim), nn.SiLU(), nn.Dropout(config.dropout)
            )
            for d in modality_dims
        )
        self.heads = nn.ModuleList(nn.Linear(config.hidden_dim, num_classes) for _ in modality_dims)
        self.scorers = nn.ModuleList(
            nn.Sequential(
                nn.Linear(3, config.scorer_hidden),
                nn.SiLU(),
                nn.Linear(config.scorer_hidden, 1),
            )
            for _ in modality_dims
        )

    def evidence_outputs(self, xs: Sequence[torch.Tensor]) -> List[EvidenceOutput]:
        return [
            dirichlet_stats(F.softplus(head(enc(x))))
            for enc, head, x in zip(self.encoders, self.heads, xs)
        ]

    def forward(self, xs: Sequence[torch.Tensor]):
        outs = self.evidence_outputs(xs)
        sigs = [quality_signals(o) for o in outs]
        return outs, confidence(sigs, list(self.scorers), self.temperature)


@dataclasses.dataclass
class Stage1Result:
    model: Stage1Model
    confidence: np.ndarray
    history: List[float]


def train_stage1(
    dataset: OmicsDataset,
    split: FoldSplit,
    config: Optional[Stage1Config] = None,
    seed: int = 0,
) -> Stage1Result:
    """Full-batch Adam training on the train indices, then freeze r everywhere.

    Confidences are computed in eval mode for all samples (train, val, test)
    and returned as a plain (N, M) array so no gradient state survives.
    """
    config = config or Stage1Config()
    config.validate()
    torch.manual_seed(derive_seed(seed, "stage1", split.fold_index))
    model = Stage1Model(dataset.modality_dims, dataset.num_classes, config).double()

    xs_train = [torch.from_numpy(mat[split.train_idx]) for mat in dataset.matrices]
    y_train = torch.from_numpy(dataset.labels[split.train_idx])
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    history: List[float] = []
    model.train()
    for epoch in range(config.epochs):
        opt.zero_grad()
        try:
            outs, conf = model(xs_train)
            loss = stage1_loss(outs, conf, y_train, config, epoch)
        except ValueError as exc:
            # diverged params can push evidence to inf before the loss is formed
            raise TrainingError(f"stage-1 loss became non-finite at epoch {epoch}") from exc
        if not torch.isfinite(loss):
            raise TrainingError(f"stage-1 loss became non-finite at epoch {epoch}")
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
        if epoch % 50 == 0:
            logger.debug("stage1 epoch %d loss %.6f", epoch, history[-1])

    model.eval()
    with torch.no_grad():
        xs_all = [torch.from_numpy(mat) for mat in dataset.matrices]
        _, conf = model(xs_all)
        frozen = conf.r.numpy().copy()
    return Stage1Result(model=model, confidence=frozen, history=history)


def write_confidence(path, dataset: OmicsDataset, confidence_table: np.ndarray) -> None:
    """Write the frozen per-sample confidences as a TSV keyed by sample_id."""
    import pandas as pd

    frame = pd.DataFrame(confidence_table, columns=list(dataset.modality_names))
    frame.insert(0, "sample_id", list(dataset.sample_ids))
    frame.to_csv(path, sep="\t", index=False)
