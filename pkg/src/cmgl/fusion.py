"""Stage 2 front end: modality tokens, cross-omics attention, confidence gating.

Each modality is projected to a shared width, tagged with a learnable identity
embedding, mixed by multi-head self-attention across the modality axis, then
gated per dimension and combined with the per-sample modality confidences into
a single fused representation per patient.
"""

import dataclasses
import math
from typing import Optional, Sequence

import torch
import torch.nn as nn

from .errors import ConfigError


@dataclasses.dataclass
class FusionConfig:
    dim: int = 128
    n_heads: int = 4
    dropout: float = 0.1
    use_attention: bool = True
    layer_norm: bool = True

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError("fusion dim must be positive")
        if self.n_heads < 1:
            raise ConfigError("fusion n_heads must be positive")
        if self.dim % self.n_heads != 0:
            raise ConfigError(
                f"fusion dim {self.dim} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("fusion dropout must lie in [0, 1)")


@dataclasses.dataclass
class ModalityTokens:
    tokens: torch.Tensor       # (B, M, D)
    identity: torch.Tensor     # (M, D)


@dataclasses.dataclass
class FusedRepresentation:
    z: torch.Tensor            # (B, D)
    gates: torch.Tensor        # (B, M, D), entries in (0, 1)
    attended: torch.Tensor     # (B, M, D)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention over the modality-token axis."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ConfigError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.proj_q = nn.Linear(dim, dim)
        self.proj_k = nn.Linear(dim, dim)
        self.proj_v = nn.Linear(dim, dim)
        self.proj_out = nn.Linear(dim, dim)

    def forward(self, tokens: torch.Tensor, return_weights: bool = False):
        b, m, d = tokens.shape
        h, dh = self.n_heads, self.head_dim

        def split(t):
            return t.view(b, m, h, dh).transpose(1, 2)  # (B, h, M, dh)

        q, k, v = split(self.proj_q(tokens)), split(self.proj_k(tokens)), split(self.proj_v(tokens))
        scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
        weights = torch.softmax(scores, dim=-1)
        mixed = (weights @ v).transpose(1, 2).reshape(b, m, d)
        out = self.proj_out(mixed)
        if return_weights:
            return out, weights
        return out


def gate_and_fuse(
    attended: torch.Tensor,
    r: torch.Tensor,
    gate: nn.Linear,
    detach_confidence: bool = True,
) -> FusedRepresentation:
    """Per-dimension sigmoid gating conditioned on the token and its confidence.

    g^(m) = sigmoid(W_g [token^(m) ; r^(m)]); z = sum_m r^(m) (g^(m) * token^(m)).
    By default the confidences are detached so no gradient can reach them.
    """
    if r.dim() == 1:
        r = r.unsqueeze(0)
    row_sum = r.sum(dim=-1)
    if (r < 0).any() or (row_sum - 1.0).abs().max() > 1e-6:
        raise ValueError("confidence rows must lie on the probability simplex")
    if detach_confidence:
        r = r.detach()
    gates = torch.sigmoid(gate(torch.cat([attended, r.unsqueeze(-1)], dim=-1)))
    z = (r.unsqueeze(-1) * gates * attended).sum(dim=1)
    return FusedRepresentation(z=z, gates=gates, attended=attended)


class FusionModel(nn.Module):
    """Token encoders + identity embeddings + attention block + gating."""

    def __init__(self, modality_dims: Sequence[int], config: Optional[FusionConfig] = None):
        super().__init__()
        config = config or FusionConfig()
        config.validate()
        self.config = config
        self.encoders = nn.ModuleList(
            nn.Sequential(
                nn.Linear(d, config.dim), nn.SiLU(), nn.Dropout(config.dropout)
            )
            for d in modality_dims
        )
        self.identity = nn.Parameter(torch.empty(len(modality_dims), config.dim))
        nn.init.normal_(self.identity, std=0.02)
        self.attention = MultiHeadSelfAttention(config.dim, config.n_heads)
        self.norm = nn.LayerNorm(config.dim)
        self.gate = nn.Linear(config.dim + 1, config.dim)

    def encode_tokens(self, xs: Sequence[torch.Tensor]) -> ModalityTokens:
        if len(xs) != len(self.encoders):
            raise ValueError(
                f"expected {len(self.encoders)} modalities, got {len(xs)}"
            )
        stacked = torch.stack([enc(x) for enc, x in zip(self.encoders, xs)], dim=1)
        return ModalityTokens(tokens=stacked + self.identity, identity=self.identity)

    def attend(self, tokens: torch.Tensor) -> torch.Tensor:
        attended = tokens + self.attention(tokens)
        if self.config.layer_norm:
            attended = self.norm(attended)
        return attended

    def forward(
        self, xs: Sequence[torch.Tensor], r: torch.Tensor, detach_confidence: bool = True
    ) -> FusedRepresentation:
        tokens = self.encode_tokens(xs).tokens
        attended = self.attend(tokens) if self.config.use_attention else tokens
        return gate_and_fuse(attended, r, self.gate, detach_confidence=detach_confidence)
