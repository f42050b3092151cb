"""Trainable video adapter: learned temporal positions, a Q-former over
boundary-conditioned features, and linear maps into the LM embedding width.

The Q-former holds a fixed set of learnable query embeddings that
cross-attend to the flattened (time x token) feature sequence, so its output
shape depends only on the query count, never on sequence length.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .boundary import apply_boundary
from .errors import ConfigError, PositionOverflow, ShapeMismatch


@dataclass(frozen=True)
class VideoQFormerConfig:
    num_query_tokens: int
    hidden_dim: int
    num_layers: int = 2
    num_heads: int = 8
    feedforward_dim: int = 0  # 0 -> 4 * hidden_dim

    def __post_init__(self) -> None:
        if min(self.num_query_tokens, self.hidden_dim, self.num_layers, self.num_heads) < 1:
            raise ConfigError("q-former config values must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def ffn_dim(self) -> int:
        return self.feedforward_dim if self.feedforward_dim > 0 else 4 * self.hidden_dim


class LearnedPositions(nn.Module):
    """One trainable vector per time step, broadcast over tokens. Zero-init."""

    def __init__(self, max_len: int, dim: int):
        super().__init__()
        self.table = nn.Parameter(torch.zeros(max_len, dim))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim != 3:
            raise ShapeMismatch(f"expected [L, tokens, dim], got {tuple(features.shape)}")
        length = features.shape[0]
        if length > self.table.shape[0]:
            raise PositionOverflow(
                f"sequence length {length} exceeds positional table "
                f"({self.table.shape[0]} slots)"
            )
        return features + self.table[:length].unsqueeze(1)


class _Attention(nn.Module):
    """Single-sequence multi-head attention (no batch dim)."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        n, m = queries.shape[0], context.shape[0]
        q = self.q(queries).view(n, self.num_heads, self.head_dim).transpose(0, 1)
        k = self.k(context).view(m, self.num_heads, self.head_dim).transpose(0, 1)
        v = self.v(context).view(m, self.num_heads, self.head_dim).transpose(0, 1)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.head_dim**0.5, dim=-1)
        mixed = (attn @ v).transpose(0, 1).reshape(n, -1)
        return self.out(mixed)


class _QFormerLayer(nn.Module):
    """Pre-LN block: query self-attention, cross-attention to features, FFN."""

    def __init__(self, cfg: VideoQFormerConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.norm_self = nn.LayerNorm(d)
        self.self_attn = _Attention(d, cfg.num_heads)
        self.norm_cross = nn.LayerNorm(d)
        self.cross_attn = _Attention(d, cfg.num_heads)
        self.norm_ffn = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_dim), nn.GELU(), nn.Linear(cfg.ffn_dim, d)
        )

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        h = self.norm_self(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm_cross(x), context)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class VideoQFormer(nn.Module):
    def __init__(self, cfg: VideoQFormerConfig):
        super().__init__()
        self.cfg = cfg
        self.queries = nn.Parameter(torch.empty(cfg.num_query_tokens, cfg.hidden_dim))
        nn.init.normal_(self.queries, std=0.02)
        self.layers = nn.ModuleList(_QFormerLayer(cfg) for _ in range(cfg.num_layers))
        self.final_norm = nn.LayerNorm(cfg.hidden_dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """[L, tokens, d_0] -> [q, d_0] for any L >= 1, tokens >= 1."""
        if features.ndim != 3:
            raise ShapeMismatch(f"expected [L, tokens, dim], got {tuple(features.shape)}")
        if features.shape[-1] != self.cfg.hidden_dim:
            raise ShapeMismatch(
                f"feature width {features.shape[-1]} != hidden_dim {self.cfg.hidden_dim}"
            )
        context = features.reshape(-1, self.cfg.hidden_dim)
        x = self.queries
        for layer in self.layers:
            x = layer(x, context)
        return self.final_norm(x)


class VideoAdapter(nn.Module):
    """Primary and others paths from encoded features to LM-width query tokens.

    All other-extractor features are concatenated along the token axis per
    time step and pass through one shared q-former, yielding a single block
    of secondary query tokens.
    """

    def __init__(self, primary_cfg: VideoQFormerConfig, others_cfg: VideoQFormerConfig,
                 lm_dim: int, max_positions: int = 256):
        super().__init__()
        if primary_cfg.hidden_dim != others_cfg.hidden_dim:
            raise ConfigError("primary and others paths must share hidden_dim")
        d_0 = primary_cfg.hidden_dim
        self.primary_positions = LearnedPositions(max_positions, d_0)
        self.others_positions = LearnedPositions(max_positions, d_0)
        self.primary_qformer = VideoQFormer(primary_cfg)
        self.others_qformer = VideoQFormer(others_cfg)
        self.primary_to_lm = nn.Linear(d_0, lm_dim)
        self.others_to_lm = nn.Linear(d_0, lm_dim)

    def forward(
        self,
        primary: torch.Tensor,
        others: list[torch.Tensor],
        boundary_emb: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Returns (V0 [q_0, h], V1 [q_1, h] or None when no other features)."""
        p = apply_boundary(self.primary_positions(primary), boundary_emb)
        v0 = self.primary_to_lm(self.primary_qformer(p))
        if not others:
            return v0, None
        conditioned = [
            apply_boundary(self.others_positions(o), boundary_emb) for o in others
        ]
        lengths = {c.shape[0] for c in conditioned}
        if len(lengths) != 1:
            raise ShapeMismatch(f"other features disagree on time length: {lengths}")
        merged = torch.cat(conditioned, dim=1)
        v1 = self.others_to_lm(self.others_qformer(merged))
        return v0, v1
