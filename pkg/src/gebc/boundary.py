"""Boundary time-box embedding: normalize, logit, sinusoidal encoding,
layer norm, and a trainable projection onto the visual feature width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import InvalidBox, LogitDomainError, ShapeMismatch

#: clamp margin keeping the logit finite at box edges (|logit| <= ~9.21)
EPS = 1e-4


@dataclass(frozen=True)
class NormalizedTimeBox:
    start: float
    end: float


def normalize_timebox(box: tuple[float, float], duration_sec: float) -> NormalizedTimeBox:
    """Divide by duration and clamp into [EPS, 1-EPS]."""
    start, end = float(box[0]), float(box[1])
    if duration_sec <= 0:
        raise InvalidBox(f"duration must be > 0, got {duration_sec}")
    if start > end:
        raise InvalidBox(f"time_box start {start} > end {end}")
    if start < 0 or end > duration_sec:
        raise InvalidBox(f"time_box ({start}, {end}) outside [0, {duration_sec}]")
    lo, hi = EPS, 1.0 - EPS
    return NormalizedTimeBox(
        min(max(start / duration_sec, lo), hi),
        min(max(end / duration_sec, lo), hi),
    )


def inverse_sigmoid(x: float) -> float:
    """ln(x / (1 - x)) on the clamped domain [EPS, 1-EPS]."""
    if not (EPS <= x <= 1.0 - EPS):
        raise LogitDomainError(f"inverse_sigmoid input {x} outside [{EPS}, {1 - EPS}]")
    return math.log(x / (1.0 - x))


def sinusoidal_encoding(values: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Alternating sin/cos of a scalar over geometric frequencies.

    values [...] -> [..., dim]; even slots sin(x / base^(2i/dim)), odd slots
    the matching cos.
    """
    if dim % 2 != 0:
        raise ShapeMismatch(f"encoding dim must be even, got {dim}")
    half = dim // 2
    exponents = torch.arange(half, dtype=values.dtype, device=values.device) * (2.0 / dim)
    freqs = values.unsqueeze(-1) / torch.pow(
        torch.tensor(base, dtype=values.dtype, device=values.device), exponents
    )
    out = torch.empty(*values.shape, dim, dtype=values.dtype, device=values.device)
    out[..., 0::2] = torch.sin(freqs)
    out[..., 1::2] = torch.cos(freqs)
    return out


class BoundaryEncoder(nn.Module):
    """(start, end) in [0,1] -> d_0 vector.

    Pipeline: logit each coordinate, sinusoidally encode each into d_pe dims,
    concatenate, layer-normalize (no affine), then a trainable linear map to
    d_0. Deterministic given parameters.
    """

    def __init__(self, d_0: int, d_pe: int = 128, base: float = 10000.0):
        super().__init__()
        self.d_pe = d_pe
        self.base = base
        # Tight eps: sinusoidal features keep variance well away from zero,
        # and the output must be unit-variance to 1e-5.
        self.norm = nn.LayerNorm(2 * d_pe, elementwise_affine=False, eps=1e-12)
        self.proj = nn.Linear(2 * d_pe, d_0)

    def pre_projection(self, box: torch.Tensor) -> torch.Tensor:
        """Normalized-and-encoded vector right before the trainable map."""
        if box.shape[-1] != 2:
            raise ShapeMismatch(f"expected (start, end) pair, got shape {tuple(box.shape)}")
        logits = torch.log(box / (1.0 - box))
        encoded = sinusoidal_encoding(logits, self.d_pe, self.base)
        flat = encoded.reshape(*box.shape[:-1], 2 * self.d_pe)
        return self.norm(flat)

    def forward(self, box: torch.Tensor) -> torch.Tensor:
        return self.proj(self.pre_projection(box))

    def encode(self, box: NormalizedTimeBox) -> torch.Tensor:
        dtype = self.proj.weight.dtype
        return self.forward(torch.tensor([box.start, box.end], dtype=dtype))


def apply_boundary(features: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
    """Broadcast-add the boundary embedding to every (time, token) position."""
    if features.ndim != 3 or embedding.ndim != 1 or features.shape[-1] != embedding.shape[0]:
        raise ShapeMismatch(
            f"cannot add embedding {tuple(embedding.shape)} to features "
            f"{tuple(features.shape)}"
        )
    return features + embedding
