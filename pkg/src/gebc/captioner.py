"""Soft-prompt assembly, teacher-forced loss, and greedy caption generation
through a frozen causal LM.

Prompt layout: embedded "Video:" prefix, primary video query tokens, optional
secondary video query tokens, an embedded caption-type suffix, and (training
only) the embedded target tokens plus the end token.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .boundary import BoundaryEncoder, normalize_timebox
from .data import BoundaryAnnotation, CaptionTriple, CaptionType
from .errors import EmptyTarget, ShapeMismatch
from .lm_stub import LMInterface

PREFIX_TEXT = "Video:"

_SUFFIXES = {
    CaptionType.SUBJECT: "This video describes the subject. The subject is",
    CaptionType.BEFORE: "This video describes the status before. Status before change is",
    CaptionType.AFTER: "This video describes the status after. Status after change is",
}


def render_suffix(caption_type: CaptionType) -> str:
    return _SUFFIXES[caption_type]


@dataclass
class PromptSegment:
    name: str
    embeddings: torch.Tensor  # [n, h]


@dataclass
class PromptAssembly:
    segments: list[PromptSegment]
    caption_type: CaptionType
    target_token_ids: list[int] | None
    loss_mask: torch.Tensor  # bool [S], true only on target + end positions

    @property
    def embeddings(self) -> torch.Tensor:
        return torch.cat([s.embeddings for s in self.segments], dim=0)

    def __len__(self) -> int:
        return sum(s.embeddings.shape[0] for s in self.segments)


def build_prompt(
    v0: torch.Tensor,
    v1: torch.Tensor | None,
    caption_type: CaptionType,
    lm: LMInterface,
    target_text: str | None = None,
) -> PromptAssembly:
    """Splice video query tokens between the embedded prefix and suffix."""
    for name, block in (("v0", v0), ("v1", v1)):
        if block is not None and (block.ndim != 2 or block.shape[1] != lm.hidden_dim):
            raise ShapeMismatch(
                f"{name} must be [q, {lm.hidden_dim}], got {tuple(block.shape)}"
            )
    segments = [
        PromptSegment("prefix", lm.embed(lm.tokenize(PREFIX_TEXT))),
        PromptSegment("v0", v0),
    ]
    if v1 is not None:
        segments.append(PromptSegment("v1", v1))
    segments.append(PromptSegment("suffix", lm.embed(lm.tokenize(render_suffix(caption_type)))))

    target_ids: list[int] | None = None
    if target_text is not None:
        target_ids = lm.tokenize(target_text) + [lm.end_token_id]
        segments.append(PromptSegment("target", lm.embed(target_ids)))

    total = sum(s.embeddings.shape[0] for s in segments)
    mask = torch.zeros(total, dtype=torch.bool)
    if target_ids is not None:
        mask[total - len(target_ids):] = True
    return PromptAssembly(segments, caption_type, target_ids, mask)


def caption_loss(assembly: PromptAssembly, lm: LMInterface) -> torch.Tensor:
    """Mean next-token cross-entropy over mask-true positions.

    Logits at position i score the token at i+1; the frozen LM contributes no
    trainable parameters, so gradients reach only the spliced video tokens.
    """
    if assembly.target_token_ids is None or not bool(assembly.loss_mask.any()):
        raise EmptyTarget("assembly has no target positions to score")
    embeds = assembly.embeddings
    logits = lm.forward_embeddings(embeds)
    positions = assembly.loss_mask.nonzero(as_tuple=False).squeeze(1)
    targets = torch.as_tensor(assembly.target_token_ids, dtype=torch.long)
    return torch.nn.functional.cross_entropy(logits[positions - 1], targets)


def _greedy_pick(logits: torch.Tensor) -> int:
    """Argmax with ties resolved to the lowest token id."""
    return int(torch.nonzero(logits == logits.max())[0].item())


def generate_caption(
    v0: torch.Tensor,
    v1: torch.Tensor | None,
    caption_type: CaptionType,
    lm: LMInterface,
    max_len: int = 96,
) -> str:
    """Greedy decoding until the end token or max_len generated tokens."""
    assembly = build_prompt(v0, v1, caption_type, lm)
    with torch.no_grad():
        embeds = assembly.embeddings
        out_ids: list[int] = []
        for _ in range(max_len):
            logits = lm.forward_embeddings(embeds)
            next_id = _greedy_pick(logits[-1])
            if next_id == lm.end_token_id:
                break
            out_ids.append(next_id)
            embeds = torch.cat([embeds, lm.embed([next_id])], dim=0)
    return lm.detokenize(out_ids)


def caption_boundary(
    encoded_primary: torch.Tensor,
    encoded_others: list[torch.Tensor],
    boundary: BoundaryAnnotation,
    duration_sec: float,
    boundary_encoder: BoundaryEncoder,
    adapter: torch.nn.Module,
    lm: LMInterface,
    max_len: int = 96,
) -> CaptionTriple:
    """Build video tokens once, then generate the three caption types."""
    box = normalize_timebox(boundary.time_box, duration_sec)
    emb = boundary_encoder.encode(box)
    v0, v1 = adapter(encoded_primary, encoded_others, emb)
    texts = {
        ct: generate_caption(v0, v1, ct, lm, max_len)
        for ct in (CaptionType.SUBJECT, CaptionType.BEFORE, CaptionType.AFTER)
    }
    return CaptionTriple(
        subject=texts[CaptionType.SUBJECT],
        status_before=texts[CaptionType.BEFORE],
        status_after=texts[CaptionType.AFTER],
    )
