"""The assembled captioning model: frozen extractors and LM around the
trainable adapter stack (channel projections, boundary encoder, positional
tables, q-formers, LM-space maps).
"""

from __future__ import annotations

import hashlib

import torch
from torch import nn

from .adapter import VideoAdapter, VideoQFormerConfig
from .boundary import BoundaryEncoder, normalize_timebox
from .captioner import build_prompt, caption_boundary, caption_loss
from .config import RunConfig
from .data import BoundaryAnnotation, CaptionSample, CaptionTriple, VideoRecord
from .errors import ConfigError, ExtractorUnavailable
from .features import (
    EXTRACTOR_IMPLS,
    ChannelProjector,
    EncodedVideo,
    Extractor,
    ExtractorKind,
    VideoSource,
    project_video_features,
    raw_video_features,
)
from .lm_stub import LMInterface, TinyLM

LM_PLUGINS = {"tiny": TinyLM}


def build_extractors(cfg: RunConfig) -> list[Extractor]:
    out = []
    for spec in cfg.extractors:
        impl = EXTRACTOR_IMPLS.get(spec.impl)
        if impl is None:
            raise ExtractorUnavailable(
                f"no extractor implementation registered as {spec.impl!r}"
            )
        if spec.impl == "synthetic_region":
            out.append(impl(spec.name, spec.channels, spec.stride, spec.max_detections))
        else:
            out.append(impl(spec.name, spec.kind, spec.tokens_per_frame,
                            spec.channels, spec.stride))
    return out


def build_lm(cfg: RunConfig) -> LMInterface:
    plugin = LM_PLUGINS.get(cfg.lm.plugin)
    if plugin is None:
        raise ConfigError(f"unknown LM plugin {cfg.lm.plugin!r}")
    return plugin(
        hidden_dim=cfg.lm.hidden_dim,
        vocab_size=cfg.lm.vocab_size,
        num_layers=cfg.lm.num_layers,
        num_heads=cfg.lm.num_heads,
        max_seq_len=cfg.lm.max_seq_len,
        seed=cfg.lm.seed,
    )


class CaptioningModel(nn.Module):
    """Wires feature encoding, boundary conditioning, the video adapter, and
    the frozen LM into one trainable unit.

    Construction is deterministic given the config: trainable weights are
    drawn under a forked RNG seeded by ``cfg.seed``.
    """

    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        self.extractors = build_extractors(cfg)  # plain list, not submodules
        other_channels = {
            e.name: e.channels for e in self.extractors
            if e.kind is not ExtractorKind.PRIMARY
        }
        a = cfg.adapter
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.projector = ChannelProjector(other_channels, a.d_0)
            self.boundary_encoder = BoundaryEncoder(
                a.d_0, a.boundary_pe_dim, a.boundary_pe_base
            )
            self.adapter = VideoAdapter(
                VideoQFormerConfig(a.q_0, a.d_0, a.num_layers, a.num_heads,
                                   a.feedforward_dim),
                VideoQFormerConfig(a.q_1, a.d_0, a.num_layers, a.num_heads,
                                   a.feedforward_dim),
                lm_dim=cfg.lm.hidden_dim,
                max_positions=a.max_positions,
            )
        self.lm = build_lm(cfg)  # frozen submodule
        self._raw_cache: dict[str, dict] = {}

    # -- feature stages ---------------------------------------------------

    def video_source(self, record: VideoRecord) -> VideoSource:
        return VideoSource(record.video_id, record.num_frames, record.duration_sec)

    def raw_features(self, video: VideoSource) -> dict:
        cached = self._raw_cache.get(video.video_id)
        if cached is None:
            cached = raw_video_features(
                video, self.extractors, self.cfg.target_len, self.cfg.n_o,
                cache_dir=self.cfg.cache_dir, cache_only=self.cfg.cache_only,
            )
            self._raw_cache[video.video_id] = cached
        return cached

    def encode(self, video: VideoSource) -> EncodedVideo:
        return project_video_features(
            self.raw_features(video), self.extractors, self.projector,
            self.cfg.rezero_padded_regions,
        )

    # -- boundary-conditioned forward passes -------------------------------

    def video_tokens(
        self, encoded: EncodedVideo, boundary: BoundaryAnnotation, duration_sec: float
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        box = normalize_timebox(boundary.time_box, duration_sec)
        emb = self.boundary_encoder.encode(box)
        return self.adapter(encoded.primary, encoded.others, emb)

    def sample_loss(
        self,
        record: VideoRecord,
        boundary: BoundaryAnnotation,
        sample: CaptionSample,
    ) -> torch.Tensor:
        encoded = self.encode(self.video_source(record))
        v0, v1 = self.video_tokens(encoded, boundary, record.duration_sec)
        assembly = build_prompt(v0, v1, sample.caption_type, self.lm,
                                target_text=sample.target_text)
        return caption_loss(assembly, self.lm)

    def caption(self, record: VideoRecord, boundary: BoundaryAnnotation) -> CaptionTriple:
        encoded = self.encode(self.video_source(record))
        return caption_boundary(
            encoded.primary, encoded.others, boundary, record.duration_sec,
            self.boundary_encoder, self.adapter, self.lm,
            max_len=self.cfg.max_caption_len,
        )

    # -- parameter bookkeeping ---------------------------------------------

    def trainable_parameters(self) -> dict[str, nn.Parameter]:
        """Adapter stack only: every LM (and extractor) parameter is excluded."""
        return {
            name: p for name, p in self.named_parameters()
            if not name.startswith("lm.") and p.requires_grad
        }

    def frozen_checksum(self) -> str:
        """SHA-256 over all frozen bytes: LM parameters + extractor state."""
        digest = hashlib.sha256()
        lm_state = self.lm.state_dict() if isinstance(self.lm, nn.Module) else {}
        for name in sorted(lm_state):
            digest.update(name.encode())
            digest.update(lm_state[name].numpy().tobytes())
        for ex in self.extractors:
            digest.update(ex.name.encode())
            digest.update(ex.parameter_bytes())
        return digest.hexdigest()
