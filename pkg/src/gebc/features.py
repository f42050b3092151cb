"""Per-video feature encoding: stride sampling, temporal resize, region padding,
and trainable channel projection onto the primary feature width.

Vision backbones live behind :class:`Extractor`; this repo ships synthetic,
hash-seeded implementations so the whole pipeline runs without pretrained
weights. Real backbones plug in through the same interface.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import FeatureCacheEntry, load_features, store_features
from .errors import (
    CacheMiss,
    ConfigError,
    InvalidStride,
    InvariantViolation,
    ShapeMismatch,
)


class ExtractorKind(str, Enum):
    PRIMARY = "primary"
    FRAME_LEVEL = "frame_level"
    REGION_LEVEL = "region_level"


@dataclass(frozen=True)
class VideoSource:
    """Handle to a video: enough for synthetic extractors and cache lookups.

    Real extractors would resolve ``uri`` to decoded frames; nothing in this
    repo decodes video.
    """

    video_id: str
    num_frames: int
    duration_sec: float
    uri: str | None = None


@dataclass
class FeatureTensor:
    data: np.ndarray  # [time, tokens, channels] float32
    extractor_name: str
    frame_indices: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeMismatch(
                f"feature tensor must be rank-3 with dims >= 1, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise InvariantViolation(
                f"feature tensor from {self.extractor_name!r} has non-finite entries"
            )
        self.data = arr


@dataclass
class RegionDetections:
    """Per-frame object detections: list of (feature vector, confidence)."""

    frames: list[list[tuple[np.ndarray, float]]]
    channels: int


class Extractor:
    """Deterministic feature extractor: same frames in, same features out.

    ``tokens_per_frame`` is the declared per-frame token count; region-level
    extractors may emit a varying number of detections per frame before
    padding, so their declared value is advisory (the padded count comes from
    the ``N_o`` cap).
    """

    def __init__(self, name: str, kind: ExtractorKind, tokens_per_frame: int,
                 channels: int, stride: int):
        if stride < 1:
            raise InvalidStride(f"extractor {name!r}: stride must be >= 1, got {stride}")
        if tokens_per_frame < 1 or channels < 1:
            raise ConfigError(f"extractor {name!r}: tokens/channels must be >= 1")
        self.name = name
        self.kind = kind
        self.tokens_per_frame = tokens_per_frame
        self.channels = channels
        self.stride = stride

    def extract_features(self, video: VideoSource, frame_indices: list[int]) -> FeatureTensor:
        raise NotImplementedError

    def extract_regions(self, video: VideoSource, frame_indices: list[int]) -> RegionDetections:
        raise NotImplementedError

    def parameter_bytes(self) -> bytes:
        """Frozen internal state, for the freeze-contract checksum."""
        return b""


def _stable_seed(*parts: object) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class SyntheticExtractor(Extractor):
    """Hash-seeded stand-in for a frozen backbone.

    Features for frame ``i`` of a video are drawn from a PCG64 stream seeded
    by (name, video_id, i), then mixed with a fixed internal weight matrix so
    the extractor has frozen state worth checksumming.
    """

    def __init__(self, name: str, kind: ExtractorKind, tokens_per_frame: int,
                 channels: int, stride: int):
        super().__init__(name, kind, tokens_per_frame, channels, stride)
        rng = np.random.default_rng(_stable_seed("weights", name))
        self._mix = rng.standard_normal((channels, channels)).astype(np.float32)
        self._mix /= np.sqrt(channels)

    def _frame_features(self, video_id: str, idx: int) -> np.ndarray:
        rng = np.random.default_rng(_stable_seed(self.name, video_id, idx))
        raw = rng.standard_normal((self.tokens_per_frame, self.channels)).astype(np.float32)
        return raw @ self._mix

    def extract_features(self, video: VideoSource, frame_indices: list[int]) -> FeatureTensor:
        data = np.stack([self._frame_features(video.video_id, i) for i in frame_indices])
        return FeatureTensor(data, self.name, list(frame_indices))

    def parameter_bytes(self) -> bytes:
        return self._mix.tobytes()


class SyntheticRegionExtractor(Extractor):
    """Hash-seeded region detector emitting 0..max_detections boxes per frame."""

    def __init__(self, name: str, channels: int, stride: int, max_detections: int = 12):
        super().__init__(name, ExtractorKind.REGION_LEVEL, 1, channels, stride)
        self.max_detections = max_detections
        rng = np.random.default_rng(_stable_seed("weights", name))
        self._mix = rng.standard_normal((channels, channels)).astype(np.float32)
        self._mix /= np.sqrt(channels)

    def extract_regions(self, video: VideoSource, frame_indices: list[int]) -> RegionDetections:
        frames = []
        for idx in frame_indices:
            rng = np.random.default_rng(_stable_seed(self.name, video.video_id, idx))
            n = int(rng.integers(0, self.max_detections + 1))
            dets = []
            for _ in range(n):
                feat = rng.standard_normal(self.channels).astype(np.float32) @ self._mix
                conf = float(rng.uniform(0.0, 1.0))
                dets.append((feat, conf))
            frames.append(dets)
        return RegionDetections(frames, self.channels)

    def parameter_bytes(self) -> bytes:
        return self._mix.tobytes()


#: impl id -> constructor(spec fields) used when building extractors from config.
EXTRACTOR_IMPLS = {
    "synthetic": SyntheticExtractor,
    "synthetic_region": SyntheticRegionExtractor,
}


def sample_frame_indices(num_frames: int, stride: int) -> list[int]:
    """Indices 0, m, 2m, ... < T. Index 0 is always present."""
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if num_frames < 1:
        raise InvariantViolation(f"frame count must be >= 1, got {num_frames}")
    return list(range(0, num_frames, stride))


def temporal_resize(feats: FeatureTensor, target_len: int) -> FeatureTensor:
    """Linearly interpolate along time, mapping [0, L_raw-1] onto [0, L-1].

    A single input step is broadcast; equal lengths return an identical copy.
    """
    if target_len < 1:
        raise ShapeMismatch(f"target length must be >= 1, got {target_len}")
    raw = feats.data
    if raw.shape[0] == target_len:
        return FeatureTensor(raw.copy(), feats.extractor_name, list(feats.frame_indices))
    positions = np.linspace(0.0, raw.shape[0] - 1, target_len)
    lo = np.floor(positions).astype(np.int64)
    hi = np.minimum(lo + 1, raw.shape[0] - 1)
    frac = (positions - lo)[:, None, None]
    raw64 = raw.astype(np.float64)
    out = raw64[lo] + frac * (raw64[hi] - raw64[lo])
    return FeatureTensor(out.astype(np.float32), feats.extractor_name, list(feats.frame_indices))


def pad_regions(dets: RegionDetections, n_o: int, extractor_name: str = "",
                frame_indices: list[int] | None = None) -> FeatureTensor:
    """Top-N_o detections per frame by descending confidence, zero-padded.

    Ties keep the detector's output order (stable sort).
    """
    if n_o < 1:
        raise ConfigError(f"N_o must be >= 1, got {n_o}")
    out = np.zeros((len(dets.frames), n_o, dets.channels), dtype=np.float32)
    for t, frame in enumerate(dets.frames):
        order = sorted(range(len(frame)), key=lambda i: -frame[i][1])
        for row, i in enumerate(order[:n_o]):
            out[t, row] = frame[i][0]
    return FeatureTensor(out, extractor_name, list(frame_indices or []))


class ChannelProjector(nn.Module):
    """Per-extractor trainable affine maps onto the primary width d_0.

    The primary feature is already d_0-wide and passes through untouched.
    """

    def __init__(self, input_channels: dict[str, int], d_0: int):
        super().__init__()
        self.d_0 = d_0
        self.maps = nn.ModuleDict(
            {name: nn.Linear(ch, d_0) for name, ch in input_channels.items()}
        )

    def init_identity(self, name: str) -> None:
        """Identity weight / zero bias; requires matching widths (test config)."""
        lin = self.maps[name]
        if lin.in_features != lin.out_features:
            raise ShapeMismatch(
                f"identity init needs square map, got {lin.in_features}->{lin.out_features}"
            )
        with torch.no_grad():
            lin.weight.copy_(torch.eye(lin.out_features))
            lin.bias.zero_()

    def project(self, feats: FeatureTensor) -> torch.Tensor:
        x = torch.from_numpy(feats.data)
        if feats.extractor_name not in self.maps:
            if x.shape[-1] != self.d_0:
                raise ShapeMismatch(
                    f"{feats.extractor_name!r} has no projection and width "
                    f"{x.shape[-1]} != d_0={self.d_0}"
                )
            return x
        return self.maps[feats.extractor_name](x)


@dataclass
class EncodedVideo:
    primary: torch.Tensor  # [L, q0, d_0]
    others: list[torch.Tensor]  # each [L, tokens, d_0]
    other_names: list[str]


def cache_path(cache_dir: str | Path, video_id: str, extractor_name: str) -> Path:
    return Path(cache_dir) / f"{video_id}.{extractor_name}.gebf"


def extract_raw(video: VideoSource, ex: Extractor, n_o: int) -> FeatureTensor:
    """Run one extractor at its native stride, region-padding when needed."""
    indices = sample_frame_indices(video.num_frames, ex.stride)
    if ex.kind is ExtractorKind.REGION_LEVEL:
        feats = pad_regions(ex.extract_regions(video, indices), n_o, ex.name, indices)
    else:
        feats = ex.extract_features(video, indices)
        expected = (len(indices), ex.tokens_per_frame, ex.channels)
        if feats.data.shape != expected:
            raise ShapeMismatch(
                f"extractor {ex.name!r} produced {feats.data.shape}, declared {expected}"
            )
    if feats.data.shape[2] != ex.channels:
        raise ShapeMismatch(
            f"extractor {ex.name!r} produced {feats.data.shape[2]} channels, "
            f"declared {ex.channels}"
        )
    return feats


def _raw_features(video: VideoSource, ex: Extractor, n_o: int,
                  cache_dir: str | Path | None, cache_only: bool,
                  write_cache: bool) -> FeatureTensor:
    """Extractor output at raw stride, region-padded, optionally cached."""
    if cache_dir is not None:
        path = cache_path(cache_dir, video.video_id, ex.name)
        if path.exists():
            entry = load_features(path)
            if entry.extractor_name != ex.name:
                raise ShapeMismatch(
                    f"cache {path} holds {entry.extractor_name!r}, expected {ex.name!r}"
                )
            return FeatureTensor(entry.data, ex.name, [])
        if cache_only:
            raise CacheMiss(
                f"no cached features for extractor {ex.name!r} on video "
                f"{video.video_id!r} (expected {path})"
            )
    feats = extract_raw(video, ex, n_o)
    if cache_dir is not None and write_cache:
        entry = FeatureCacheEntry(ex.name, tuple(feats.data.shape), feats.data)
        store_features(entry, cache_path(cache_dir, video.video_id, ex.name))
    return feats


def raw_video_features(
    video: VideoSource,
    extractors: list[Extractor],
    target_len: int,
    n_o: int,
    cache_dir: str | Path | None = None,
    cache_only: bool = False,
    write_cache: bool = False,
) -> dict[str, FeatureTensor]:
    """Pre-projection feature blocks per extractor, resized to target_len.

    Pure numpy stage; safe to memoize per video during training.
    """
    primaries = [e for e in extractors if e.kind is ExtractorKind.PRIMARY]
    if len(primaries) != 1:
        raise ConfigError(f"exactly one primary extractor required, got {len(primaries)}")
    out = {}
    for ex in extractors:
        feats = _raw_features(video, ex, n_o, cache_dir, cache_only, write_cache)
        out[ex.name] = temporal_resize(feats, target_len)
    return out


def project_video_features(
    raw: dict[str, FeatureTensor],
    extractors: list[Extractor],
    projector: ChannelProjector,
    rezero_padded: bool = False,
) -> EncodedVideo:
    """Trainable projection stage turning raw blocks into d_0-wide tensors."""
    others: list[torch.Tensor] = []
    other_names: list[str] = []
    primary: torch.Tensor | None = None
    for ex in extractors:
        feats = raw[ex.name]
        if ex.kind is ExtractorKind.PRIMARY:
            if feats.data.shape[2] != projector.d_0:
                raise ShapeMismatch(
                    f"primary extractor width {feats.data.shape[2]} != d_0={projector.d_0}"
                )
            primary = projector.project(feats)
            continue
        projected = projector.project(feats)
        if rezero_padded and ex.kind is ExtractorKind.REGION_LEVEL:
            pad_mask = torch.from_numpy((feats.data == 0).all(axis=-1))
            projected = projected * (~pad_mask).unsqueeze(-1)
        others.append(projected)
        other_names.append(ex.name)
    if primary is None:
        raise ConfigError("raw features lack a primary extractor block")
    return EncodedVideo(primary, others, other_names)


def encode_video(
    video: VideoSource,
    extractors: list[Extractor],
    target_len: int,
    n_o: int,
    projector: ChannelProjector,
    cache_dir: str | Path | None = None,
    cache_only: bool = False,
    write_cache: bool = False,
    rezero_padded: bool = False,
) -> EncodedVideo:
    """Sample, extract (or cache-load), pad, resize to L, and project to d_0."""
    raw = raw_video_features(video, extractors, target_len, n_o,
                             cache_dir, cache_only, write_cache)
    return project_video_features(raw, extractors, projector, rezero_padded)
