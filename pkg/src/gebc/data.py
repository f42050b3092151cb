"""Annotation records, caption-sample expansion, and the binary feature cache.

The annotation document is UTF-8 JSON: a top-level list of video objects
``{video_id, duration_sec, num_frames, boundaries: [...]}`` where each
boundary carries ``{boundary_id, timestamp_sec, time_box: [start, end]
(optional), captions: {subject, status_before, status_after}}``. When a
boundary has no explicit ``time_box``, the box is derived as the span from
the previous boundary's timestamp (or 0) to the next boundary's timestamp
(or the video duration). Unknown keys are ignored with a warning.

The feature cache is a little-endian binary format ("GEBF"): magic, u32
version (=1), length-prefixed UTF-8 extractor name, u32 rank (=3), three
u64 dims, then the raw float32 payload. Writes are atomic (temp file +
rename).
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CorruptCache, InvariantViolation, IoFailure, MalformedAnnotation

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"GEBF"
CACHE_VERSION = 1

_VIDEO_KEYS = {"video_id", "duration_sec", "num_frames", "boundaries"}
_BOUNDARY_KEYS = {"boundary_id", "timestamp_sec", "time_box", "captions"}
_CAPTION_KEYS = {"subject", "status_before", "status_after"}


class CaptionType(str, Enum):
    SUBJECT = "subject"
    BEFORE = "before"
    AFTER = "after"


@dataclass(frozen=True)
class CaptionTriple:
    subject: str
    status_before: str
    status_after: str

    def get(self, caption_type: CaptionType) -> str:
        return {
            CaptionType.SUBJECT: self.subject,
            CaptionType.BEFORE: self.status_before,
            CaptionType.AFTER: self.status_after,
        }[caption_type]


@dataclass(frozen=True)
class BoundaryAnnotation:
    boundary_id: str
    timestamp_sec: float
    time_box: tuple[float, float]
    captions: CaptionTriple


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    duration_sec: float
    num_frames: int
    boundaries: tuple[BoundaryAnnotation, ...]


@dataclass(frozen=True)
class CaptionSample:
    video_id: str
    boundary_id: str
    caption_type: CaptionType
    target_text: str


@dataclass(frozen=True)
class FeatureCacheEntry:
    extractor_name: str
    shape: tuple[int, int, int]
    data: np.ndarray  # float32, row-major, shape == self.shape

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if tuple(arr.shape) != tuple(self.shape):
            raise InvariantViolation(
                f"cache entry data shape {arr.shape} != declared {self.shape}"
            )
        if not np.isfinite(arr).all():
            raise InvariantViolation("cache entry contains non-finite values")
        object.__setattr__(self, "data", arr)


def _warn_unknown_keys(obj: dict, known: set[str], where: str) -> None:
    unknown = set(obj) - known
    if unknown:
        logger.warning("ignoring unknown keys %s in %s", sorted(unknown), where)


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise MalformedAnnotation(f"missing key {key!r} in {where}")
    return obj[key]


def _parse_boundary(
    obj: Any,
    index: int,
    video_id: str,
    prev_ts: float | None,
    next_ts: float | None,
    duration: float,
) -> BoundaryAnnotation:
    where = f"video {video_id!r} boundary #{index}"
    if not isinstance(obj, dict):
        raise MalformedAnnotation(f"{where}: expected object, got {type(obj).__name__}")
    _warn_unknown_keys(obj, _BOUNDARY_KEYS, where)
    boundary_id = str(_require(obj, "boundary_id", where))
    timestamp = float(_require(obj, "timestamp_sec", where))
    caps = _require(obj, "captions", where)
    if not isinstance(caps, dict):
        raise MalformedAnnotation(f"{where}: captions must be an object")
    _warn_unknown_keys(caps, _CAPTION_KEYS, f"{where} captions")
    captions = CaptionTriple(
        subject=str(_require(caps, "subject", where)),
        status_before=str(_require(caps, "status_before", where)),
        status_after=str(_require(caps, "status_after", where)),
    )

    if obj.get("time_box") is not None:
        raw = obj["time_box"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise MalformedAnnotation(f"{where}: time_box must be a [start, end] pair")
        box = (float(raw[0]), float(raw[1]))
    else:
        # Derived box: previous boundary (or video start) to next boundary
        # (or video end).
        box = (prev_ts if prev_ts is not None else 0.0,
               next_ts if next_ts is not None else duration)

    if box[0] > box[1]:
        raise InvariantViolation(f"boundary {boundary_id!r}: time_box start > end")
    if box[0] < 0.0 or box[1] > duration:
        raise InvariantViolation(
            f"boundary {boundary_id!r}: time_box {box} outside [0, {duration}]"
        )
    if not (box[0] <= timestamp <= box[1]):
        raise InvariantViolation(
            f"boundary {boundary_id!r}: timestamp {timestamp} outside time_box {box}"
        )
    return BoundaryAnnotation(boundary_id, timestamp, box, captions)


def _parse_video(obj: Any, index: int) -> VideoRecord:
    where = f"video record #{index}"
    if not isinstance(obj, dict):
        raise MalformedAnnotation(f"{where}: expected object, got {type(obj).__name__}")
    _warn_unknown_keys(obj, _VIDEO_KEYS, where)
    video_id = str(_require(obj, "video_id", where))
    duration = float(_require(obj, "duration_sec", where))
    num_frames = int(_require(obj, "num_frames", where))
    if duration <= 0:
        raise InvariantViolation(f"video {video_id!r}: duration_sec must be > 0")
    if num_frames < 1:
        raise InvariantViolation(f"video {video_id!r}: num_frames must be >= 1")
    raw_bounds = _require(obj, "boundaries", where)
    if not isinstance(raw_bounds, list):
        raise MalformedAnnotation(f"{where}: boundaries must be a list")

    timestamps = []
    for b in raw_bounds:
        if not isinstance(b, dict) or "timestamp_sec" not in b:
            raise MalformedAnnotation(f"video {video_id!r}: boundary missing timestamp_sec")
        timestamps.append(float(b["timestamp_sec"]))
    for t0, t1 in zip(timestamps, timestamps[1:]):
        if not t0 < t1:
            raise InvariantViolation(
                f"video {video_id!r}: boundary timestamps not strictly increasing"
            )
    for i, t in enumerate(timestamps):
        if not (0.0 <= t <= duration):
            bid = raw_bounds[i].get("boundary_id", f"#{i}")
            raise InvariantViolation(
                f"boundary {bid!r}: timestamp {t} outside [0, {duration}]"
            )

    boundaries = []
    for i, b in enumerate(raw_bounds):
        prev_ts = timestamps[i - 1] if i > 0 else None
        next_ts = timestamps[i + 1] if i + 1 < len(timestamps) else None
        boundaries.append(_parse_boundary(b, i, video_id, prev_ts, next_ts, duration))
    return VideoRecord(video_id, duration, num_frames, tuple(boundaries))


def parse_annotations(text: str) -> list[VideoRecord]:
    """Parse an annotation document from a string. Records sorted by video_id."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedAnnotation(f"annotation JSON syntax error: {e}") from e
    if not isinstance(doc, list):
        raise MalformedAnnotation("annotation document must be a top-level list")
    records = [_parse_video(obj, i) for i, obj in enumerate(doc)]
    seen: set[str] = set()
    for r in records:
        if r.video_id in seen:
            raise InvariantViolation(f"duplicate video_id {r.video_id!r}")
        seen.add(r.video_id)
    return sorted(records, key=lambda r: r.video_id)


def load_annotations(path: str | Path) -> list[VideoRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read annotations {path}: {e}") from e
    return parse_annotations(text)


def dump_annotations(records: list[VideoRecord]) -> str:
    """Serialize records back into the canonical annotation document."""
    doc = [
        {
            "video_id": r.video_id,
            "duration_sec": r.duration_sec,
            "num_frames": r.num_frames,
            "boundaries": [
                {
                    "boundary_id": b.boundary_id,
                    "timestamp_sec": b.timestamp_sec,
                    "time_box": list(b.time_box),
                    "captions": {
                        "subject": b.captions.subject,
                        "status_before": b.captions.status_before,
                        "status_after": b.captions.status_after,
                    },
                }
                for b in r.boundaries
            ],
        }
        for r in records
    ]
    return json.dumps(doc, ensure_ascii=False, indent=2)


def convert_official_annotations(doc: Any) -> list[VideoRecord]:
    """Best-effort converter from the official dataset layout.

    Stub for the released annotation dump: a mapping video_id -> list of
    boundary objects. A boundary's box is taken from explicit
    ``(prev_timestamp, next_timestamp)`` style keys when present; otherwise
    it is derived from neighbouring boundary instants exactly as in
    :func:`parse_annotations`. Verify field names against the dump you
    actually hold before trusting the output.
    """
    if not isinstance(doc, dict):
        raise MalformedAnnotation("official layout expected a video_id -> boundaries map")
    canonical = []
    for video_id, bounds in doc.items():
        if not isinstance(bounds, list) or not bounds:
            raise MalformedAnnotation(f"video {video_id!r}: expected non-empty boundary list")
        first = bounds[0]
        duration = float(first.get("video_duration", first.get("duration", 0.0)))
        num_frames = int(first.get("num_frames", max(1, round(duration * 30))))
        out_bounds = []
        for i, b in enumerate(bounds):
            ts = float(b.get("timestamp", b.get("boundary_timestamp", 0.0)))
            entry: dict[str, Any] = {
                "boundary_id": str(b.get("boundary_id", f"{video_id}_{i}")),
                "timestamp_sec": ts,
                "captions": {
                    "subject": b.get("subject", ""),
                    "status_before": b.get("status_before", ""),
                    "status_after": b.get("status_after", ""),
                },
            }
            if "prev_timestamp" in b and "next_timestamp" in b:
                entry["time_box"] = [float(b["prev_timestamp"]), float(b["next_timestamp"])]
            out_bounds.append(entry)
        canonical.append(
            {
                "video_id": str(video_id),
                "duration_sec": duration,
                "num_frames": num_frames,
                "boundaries": out_bounds,
            }
        )
    return parse_annotations(json.dumps(canonical))


_TYPE_ORDER = (CaptionType.SUBJECT, CaptionType.BEFORE, CaptionType.AFTER)


def expand_samples(record: VideoRecord) -> list[CaptionSample]:
    """One sample per (boundary, caption type), in (boundary, type) order."""
    samples = []
    for b in record.boundaries:
        for ct in _TYPE_ORDER:
            samples.append(
                CaptionSample(record.video_id, b.boundary_id, ct, b.captions.get(ct))
            )
    return samples


def store_features(entry: FeatureCacheEntry, path: str | Path) -> None:
    """Write a cache entry atomically (temp file in the same dir, then rename)."""
    path = Path(path)
    name_bytes = entry.extractor_name.encode("utf-8")
    header = (
        CACHE_MAGIC
        + struct.pack("<I", CACHE_VERSION)
        + struct.pack("<I", len(name_bytes))
        + name_bytes
        + struct.pack("<I", 3)
        + struct.pack("<QQQ", *entry.shape)
    )
    payload = entry.data.astype("<f4", copy=False).tobytes(order="C")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(header)
                f.write(payload)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(f"cannot write cache {path}: {e}") from e


def load_features(path: str | Path) -> FeatureCacheEntry:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read cache {path}: {e}") from e

    def take(n: int, offset: int, what: str) -> tuple[bytes, int]:
        if offset + n > len(blob):
            raise CorruptCache(f"{path}: truncated while reading {what}")
        return blob[offset : offset + n], offset + n

    chunk, off = take(4, 0, "magic")
    if chunk != CACHE_MAGIC:
        raise CorruptCache(f"{path}: bad magic {chunk!r}")
    chunk, off = take(4, off, "version")
    version = struct.unpack("<I", chunk)[0]
    if version != CACHE_VERSION:
        raise CorruptCache(f"{path}: unsupported version {version}")
    chunk, off = take(4, off, "name length")
    name_len = struct.unpack("<I", chunk)[0]
    chunk, off = take(name_len, off, "extractor name")
    try:
        name = chunk.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorruptCache(f"{path}: extractor name is not UTF-8") from e
    chunk, off = take(4, off, "rank")
    rank = struct.unpack("<I", chunk)[0]
    if rank != 3:
        raise CorruptCache(f"{path}: rank must be 3, got {rank}")
    chunk, off = take(24, off, "dims")
    shape = struct.unpack("<QQQ", chunk)
    expected = 4 * int(np.prod(shape))
    if len(blob) - off != expected:
        raise CorruptCache(
            f"{path}: payload length {len(blob) - off} != expected {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=off).reshape(shape).copy()
    return FeatureCacheEntry(name, tuple(int(s) for s in shape), data)
